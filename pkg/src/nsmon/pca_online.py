"""Recursive PCA: rank-1 eigenpair updates with first-order perturbation.

The state tracks a running mean and standard deviation, a full eigenvector
matrix, and the eigenvalue vector of the standardized sample covariance.
Each new raw sample first refreshes the running scaler, is standardized
with it, and then perturbs the eigenpairs through the closed first-order
correction.  Periodic re-orthonormalization keeps the basis from drifting.
"""

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import AllZeroSpectrumError, TooFewSamplesError
from .ingest import Scaler, fit_scaler, update_scaler

DEFAULT_REORTH_PERIOD = 50
ORTH_DRIFT_TOL = 1e-6
GAP_TOL = 1e-10


@dataclass
class RpcaState:
    """Running eigenstructure of a standardized data stream.

    ``P`` columns are the (approximately orthonormal) eigenvectors, ``Lambda``
    the eigenvalues in descending order, ``l`` the retained dimension from
    the cumulative-variance rule.  One writer per state; ``copy()`` returns
    an independent snapshot.
    """

    scaler: Scaler
    P: np.ndarray
    Lambda: np.ndarray
    l: int
    k: int
    cpv_threshold: float = 0.85
    reorth_period: int = DEFAULT_REORTH_PERIOD
    lambda_mode: str = "squared"  # "squared" or "literal" first-order eigenvalue gain
    steps_since_reorth: int = 0

    @property
    def mean(self) -> np.ndarray:
        return self.scaler.mean

    @property
    def std(self) -> np.ndarray:
        return self.scaler.std

    @property
    def m2(self) -> int:
        return self.P.shape[0]

    def copy(self) -> "RpcaState":
        return copy.deepcopy(self)

    def orth_drift(self) -> float:
        """Frobenius distance of ``P^T P`` from the identity."""
        return float(np.linalg.norm(self.P.T @ self.P - np.eye(self.m2)))


def cpv_select(lam: np.ndarray, threshold: float = 0.85) -> int:
    """Smallest retained dimension reaching the cumulative variance fraction."""
    lam = np.maximum(np.asarray(lam, dtype=float), 0.0)
    total = lam.sum()
    if total <= 0:
        raise AllZeroSpectrumError("all eigenvalues are zero")
    frac = np.cumsum(lam) / total
    return int(np.searchsorted(frac, threshold - 1e-12) + 1)


def rpca_init(
    x2: np.ndarray,
    cpv_threshold: float = 0.85,
    reorth_period: int = DEFAULT_REORTH_PERIOD,
    lambda_mode: str = "squared",
) -> RpcaState:
    """Batch initialization: eigendecomposition of the standardized covariance."""
    x2 = np.atleast_2d(np.asarray(x2, dtype=float))
    n, m2 = x2.shape
    if n < m2 + 1:
        raise TooFewSamplesError(f"need at least {m2 + 1} samples, got {n}")
    if lambda_mode not in ("squared", "literal"):
        raise ValueError("lambda_mode must be 'squared' or 'literal'")
    scaler = fit_scaler(x2)
    z = (x2 - scaler.mean) / scaler.std
    cov = z.T @ z / (n - 1)
    lam, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    order = np.argsort(-lam, kind="stable")
    lam = np.maximum(lam[order], 0.0)
    vecs = vecs[:, order]
    return RpcaState(
        scaler=scaler,
        P=vecs,
        Lambda=lam,
        l=cpv_select(lam, cpv_threshold),
        k=n,
        cpv_threshold=cpv_threshold,
        reorth_period=reorth_period,
        lambda_mode=lambda_mode,
    )


def _reorthonormalize(state: RpcaState):
    q, r = np.linalg.qr(state.P)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    state.P = q * signs
    state.steps_since_reorth = 0


def rpca_update(state: RpcaState, x: np.ndarray) -> RpcaState:
    """Fold one raw sample into the state (in place) and return it.

    The running scaler is advanced first, the sample standardized with the
    refreshed scaler, then the eigenpairs receive the first-order rank-1
    correction.  Near-degenerate eigenvalue pairs have their correction
    entry zeroed and trigger an immediate re-orthonormalization.
    """
    x = np.asarray(x, dtype=float).ravel()
    alpha = state.k / (state.k + 1.0)
    state.scaler = update_scaler(state.scaler, x, state.k)
    state.k += 1
    z = (x - state.scaler.mean) / state.scaler.std

    kappa = state.P.T @ z
    tau = (state.k - 1) * state.Lambda
    shifted = tau + kappa**2
    gaps = shifted[None, :] - shifted[:, None]
    numer = np.outer(kappa, kappa)
    with np.errstate(divide="ignore", invalid="ignore"):
        qv = numer / gaps
    degenerate = (np.abs(gaps) < GAP_TOL) & ~np.eye(state.m2, dtype=bool)
    has_degenerate = bool((degenerate & (np.abs(numer) > 0)).any())
    qv[np.abs(gaps) < GAP_TOL] = 0.0
    np.fill_diagonal(qv, 0.0)

    gain = kappa**2 if state.lambda_mode == "squared" else kappa
    lam = alpha * state.Lambda + (1.0 - alpha) * gain
    P = state.P + state.P @ qv

    order = np.argsort(-lam, kind="stable")
    state.Lambda = lam[order]
    state.P = P[:, order]
    state.steps_since_reorth += 1

    if (
        has_degenerate
        or state.steps_since_reorth >= state.reorth_period
        or state.orth_drift() > ORTH_DRIFT_TOL
    ):
        _reorthonormalize(state)

    state.l = cpv_select(state.Lambda, state.cpv_threshold)
    return state
