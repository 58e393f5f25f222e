"""PCA retraining that penalizes movement of previously important directions.

At a mode switch the projection is refit on the new data while a quadratic
penalty anchors it to the previous mode's projection, weighted by an
importance matrix.  The trace objective is a difference of convex
functions; it is minimized by iteratively linearizing the subtracted part
and solving the resulting orthogonal Procrustes subproblem in closed form
via an SVD.

The Procrustes step is only exact over the orthonormality constraint when
the quadratic penalty term is isotropic, so the update direction includes
the majorization correction ``(lmax(Omega) I - Omega) P_i``; with it each
iteration minimizes a true upper bound of the objective and descent is
guaranteed.  The correction vanishes when the importance matrix is a
multiple of the identity.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NonPSDInputError
from .linalg import sym

OMEGA_JITTER_REL = 1e-8
DEFAULT_EPS = 1e-8
DEFAULT_MAX_ITER = 500


@dataclass
class EwcPenalty:
    """Importance-weighted anchor to a previous projection.

    ``Omega`` is symmetric PSD, ``P_prev`` has orthonormal columns, ``zeta``
    is the nonnegative importance weight already folded into ``Omega``.
    """

    Omega: np.ndarray
    P_prev: np.ndarray
    zeta: float

    def __post_init__(self):
        self.Omega = sym(np.asarray(self.Omega, dtype=float))
        self.P_prev = np.asarray(self.P_prev, dtype=float)
        if self.zeta < 0:
            raise NonPSDInputError("zeta must be nonnegative")


@dataclass
class EwcFitResult:
    """Outcome of :func:`fit_pca_ewc`; ``P`` is the fitted projection."""

    P: np.ndarray
    objective: list[float]
    n_iter: int
    converged: bool


def compute_omega(prev_data_cov: np.ndarray, P_prev: np.ndarray, zeta: float) -> np.ndarray:
    """Importance matrix from the previous mode's data covariance.

    ``zeta * (cov + jitter I)``: directions that carried variance in the
    previous mode resist being rotated away.  ``P_prev`` is accepted for
    signature compatibility with alternative strategies (for example an
    identity-importance penalty) and is not used by this construction.
    """
    cov = sym(np.asarray(prev_data_cov, dtype=float))
    m2 = cov.shape[0]
    eigs = np.linalg.eigvalsh(cov)
    if eigs[0] < -1e-10 * max(abs(eigs[-1]), 1.0):
        raise NonPSDInputError(f"covariance has eigenvalue {eigs[0]:.3e}")
    if zeta < 0:
        raise NonPSDInputError("zeta must be nonnegative")
    if zeta == 0:
        return np.zeros((m2, m2))
    jitter = OMEGA_JITTER_REL * np.trace(cov) / m2
    return zeta * (cov + jitter * np.eye(m2))


def identity_omega(m2: int, P_prev: np.ndarray, zeta: float) -> np.ndarray:
    """Isotropic importance: every direction equally anchored."""
    if zeta < 0:
        raise NonPSDInputError("zeta must be nonnegative")
    return zeta * np.eye(m2)


def ewc_objective(P: np.ndarray, G: np.ndarray, Omega: np.ndarray, P_prev: np.ndarray) -> float:
    """Variable part of the trace objective (constants dropped)."""
    return float(
        np.trace(P.T @ Omega @ P)
        - np.trace(P.T @ G @ P)
        - 2.0 * np.trace(P.T @ Omega @ P_prev)
    )


def fit_pca_ewc(
    x2: np.ndarray,
    penalty: EwcPenalty,
    l: int,
    eps: float = DEFAULT_EPS,
    max_iter: int = DEFAULT_MAX_ITER,
) -> EwcFitResult:
    """Fit an ``m2 x l`` orthonormal projection balancing new-data variance
    against movement of previously important directions.

    Starts from the previous projection and iterates the majorized
    Procrustes step until ``||P_{i+1} - P_i||_F^2 < eps`` or ``max_iter``.
    The recorded objective sequence is non-increasing; if the iteration
    limit is hit the best iterate is returned with ``converged=False``.
    """
    x2 = np.atleast_2d(np.asarray(x2, dtype=float))
    m2 = x2.shape[1]
    if not 1 <= l <= m2:
        raise NonPSDInputError(f"l={l} outside [1, {m2}]")
    P_prev = _conform_columns(penalty.P_prev, l)
    Omega = penalty.Omega
    if Omega.shape != (m2, m2):
        raise NonPSDInputError("Omega shape does not match data width")
    G = x2.T @ x2
    lmax = float(np.linalg.eigvalsh(Omega)[-1]) if np.any(Omega) else 0.0
    anchor = Omega @ P_prev

    P = P_prev.copy()
    objective = [ewc_objective(P, G, Omega, P_prev)]
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        Y = anchor + G @ P + (lmax * P - Omega @ P)
        if _is_procrustes_fixed_point(P, Y):
            # P is already the subproblem optimum; avoid SVD round-off so
            # fixed points are returned bit-exactly.
            objective.append(objective[-1])
            converged = True
            break
        U, sv, Vt = np.linalg.svd(Y, full_matrices=False)
        if sv[-1] <= 1e-300:
            # no information in the update direction; current P is stationary
            converged = True
            break
        P_next = U @ Vt
        objective.append(ewc_objective(P_next, G, Omega, P_prev))
        step = float(np.linalg.norm(P_next - P)) ** 2
        P = P_next
        if step < eps:
            converged = True
            break
    return EwcFitResult(P=P, objective=objective, n_iter=n_iter, converged=converged)


def _is_procrustes_fixed_point(P: np.ndarray, Y: np.ndarray) -> bool:
    """True when P already maximizes ``tr(P^T Y)`` over orthonormal frames.

    That holds exactly when ``Y = P S`` with ``S`` symmetric positive
    definite.
    """
    S = P.T @ Y
    scale = max(float(np.linalg.norm(Y)), 1e-300)
    if np.linalg.norm(Y - P @ S) > 1e-13 * scale:
        return False
    if np.linalg.norm(S - S.T) > 1e-13 * scale:
        return False
    return bool(np.linalg.eigvalsh(sym(S))[0] > 0)


def _conform_columns(P_prev: np.ndarray, l: int) -> np.ndarray:
    """Adjust a previous projection to ``l`` columns.

    Extra columns are dropped; missing ones are filled from the orthonormal
    complement so the starting point stays feasible.
    """
    P_prev = np.atleast_2d(np.asarray(P_prev, dtype=float))
    m2, l_prev = P_prev.shape
    if l_prev == l:
        return P_prev
    if l_prev > l:
        return P_prev[:, :l]
    from .linalg import orthonormal_completion

    comp = orthonormal_completion(P_prev)
    return np.column_stack([P_prev, comp[:, : l - l_prev]])
