"""Per-sample updating of the cointegration model with fixed-size state.

Each new standardized block-1 sample updates, in order: the least-squares
coefficients (Sherman-Morrison), the error-product sufficient statistics,
the normalized product matrices ``A`` and ``B``, the inverse square root of
``B``'s diagonal blocks, and finally the eigenvectors through a symmetric
eigensolve.  No step touches an object whose size grows with the number of
processed samples, so per-update cost depends only on the block width and
the regression order.

The growing residual matrices are never materialized; their products are
carried through three fixed-size recursions (``J^T J``, ``J^T E0``,
``J^T E1`` with ``J`` the regressor rows times the running Gram inverse).
"""

import copy
from dataclasses import dataclass

import numpy as np

from .coint import GRAM_RIDGE_REL, CointegrationModel, LagMatrices, assemble_ab
from .errors import IndefiniteBlockError, NumericalBreakdownError
from .linalg import fix_column_signs, inv_sqrt_psd, sym

K_MODES = ("fop", "fop_pure", "exact")
DEFAULT_DRIFT_TOL = 1e-6
DEFAULT_K_REFRESH = 500


@dataclass
class RcaState:
    """Sufficient statistics for per-sample cointegration updating.

    Every array shape is a function of the block width ``m1`` and the
    regression order ``p`` alone.  One writer per state; ``copy()`` gives an
    independent snapshot safe to hand to another thread.
    """

    Theta: np.ndarray
    Phi: np.ndarray
    R: np.ndarray
    JtJ: np.ndarray
    JtE0: np.ndarray
    JtE1: np.ndarray
    A: np.ndarray
    B: np.ndarray
    K1: np.ndarray
    K2: np.ndarray
    lag_window: np.ndarray
    k: int
    n_rows: int
    e0_last: np.ndarray
    model: CointegrationModel
    k_mode: str = "fop"
    drift_tol: float = DEFAULT_DRIFT_TOL
    k_refresh_every: int = DEFAULT_K_REFRESH
    steps_since_k_refresh: int = 0

    @property
    def m1(self) -> int:
        return self.model.m1

    @property
    def p(self) -> int:
        return self.model.p

    def copy(self) -> "RcaState":
        return copy.deepcopy(self)

    def k_drift(self) -> float:
        """Frobenius distance of ``K B K^T`` from identity over both blocks."""
        m = self.m1
        eye = np.eye(m)
        d1 = np.linalg.norm(self.K1 @ self.B[:m, :m] @ self.K1.T - eye)
        d2 = np.linalg.norm(self.K2 @ self.B[m:, m:] @ self.K2.T - eye)
        return float(max(d1, d2))


def rca_init(
    model: CointegrationModel,
    lags: LagMatrices,
    E0: np.ndarray,
    E1: np.ndarray,
    k_mode: str = "fop",
    drift_tol: float = DEFAULT_DRIFT_TOL,
    k_refresh_every: int = DEFAULT_K_REFRESH,
) -> RcaState:
    """Build streaming state from a batch fit so the first streamed sample
    continues the batch recursion exactly."""
    if k_mode not in K_MODES:
        raise ValueError(f"k_mode must be one of {K_MODES}")
    m1 = model.m1
    p = model.p
    gram = lags.dXlag.T @ lags.dXlag
    dim = gram.shape[0]
    eigs = np.linalg.eigvalsh(sym(gram))
    gram_used = gram
    if eigs[0] < 1e-10 * max(eigs[-1], 1.0):
        gram_used = gram + (GRAM_RIDGE_REL * np.trace(gram) / dim) * np.eye(dim)
    R = sym(np.linalg.inv(gram_used))
    JtJ = sym(R @ gram @ R)
    JtE0 = R @ (lags.dXlag.T @ E0)
    JtE1 = R @ (lags.dXlag.T @ E1)
    A, B = assemble_ab(E0, E1)
    K1 = inv_sqrt_psd(B[:m1, :m1])
    K2 = inv_sqrt_psd(B[m1:, m1:])
    # Last p+1 raw samples of the training series, reconstructed from the
    # lag matrices: levels x[N-p-1 .. N-2] plus the final level from the
    # last difference row.
    last = lags.Xp[-1] + lags.dXp[-1]
    lag_window = np.vstack([lags.Xp[-p:], last[None, :]])
    return RcaState(
        Theta=model.Theta.copy(),
        Phi=model.Phi.copy(),
        R=R,
        JtJ=JtJ,
        JtE0=JtE0,
        JtE1=JtE1,
        A=A,
        B=B,
        K1=K1,
        K2=K2,
        lag_window=lag_window,
        k=lags.n_rows + p,
        n_rows=lags.n_rows,
        e0_last=E0[-1].copy(),
        model=model,
        k_mode=k_mode,
        drift_tol=drift_tol,
        k_refresh_every=k_refresh_every,
    )


def _step_rows(state: RcaState, x1_new: np.ndarray):
    """Regressor row, difference target, and level row for the new sample."""
    x1_new = np.asarray(x1_new, dtype=float).ravel()
    if x1_new.shape[0] != state.m1:
        raise NumericalBreakdownError(
            f"sample has {x1_new.shape[0]} entries, expected {state.m1}"
        )
    window = state.lag_window
    diffs = np.diff(window, axis=0)  # p differences, oldest first
    z = diffs.reshape(1, -1)
    x_level = window[-1][None, :]
    dx_new = (x1_new - window[-1])[None, :]
    return z, dx_new, x_level


def innovation(state: RcaState, x1_new: np.ndarray) -> np.ndarray:
    """One-step prediction-error row for a candidate sample, without updating.

    This is the row the residual matrix would gain if the sample were
    accepted; the monitor scores it before deciding whether to update.
    """
    z, dx_new, _ = _step_rows(state, x1_new)
    g = z @ state.R
    c = float(g @ z.T)
    if 1.0 + c < 1e-12:
        raise NumericalBreakdownError("update denominator vanished")
    return ((dx_new - z @ state.Theta) / (1.0 + c)).ravel()


def _rank2_eig(dB: np.ndarray, span: np.ndarray, tol: float):
    """Eigenpairs of a symmetric matrix supported on a rank-<=2 span.

    ``span`` holds (up to) two columns spanning the range of ``dB``.
    Returns (betas, Q) with Q orthonormal columns, |betas| above ``tol``.
    """
    q, rr = np.linalg.qr(span)
    keep = np.abs(np.diag(rr)) > 1e-13 * max(1.0, np.abs(rr).max())
    q = q[:, keep]
    if q.shape[1] == 0:
        return np.zeros(0), np.zeros((dB.shape[0], 0))
    small = q.T @ dB @ q
    vals, vecs = np.linalg.eigh(sym(small))
    keep = np.abs(vals) > tol
    return vals[keep], q @ vecs[:, keep]


def _rank1_correction(M: np.ndarray, beta: float, q: np.ndarray) -> np.ndarray:
    """Left-multiply ``M`` by the exact inverse square root of ``I + beta q q^T``."""
    nq = float(q @ q)
    if nq == 0.0:
        return M
    val = 1.0 + beta * nq
    if val <= 0:
        raise IndefiniteBlockError("updated block is not positive definite")
    gamma = (1.0 / np.sqrt(val) - 1.0) / nq
    return M + gamma * np.outer(q, q @ M)


def _k_block_fop(K: np.ndarray, betas: np.ndarray, Q: np.ndarray, alpha: float):
    """One-block inverse-sqrt update for ``alpha B + (1-alpha) dB``.

    In whitened coordinates the new block is ``I + sum_i beta~_i q~_i q~_i^T``
    (rank at most 2).  A rank-1 update has an exact closed-form inverse
    square root; a rank-2 update is handled by applying that closed form to
    each direction in turn, which drops the cross term between the two
    modifications and is therefore accurate to first order in the product of
    the update sizes.
    """
    scale = 1.0 / np.sqrt(alpha)
    if betas.shape[0] == 0:
        return scale * K
    bt = (1.0 - alpha) / alpha * betas
    qt = K @ Q  # update directions in whitened coordinates
    order = np.argsort(-np.abs(bt), kind="stable")
    out = K
    for j in order:
        out = _rank1_correction(out, bt[j], qt[:, j])
    return scale * out


def rca_step(state: RcaState, x1_new: np.ndarray):
    """Fold one standardized sample into the state and refresh the model.

    Returns ``(state, Bf, Be, e0_last)``; the state is updated in place.
    Feeding the same sample to identical state snapshots yields identical
    results.
    """
    m1 = state.m1
    z, dx_new, x_level = _step_rows(state, x1_new)

    g = z @ state.R  # 1 x p*m1
    c = float(g @ z.T)
    denom = 1.0 + c
    if denom < 1e-12:
        raise NumericalBreakdownError("update denominator vanished")
    d = (dx_new - z @ state.Theta) / denom
    h = (x_level - z @ state.Phi) / denom

    # Increment blocks of the error products, evaluated through the
    # sufficient statistics (no growing matrix is touched).
    w0 = z @ state.JtE0
    w1 = z @ state.JtE1
    s = float(z @ (state.JtJ @ z.T))
    dA1 = (1.0 + s) * (d.T @ h) - d.T @ w1 - w0.T @ h
    dB1 = (1.0 + s) * (d.T @ d) - d.T @ w0 - w0.T @ d
    dB2 = (1.0 + s) * (h.T @ h) - h.T @ w1 - w1.T @ h
    dB1 = sym(dB1)
    dB2 = sym(dB2)

    n = state.n_rows
    alpha = n / (n + 1.0)
    A_new = alpha * state.A
    A_new[:m1, m1:] += (1.0 - alpha) * dA1
    A_new[m1:, :m1] += (1.0 - alpha) * dA1.T
    B_new = alpha * state.B
    B_new[:m1, :m1] += (1.0 - alpha) * dB1
    B_new[m1:, m1:] += (1.0 - alpha) * dB2

    # Error-product recursions; J~ = I - z^T g / (1+c) applied through its
    # rank-1 structure.
    u = state.JtJ @ z.T
    gcol = g.T
    inner0 = state.JtE0 + (gcol - u) @ d
    inner1 = state.JtE1 + (gcol - u) @ h
    state.JtE0 = inner0 - gcol @ ((z @ inner0) / denom)
    state.JtE1 = inner1 - gcol @ ((z @ inner1) / denom)
    M = state.JtJ + gcol @ g
    M = M - gcol @ ((z @ M) / denom)  # J~^T applied on the left
    state.JtJ = sym(M - ((M @ z.T) @ g) / denom)  # J~ on the right

    # Recursive least squares.
    state.Theta = state.Theta + gcol @ d
    state.Phi = state.Phi + gcol @ h
    state.R = sym(state.R - (gcol @ g) / denom)

    # Inverse square root of the diagonal blocks.
    tol1 = 1e-14 * max(1.0, float(np.abs(dB1).max(initial=0.0)))
    tol2 = 1e-14 * max(1.0, float(np.abs(dB2).max(initial=0.0)))
    b1, Q1 = _rank2_eig(dB1, np.column_stack([d.ravel(), w0.ravel()]), tol1)
    b2, Q2 = _rank2_eig(dB2, np.column_stack([h.ravel(), w1.ravel()]), tol2)
    if state.k_mode == "exact":
        state.K1 = inv_sqrt_psd(B_new[:m1, :m1])
        state.K2 = inv_sqrt_psd(B_new[m1:, m1:])
    else:
        state.K1 = _k_block_fop(state.K1, b1, Q1, alpha)
        state.K2 = _k_block_fop(state.K2, b2, Q2, alpha)

    state.A = sym(A_new)
    state.B = sym(B_new)
    state.n_rows = n + 1
    state.k += 1
    state.e0_last = d.ravel().copy()
    state.lag_window = np.vstack([state.lag_window[1:], np.asarray(x1_new).ravel()])

    if state.k_mode == "fop":
        state.steps_since_k_refresh += 1
        refresh = state.steps_since_k_refresh >= state.k_refresh_every
        if refresh or state.k_drift() > state.drift_tol:
            state.K1 = inv_sqrt_psd(state.B[:m1, :m1])
            state.K2 = inv_sqrt_psd(state.B[m1:, m1:])
            state.steps_since_k_refresh = 0

    # Eigensolve in whitened coordinates.
    K = np.zeros((2 * m1, 2 * m1))
    K[:m1, :m1] = state.K1
    K[m1:, m1:] = state.K2
    C = sym(K @ state.A @ K.T)
    lam, Wbar = np.linalg.eigh(C)
    order = np.argsort(-lam, kind="stable")
    lam = lam[order]
    W = fix_column_signs(K.T @ Wbar[:, order])

    r = state.model.r
    Wr = W[:, :r]
    state.model = CointegrationModel(
        Bf=Wr[m1:, :].copy(),
        Be=Wr[:m1, :].copy(),
        W=Wr,
        eigenvalues=lam,
        p=state.p,
        r=r,
        Theta=state.Theta,
        Phi=state.Phi,
    )
    return state, state.model.Bf, state.model.Be, state.e0_last
