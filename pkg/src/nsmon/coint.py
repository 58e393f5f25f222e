"""Batch cointegration analysis on standardized nonstationary data.

Pipeline: build lagged regression matrices for a vector error-correction
model, estimate the short-run coefficients by least squares, form the
prediction-error product matrices, and solve the symmetric generalized
eigenproblem ``A w = lambda B w`` whose leading eigenvectors contain the
cointegration directions.  Rank is selected with a trace test, order with
AIC.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    IndefiniteBError,
    NoCointegrationError,
    RankDeficientError,
    TooFewSamplesError,
)
from .linalg import fix_column_signs, sym

GRAM_RIDGE_REL = 1e-8
CHOLESKY_JITTER_REL = 1e-10

# 95% quantiles of the limiting trace-statistic functional for the case with
# no deterministic trend and a constant restricted to the cointegration
# space, indexed by the number of common trends under the null (1..12).
# Computed by simulating the Brownian-motion functional (50k replications,
# 1000-step discretization); agrees with published tables to ~0.5.
TRACE_CRIT_95 = np.array(
    [9.17, 20.25, 35.14, 53.77, 76.36, 103.01, 133.65, 167.99, 206.30,
     248.08, 294.53, 344.34]
)


@dataclass
class LagMatrices:
    """Aligned level, difference, and stacked lagged-difference matrices.

    For order ``p`` and an ``N x m`` series the three matrices have ``N - p``
    rows.  Row ``t`` (0-based) pairs the difference target ``dx[t + p]`` with
    the level ``x[t + p - 1]`` and the ``p`` preceding differences
    ``dx[t], ..., dx[t + p - 1]`` concatenated oldest first.  The first
    difference ``dx[0]`` (which would need a sample before the series starts)
    is defined as zero.
    """

    Xp: np.ndarray
    dXp: np.ndarray
    dXlag: np.ndarray
    p: int

    @property
    def n_rows(self) -> int:
        return self.Xp.shape[0]


@dataclass
class CointegrationModel:
    """Fitted long-run model: eigenvectors split into static and dynamic parts.

    ``W`` stacks the dynamic block ``Be`` on top of the static block ``Bf``;
    ``Bf`` columns span the cointegration space, so ``X @ Bf`` is stationary
    for in-model data.  ``Theta`` and ``Phi`` are the least-squares
    coefficients of the difference and level regressions.
    """

    Bf: np.ndarray
    Be: np.ndarray
    W: np.ndarray
    eigenvalues: np.ndarray
    p: int
    r: int
    Theta: np.ndarray
    Phi: np.ndarray

    @property
    def m1(self) -> int:
        return self.Bf.shape[0]


def build_lag_matrices(x: np.ndarray, p: int) -> LagMatrices:
    """Construct the regression matrices for order ``p`` (see LagMatrices)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, m = x.shape
    if p < 1:
        raise TooFewSamplesError("order p must be >= 1")
    if n <= p + 1:
        raise TooFewSamplesError(f"need more than {p + 1} samples for p={p}, got {n}")
    d = np.diff(x, axis=0)
    dpad = np.vstack([np.zeros((1, m)), d])  # dx[0] := 0, see LagMatrices
    rows = n - p
    Xp = x[p - 1 : n - 1]
    dXp = dpad[p:n]
    dXlag = np.column_stack([dpad[t : t + rows] for t in range(p)])
    return LagMatrices(Xp=Xp, dXp=dXp, dXlag=dXlag, p=p)


def _regularized_gram_inverse(dXlag: np.ndarray):
    """Inverse of the regressor Gram matrix, ridged if ill-conditioned."""
    gram = dXlag.T @ dXlag
    dim = gram.shape[0]
    eigs = np.linalg.eigvalsh(sym(gram))
    if eigs[0] < 1e-10 * max(eigs[-1], 1.0):
        gram = gram + (GRAM_RIDGE_REL * np.trace(gram) / dim) * np.eye(dim)
        eigs = np.linalg.eigvalsh(sym(gram))
        if eigs[0] <= 0:
            raise RankDeficientError(
                "lagged-difference regressors are rank deficient after ridge"
            )
    return sym(np.linalg.inv(gram)), gram


def ols_fit(lags: LagMatrices):
    """Least-squares coefficients of the difference and level regressions.

    Returns ``(Theta, Phi, R)`` where ``R`` is the (possibly ridged) inverse
    Gram matrix of the stacked lagged differences; ``R`` seeds the recursive
    updater.
    """
    R, _ = _regularized_gram_inverse(lags.dXlag)
    Theta = R @ (lags.dXlag.T @ lags.dXp)
    Phi = R @ (lags.dXlag.T @ lags.Xp)
    return Theta, Phi, R


def prediction_errors(lags: LagMatrices, Theta: np.ndarray, Phi: np.ndarray):
    """Residuals of the two regressions: ``E0`` for differences, ``E1`` for levels."""
    E0 = lags.dXp - lags.dXlag @ Theta
    E1 = lags.Xp - lags.dXlag @ Phi
    return E0, E1


def assemble_ab(E0: np.ndarray, E1: np.ndarray, n_rows: int | None = None):
    """Normalized error-product matrices of the generalized eigenproblem.

    ``A`` holds the cross products on the off-diagonal blocks, ``B`` the
    self products on the diagonal; both are divided by the row count so the
    batch and streaming paths agree.
    """
    if E0.shape != E1.shape:
        raise TooFewSamplesError("E0 and E1 must have the same shape")
    n = n_rows if n_rows is not None else E0.shape[0]
    m = E0.shape[1]
    S00 = E0.T @ E0 / n
    S11 = E1.T @ E1 / n
    S01 = E0.T @ E1 / n
    A = np.zeros((2 * m, 2 * m))
    A[:m, m:] = S01
    A[m:, :m] = S01.T
    B = np.zeros((2 * m, 2 * m))
    B[:m, :m] = sym(S00)
    B[m:, m:] = sym(S11)
    return A, B


def solve_gevd(A: np.ndarray, B: np.ndarray):
    """Solve ``A w = lambda B w`` for symmetric A and positive definite B.

    Cholesky route: with ``B = L L^T`` the problem reduces to a symmetric
    standard eigenproblem for ``L^-1 A L^-T``.  Returns the full eigenvector
    matrix (columns) and eigenvalues sorted descending; column signs are
    fixed for reproducibility.  A relative jitter is added to ``B`` when it
    is numerically semidefinite.
    """
    A = sym(np.asarray(A, dtype=float))
    B = sym(np.asarray(B, dtype=float))
    try:
        L = np.linalg.cholesky(B)
    except np.linalg.LinAlgError:
        jitter = CHOLESKY_JITTER_REL * np.trace(B) / B.shape[0]
        try:
            L = np.linalg.cholesky(B + jitter * np.eye(B.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise IndefiniteBError("B is not positive definite") from exc
    C = np.linalg.solve(L, np.linalg.solve(L, A).T).T
    lam, Wbar = np.linalg.eigh(sym(C))
    order = np.argsort(-lam, kind="stable")
    lam = lam[order]
    Wbar = Wbar[:, order]
    W = np.linalg.solve(L.T, Wbar)
    return fix_column_signs(W), lam


def trace_test(lambdas: np.ndarray, n_rows: int, alpha: float = 0.05) -> int:
    """Cointegration rank from squared canonical correlations.

    ``lambdas`` are the squared canonical correlations sorted descending
    (values in ``[0, 1)``).  Returns the smallest ``h`` whose tail statistic
    ``-n_rows * sum(log(1 - lambda_i), i > h)`` falls below the embedded 5%
    critical value; ``m1`` when every test rejects.  Increasing any
    eigenvalue can only increase the statistic, so the result is monotone.
    """
    if abs(alpha - 0.05) > 1e-12:
        raise ValueError("only the embedded 5% critical values are available")
    lam = np.clip(np.asarray(lambdas, dtype=float), 0.0, 1.0 - 1e-12)
    m = lam.shape[0]
    if m > TRACE_CRIT_95.shape[0]:
        raise TooFewSamplesError(
            f"critical values embedded up to {TRACE_CRIT_95.shape[0]} variables"
        )
    for h in range(m):
        stat = -n_rows * np.log1p(-lam[h:]).sum()
        if stat < TRACE_CRIT_95[m - h - 1]:
            return h
    return m


def squared_canonical_correlations(lam: np.ndarray, m1: int) -> np.ndarray:
    """Map the symmetric-pencil spectrum to squared canonical correlations.

    The pencil's eigenvalues come in ``+/-`` pairs; the positive half are
    the canonical correlations, so their squares feed the trace test.
    """
    lam = np.asarray(lam, dtype=float)
    pos = lam[:m1]
    return np.clip(pos, 0.0, 1.0) ** 2


def select_order_aic(x: np.ndarray, p_max: int) -> int:
    """Regression order in ``[1, p_max]`` minimizing AIC of the full model.

    The criterion is ``n * log det(residual covariance) + 2 * n_coeff`` for
    the regression of differences on lagged differences plus levels.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, m = x.shape
    if p_max < 1:
        raise TooFewSamplesError("p_max must be >= 1")
    if n <= 3 * p_max * m:
        raise TooFewSamplesError(
            f"need more than {3 * p_max * m} samples for p_max={p_max}"
        )
    best_p, best_aic = 1, np.inf
    for p in range(1, p_max + 1):
        lags = build_lag_matrices(x, p)
        design = np.column_stack([lags.dXlag, lags.Xp])
        beta, _, _, _ = np.linalg.lstsq(design, lags.dXp, rcond=None)
        resid = lags.dXp - design @ beta
        nr = lags.n_rows
        cov = resid.T @ resid / nr
        sign, logdet = np.linalg.slogdet(cov + 1e-300 * np.eye(m))
        if sign <= 0:
            logdet = -np.inf
        n_coeff = design.shape[1] * m
        aic = nr * logdet + 2 * n_coeff
        if aic < best_aic:
            best_aic, best_p = aic, p
    return best_p


def fit_ca(x1: np.ndarray, p: int, r_override: int | None = None) -> CointegrationModel:
    """Full batch fit on standardized block-1 data.

    Composes lag construction, least squares, error products, and the
    generalized eigensolve; the rank comes from the trace test unless
    ``r_override`` pins it.  Raises :class:`NoCointegrationError` when the
    test selects rank zero and no override is given.
    """
    x1 = np.atleast_2d(np.asarray(x1, dtype=float))
    m1 = x1.shape[1]
    if m1 < 2:
        raise TooFewSamplesError("need at least 2 variables for cointegration")
    lags = build_lag_matrices(x1, p)
    Theta, Phi, R = ols_fit(lags)
    E0, E1 = prediction_errors(lags, Theta, Phi)
    A, B = assemble_ab(E0, E1)
    W_full, lam = solve_gevd(A, B)
    if r_override is not None:
        r = int(r_override)
        if not 1 <= r <= m1:
            raise NoCointegrationError(f"rank override {r} outside [1, {m1}]")
    else:
        lam_sq = squared_canonical_correlations(lam, m1)
        r = trace_test(lam_sq, lags.n_rows)
        if r == 0:
            raise NoCointegrationError("trace test found no cointegration relation")
        r = min(r, m1)
    W = W_full[:, :r]
    return CointegrationModel(
        Bf=W[m1:, :].copy(),
        Be=W[:m1, :].copy(),
        W=W,
        eigenvalues=lam,
        p=p,
        r=r,
        Theta=Theta,
        Phi=Phi,
    )
