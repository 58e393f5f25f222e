"""Data loading, validation, variable grouping, and standardization.

The monitoring pipeline works on a plain ``N x m`` matrix of measurements.
Variables are partitioned into three blocks supplied by the user: block 1
holds the nonstationary variables sharing a common trend, block 2 holds
stationary manipulated variables, block 3 everything else.  A unit-root test
(:func:`adf_test`) is provided as an advisory aid for choosing the grouping;
it never overrides the user's configuration.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConstantColumnError,
    DimensionMismatchError,
    NonFiniteDataError,
    SeriesTooShortError,
)

CONSTANT_VAR_TOL = 1e-12

# Large-sample critical values for the unit-root t-ratio in a regression
# with intercept (MacKinnon's constant-only approximations).
ADF_CRITICAL = {0.01: -3.43, 0.05: -2.86, 0.10: -2.57}


@dataclass
class DataMatrix:
    """Multivariate time series with per-variable labels.

    ``values`` is N x m with one sample per row at a fixed sampling interval.
    """

    values: np.ndarray
    variable_names: list[str] = field(default_factory=list)
    sample_interval_s: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise DimensionMismatchError("values must be a 2-d array")
        n, m = self.values.shape
        if n < 2 or m < 2:
            raise DimensionMismatchError(f"need at least 2x2 data, got {n}x{m}")
        if not np.isfinite(self.values).all():
            raise NonFiniteDataError("data contains NaN or infinite entries")
        if not self.variable_names:
            self.variable_names = [f"v{i:02d}" for i in range(m)]
        if len(self.variable_names) != m:
            raise DimensionMismatchError(
                f"{len(self.variable_names)} names for {m} columns"
            )
        if self.sample_interval_s <= 0:
            raise DimensionMismatchError("sample_interval_s must be positive")

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_variables(self) -> int:
        return self.values.shape[1]


@dataclass
class VariableGrouping:
    """Disjoint column-index lists for the three variable blocks.

    Block 1 must be nonempty; blocks 2 and 3 may be empty.
    """

    block1: list[int]
    block2: list[int] = field(default_factory=list)
    block3: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.block1 = [int(i) for i in self.block1]
        self.block2 = [int(i) for i in self.block2]
        self.block3 = [int(i) for i in self.block3]
        if not self.block1:
            raise DimensionMismatchError("block1 must be nonempty")
        all_idx = self.block1 + self.block2 + self.block3
        if len(set(all_idx)) != len(all_idx):
            raise DimensionMismatchError("blocks must be disjoint")
        if any(i < 0 for i in all_idx):
            raise DimensionMismatchError("negative column index")

    def validate_against(self, m: int):
        upper = max(self.block1 + self.block2 + self.block3)
        if upper >= m:
            raise DimensionMismatchError(f"index {upper} out of range for {m} columns")


@dataclass
class Scaler:
    """Per-variable mean and standard deviation used for standardization."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.std = np.atleast_1d(np.asarray(self.std, dtype=float))
        if self.mean.shape != self.std.shape:
            raise DimensionMismatchError("mean and std length differ")
        if np.any(self.std <= 0):
            raise ConstantColumnError(int(np.argmin(self.std)), float(self.std.min()))


def fit_scaler(x: np.ndarray) -> Scaler:
    """Column means and unbiased (N-1 divisor) standard deviations.

    Raises :class:`ConstantColumnError` for any column whose variance falls
    below ``CONSTANT_VAR_TOL``; standardizing such a column would blow up.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if not np.isfinite(x).all():
        raise NonFiniteDataError("cannot fit scaler on non-finite data")
    if x.shape[0] < 2:
        raise SeriesTooShortError("need at least 2 samples to fit a scaler")
    mean = x.mean(axis=0)
    var = x.var(axis=0, ddof=1)
    bad = np.flatnonzero(var < CONSTANT_VAR_TOL)
    if bad.size:
        raise ConstantColumnError(int(bad[0]), float(var[bad[0]]))
    return Scaler(mean=mean, std=np.sqrt(var))


def scale(s: Scaler, x: np.ndarray) -> np.ndarray:
    """Standardize rows of ``x`` with the scaler. Works on vectors and matrices."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != s.mean.shape[0]:
        raise DimensionMismatchError(
            f"data has {x.shape[-1]} columns, scaler expects {s.mean.shape[0]}"
        )
    return (x - s.mean) / s.std


def unscale(s: Scaler, x: np.ndarray) -> np.ndarray:
    """Inverse of :func:`scale`."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != s.mean.shape[0]:
        raise DimensionMismatchError(
            f"data has {x.shape[-1]} columns, scaler expects {s.mean.shape[0]}"
        )
    return x * s.std + s.mean


def update_scaler(s: Scaler, x: np.ndarray, k: int) -> Scaler:
    """Fold one new sample into a scaler fitted on ``k`` previous samples.

    Convex-combination update with weight ``k/(k+1)`` on the old statistics;
    iterated from a single-sample state it reproduces the batch mean exactly
    and the batch variance up to the usual biased/unbiased divisor.
    """
    if k < 1:
        raise DimensionMismatchError("k must be >= 1")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape[0] != s.mean.shape[0]:
        raise DimensionMismatchError("sample length does not match scaler")
    alpha = k / (k + 1.0)
    mean = alpha * s.mean + (1.0 - alpha) * x
    var = alpha * s.std**2 + (1.0 - alpha) * (x - mean) ** 2
    return Scaler(mean=mean, std=np.sqrt(np.maximum(var, CONSTANT_VAR_TOL)))


def adf_test(series: np.ndarray, max_lag: int = 10, alpha: float = 0.05) -> dict:
    """Unit-root test: t-ratio of the lagged level in a regression with intercept.

    The lag order is chosen by AIC over ``0..max_lag`` on a common sample so
    the criterion values are comparable.  Returns ``{"statistic", "lag",
    "stationary"}`` where ``stationary`` compares the statistic against the
    embedded critical value at ``alpha`` (one of 0.01, 0.05, 0.10).

    The decision is advisory for variable grouping; deterministic for fixed
    input and ``max_lag``.
    """
    y = np.asarray(series, dtype=float).ravel()
    n = y.shape[0]
    if alpha not in ADF_CRITICAL:
        raise ValueError(f"alpha must be one of {sorted(ADF_CRITICAL)}")
    if n <= 3 * (max_lag + 2):
        raise SeriesTooShortError(
            f"need more than {3 * (max_lag + 2)} observations, got {n}"
        )
    if not np.isfinite(y).all():
        raise NonFiniteDataError("series contains non-finite values")

    dy = np.diff(y)
    # Common estimation sample: targets dy[max_lag:], so every candidate lag
    # sees identical rows and AIC values are comparable.
    target = dy[max_lag:]
    nobs = target.shape[0]
    level = y[max_lag:-1]

    best = None
    for lag in range(max_lag + 1):
        cols = [np.ones(nobs), level]
        for i in range(1, lag + 1):
            cols.append(dy[max_lag - i : max_lag - i + nobs])
        design = np.column_stack(cols)
        beta, _, _, _ = np.linalg.lstsq(design, target, rcond=None)
        resid = target - design @ beta
        ssr = float(resid @ resid)
        k_params = design.shape[1]
        aic = nobs * np.log(max(ssr, 1e-300) / nobs) + 2 * k_params
        if best is None or aic < best[0]:
            s2 = ssr / (nobs - k_params)
            gram_inv = np.linalg.inv(design.T @ design)
            se = np.sqrt(s2 * gram_inv[1, 1])
            stat = float(beta[1] / se) if se > 0 else -np.inf
            best = (aic, lag, stat)

    _, lag, stat = best
    return {
        "statistic": stat,
        "lag": lag,
        "stationary": bool(stat < ADF_CRITICAL[alpha]),
    }


def load_csv(path) -> DataMatrix:
    """Read the package CSV format: header row of names, one sample per row."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header:
            raise DimensionMismatchError(f"{path}: empty file")
        names = [c.strip() for c in header.split(",")]
        rows = []
        for ln, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(names):
                raise DimensionMismatchError(
                    f"{path}:{ln}: expected {len(names)} fields, got {len(parts)}"
                )
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise NonFiniteDataError(f"{path}:{ln}: {exc}") from exc
    if len(rows) < 2:
        raise SeriesTooShortError(f"{path}: need at least 2 samples")
    return DataMatrix(values=np.array(rows, dtype=float), variable_names=names)


def save_csv(path, data: DataMatrix):
    """Write a :class:`DataMatrix` in the package CSV format."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(data.variable_names) + "\n")
        for row in data.values:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
