"""Composite monitoring: statistics, density thresholds, decision rule, and
mode-switch retraining.

Offline training fits the long-run model on block 1, projects its residual
directions together with block 3 into a short-term-dynamics vector, fits
the recursive PCA there, scores the training data, and sets thresholds at a
high quantile of a kernel density estimate.  Online, each sample is scored
against four statistics; the rule table maps threshold exceedances and
their persistence to one of four statuses, and a confirmed new mode
triggers a buffered retrain whose PCA step is anchored to the previous
projection.
"""

from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import ndtr

from . import coint
from .coint_online import RcaState, innovation, rca_init, rca_step
from .errors import (
    InvalidConfigError,
    LengthMismatchError,
    TooFewSamplesError,
    TooFewValuesError,
    UntrainedError,
)
from .ingest import DataMatrix, Scaler, VariableGrouping, fit_scaler, scale
from .pca_ewc import EwcPenalty, compute_omega, fit_pca_ewc, identity_omega
from .pca_online import RpcaState, cpv_select, rpca_init, rpca_update


class MonitorStatus(str, Enum):
    NORMAL = "normal"
    NEW_MODE = "new_mode"
    POTENTIAL_FAULT = "potential_fault"
    FAULT = "fault"


#: statuses that count as alarms for detection metrics
ALARM_STATUSES = (MonitorStatus.POTENTIAL_FAULT, MonitorStatus.FAULT)


@dataclass
class StatRecord:
    """Four nonnegative monitoring statistics for one sample."""

    t2f: float
    t2e: float
    t2: float
    spe: float
    timestamp_index: int = 0


@dataclass
class Thresholds:
    t2f_lim: float
    t2e_lim: float
    t2_lim: float
    spe_lim: float
    quantile: float

    def as_dict(self) -> dict:
        return {
            "t2f_lim": self.t2f_lim,
            "t2e_lim": self.t2e_lim,
            "t2_lim": self.t2_lim,
            "spe_lim": self.spe_lim,
            "quantile": self.quantile,
        }


@dataclass
class AlarmCounters:
    """Consecutive-pattern run lengths and alarm latch carried between samples."""

    new_mode_run: int = 0
    ts_run: int = 0
    all_run: int = 0
    clean_run: int = 0
    latched: str | None = None  # "potential_fault" | "fault" | None

    def reset(self):
        self.new_mode_run = 0
        self.ts_run = 0
        self.all_run = 0
        self.clean_run = 0
        self.latched = None


@dataclass
class MonitorConfig:
    """Tuning knobs for training and online monitoring."""

    p: int | None = None  # regression order; None selects by AIC up to p_max
    p_max: int = 5
    r: int | None = None  # cointegration rank; None selects by trace test
    cpv_threshold: float = 0.85
    kde_quantile: float = 0.99
    zeta: float = 1.0
    n0: int = 300  # samples buffered before a new-mode retrain
    persist_n: int = 5
    confirm_n: int = 20
    reorth_period: int = 50
    threshold_refresh_every: int = 200
    threshold_window: int = 1000
    min_train: int = 300
    k_mode: str = "fop"
    drift_tol: float = 1e-6
    k_refresh_every: int = 500
    lambda_mode: str = "squared"
    omega_strategy: str = "covariance"  # or "identity"

    def __post_init__(self):
        if not 0.0 < self.cpv_threshold <= 1.0:
            raise InvalidConfigError("cpv_threshold must be in (0, 1]")
        if not 0.9 < self.kde_quantile < 0.9999:
            raise InvalidConfigError("kde_quantile must be in (0.9, 0.9999)")
        if self.zeta < 0:
            raise InvalidConfigError("zeta must be nonnegative")
        for name in ("n0", "persist_n", "confirm_n", "reorth_period",
                     "threshold_refresh_every", "threshold_window",
                     "min_train", "p_max", "k_refresh_every"):
            if getattr(self, name) < 1:
                raise InvalidConfigError(f"{name} must be >= 1")
        if self.p is not None and self.p < 1:
            raise InvalidConfigError("p must be >= 1 when given")
        if self.r is not None and self.r < 1:
            raise InvalidConfigError("r must be >= 1 when given")
        if self.k_mode not in ("fop", "fop_pure", "exact"):
            raise InvalidConfigError("k_mode must be fop, fop_pure, or exact")
        if self.lambda_mode not in ("squared", "literal"):
            raise InvalidConfigError("lambda_mode must be squared or literal")
        if self.omega_strategy not in ("covariance", "identity"):
            raise InvalidConfigError("omega_strategy must be covariance or identity")


@dataclass
class PipelineState:
    """Everything the online loop needs, one writer per stream."""

    config: MonitorConfig
    grouping: VariableGrouping
    variable_names: list
    scaler1: Scaler
    scaler2: Scaler | None
    rca: RcaState
    rpca: RpcaState
    thresholds: Thresholds
    counters: AlarmCounters
    mode_id: int = 0
    ewc: EwcPenalty | None = None
    stat_windows: dict = field(default_factory=dict)
    accepted_since_refresh: int = 0
    new_mode_buffer: list | None = None
    pending_penalty: EwcPenalty | None = None
    sample_index: int = 0

    @property
    def m1(self) -> int:
        return len(self.grouping.block1)


def kde_threshold(values, quantile: float) -> float:
    """High quantile of a Gaussian kernel density estimate.

    Bandwidth follows Silverman's rule; the quantile is located by bisection
    on the smoothed distribution function to an interval of 1e-10.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size < 50:
        raise TooFewValuesError(f"need at least 50 values, got {v.size}")
    if not 0.9 < quantile < 0.9999:
        raise ValueError("quantile must be in (0.9, 0.9999)")
    n = v.size
    sd = float(v.std(ddof=1))
    if sd <= 0:
        sd = max(1e-12, 1e-9 * max(1.0, abs(float(v.mean()))))
    h = sd * (0.75 * n) ** (-0.2)

    def cdf(x):
        return float(ndtr((x - v) / h).mean())

    lo = float(v.min())  # cdf(min) <= 1/2 < quantile always
    hi = float(v.max()) + 10.0 * h
    for _ in range(100):
        if cdf(hi) >= quantile:
            break
        hi += 10.0 * h
    while hi - lo > 1e-10:
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:  # interval no longer representable
            break
        if cdf(mid) < quantile:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def projector_complement(Bf: np.ndarray) -> np.ndarray:
    """Orthogonal projector onto the complement of ``span(Bf)``."""
    m = Bf.shape[0]
    gram = Bf.T @ Bf
    return np.eye(m) - Bf @ np.linalg.solve(gram, Bf.T)


def _split_sample(state: PipelineState, x: np.ndarray):
    x = np.asarray(x, dtype=float).ravel()
    g = state.grouping
    x1 = scale(state.scaler1, x[g.block1])
    x2s = scale(state.scaler2, x[g.block2]) if g.block2 else np.zeros(0)
    x3 = x[g.block3] if g.block3 else np.zeros(0)
    return x1, x2s, x3


def _short_term_vector(x1_scaled: np.ndarray, x3_raw: np.ndarray, Bf: np.ndarray):
    bperp = projector_complement(Bf)
    return np.concatenate([x1_scaled @ bperp, x3_raw])


def compute_statistics(state: PipelineState, x: np.ndarray, index: int = 0) -> StatRecord:
    """Score one raw sample against the current model without updating it."""
    if state.rca is None or state.rpca is None:
        raise UntrainedError("pipeline has no trained model")
    x1, x2s, x3 = _split_sample(state, x)
    model = state.rca.model

    xhat1 = np.concatenate([x1 @ model.Bf, x2s])
    t2f = float(xhat1 @ xhat1)

    e0 = innovation(state.rca, x1)
    proj = e0 @ model.Be
    t2e = float(proj @ proj)

    z2 = (_short_term_vector(x1, x3, model.Bf) - state.rpca.mean) / state.rpca.std
    l = state.rpca.l
    Pl = state.rpca.P[:, :l]
    lam = state.rpca.Lambda[:l]
    lam = np.maximum(lam, 1e-12 * max(float(state.rpca.Lambda.max()), 1e-12))
    scores = z2 @ Pl
    t2 = float(np.sum(scores**2 / lam))
    spe = max(float(z2 @ z2 - scores @ scores), 0.0)
    return StatRecord(t2f=t2f, t2e=t2e, t2=t2, spe=spe, timestamp_index=index)


def classify(
    rec: StatRecord,
    thr: Thresholds,
    counters: AlarmCounters,
    persist_n: int = 5,
    confirm_n: int = 20,
) -> MonitorStatus:
    """Map one statistic record to a status, advancing the run counters.

    Rule table: nothing exceeded means normal operation; the static
    equilibrium statistic alone staying high while the other three are back
    in band for ``confirm_n`` samples confirms a new operating mode; the
    short-term statistics exceeding for ``persist_n`` samples while the two
    equilibrium statistics are in band raise a fault candidate; all four
    exceeding for ``persist_n`` samples raise a real fault.  Shorter
    exceedances are treated as noise.

    A raised alarm latches: it holds through sporadic single-statistic
    blips and releases only after ``persist_n`` consecutive fully clean
    samples, so a persistent fault cannot leak model updates through
    momentary dips.
    """
    f = rec.t2f > thr.t2f_lim
    e = rec.t2e > thr.t2e_lim
    t = rec.t2 > thr.t2_lim
    s = rec.spe > thr.spe_lim

    # New-mode confirmation counts settled samples within one continuous
    # stretch of t2f exceedance; blips of the other statistics pause the
    # count, only t2f dropping back resets it.
    if not f:
        counters.new_mode_run = 0
    elif not e and not t and not s:
        counters.new_mode_run += 1
    counters.ts_run = counters.ts_run + 1 if (t or s) else 0
    counters.all_run = counters.all_run + 1 if (f and e and t and s) else 0
    counters.clean_run = counters.clean_run + 1 if not (f or e or t or s) else 0

    if counters.all_run >= persist_n:
        counters.latched = MonitorStatus.FAULT.value
    elif (
        counters.ts_run >= persist_n
        and not f
        and not e
        and counters.latched != MonitorStatus.FAULT.value
    ):
        counters.latched = MonitorStatus.POTENTIAL_FAULT.value
    if counters.latched is not None and counters.clean_run >= persist_n:
        counters.latched = None

    if counters.latched is not None:
        return MonitorStatus(counters.latched)
    if counters.new_mode_run >= confirm_n:
        return MonitorStatus.NEW_MODE
    return MonitorStatus.NORMAL


def _training_statistics(
    x1s: np.ndarray,
    x2s: np.ndarray | None,
    x3: np.ndarray,
    model,
    E0: np.ndarray,
    rpca: RpcaState,
):
    """Statistic arrays over the training window (used to seed thresholds)."""
    n = x1s.shape[0]
    xf = x1s @ model.Bf
    if x2s is not None:
        xhat1 = np.column_stack([xf, x2s])
    else:
        xhat1 = xf
    t2f = np.sum(xhat1**2, axis=1)

    proj = E0 @ model.Be
    t2e = np.sum(proj**2, axis=1)

    bperp = projector_complement(model.Bf)
    comp = x1s @ bperp
    xhat2 = np.column_stack([comp, x3]) if x3.size else comp
    z2 = (xhat2 - rpca.mean) / rpca.std
    l = rpca.l
    Pl = rpca.P[:, :l]
    lam = np.maximum(rpca.Lambda[:l], 1e-12 * max(float(rpca.Lambda.max()), 1e-12))
    scores = z2 @ Pl
    t2 = np.sum(scores**2 / lam, axis=1)
    spe = np.maximum(np.sum(z2**2, axis=1) - np.sum(scores**2, axis=1), 0.0)
    return t2f, t2e, t2, spe


def _rpca_with_penalty(
    xhat2_raw: np.ndarray, config: MonitorConfig, penalty: EwcPenalty | None
) -> RpcaState:
    """Batch PCA state, anchored to the previous projection when given."""
    state = rpca_init(
        xhat2_raw,
        cpv_threshold=config.cpv_threshold,
        reorth_period=config.reorth_period,
        lambda_mode=config.lambda_mode,
    )
    if penalty is None or penalty.zeta == 0:
        return state
    z2 = (xhat2_raw - state.mean) / state.std
    result = fit_pca_ewc(z2, penalty, state.l)
    P_l = result.P
    from .linalg import orthonormal_completion

    comp = orthonormal_completion(P_l)
    P_full = np.column_stack([P_l, comp])
    cov = z2.T @ z2 / max(z2.shape[0] - 1, 1)
    lam = np.einsum("ij,jk,ki->i", P_full.T, cov, P_full)
    order = np.argsort(-lam, kind="stable")
    state.P = P_full[:, order]
    state.Lambda = np.maximum(lam[order], 0.0)
    state.l = cpv_select(state.Lambda, config.cpv_threshold)
    return state


def offline_train(
    data: DataMatrix,
    grouping: VariableGrouping,
    config: MonitorConfig | None = None,
    penalty: EwcPenalty | None = None,
    mode_id: int = 0,
) -> PipelineState:
    """Fit the full pipeline on a training window.

    Steps: split blocks, fit reference scalers, fit the long-run model on
    block 1, project onto its orthogonal complement, join with block 3, fit
    the PCA there (anchored to ``penalty`` when given), score the training
    data, and set density thresholds.  Deterministic for fixed inputs.
    """
    config = config or MonitorConfig()
    grouping.validate_against(data.n_variables)
    X = data.values
    n = X.shape[0]
    if n < config.min_train:
        raise TooFewSamplesError(
            f"need at least {config.min_train} training samples, got {n}"
        )

    X1 = X[:, grouping.block1]
    scaler1 = fit_scaler(X1)
    x1s = scale(scaler1, X1)

    scaler2 = None
    x2s = None
    if grouping.block2:
        X2 = X[:, grouping.block2]
        scaler2 = fit_scaler(X2)
        x2s = scale(scaler2, X2)

    p = config.p if config.p is not None else coint.select_order_aic(x1s, config.p_max)
    model = coint.fit_ca(x1s, p, r_override=config.r)
    lags = coint.build_lag_matrices(x1s, p)
    E0, E1 = coint.prediction_errors(lags, model.Theta, model.Phi)

    X3 = X[:, grouping.block3] if grouping.block3 else np.zeros((n, 0))
    bperp = projector_complement(model.Bf)
    xhat2_raw = np.column_stack([x1s @ bperp, X3]) if X3.size else x1s @ bperp

    rpca = _rpca_with_penalty(xhat2_raw, config, penalty)
    rca = rca_init(
        model,
        lags,
        E0,
        E1,
        k_mode=config.k_mode,
        drift_tol=config.drift_tol,
        k_refresh_every=config.k_refresh_every,
    )

    t2f, t2e, t2, spe = _training_statistics(x1s, x2s, X3, model, E0, rpca)
    q = config.kde_quantile
    thresholds = Thresholds(
        t2f_lim=kde_threshold(t2f, q),
        t2e_lim=kde_threshold(t2e, q),
        t2_lim=kde_threshold(t2, q),
        spe_lim=kde_threshold(spe, q),
        quantile=q,
    )

    w = config.threshold_window
    windows = {
        "t2f": deque(t2f[-w:].tolist(), maxlen=w),
        "t2e": deque(t2e[-w:].tolist(), maxlen=w),
        "t2": deque(t2[-w:].tolist(), maxlen=w),
        "spe": deque(spe[-w:].tolist(), maxlen=w),
    }
    return PipelineState(
        config=config,
        grouping=grouping,
        variable_names=list(data.variable_names),
        scaler1=scaler1,
        scaler2=scaler2,
        rca=rca,
        rpca=rpca,
        thresholds=thresholds,
        counters=AlarmCounters(),
        mode_id=mode_id,
        ewc=penalty,
        stat_windows=windows,
    )


def _refresh_thresholds(state: PipelineState):
    q = state.thresholds.quantile
    w = state.stat_windows
    if min(len(w[k]) for k in ("t2f", "t2e", "t2", "spe")) < 50:
        return
    state.thresholds = Thresholds(
        t2f_lim=kde_threshold(np.array(w["t2f"]), q),
        t2e_lim=kde_threshold(np.array(w["t2e"]), q),
        t2_lim=kde_threshold(np.array(w["t2"]), q),
        spe_lim=kde_threshold(np.array(w["spe"]), q),
        quantile=q,
    )


def _capture_penalty(state: PipelineState) -> EwcPenalty:
    """Importance anchor built from the current mode's PCA, pre-switch."""
    rpca = state.rpca
    P_l = rpca.P[:, : rpca.l].copy()
    if state.config.omega_strategy == "identity":
        omega = identity_omega(rpca.m2, P_l, state.config.zeta)
    else:
        cov = (rpca.P * rpca.Lambda) @ rpca.P.T
        omega = compute_omega(cov, P_l, state.config.zeta)
    return EwcPenalty(Omega=omega, P_prev=P_l, zeta=state.config.zeta)


def online_step(state: PipelineState, x: np.ndarray):
    """Score one raw sample, classify, and update or retrain as the rule says.

    Returns ``(state, record, status)``.  The returned state is a new object
    after a completed retrain and the same (mutated) object otherwise, so
    callers should always rebind.
    """
    x = np.asarray(x, dtype=float).ravel()
    rec = compute_statistics(state, x, index=state.sample_index)
    state.sample_index += 1

    if state.new_mode_buffer is not None:
        state.new_mode_buffer.append(x)
        if len(state.new_mode_buffer) >= state.config.n0:
            data = DataMatrix(
                values=np.vstack(state.new_mode_buffer),
                variable_names=list(state.variable_names),
            )
            cfg = state.config
            new_state = offline_train(
                data,
                state.grouping,
                cfg,
                penalty=state.pending_penalty,
                mode_id=state.mode_id + 1,
            )
            new_state.sample_index = state.sample_index
            return new_state, rec, MonitorStatus.NEW_MODE
        return state, rec, MonitorStatus.NEW_MODE

    status = classify(
        rec,
        state.thresholds,
        state.counters,
        persist_n=state.config.persist_n,
        confirm_n=state.config.confirm_n,
    )

    if status is MonitorStatus.NORMAL:
        x1, _, x3 = _split_sample(state, x)
        rca_step(state.rca, x1)
        xhat2_raw = _short_term_vector(x1, x3, state.rca.model.Bf)
        rpca_update(state.rpca, xhat2_raw)
        for key, val in (("t2f", rec.t2f), ("t2e", rec.t2e), ("t2", rec.t2), ("spe", rec.spe)):
            state.stat_windows[key].append(float(val))
        state.accepted_since_refresh += 1
        if state.accepted_since_refresh >= state.config.threshold_refresh_every:
            _refresh_thresholds(state)
            state.accepted_since_refresh = 0
    elif status is MonitorStatus.NEW_MODE:
        state.pending_penalty = _capture_penalty(state)
        state.new_mode_buffer = [x]
        state.counters.reset()
    # potential fault / fault: model frozen, nothing updates

    return state, rec, status


def evaluate(statuses, faulty) -> dict:
    """Detection metrics from a status sequence and ground-truth labels.

    ``fdr`` is the alarmed fraction of faulty samples (absent when no sample
    is faulty), ``far`` the alarmed fraction of normal samples (absent when
    every sample is faulty), ``dd`` the delay in samples from fault onset to
    the first alarm at or after it (absent when never detected or no fault).
    """
    statuses = list(statuses)
    fy = np.asarray(list(faulty), dtype=bool)
    if len(statuses) != fy.shape[0]:
        raise LengthMismatchError(
            f"{len(statuses)} statuses vs {fy.shape[0]} labels"
        )
    alarm = np.array(
        [MonitorStatus(s) in ALARM_STATUSES for s in statuses], dtype=bool
    )
    out = {"fdr": None, "far": None, "dd": None}
    n_faulty = int(fy.sum())
    n_normal = int((~fy).sum())
    if n_faulty:
        out["fdr"] = float((alarm & fy).sum() / n_faulty)
        onset = int(np.argmax(fy))
        hits = np.flatnonzero(alarm[onset:])
        out["dd"] = int(hits[0]) if hits.size else None
    if n_normal:
        out["far"] = float((alarm & ~fy).sum() / n_normal)
    return out
