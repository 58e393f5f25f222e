"""Labeled synthetic multimode data with cointegrated common trends.

Block 1 variables load a small number of shared random-walk trends plus
stationary AR(1) noise, so their cointegration rank is known by
construction (block width minus trend count).  Block 2 sits at per-mode
setpoints with white noise, block 3 follows AR(1) noise around fixed
levels.  Mode switches swap the loading matrix and setpoints instantly;
faults add a step bias or a linear drift to one variable from a scripted
onset.  Everything is reproducible from the seed.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfigError
from .ingest import DataMatrix

AR_COEFF = 0.6
TREND_STD = 1.0


@dataclass
class ModeSpec:
    """One operating regime: block-1 loading, block-2 setpoints, duration."""

    loading: np.ndarray  # m1 x n_trends
    setpoints: np.ndarray  # m2_count
    duration: int

    def __post_init__(self):
        self.loading = np.atleast_2d(np.asarray(self.loading, dtype=float))
        self.setpoints = np.atleast_1d(np.asarray(self.setpoints, dtype=float))
        if self.duration < 1:
            raise InvalidConfigError("mode duration must be positive")


@dataclass
class FaultSpec:
    """Additive fault on one variable from ``onset`` to the end of the run.

    ``bias`` adds ``magnitude``; ``drift`` adds ``magnitude * (t - onset)``.
    """

    onset: int
    variable: int
    kind: str
    magnitude: float

    def __post_init__(self):
        if self.kind not in ("bias", "drift"):
            raise InvalidConfigError(f"unknown fault kind {self.kind!r}")
        if self.onset < 0 or self.variable < 0:
            raise InvalidConfigError("fault onset and variable must be nonnegative")


@dataclass
class ScenarioConfig:
    m1: int
    m2_count: int
    m3_count: int
    n_trends: int
    modes: list
    faults: list = field(default_factory=list)
    noise_std: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.m1 < 2:
            raise InvalidConfigError("m1 must be >= 2")
        if self.m2_count < 0 or self.m3_count < 0:
            raise InvalidConfigError("block sizes must be nonnegative")
        if not 1 <= self.n_trends < self.m1:
            raise InvalidConfigError("need 1 <= n_trends < m1")
        if not self.modes:
            raise InvalidConfigError("at least one mode required")
        if self.noise_std <= 0:
            raise InvalidConfigError("noise_std must be positive")
        total = 0
        for mode in self.modes:
            if mode.loading.shape != (self.m1, self.n_trends):
                raise InvalidConfigError(
                    f"loading shape {mode.loading.shape} != ({self.m1}, {self.n_trends})"
                )
            if mode.setpoints.shape[0] != self.m2_count:
                raise InvalidConfigError("setpoints length != m2_count")
            total += mode.duration
        m = self.m1 + self.m2_count + self.m3_count
        for fault in self.faults:
            if fault.onset >= total:
                raise InvalidConfigError(f"fault onset {fault.onset} beyond {total}")
            if fault.variable >= m:
                raise InvalidConfigError(f"fault variable {fault.variable} >= {m}")

    @property
    def n_samples(self) -> int:
        return sum(mode.duration for mode in self.modes)

    @property
    def n_variables(self) -> int:
        return self.m1 + self.m2_count + self.m3_count


@dataclass
class Labels:
    """Per-sample ground truth aligned with the generated data."""

    mode_id: np.ndarray
    faulty: np.ndarray


def _ar1(rng, n, m, coeff, innov_std):
    eps = rng.normal(0.0, innov_std, size=(n, m))
    out = np.empty_like(eps)
    if n == 0 or m == 0:
        return eps
    # start at the stationary distribution so early samples are not special
    out[0] = eps[0] / np.sqrt(1.0 - coeff**2)
    for t in range(1, n):
        out[t] = coeff * out[t - 1] + eps[t]
    return out


def generate(config: ScenarioConfig):
    """Produce ``(DataMatrix, Labels)`` for the scenario."""
    rng = np.random.default_rng([config.seed, 1])
    n = config.n_samples
    m1, m2c, m3c = config.m1, config.m2_count, config.m3_count

    tau = np.cumsum(rng.normal(0.0, TREND_STD, size=(n, config.n_trends)), axis=0)
    noise1 = _ar1(rng, n, m1, AR_COEFF, config.noise_std)
    noise2 = rng.normal(0.0, config.noise_std, size=(n, m2c))
    levels3 = rng.normal(0.0, 1.0, size=m3c)
    noise3 = _ar1(rng, n, m3c, AR_COEFF, config.noise_std)

    block1 = np.empty((n, m1))
    block2 = np.empty((n, m2c))
    mode_id = np.empty(n, dtype=int)
    start = 0
    for i, mode in enumerate(config.modes):
        stop = start + mode.duration
        block1[start:stop] = tau[start:stop] @ mode.loading.T + noise1[start:stop]
        block2[start:stop] = mode.setpoints + noise2[start:stop]
        mode_id[start:stop] = i
        start = stop
    block3 = levels3 + noise3

    values = np.column_stack([b for b in (block1, block2, block3) if b.size]) \
        if (m2c or m3c) else block1
    faulty = np.zeros(n, dtype=bool)
    for fault in config.faults:
        idx = np.arange(fault.onset, n)
        if fault.kind == "bias":
            values[idx, fault.variable] += fault.magnitude
        else:
            values[idx, fault.variable] += fault.magnitude * (idx - fault.onset)
        faulty[idx] = True

    names = (
        [f"ns{i:02d}" for i in range(m1)]
        + [f"mv{i:02d}" for i in range(m2c)]
        + [f"aux{i:02d}" for i in range(m3c)]
    )
    return DataMatrix(values=values, variable_names=names), Labels(
        mode_id=mode_id, faulty=faulty
    )


def true_coint_space(loading: np.ndarray) -> np.ndarray:
    """Left null space of the loading matrix: the true cointegration space.

    Any vector orthogonal to every trend loading kills the common trends,
    so combinations along it are stationary.
    """
    loading = np.atleast_2d(np.asarray(loading, dtype=float))
    m1, k = loading.shape
    u, s, _ = np.linalg.svd(loading, full_matrices=True)
    return u[:, k:]


def default_scenario(
    seed: int = 0,
    m1: int = 5,
    m2_count: int = 2,
    m3_count: int = 3,
    n_trends: int = 2,
    mode_durations=(1500, 1500),
    faults=(),
    noise_std: float = 0.5,
    loading_drift: float = 0.25,
    setpoint_scale: float = 3.0,
) -> ScenarioConfig:
    """Scenario with loadings and setpoints drawn deterministically from the seed.

    Successive modes perturb the previous loading by ``loading_drift`` (then
    re-normalize columns), so the cointegration space moves moderately at a
    switch while the block-2 setpoints, redrawn at ``setpoint_scale``, jump
    clearly relative to the noise.
    """
    rng = np.random.default_rng([seed, 0])
    modes = []
    loading = None
    for duration in mode_durations:
        if loading is None:
            loading = rng.normal(0.0, 1.0, size=(m1, n_trends))
        else:
            loading = loading + loading_drift * rng.normal(0.0, 1.0, size=(m1, n_trends))
        loading = loading / np.linalg.norm(loading, axis=0, keepdims=True)
        setpoints = rng.normal(0.0, setpoint_scale, size=m2_count)
        modes.append(ModeSpec(loading=loading, setpoints=setpoints, duration=int(duration)))
    return ScenarioConfig(
        m1=m1,
        m2_count=m2_count,
        m3_count=m3_count,
        n_trends=n_trends,
        modes=modes,
        faults=list(faults),
        noise_std=noise_std,
        seed=seed,
    )


def save_labels(path, labels: Labels):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("index,mode_id,faulty\n")
        for i, (mid, fl) in enumerate(zip(labels.mode_id, labels.faulty)):
            fh.write(f"{i},{int(mid)},{int(fl)}\n")


def load_labels(path) -> Labels:
    mode_id, faulty = [], []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "index,mode_id,faulty":
            raise InvalidConfigError(f"{path}: unexpected labels header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            _, mid, fl = line.split(",")
            mode_id.append(int(mid))
            faulty.append(bool(int(fl)))
    return Labels(mode_id=np.array(mode_id), faulty=np.array(faulty, dtype=bool))
