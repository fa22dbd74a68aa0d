"""Flat ``key = value`` experiment configuration files.

Blank lines and ``#`` comments are ignored.  Lists are comma separated.
Every key of :class:`ExperimentConfig` may appear at most once; any other
key is an error.
"""
import dataclasses
import math
from dataclasses import dataclass
from typing import Optional, Tuple

from ..exceptions import ConfigError

EXPERIMENTS = (
    "pe_split",
    "pe_regularization",
    "pe_vs_T",
    "pe_vs_m",
    "maxnorm_vs_m",
    "bpi_vs_T",
    "regret_vs_T",
)

DESCRIPTIONS = {
    "pe_split": "RS-PE error vs T for several phase-1 fractions (alpha_grid, 0 = no split)",
    "pe_regularization": "RS-PE error vs T for several ridge parameters (tau_grid)",
    "pe_vs_T": "IPS, SIPS and RS-PE error vs T with the asymptotic bound overlay",
    "pe_vs_m": "IPS, SIPS and RS-PE error vs matrix size on all-ones matrices",
    "maxnorm_vs_m": "max-norm error of M_tilde, M_hat and M_bar vs matrix size",
    "bpi_vs_T": "BPI gap of the M_tilde benchmark, SBPI and RS-BPI vs T",
    "regret_vs_T": "cumulative regret of RS-RMIN vs T",
}

INSTANCES = ("pdq", "all_ones")

_DEFAULTS = {
    "pe_split": dict(m=50, r=2, seeds=50, T_grid=(1000, 3000, 10000, 30000, 100000)),
    "pe_regularization": dict(m=50, r=2, seeds=50, T_grid=(1000, 3000, 10000, 30000, 100000)),
    "pe_vs_T": dict(m=50, r=2, seeds=50, T_grid=(1000, 3000, 10000, 30000, 100000)),
    "pe_vs_m": dict(r=1, seeds=50, T_grid=(10000,), m_grid=(10, 20, 40, 80, 160, 300), instance="all_ones"),
    "maxnorm_vs_m": dict(r=1, seeds=20, T_grid=(10000,), m_grid=(20, 40, 80, 120), instance="all_ones"),
    "bpi_vs_T": dict(m=30, r=2, seeds=20, T_grid=(2000, 10000, 50000)),
    "regret_vs_T": dict(m=20, r=2, seeds=10, T_grid=(5000, 10000, 20000)),
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment_id: str
    m: int = 30
    n: Optional[int] = None
    r: int = 2
    sigma_noise: float = 1.0
    T_grid: Tuple[int, ...] = (2000, 10000, 50000)
    m_grid: Tuple[int, ...] = ()
    seeds: int = 20
    tau: float = 1e-4
    split_alpha: float = 0.0
    delta: float = 0.01
    output_path: str = "results"
    base_seed: int = 0
    instance: str = "pdq"
    instance_seed: Optional[int] = None
    alpha_grid: Tuple[float, ...] = (0.0, 0.2, 0.5, 0.8)
    tau_grid: Tuple[float, ...] = (1e-4, 1e-2, 1e-1)
    T1: Optional[int] = None
    traces: bool = True
    oracle: bool = False
    test_mode: bool = False

    @property
    def n_arms(self):
        return self.m if self.n is None else self.n

    @property
    def sizes(self):
        """``(m, n)`` pairs swept by the experiment."""
        if self.m_grid:
            return [(k, k) for k in self.m_grid]
        return [(self.m, self.n_arms)]

    @property
    def resolved_instance_seed(self):
        return self.base_seed if self.instance_seed is None else self.instance_seed

    def replace(self, **kw):
        cfg = dataclasses.replace(self, **kw)
        validate(cfg)
        return cfg


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_INT_TUPLES = {"T_grid", "m_grid"}
_FLOAT_TUPLES = {"alpha_grid", "tau_grid"}
_INTS = {"m", "n", "r", "seeds", "base_seed", "instance_seed", "T1"}
_FLOATS = {"sigma_noise", "tau", "split_alpha", "delta"}
_BOOLS = {"traces", "oracle", "test_mode"}


def _as_int(text):
    try:
        return int(text)
    except ValueError:
        x = float(text)  # accepts 1e4 style integers
        if not math.isfinite(x) or x != int(x):
            raise ValueError(f"{text!r} is not an integer") from None
        return int(x)


def _as_float(text):
    x = float(text)
    if not math.isfinite(x):
        raise ValueError(f"{text!r} is not finite")
    return x


def _as_bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{text!r} is not a boolean")


def _convert(key, text):
    if key in _INTS:
        return None if text.lower() == "none" else _as_int(text)
    if key in _FLOATS:
        return _as_float(text)
    if key in _BOOLS:
        return _as_bool(text)
    if key in _INT_TUPLES | _FLOAT_TUPLES:
        conv = _as_int if key in _INT_TUPLES else _as_float
        parts = [p.strip() for p in text.split(",") if p.strip()]
        return tuple(conv(p) for p in parts)
    return text


def parse_text(text, source="<string>"):
    values, lines = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, _, value = (s.strip() for s in line.partition("="))
        if key not in _FIELDS:
            raise ConfigError("unknown key", key=key, line=lineno)
        if key in values:
            raise ConfigError(f"duplicate key (first set on line {lines[key]})", key=key, line=lineno)
        try:
            values[key] = _convert(key, value)
        except ValueError as exc:
            raise ConfigError(f"malformed value {value!r} ({exc})", key=key, line=lineno) from None
        lines[key] = lineno
    if "experiment_id" not in values:
        raise ConfigError(f"missing experiment_id in {source}", key="experiment_id")
    eid = values["experiment_id"]
    if eid not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {eid!r}; choose from {', '.join(EXPERIMENTS)}",
                          key="experiment_id", line=lines["experiment_id"])
    merged = dict(_DEFAULTS[eid])
    merged.update(values)
    cfg = ExperimentConfig(**merged)
    validate(cfg, lines)
    return cfg


def parse_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_text(text, source=str(path))


def validate(cfg, lines=None):
    lines = lines or {}

    def fail(key, msg):
        raise ConfigError(msg, key=key, line=lines.get(key))

    if cfg.experiment_id not in EXPERIMENTS:
        fail("experiment_id", f"unknown experiment {cfg.experiment_id!r}")
    if cfg.seeds < 1:
        fail("seeds", "must be at least 1")
    if not cfg.T_grid:
        fail("T_grid", "grid is empty")
    if any(T < 2 for T in cfg.T_grid):
        fail("T_grid", "every T must be at least 2")
    if any(k < 1 for k in cfg.m_grid):
        fail("m_grid", "sizes must be positive")
    if cfg.experiment_id in ("pe_vs_m", "maxnorm_vs_m") and not cfg.m_grid:
        fail("m_grid", "grid is empty")
    if cfg.m < 1 or cfg.n_arms < 1:
        fail("m", "dimensions must be positive")
    if cfg.r < 1 or any(cfg.r > min(m, n) for m, n in cfg.sizes):
        fail("r", "need 1 <= r <= min(m, n)")
    if cfg.sigma_noise < 0:
        fail("sigma_noise", "must be nonnegative")
    if cfg.tau <= 0 or any(t <= 0 for t in cfg.tau_grid):
        fail("tau", "ridge parameters must be positive")
    if not 0 <= cfg.split_alpha < 1:
        fail("split_alpha", "must lie in [0, 1)")
    if any(not 0 <= a < 1 for a in cfg.alpha_grid):
        fail("alpha_grid", "fractions must lie in [0, 1)")
    if not 0 < cfg.delta < 0.5:
        fail("delta", "must lie in (0, 1/2)")
    if cfg.base_seed < 0:
        fail("base_seed", "must be nonnegative")
    if cfg.instance not in INSTANCES:
        fail("instance", f"choose from {', '.join(INSTANCES)}")
    if cfg.oracle and not cfg.test_mode:
        fail("oracle", "oracle mode is only available with test_mode = true")
    if cfg.T1 is not None and any(not 1 <= cfg.T1 < T for T in cfg.T_grid):
        fail("T1", "need 1 <= T1 < T for every T in T_grid")
    return cfg


def default_config(experiment_id, **overrides):
    if experiment_id not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment_id!r}", key="experiment_id")
    merged = dict(_DEFAULTS[experiment_id])
    merged.update(overrides)
    return validate(ExperimentConfig(experiment_id=experiment_id, **merged))
