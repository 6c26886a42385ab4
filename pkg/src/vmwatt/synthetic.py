"""Synthetic paired guest/host logs from a known power function.

Each feature follows a clipped random walk that drifts toward a target
level; targets jump at random times, imitating workload phases. Profiles
decide which features get wide ranges. Power is a fixed function of the
features plus Gaussian noise, so the whole pipeline can be checked against
a known answer without hardware counters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .metrics import FEATURE_NAMES, MetricsSample
from .power import PowerSample

PROFILES = ("cpu-heavy", "net-heavy", "disk-heavy", "mixed", "constant")
DEFAULT_START = 1_700_000_000


@dataclass(frozen=True)
class _Track:
    lo: float
    hi: float
    log_scale: bool = False   # targets drawn log-uniformly (for byte rates)
    switch_p: float = 0.01    # per-second chance of a new target level
    pull: float = 0.15        # fraction of the gap to the target closed per second
    jitter: float = 0.03      # walk noise, as a fraction of the range


_LIGHT = {
    "cpu.total": _Track(1.0, 10.0),
    "mem.used": _Track(15.0, 30.0, switch_p=0.002),
    "disk.read": _Track(0.0, 2e6),
    "disk.write": _Track(0.0, 5e6),
    "net.rx": _Track(0.0, 1e6),
    "net.tx": _Track(0.0, 5e5),
}

_HEAVY = {
    "cpu.total": _Track(2.0, 100.0),
    "mem.used": _Track(20.0, 80.0, switch_p=0.005),
    "disk.read": _Track(1e4, 2e8, log_scale=True),
    "disk.write": _Track(0.0, 1e9),
    "net.rx": _Track(1e4, 1e9, log_scale=True),
    "net.tx": _Track(1e4, 5e8, log_scale=True),
}

_PROFILE_HEAVY = {
    "cpu-heavy": {"cpu.total", "mem.used"},
    "net-heavy": {"net.rx", "net.tx"},
    "disk-heavy": {"disk.write", "disk.read"},
    "mixed": set(FEATURE_NAMES),
}


def _quantize(values) -> tuple[float, ...]:
    # the resolution live collectors report: 0.1 % for cpu/mem, whole bytes for rates
    return tuple(round(v, 1) if k < 2 else float(round(v)) for k, v in enumerate(values))


class FeatureWalk:
    """Stateful generator of 1 Hz feature vectors for a profile."""

    def __init__(self, profile: str = "mixed", seed: int = 0,
                 constant: dict[str, float] | None = None):
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; choose from {', '.join(PROFILES)}")
        self.profile = profile
        self._rng = np.random.default_rng(seed)
        if profile == "constant":
            constant = dict(constant or {})
            unknown = set(constant) - set(FEATURE_NAMES)
            if unknown:
                raise ConfigError(f"unknown feature names {sorted(unknown)}")
            self._constant = tuple(float(constant.get(n, 0.0)) for n in FEATURE_NAMES)
            return
        self._constant = None
        heavy = _PROFILE_HEAVY[profile]
        self.tracks = [(_HEAVY if n in heavy else _LIGHT)[n] for n in FEATURE_NAMES]
        self.targets = [self._draw_target(t) for t in self.tracks]
        self.values = list(self.targets)

    def _draw_target(self, t: _Track) -> float:
        if t.log_scale:
            return float(10 ** self._rng.uniform(math.log10(t.lo), math.log10(t.hi)))
        return float(self._rng.uniform(t.lo, t.hi))

    def step(self) -> tuple[float, ...]:
        if self._constant is not None:
            return self._constant
        switch = self._rng.random(len(self.tracks))
        noise = self._rng.standard_normal(len(self.tracks))
        for k, t in enumerate(self.tracks):
            if switch[k] < t.switch_p:
                self.targets[k] = self._draw_target(t)
            v = self.values[k]
            scale = v if t.log_scale else (t.hi - t.lo)
            v += t.pull * (self.targets[k] - v) + t.jitter * scale * noise[k]
            self.values[k] = min(max(v, t.lo), t.hi)
        return _quantize(self.values)


@dataclass(frozen=True)
class PowerFunction:
    """Ground-truth watts as a function of the six features.

    Forms:

    ``default``
        ``intercept + cpu*cpu.total + net*log10(1 + net.rx/1e6) + disk*sqrt(disk.write/1e8)``
    ``linear``
        ``intercept + sum(coef[name] * feature[name])``
    ``step``
        ``intercept + sum(weight * [feature > threshold])`` over ``steps``
    """

    form: str = "default"
    coefficients: dict = field(default_factory=lambda: {
        "intercept": 8.0, "cpu": 0.45, "net": 4.0, "disk": 3.0})

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        c = self.coefficients
        col = {n: X[:, i] for i, n in enumerate(FEATURE_NAMES)}
        if self.form == "default":
            out = (c.get("intercept", 8.0) + c.get("cpu", 0.45) * col["cpu.total"]
                   + c.get("net", 4.0) * np.log10(1.0 + col["net.rx"] / 1e6)
                   + c.get("disk", 3.0) * np.sqrt(col["disk.write"] / 1e8))
        elif self.form == "linear":
            out = np.full(len(X), float(c.get("intercept", 0.0)))
            for name, coef in c.items():
                if name != "intercept":
                    out = out + float(coef) * self._column(col, name)
        elif self.form == "step":
            out = np.full(len(X), float(c.get("intercept", 0.0)))
            for s in c.get("steps", []):
                out = out + float(s["weight"]) * (self._column(col, s["feature"]) > float(s["threshold"]))
        else:
            raise ConfigError(f"unknown power function form {self.form!r}")
        return np.maximum(out, 0.0)

    @staticmethod
    def _column(cols, name):
        if name not in cols:
            raise ConfigError(f"power function refers to unknown feature {name!r}")
        return cols[name]


@dataclass
class SyntheticConfig:
    duration: int = 7200
    workload_profile: str = "mixed"
    power_function: PowerFunction = field(default_factory=PowerFunction)
    noise_sigma: float = 2.0
    seed: int = 0
    start_time: int = DEFAULT_START
    constant_features: dict | None = None

    def validate(self) -> None:
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.duration < 0:
            raise ConfigError(f"duration must be >= 0, got {self.duration}")
        if self.workload_profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.workload_profile!r}")


def generate(config: SyntheticConfig) -> tuple[list[MetricsSample], list[PowerSample]]:
    """Paired metrics and power logs on a shared 1 Hz timestamp grid."""
    config.validate()
    walk_seed, noise_seed = np.random.SeedSequence(config.seed).spawn(2)
    walk = FeatureWalk(config.workload_profile, seed=walk_seed,
                       constant=config.constant_features)
    n = int(config.duration)
    X = np.array([walk.step() for _ in range(n)], dtype=float).reshape(n, len(FEATURE_NAMES))
    watts = config.power_function(X) if n else np.zeros(0)
    if config.noise_sigma > 0 and n:
        watts = watts + np.random.default_rng(noise_seed).normal(0.0, config.noise_sigma, n)
    watts = np.maximum(watts, 0.0)
    ts = config.start_time + np.arange(n)
    metrics = [MetricsSample(int(t), *map(float, row)) for t, row in zip(ts, X)]
    power = [PowerSample(int(t), float(w)) for t, w in zip(ts, watts)]
    return metrics, power


def config_from_dict(d: dict) -> SyntheticConfig:
    d = dict(d)
    kw = {}
    if "power_function" in d:
        pf = dict(d.pop("power_function"))
        kw["power_function"] = PowerFunction(pf.pop("form", "default"),
                                             pf.get("coefficients", pf))
    if "profile" in d:
        kw["workload_profile"] = d.pop("profile")
    for name in ("duration", "workload_profile", "noise_sigma", "seed", "start_time",
                 "constant_features"):
        if name in d:
            kw[name] = d.pop(name)
    if d:
        raise ConfigError(f"synthetic config: unknown keys {sorted(d)}")
    return SyntheticConfig(**kw)
