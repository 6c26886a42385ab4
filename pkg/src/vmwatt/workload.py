"""Stochastic web and database workload schedules.

Web load: arrival times from an inhomogeneous Poisson process simulated by
thinning, with per-arrival request count and concurrency drawn from
truncated lognormals and the endpoint from a categorical distribution.
Database load: beta-distributed inter-arrival gaps with uniformly drawn
client and thread counts, emitted as bench-tool command lines.
"""

from __future__ import annotations

import json
import logging
import math
import threading
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from statistics import NormalDist
from typing import Callable

import numpy as np

from .errors import BoundViolationError, ConfigError, ParseError

logger = logging.getLogger(__name__)

ENDPOINTS = ("static", "php-cgi", "perl-cgi")
ENDPOINT_PATHS = {
    "static": "/index.html",
    "php-cgi": "/cgi-bin/page.php",
    "perl-cgi": "/cgi-bin/page.pl",
}

_STD_NORMAL = NormalDist()
_MIN_MASS = 1e-12
_REJECTION_ROUNDS = 20


# -- samplers ---------------------------------------------------------------

def _lognormal_mass(mu: float, sigma: float, lower: float, upper: float) -> tuple[float, float]:
    """CDF of the underlying normal at log(lower) and log(upper)."""
    a = 0.0 if lower <= 0 else _STD_NORMAL.cdf((math.log(lower) - mu) / sigma)
    b = 1.0 if math.isinf(upper) else _STD_NORMAL.cdf((math.log(upper) - mu) / sigma)
    return a, b


def sample_trunc_lognormal(mu: float, sigma: float, lower: float, upper: float,
                           rng: np.random.Generator, size: int | None = None):
    """Lognormal(mu, sigma) conditioned on ``[lower, upper]``.

    Rejection sampling for a bounded number of rounds, then inverse-CDF on
    the truncated range for whatever is still missing.
    """
    if sigma <= 0:
        raise ConfigError(f"sigma must be > 0, got {sigma}")
    if lower > upper:
        raise ConfigError(f"lower bound {lower} exceeds upper bound {upper}")
    if lower < 0:
        raise ConfigError(f"lower bound {lower} is negative")
    count = 1 if size is None else int(size)
    if lower == upper:
        out = np.full(count, float(lower))
        return float(out[0]) if size is None else out
    a, b = _lognormal_mass(mu, sigma, lower, upper)
    if b - a < _MIN_MASS:
        raise ConfigError(
            f"truncation window [{lower}, {upper}] holds probability {b - a:.3g} "
            f"under lognormal(mu={mu}, sigma={sigma})"
        )
    out = np.empty(count)
    filled = 0
    for _ in range(_REJECTION_ROUNDS):
        need = count - filled
        if need == 0:
            break
        # oversample by the inverse acceptance rate, within a budget so that
        # narrow tail windows fall through to the inverse-CDF path quickly
        draw = rng.lognormal(mu, sigma, size=min(int(need / (b - a) * 1.1) + 8, 64 * need + 1024))
        ok = draw[(draw >= lower) & (draw <= upper)][:need]
        out[filled:filled + len(ok)] = ok
        filled += len(ok)
    if filled < count:
        u = rng.uniform(a, b, size=count - filled)
        u = np.clip(u, 1e-300, 1 - 1e-16)
        z = np.array([_STD_NORMAL.inv_cdf(float(v)) for v in u])
        out[filled:] = np.clip(np.exp(mu + sigma * z), lower, upper)
    return float(out[0]) if size is None else out


def sample_beta(alpha: float, beta: float, rng: np.random.Generator, size: int | None = None):
    if not (alpha > 0 and beta > 0):
        raise ConfigError(f"beta shape parameters must be > 0, got alpha={alpha}, beta={beta}")
    return rng.beta(alpha, beta, size=size)


# -- intensity functions ----------------------------------------------------

@dataclass(frozen=True)
class RateFunction:
    """Named intensity λ(t) in events per second.

    Forms: ``constant`` (``rate``), ``sinusoid`` (``base``, ``amplitude``,
    ``period``, ``phase``), ``piecewise`` (``breakpoints`` ascending,
    ``rates`` one longer than ``breakpoints``).
    """

    form: str = "sinusoid"
    params: dict = field(default_factory=lambda: {"base": 0.05, "amplitude": 0.04, "period": 3600.0})

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        p = self.params
        if self.form == "constant":
            return np.full_like(t, float(p["rate"]))
        if self.form == "sinusoid":
            return p["base"] + p["amplitude"] * np.sin(
                2 * np.pi * t / p["period"] + p.get("phase", 0.0))
        if self.form == "piecewise":
            idx = np.searchsorted(np.asarray(p["breakpoints"], dtype=float), t, side="right")
            return np.asarray(p["rates"], dtype=float)[idx]
        raise ConfigError(f"unknown rate function form {self.form!r}")

    def upper_bound(self) -> float:
        p = self.params
        if self.form == "constant":
            return float(p["rate"])
        if self.form == "sinusoid":
            return float(p["base"] + abs(p["amplitude"]))
        if self.form == "piecewise":
            return float(max(p["rates"]))
        raise ConfigError(f"unknown rate function form {self.form!r}")

    def validate(self) -> None:
        p = self.params
        try:
            if self.form == "constant":
                ok = p["rate"] >= 0
            elif self.form == "sinusoid":
                ok = p["period"] > 0 and p["base"] - abs(p["amplitude"]) >= 0
            elif self.form == "piecewise":
                bps, rates = p["breakpoints"], p["rates"]
                ok = (len(rates) == len(bps) + 1 and min(rates) >= 0
                      and all(a < b for a, b in zip(bps, bps[1:])))
            else:
                raise ConfigError(f"unknown rate function form {self.form!r}")
        except KeyError as exc:
            raise ConfigError(f"rate function {self.form!r} needs parameter {exc.args[0]!r}") from None
        if not ok:
            raise ConfigError(f"invalid parameters for rate function {self.form!r}: {p}")


def ogata_thinning(rate_function: Callable, lambda_max: float, horizon: float,
                   rng: np.random.Generator, return_candidates: bool = False):
    """Arrival times of an inhomogeneous Poisson process on ``[0, horizon]``.

    Candidates come from a homogeneous process at ``lambda_max``; each is
    kept with probability ``λ(t) / lambda_max``. With ``return_candidates``
    the candidate count is returned alongside the accepted times.
    """
    if not lambda_max > 0:
        raise ConfigError(f"lambda_max must be > 0, got {lambda_max}")
    if horizon < 0:
        raise ConfigError(f"horizon must be >= 0, got {horizon}")
    n = rng.poisson(lambda_max * horizon)
    candidates = np.sort(rng.uniform(0.0, horizon, size=n))
    lam = np.asarray(rate_function(candidates), dtype=float)
    over = lam > lambda_max
    if over.any():
        t = candidates[np.flatnonzero(over)[0]]
        raise BoundViolationError(
            f"intensity {lam[over][0]:g} at t={t:g} exceeds lambda_max={lambda_max:g}"
        )
    if (lam < 0).any():
        raise ConfigError("intensity function returned a negative rate")
    u = rng.uniform(0.0, 1.0, size=n)
    accepted = np.unique(candidates[u < lam / lambda_max])
    if return_candidates:
        return accepted, int(n)
    return accepted


# -- configs and schedules --------------------------------------------------

@dataclass(frozen=True)
class TruncLognormal:
    mu: float
    sigma: float
    lower: float
    upper: float


@dataclass
class WebWorkloadConfig:
    horizon: float = 3 * 3600.0
    lognormal_requests: TruncLognormal = TruncLognormal(4.0, 1.0, 1.0, 2000.0)
    lognormal_concurrency: TruncLognormal = TruncLognormal(2.0, 0.7, 1.0, 100.0)
    endpoint_weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    rate_function: RateFunction = field(default_factory=RateFunction)
    lambda_max: float | None = None
    seed: int = 0

    def resolved_lambda_max(self) -> float:
        return self.lambda_max if self.lambda_max is not None else self.rate_function.upper_bound()

    def validate(self) -> None:
        for name in ("lognormal_requests", "lognormal_concurrency"):
            d = getattr(self, name)
            if d.lower > d.upper:
                raise ConfigError(f"{name}: lower {d.lower} > upper {d.upper}")
            if d.lower < 1:
                raise ConfigError(f"{name}: counts need lower bound >= 1, got {d.lower}")
        w = np.asarray(self.endpoint_weights, dtype=float)
        if w.shape != (3,) or (w < 0).any() or not math.isclose(w.sum(), 1.0, abs_tol=1e-9):
            raise ConfigError(f"endpoint_weights must be 3 non-negative numbers summing to 1, got {list(w)}")
        if self.horizon < 0:
            raise ConfigError("horizon must be >= 0")
        self.rate_function.validate()


@dataclass
class DbWorkloadConfig:
    horizon: float = 3 * 3600.0
    alpha: float = 2.0
    beta: float = 5.0
    scale: float = 60.0
    clients_range: tuple[int, int] = (1, 32)
    threads_range: tuple[int, int] = (1, 8)
    seed: int = 0

    def validate(self) -> None:
        if not (self.alpha > 0 and self.beta > 0):
            raise ConfigError(f"beta shapes must be > 0, got alpha={self.alpha}, beta={self.beta}")
        if self.scale <= 0:
            raise ConfigError(f"scale must be > 0, got {self.scale}")
        for name in ("clients_range", "threads_range"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise ConfigError(f"{name} must satisfy 1 <= min <= max, got {[lo, hi]}")


@dataclass(frozen=True)
class WebEvent:
    arrival_time: float
    n_requests: int
    concurrency: int
    endpoint: str


@dataclass(frozen=True)
class DbEvent:
    arrival_time: float
    clients: int
    threads: int

    def command(self) -> str:
        return f"pgbench -c {self.clients} -j {self.threads}"


@dataclass
class WorkloadSchedule:
    kind: str
    events: list


def gen_web_schedule(config: WebWorkloadConfig) -> WorkloadSchedule:
    config.validate()
    rng = np.random.default_rng(config.seed)
    times = ogata_thinning(config.rate_function, config.resolved_lambda_max(), config.horizon, rng)
    n = len(times)
    if n == 0:
        return WorkloadSchedule("web", [])
    rq, cc = config.lognormal_requests, config.lognormal_concurrency
    requests = np.ceil(sample_trunc_lognormal(rq.mu, rq.sigma, rq.lower, rq.upper, rng, size=n))
    concurrency = np.ceil(sample_trunc_lognormal(cc.mu, cc.sigma, cc.lower, cc.upper, rng, size=n))
    concurrency = np.minimum(concurrency, requests)
    w = np.asarray(config.endpoint_weights, dtype=float)
    endpoints = rng.choice(len(ENDPOINTS), size=n, p=w / w.sum())
    events = [WebEvent(float(t), int(r), int(c), ENDPOINTS[e])
              for t, r, c, e in zip(times, requests, concurrency, endpoints)]
    return WorkloadSchedule("web", events)


def gen_db_schedule(config: DbWorkloadConfig) -> WorkloadSchedule:
    config.validate()
    rng = np.random.default_rng(config.seed)
    events = []
    t = 0.0
    while True:
        gap = config.scale * float(sample_beta(config.alpha, config.beta, rng))
        if gap <= 0:
            continue
        t += gap
        if t > config.horizon:
            break
        clients = int(rng.integers(config.clients_range[0], config.clients_range[1] + 1))
        threads = int(rng.integers(config.threads_range[0], config.threads_range[1] + 1))
        events.append(DbEvent(t, clients, threads))
    return WorkloadSchedule("db", events)


def db_commands(schedule: WorkloadSchedule) -> list[str]:
    """``<start offset s>\\t<command>`` per event."""
    return [f"{e.arrival_time:.3f}\t{e.command()}" for e in schedule.events]


# -- config and schedule files ----------------------------------------------

def web_config_from_dict(d: dict, seed: int | None = None) -> WebWorkloadConfig:
    d = dict(d)
    kw = {}
    try:
        for name in ("lognormal_requests", "lognormal_concurrency"):
            if name in d:
                v = d.pop(name)
                kw[name] = TruncLognormal(float(v["mu"]), float(v["sigma"]),
                                          float(v["lower"]), float(v.get("upper", math.inf)))
        if "rate_function" in d:
            rf = dict(d.pop("rate_function"))
            kw["rate_function"] = RateFunction(rf.pop("form"), rf.get("params", rf))
        if "endpoint_weights" in d:
            kw["endpoint_weights"] = tuple(float(x) for x in d.pop("endpoint_weights"))
        for name in ("horizon", "lambda_max"):
            if name in d:
                v = d.pop(name)
                kw[name] = None if v is None else float(v)
        if "seed" in d:
            kw["seed"] = int(d.pop("seed"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"web workload config: bad value ({exc})") from None
    if d:
        raise ConfigError(f"web workload config: unknown keys {sorted(d)}")
    if seed is not None:
        kw["seed"] = seed
    return WebWorkloadConfig(**kw)


def db_config_from_dict(d: dict, seed: int | None = None) -> DbWorkloadConfig:
    d = dict(d)
    kw = {}
    try:
        if "beta_interarrival" in d:
            b = d.pop("beta_interarrival")
            kw.update(alpha=float(b["alpha"]), beta=float(b["beta"]), scale=float(b["scale"]))
        for name in ("alpha", "beta", "scale", "horizon"):
            if name in d:
                kw[name] = float(d.pop(name))
        for name in ("clients_range", "threads_range"):
            if name in d:
                lo, hi = d.pop(name)
                kw[name] = (int(lo), int(hi))
        if "seed" in d:
            kw["seed"] = int(d.pop("seed"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"db workload config: bad value ({exc})") from None
    if d:
        raise ConfigError(f"db workload config: unknown keys {sorted(d)}")
    if seed is not None:
        kw["seed"] = seed
    return DbWorkloadConfig(**kw)


def schedule_to_json(schedule: WorkloadSchedule) -> str:
    return json.dumps([asdict(e) for e in schedule.events], indent=1) + "\n"


def write_schedule(schedule: WorkloadSchedule, path: str | Path) -> None:
    Path(path).write_text(schedule_to_json(schedule), encoding="utf-8")


def read_schedule(path: str | Path) -> WorkloadSchedule:
    """Load a schedule file; the kind is inferred from the event fields."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        raise ParseError(path, 1, "empty schedule file")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, exc.msg) from None
    if not isinstance(doc, list):
        raise ParseError(path, 1, "schedule must be a JSON list of events")
    if not doc:
        return WorkloadSchedule("web", [])
    try:
        if "endpoint" in doc[0]:
            events = [WebEvent(float(e["arrival_time"]), int(e["n_requests"]),
                               int(e["concurrency"]), str(e["endpoint"])) for e in doc]
            kind = "web"
        else:
            events = [DbEvent(float(e["arrival_time"]), int(e["clients"]), int(e["threads"]))
                      for e in doc]
            kind = "db"
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(path, None, f"bad event: {exc}") from None
    check_schedule(WorkloadSchedule(kind, events), path)
    return WorkloadSchedule(kind, events)


def check_schedule(schedule: WorkloadSchedule, where="schedule", horizon: float | None = None) -> None:
    prev = -math.inf
    for k, e in enumerate(schedule.events):
        if not e.arrival_time > prev:
            raise ParseError(where, None, f"event {k}: arrival times not strictly increasing")
        if e.arrival_time < 0 or (horizon is not None and e.arrival_time > horizon):
            raise ParseError(where, None, f"event {k}: arrival time {e.arrival_time} out of range")
        prev = e.arrival_time
        if isinstance(e, WebEvent):
            if e.n_requests < 1 or not 1 <= e.concurrency <= e.n_requests:
                raise ParseError(where, None, f"event {k}: bad request/concurrency counts")
            if e.endpoint not in ENDPOINTS:
                raise ParseError(where, None, f"event {k}: unknown endpoint {e.endpoint!r}")
        elif e.clients < 1 or e.threads < 1:
            raise ParseError(where, None, f"event {k}: clients and threads must be >= 1")


# -- web replay -------------------------------------------------------------

@dataclass
class ReplayEventResult:
    index: int
    arrival_time: float
    endpoint: str
    requested: int
    completed: int = 0
    errors: list[str] = field(default_factory=list)


class DryRunClock:
    """Never sleeps; replay runs instantly and issues no requests."""

    dry_run = True

    def sleep_until(self, offset: float) -> None:
        pass


class WallClock:
    dry_run = False

    def __init__(self):
        self._t0 = time.monotonic()

    def sleep_until(self, offset: float) -> None:
        delay = self._t0 + offset - time.monotonic()
        if delay > 0:
            time.sleep(delay)


def _fetch(url: str, timeout: float) -> None:
    with urllib.request.urlopen(url, timeout=timeout) as resp:
        resp.read()


def replay_web(schedule: WorkloadSchedule, base_url: str, clock=None,
               timeout: float = 10.0) -> list[ReplayEventResult]:
    """Issue each event's requests at its arrival offset.

    Requests of one event run on up to ``concurrency`` threads. Failures are
    recorded per event and the replay carries on.
    """
    if schedule.kind != "web":
        raise ConfigError(f"only web schedules can be replayed, got {schedule.kind!r}")
    clock = clock or WallClock()
    base = base_url.rstrip("/")
    results = []
    for k, ev in enumerate(schedule.events):
        res = ReplayEventResult(k, ev.arrival_time, ev.endpoint, ev.n_requests)
        results.append(res)
        clock.sleep_until(ev.arrival_time)
        if getattr(clock, "dry_run", False):
            continue
        url = base + ENDPOINT_PATHS[ev.endpoint]
        lock = threading.Lock()

        def one(_):
            try:
                _fetch(url, timeout)
            except (urllib.error.URLError, OSError, ValueError) as exc:
                with lock:
                    res.errors.append(str(exc))
            else:
                with lock:
                    res.completed += 1

        with ThreadPoolExecutor(max_workers=max(1, ev.concurrency)) as pool:
            list(pool.map(one, range(ev.n_requests)))
        if res.errors:
            logger.warning("event %d: %d/%d requests failed", k, len(res.errors), ev.n_requests)
    return results
