"""Guest-side resource metrics: samples, sources, the collector loop and the CSV log."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import IO, Callable, Iterator

from . import _csvio
from ._clock import SystemClock
from .errors import CollectionError, ConfigError, DataError, ParseError

logger = logging.getLogger(__name__)

FEATURE_NAMES = ("cpu.total", "mem.used", "disk.read", "disk.write", "net.rx", "net.tx")
METRICS_HEADER = ("timestamp",) + FEATURE_NAMES

# raw cumulative byte counters turned into per-second rates
RATE_COUNTERS = ("disk_read", "disk_write", "net_rx", "net_tx")

FLAG_BASELINE = "baseline"
FLAG_COUNTER_RESET = "counter-reset"


@dataclass(frozen=True)
class MetricsSample:
    timestamp: float
    cpu_total: float
    mem_used: float
    disk_read: float
    disk_write: float
    net_rx: float
    net_tx: float
    flag: str | None = None

    def features(self) -> tuple[float, ...]:
        return (self.cpu_total, self.mem_used, self.disk_read,
                self.disk_write, self.net_rx, self.net_tx)

    def validate(self) -> None:
        for name in ("cpu_total", "mem_used"):
            v = getattr(self, name)
            if not (0.0 <= v <= 100.0):
                raise DataError(f"{name}={v} outside [0, 100]")
        for name in RATE_COUNTERS:
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise DataError(f"{name}={v} must be finite and non-negative")


class RateTracker:
    """Turns cumulative byte counters into per-second rates.

    The first update has no previous snapshot, so its rates are 0 and the
    sample is flagged ``baseline``. A counter that goes backwards (reset or
    wrap) contributes a rate of 0 and flags the sample ``counter-reset``.
    """

    def __init__(self):
        self._last: dict[str, float] | None = None
        self._last_t: float | None = None

    def update(self, raw: dict[str, float], t: float) -> tuple[dict[str, float], str | None]:
        if self._last is None:
            self._last, self._last_t = dict(raw), t
            return {k: 0.0 for k in raw}, FLAG_BASELINE
        dt = t - self._last_t
        flag = None
        rates = {}
        for key, value in raw.items():
            delta = value - self._last.get(key, value)
            if delta < 0:
                delta = 0.0
                flag = FLAG_COUNTER_RESET
            rates[key] = delta / dt if dt > 0 else 0.0
        if dt <= 0:
            flag = flag or "non-advancing-clock"
        self._last, self._last_t = dict(raw), t
        return rates, flag


def psutil_counters() -> dict[str, float]:
    import psutil

    out: dict[str, float] = {
        "cpu_total": psutil.cpu_percent(interval=None),
        "mem_used": psutil.virtual_memory().percent,
    }
    disk = psutil.disk_io_counters()
    if disk is None:
        raise CollectionError("disk I/O counters unavailable (disk_read, disk_write)")
    net = psutil.net_io_counters()
    if net is None:
        raise CollectionError("network counters unavailable (net_rx, net_tx)")
    out.update(disk_read=disk.read_bytes, disk_write=disk.write_bytes,
               net_rx=net.bytes_recv, net_tx=net.bytes_sent)
    return out


class SystemSource:
    """Live guest counters (psutil by default)."""

    kind = "system"

    def __init__(self, read_counters: Callable[[], dict[str, float]] | None = None):
        self._read = read_counters or psutil_counters
        self._rates = RateTracker()

    def read(self, now: float) -> MetricsSample:
        try:
            raw = self._read()
        except CollectionError:
            raise
        except OSError as exc:
            raise CollectionError(f"system counters unreadable: {exc}") from exc
        for key in ("cpu_total", "mem_used") + RATE_COUNTERS:
            if key not in raw or raw[key] is None:
                raise CollectionError(f"missing counter {key!r}")
        rates, flag = self._rates.update({k: float(raw[k]) for k in RATE_COUNTERS}, now)
        return MetricsSample(
            timestamp=now,
            cpu_total=min(max(float(raw["cpu_total"]), 0.0), 100.0),
            mem_used=min(max(float(raw["mem_used"]), 0.0), 100.0),
            flag=flag,
            **rates,
        )


class ReplaySource:
    """Re-emits the rows of an existing metrics CSV, then signals end of stream."""

    kind = "replay"

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._rows: Iterator[MetricsSample] = iter(read_metrics_csv(self.path))

    def read(self, now: float) -> MetricsSample | None:
        return next(self._rows, None)


class SyntheticSource:
    """Generated features, either fixed constants or a profile random walk.

    ``config`` keys: ``constant`` (mapping of feature name to value) or
    ``profile`` plus optional ``seed``.
    """

    kind = "synthetic"

    def __init__(self, config: dict):
        from .synthetic import FeatureWalk

        if "constant" in config:
            values = dict(config["constant"])
            unknown = set(values) - set(FEATURE_NAMES)
            if unknown:
                raise ConfigError(f"unknown feature names in constant source: {sorted(unknown)}")
            self._constant = tuple(float(values.get(n, 0.0)) for n in FEATURE_NAMES)
            self._walk = None
        else:
            self._constant = None
            self._walk = FeatureWalk(config.get("profile", "mixed"), seed=config.get("seed", 0))

    def read(self, now: float) -> MetricsSample:
        feats = self._constant if self._walk is None else self._walk.step()
        return MetricsSample(now, *feats)


def read_sample(source, now: float) -> MetricsSample | None:
    """One observation from ``source`` at time ``now``; ``None`` at end of stream."""
    return source.read(now)


def open_source(spec: str):
    """Build a source from a CLI spec: ``system``, ``replay:FILE`` or ``synthetic:CONFIG``.

    ``CONFIG`` is a JSON file path or an inline JSON object.
    """
    kind, _, arg = spec.partition(":")
    if kind == "system":
        return SystemSource()
    if kind == "replay":
        if not arg:
            raise ConfigError("replay source needs a file: replay:FILE")
        return ReplaySource(arg)
    if kind == "synthetic":
        return SyntheticSource(load_json_config(arg) if arg else {})
    raise ConfigError(f"unknown metrics source {spec!r} (expected system, replay:FILE, synthetic:CONFIG)")


def load_json_config(arg: str) -> dict:
    text = arg.strip()
    if text.startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"inline config: {exc}") from None
    path = Path(arg)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, exc.msg) from None


def _sample_values(s: MetricsSample) -> tuple:
    return astuple(s)[:-1]


def write_metrics_csv(samples, path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        _csvio.write_header(fh, METRICS_HEADER)
        for s in samples:
            _csvio.write_row(fh, _sample_values(s), s.flag)
            n += 1
    return n


def read_metrics_csv(path: str | Path) -> list[MetricsSample]:
    out: list[MetricsSample] = []
    names = [f.name for f in fields(MetricsSample)][:-1]
    for lineno, row, flag in _csvio.iter_rows(path, METRICS_HEADER):
        values = [_csvio.parse_float(row[c], path, lineno, c) for c in METRICS_HEADER]
        ts = values[0]
        values[0] = int(ts) if ts.is_integer() else ts
        sample = MetricsSample(**dict(zip(names, values)), flag=flag)
        try:
            sample.validate()
        except DataError as exc:
            raise ParseError(path, lineno, str(exc)) from None
        if out and not sample.timestamp > out[-1].timestamp:
            raise ParseError(path, lineno, "timestamps not strictly increasing")
        out.append(sample)
    return out


def run_collector(source, interval: float, duration: float, sink: str | Path | IO[str],
                  clock=None) -> int:
    """Sample ``source`` every ``interval`` seconds for ``duration`` seconds.

    Writes the metrics CSV to ``sink`` and returns the number of rows. Stops
    early, keeping what was written, when the source is exhausted or the
    process is interrupted.
    """
    if interval < 1:
        raise ConfigError(f"interval must be >= 1 s, got {interval}")
    if duration < 0:
        raise ConfigError(f"duration must be >= 0, got {duration}")
    clock = clock or SystemClock()
    n_ticks = int(math.floor(duration / interval + 1e-9))

    own = not hasattr(sink, "write")
    fh = open(sink, "w", encoding="utf-8", newline="") if own else sink
    written = 0
    last_ts = None
    try:
        _csvio.write_header(fh, METRICS_HEADER)
        start = clock.now()
        for i in range(n_ticks):
            clock.sleep_until(start + i * interval)
            ts = int(math.floor(clock.now()))
            if last_ts is not None and ts <= last_ts:
                logger.warning("clock did not advance (%s <= %s); skipping tick", ts, last_ts)
                continue
            sample = source.read(ts)
            if sample is None:
                break
            if last_ts is not None and sample.timestamp <= last_ts:
                logger.warning("source timestamp %s not after %s; skipping", sample.timestamp, last_ts)
                continue
            _csvio.write_row(fh, _sample_values(sample), sample.flag)
            fh.flush()
            written += 1
            last_ts = sample.timestamp
    except KeyboardInterrupt:
        logger.info("interrupted after %d samples", written)
    except OSError as exc:
        raise CollectionError(
            f"write to {getattr(fh, 'name', sink)} failed after {written} rows; "
            "the file holds a partial log"
        ) from exc
    finally:
        try:
            fh.flush()
        finally:
            if own:
                fh.close()
    return written
