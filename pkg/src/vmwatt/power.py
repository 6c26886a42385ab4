"""Host-side power logging for one VM process.

Backends:

* ``counter-file``: a powercap-style pair of text files holding the
  cumulative energy counter and its wrap range, both in microjoules.
* ``external-csv``: replay of a CSV written by an external tool
  (``timestamp,watts`` columns, extra columns ignored).
* ``synthetic``: generated watts, for tests and desk runs.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, replace
from datetime import datetime
from pathlib import Path
from typing import IO

import numpy as np

from . import _csvio
from ._clock import SystemClock
from .errors import BackendGone, CollectionError, ConfigError, DataError, ParseError, TimingError

logger = logging.getLogger(__name__)

POWER_HEADER = ("timestamp", "watts")
DEFAULT_CEILING_W = 10_000.0
FLAG_IMPLAUSIBLE = "implausible"


@dataclass(frozen=True)
class PowerSample:
    timestamp: float
    watts: float
    pid: int | None = None
    flag: str | None = None


@dataclass(frozen=True)
class EnergyCounterState:
    last_energy_uj: int
    last_timestamp: float
    max_energy_range_uj: int

    def __post_init__(self):
        if not 0 <= self.last_energy_uj <= self.max_energy_range_uj:
            raise DataError(
                f"energy counter {self.last_energy_uj} outside [0, {self.max_energy_range_uj}]"
            )


def energy_delta_uj(last: int, current: int, max_range: int) -> int:
    if current >= last:
        return current - last
    return (max_range - last) + current


def energy_delta_to_watts(state: EnergyCounterState, current_energy_uj: int,
                          current_timestamp: float) -> tuple[float, EnergyCounterState]:
    """Average power since the previous reading, handling one counter wrap."""
    dt = current_timestamp - state.last_timestamp
    if dt <= 0:
        raise TimingError(
            f"timestamp did not advance ({state.last_timestamp} -> {current_timestamp})"
        )
    delta = energy_delta_uj(state.last_energy_uj, current_energy_uj, state.max_energy_range_uj)
    watts = delta / dt / 1e6
    return watts, replace(state, last_energy_uj=current_energy_uj,
                          last_timestamp=current_timestamp)


def _read_int(path: Path, what: str) -> int:
    try:
        text = path.read_text().strip()
    except FileNotFoundError:
        raise BackendGone(f"{what} file {path} disappeared") from None
    except OSError as exc:
        raise CollectionError(f"cannot read {what} file {path}: {exc}") from exc
    try:
        return int(text)
    except ValueError:
        raise ParseError(path, 1, f"{what}: expected an integer, got {text!r}") from None


class CounterFileBackend:
    """Reads a cumulative microjoule counter; the first read only sets the baseline."""

    needs_baseline = True

    def __init__(self, energy_path: str | Path, max_range_path: str | Path | None = None):
        self.energy_path = Path(energy_path)
        if max_range_path is None:
            max_range_path = self.energy_path.with_name("max_energy_range_uj")
        self.max_range_path = Path(max_range_path)
        self.state: EnergyCounterState | None = None

    @classmethod
    def from_spec(cls, arg: str) -> "CounterFileBackend":
        # PATH may be a powercap domain directory or the energy file itself
        p = Path(arg)
        if p.is_dir():
            return cls(p / "energy_uj", p / "max_energy_range_uj")
        return cls(p)

    def read(self, now: float) -> tuple[float, float] | None:
        energy = _read_int(self.energy_path, "energy counter")
        if self.state is None:
            max_range = _read_int(self.max_range_path, "max energy range")
            self.state = EnergyCounterState(energy, now, max_range)
            return None
        watts, self.state = energy_delta_to_watts(self.state, energy, now)
        return now, watts


def _parse_timestamp(text: str, path, lineno: int) -> float:
    try:
        return float(text)
    except ValueError:
        pass
    try:
        return datetime.fromisoformat(text).timestamp()
    except ValueError:
        raise ParseError(path, lineno, f"unrecognised timestamp {text!r}") from None


def read_external_csv(path: str | Path) -> list[PowerSample]:
    """Parse an external power log.

    Accepts ``timestamp,watts`` with extra columns, or the PowerJoular
    per-process layout (``Date`` and ``CPU Power`` columns).
    """
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        first = fh.readline().strip()
    columns = [c.strip() for c in first.split(",")]
    if "timestamp" in columns and "watts" in columns:
        ts_col, w_col = "timestamp", "watts"
    elif "Date" in columns and "CPU Power" in columns:
        ts_col, w_col = "Date", "CPU Power"
    else:
        raise ParseError(path, 1, "need columns timestamp,watts (or Date,CPU Power)")
    out: list[PowerSample] = []
    for lineno, row, flag in _csvio.iter_rows(path, (ts_col, w_col), allow_extra_columns=True):
        ts = _parse_timestamp(row[ts_col], path, lineno)
        ts = int(ts) if float(ts).is_integer() else ts
        watts = _csvio.parse_float(row[w_col], path, lineno, w_col)
        if watts < 0:
            raise ParseError(path, lineno, f"negative power {watts}")
        if out and not ts > out[-1].timestamp:
            raise ParseError(path, lineno, "timestamps not strictly increasing")
        out.append(PowerSample(ts, watts, flag=flag))
    return out


class ExternalCsvBackend:
    """Replays an external tool's log row by row, keeping its timestamps."""

    needs_baseline = False

    def __init__(self, path: str | Path):
        self._rows = iter(read_external_csv(path))

    def read(self, now: float) -> tuple[float, float] | None:
        row = next(self._rows, None)
        if row is None:
            raise BackendGone("external power log exhausted")
        return row.timestamp, row.watts


class SyntheticPowerBackend:
    """Constant watts, optionally with a sinusoid and Gaussian noise.

    Config keys: ``watts`` (default 20), ``amplitude``, ``period`` (s),
    ``noise_sigma``, ``seed``.
    """

    needs_baseline = False

    def __init__(self, config: dict | None = None):
        config = config or {}
        self.watts = float(config.get("watts", 20.0))
        self.amplitude = float(config.get("amplitude", 0.0))
        self.period = float(config.get("period", 600.0))
        self.noise_sigma = float(config.get("noise_sigma", 0.0))
        if self.noise_sigma < 0 or self.period <= 0:
            raise ConfigError("synthetic power: noise_sigma must be >= 0 and period > 0")
        self._rng = np.random.default_rng(config.get("seed", 0))
        self._t0: float | None = None

    def read(self, now: float) -> tuple[float, float]:
        if self._t0 is None:
            self._t0 = now
        w = self.watts + self.amplitude * math.sin(2 * math.pi * (now - self._t0) / self.period)
        if self.noise_sigma:
            w += self._rng.normal(0.0, self.noise_sigma)
        return now, max(w, 0.0)


def open_backend(spec: str):
    from .metrics import load_json_config

    kind, _, arg = spec.partition(":")
    if kind == "counter-file":
        if not arg:
            raise ConfigError("counter-file backend needs a path: counter-file:PATH")
        return CounterFileBackend.from_spec(arg)
    if kind == "external-csv":
        if not arg:
            raise ConfigError("external-csv backend needs a path: external-csv:PATH")
        return ExternalCsvBackend(arg)
    if kind == "synthetic":
        return SyntheticPowerBackend(load_json_config(arg) if arg else {})
    raise ConfigError(
        f"unknown power backend {spec!r} (expected counter-file:PATH, external-csv:PATH, synthetic:CONFIG)"
    )


def pid_alive(pid: int) -> bool:
    return Path(f"/proc/{pid}").exists() if os.name == "posix" else True


def write_power_csv(samples, path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        _csvio.write_header(fh, POWER_HEADER)
        for s in samples:
            _csvio.write_row(fh, (s.timestamp, s.watts), s.flag)
            n += 1
    return n


def read_power_csv(path: str | Path) -> list[PowerSample]:
    out: list[PowerSample] = []
    for lineno, row, flag in _csvio.iter_rows(path, POWER_HEADER):
        ts = _csvio.parse_float(row["timestamp"], path, lineno, "timestamp")
        watts = _csvio.parse_float(row["watts"], path, lineno, "watts")
        if watts < 0:
            raise ParseError(path, lineno, f"negative power {watts}")
        ts = int(ts) if ts.is_integer() else ts
        if out and not ts > out[-1].timestamp:
            raise ParseError(path, lineno, "timestamps not strictly increasing")
        out.append(PowerSample(ts, watts, flag=flag))
    return out


def run_power_logger(backend, pid: int | None, interval: float, duration: float,
                     sink: str | Path | IO[str], clock=None,
                     ceiling: float = DEFAULT_CEILING_W, check_pid: bool = True) -> int:
    """Log one power row per interval; returns the number of rows written.

    Counter backends take one extra reading at the start to establish the
    energy baseline, so ``duration`` seconds still yield ``duration/interval``
    rows. The run ends early, keeping its rows, if the backend or the target
    process goes away.
    """
    if interval <= 0:
        raise ConfigError(f"interval must be > 0, got {interval}")
    if duration < 0:
        raise ConfigError(f"duration must be >= 0, got {duration}")
    clock = clock or SystemClock()
    n_ticks = int(math.floor(duration / interval + 1e-9))
    baseline = getattr(backend, "needs_baseline", False)

    own = not hasattr(sink, "write")
    fh = open(sink, "w", encoding="utf-8", newline="") if own else sink
    written = 0
    last_ts = None
    try:
        _csvio.write_header(fh, POWER_HEADER)
        start = clock.now()
        for i in range(n_ticks + (1 if baseline else 0)):
            clock.sleep_until(start + i * interval)
            if check_pid and pid and not pid_alive(pid):
                logger.warning("process %s exited; stopping after %d rows", pid, written)
                break
            now = clock.now()
            if baseline:
                now = float(now)
            else:
                now = int(math.floor(now))
            try:
                reading = backend.read(now)
            except BackendGone as exc:
                logger.warning("%s; stopping after %d rows", exc, written)
                break
            if reading is None:
                continue
            ts, watts = reading
            ts = int(math.floor(ts)) if baseline else ts
            if last_ts is not None and ts <= last_ts:
                logger.warning("power timestamp %s not after %s; skipping", ts, last_ts)
                continue
            flag = None
            if watts > ceiling:
                flag = FLAG_IMPLAUSIBLE
                logger.warning("implausible power %.1f W at %s (ceiling %.0f W)", watts, ts, ceiling)
            _csvio.write_row(fh, (ts, watts), flag)
            fh.flush()
            written += 1
            last_ts = ts
    except KeyboardInterrupt:
        logger.info("interrupted after %d rows", written)
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
