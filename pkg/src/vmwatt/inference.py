"""Live power estimation on the guest from a trained model."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO

from . import _csvio
from ._clock import SystemClock
from .errors import ConfigError, SchemaError
from .gbrt import GbrModel, gbr_predict
from .metrics import FEATURE_NAMES

logger = logging.getLogger(__name__)

ESTIMATE_HEADER = ("timestamp", "watts_estimate")


@dataclass
class InferenceSession:
    model: GbrModel
    source: object
    interval: float = 1.0
    sink: str | Path | IO[str] | None = None

    def check(self) -> None:
        if tuple(self.model.feature_names) != FEATURE_NAMES:
            raise SchemaError(
                f"model features {list(self.model.feature_names)} do not match "
                f"collector features {list(FEATURE_NAMES)}"
            )
        if self.interval <= 0:
            raise ConfigError(f"interval must be > 0, got {self.interval}")


def infer_live(session: InferenceSession, duration: float, clock=None) -> int:
    """Sample, predict and emit ``timestamp,watts_estimate`` once per interval.

    Estimates are clamped at 0 W. Returns the number of rows emitted.
    """
    session.check()
    clock = clock or SystemClock()
    n_ticks = int(math.floor(duration / session.interval + 1e-9))
    sink = session.sink
    own = sink is not None and not hasattr(sink, "write")
    if sink is None:
        import sys
        fh = sys.stdout
    else:
        fh = open(sink, "w", encoding="utf-8", newline="") if own else sink
    emitted = 0
    try:
        _csvio.write_header(fh, ESTIMATE_HEADER)
        start = clock.now()
        for i in range(n_ticks):
            clock.sleep_until(start + i * session.interval)
            sample = session.source.read(int(math.floor(clock.now())))
            if sample is None:
                break
            watts = max(gbr_predict(session.model, sample.features()), 0.0)
            _csvio.write_row(fh, (sample.timestamp, watts))
            fh.flush()
            emitted += 1
    except KeyboardInterrupt:
        logger.info("interrupted after %d estimates", emitted)
    finally:
        if own:
            fh.close()
    return emitted
