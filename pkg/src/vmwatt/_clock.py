"""Wall and virtual clocks for the sampling loops."""

from __future__ import annotations

import time


class SystemClock:
    """Real time: ``now`` is the unix epoch, ``sleep_until`` blocks."""

    def now(self) -> float:
        return time.time()

    def sleep_until(self, t: float) -> None:
        delay = t - time.time()
        if delay > 0:
            time.sleep(delay)


class VirtualClock:
    """Clock that jumps instead of sleeping.

    Used by tests and by ``--no-sleep`` runs over replay/synthetic sources.
    ``on_advance`` is called with the new time after every jump.
    """

    def __init__(self, start: float = 1_700_000_000.0, on_advance=None):
        self.t = float(start)
        self.on_advance = on_advance

    def now(self) -> float:
        return self.t

    def sleep_until(self, t: float) -> None:
        if t > self.t:
            self.t = float(t)
        if self.on_advance is not None:
            self.on_advance(self.t)
