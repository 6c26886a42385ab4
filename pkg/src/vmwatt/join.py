"""Align guest metrics with host power along time and build training datasets."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _csvio
from .errors import JoinError, ParseError, SchemaError
from .metrics import FEATURE_NAMES, MetricsSample
from .power import PowerSample

DATASET_HEADER = FEATURE_NAMES + ("watts",)
DEFAULT_TOLERANCE = 0.5


@dataclass
class TrainingDataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...] = FEATURE_NAMES
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(-1, len(self.feature_names))
        self.y = np.asarray(self.y, dtype=float)
        if len(self.X) != len(self.y):
            raise SchemaError(f"{len(self.X)} feature rows but {len(self.y)} targets")

    def __len__(self) -> int:
        return len(self.y)


def join(metrics: Sequence[MetricsSample], power: Sequence[PowerSample],
         tolerance: float = DEFAULT_TOLERANCE, keep_flagged: bool = False,
         provenance: dict | None = None) -> TrainingDataset:
    """Pair each metrics row with its nearest power row within ``tolerance`` seconds.

    A power row is used at most once: when several metrics rows pick the
    same power row, the closest wins and ties go to the earlier metrics row.
    Unmatched rows on either side are dropped and counted in the provenance.
    Metrics rows flagged by the collector (rate baselines, counter resets)
    are skipped unless ``keep_flagged`` is set.
    """
    if not metrics or not power:
        raise JoinError(f"cannot join empty logs ({len(metrics)} metrics rows, {len(power)} power rows)")
    mt = np.array([s.timestamp for s in metrics], dtype=float)
    pt = np.array([s.timestamp for s in power], dtype=float)
    if np.any(np.diff(mt) <= 0):
        raise ParseError("metrics", None, "timestamps not strictly increasing")
    if np.any(np.diff(pt) <= 0):
        raise ParseError("power", None, "timestamps not strictly increasing")

    usable = np.array([keep_flagged or s.flag is None for s in metrics])
    # nearest power row for every metrics row; ties prefer the earlier power row
    hi = np.clip(np.searchsorted(pt, mt, side="left"), 0, len(pt) - 1)
    lo = np.clip(hi - 1, 0, len(pt) - 1)
    d_lo = np.abs(mt - pt[lo])
    d_hi = np.abs(pt[hi] - mt)
    nearest = np.where(d_lo <= d_hi, lo, hi)
    dist = np.minimum(d_lo, d_hi)
    candidate = usable & (dist <= tolerance)

    claimed: dict[int, int] = {}
    for i in np.flatnonzero(candidate):
        j = int(nearest[i])
        prev = claimed.get(j)
        if prev is None or dist[i] < dist[prev]:
            claimed[j] = int(i)
    pairs = sorted((i, j) for j, i in claimed.items())
    if not pairs:
        raise JoinError(
            f"no rows matched within {tolerance} s: metrics span {mt[0]:g}..{mt[-1]:g}, "
            f"power span {pt[0]:g}..{pt[-1]:g}"
        )
    mi = np.array([i for i, _ in pairs])
    pj = np.array([j for _, j in pairs])
    X = np.array([metrics[i].features() for i in mi], dtype=float)
    y = np.array([power[j].watts for j in pj], dtype=float)
    prov = dict(provenance or {})
    prov.update(
        tolerance=tolerance,
        keep_flagged=keep_flagged,
        matched=len(pairs),
        dropped_flagged=int((~usable).sum()),
        dropped_metrics=int(len(metrics) - len(pairs) - (~usable).sum()),
        dropped_power=int(len(power) - len(pairs)),
    )
    return TrainingDataset(X, y, FEATURE_NAMES, {"sources": [prov]})


def merge_datasets(datasets: Sequence[TrainingDataset]) -> TrainingDataset:
    if not datasets:
        raise SchemaError("nothing to merge")
    names = datasets[0].feature_names
    for k, ds in enumerate(datasets[1:], start=1):
        if tuple(ds.feature_names) != tuple(names):
            raise SchemaError(
                f"dataset {k} has features {list(ds.feature_names)}, expected {list(names)}"
            )
    sources = []
    for ds in datasets:
        sources.extend(ds.provenance.get("sources", [{}]))
    return TrainingDataset(
        np.concatenate([ds.X for ds in datasets]),
        np.concatenate([ds.y for ds in datasets]),
        names,
        {"sources": sources},
    )


def _provenance_path(path: Path) -> Path:
    return path.with_name(path.name + ".provenance.json")


def write_dataset_csv(ds: TrainingDataset, path: str | Path) -> None:
    """Write the dataset CSV plus a ``<name>.provenance.json`` sidecar."""
    path = Path(path)
    if tuple(ds.feature_names) != FEATURE_NAMES:
        raise SchemaError(f"dataset features {list(ds.feature_names)} differ from {list(FEATURE_NAMES)}")
    with path.open("w", encoding="utf-8", newline="") as fh:
        _csvio.write_header(fh, DATASET_HEADER)
        for row, target in zip(ds.X.tolist(), ds.y.tolist()):
            _csvio.write_row(fh, row + [target])
    _provenance_path(path).write_text(
        json.dumps(ds.provenance, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def read_dataset_csv(path: str | Path) -> TrainingDataset:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        first = fh.readline().rstrip("\r\n")
    if first and first != ",".join(DATASET_HEADER):
        cols = first.split(",")
        if sorted(cols) == sorted(DATASET_HEADER):
            raise SchemaError(f"{path}:1: columns out of order; expected {','.join(DATASET_HEADER)}")
    rows = []
    for lineno, row, _ in _csvio.iter_rows(path, DATASET_HEADER):
        values = [_csvio.parse_float(row[c], path, lineno, c) for c in DATASET_HEADER]
        if values[-1] < 0:
            raise ParseError(path, lineno, f"negative target {values[-1]}")
        rows.append(values)
    arr = np.array(rows, dtype=float).reshape(-1, len(DATASET_HEADER))
    prov_file = _provenance_path(path)
    prov = {"sources": [{"file": str(path)}]}
    if prov_file.exists():
        try:
            prov = json.loads(prov_file.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(prov_file, exc.lineno, exc.msg) from None
    return TrainingDataset(arr[:, :-1], arr[:, -1], FEATURE_NAMES, prov)
