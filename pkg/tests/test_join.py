import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vmwatt.errors import JoinError, ParseError, SchemaError
from vmwatt.join import (
    DATASET_HEADER, TrainingDataset, join, merge_datasets, read_dataset_csv, write_dataset_csv,
)
from vmwatt.metrics import FLAG_BASELINE, MetricsSample
from vmwatt.power import PowerSample

T0 = 1_700_000_000


def _metrics(times, flags=None):
    flags = flags or [None] * len(times)
    return [MetricsSample(t, i % 100, 50.0, float(i), 0.0, 0.0, 0.0, flag=f)
            for i, (t, f) in enumerate(zip(times, flags))]


def _power(times):
    return [PowerSample(t, 10.0 + i) for i, t in enumerate(times)]


def test_identical_grids():
    grid = [T0 + i for i in range(100)]
    ds = join(_metrics(grid), _power(grid))
    assert len(ds) == 100
    src = ds.provenance["sources"][0]
    assert src["dropped_metrics"] == src["dropped_power"] == 0
    np.testing.assert_array_equal(ds.y, 10.0 + np.arange(100))


def test_offset_within_tolerance():
    grid = [T0 + i for i in range(100)]
    ds = join(_metrics(grid), _power([t + 0.4 for t in grid]), tolerance=0.5)
    assert len(ds) == 100


def test_offset_outside_tolerance():
    # 2 s grid so that no power row lands within 0.5 s of any metrics row
    grid = [T0 + 2 * i for i in range(100)]
    with pytest.raises(JoinError, match="span"):
        join(_metrics(grid), _power([t + 0.6 for t in grid]), tolerance=0.5)


def test_offset_past_half_interval_pairs_with_next_row():
    # on a 1 Hz grid a +0.6 s shift puts each power row 0.4 s before the next metrics row
    grid = [T0 + i for i in range(100)]
    ds = join(_metrics(grid), _power([t + 0.6 for t in grid]), tolerance=0.5)
    assert len(ds) == 99
    np.testing.assert_array_equal(ds.X[:, 2], np.arange(1, 100))
    np.testing.assert_array_equal(ds.y, 10.0 + np.arange(99))


def test_unsorted_input():
    with pytest.raises(ParseError):
        join(_metrics([T0 + 1, T0]), _power([T0]))
    with pytest.raises(JoinError):
        join([], _power([T0]))


def test_nearest_claim_wins_and_ties_go_earlier():
    # both metrics rows are 0.25 s from the single power row
    ds = join(_metrics([10.0, 10.5]), _power([10.25]))
    assert len(ds) == 1
    assert ds.X[0, 2] == 0.0
    # the closer metrics row wins even when it comes later
    ds = join(_metrics([10.0, 10.3]), _power([10.4]))
    assert ds.X[0, 2] == 1.0


def test_flagged_rows_dropped_by_default():
    grid = [T0 + i for i in range(5)]
    m = _metrics(grid, [FLAG_BASELINE, None, None, None, None])
    assert len(join(m, _power(grid))) == 4
    assert join(m, _power(grid)).provenance["sources"][0]["dropped_flagged"] == 1
    assert len(join(m, _power(grid), keep_flagged=True)) == 5


times = st.lists(st.floats(0, 200, allow_nan=False), min_size=1, max_size=40, unique=True).map(sorted)


@settings(max_examples=150, deadline=None)
@given(times, times, st.floats(0.05, 3))
def test_join_invariants(mt, pt, tol):
    m, p = _metrics(mt), _power(pt)
    try:
        ds = join(m, p, tolerance=tol)
    except JoinError:
        # nothing within tolerance at all
        assert min(abs(a - b) for a in mt for b in pt) > tol
        return
    # recover which rows were paired via the unique feature/target encodings
    mi = ds.X[:, 2].astype(int)
    pj = (ds.y - 10.0).astype(int)
    assert all(abs(mt[i] - pt[j]) <= tol for i, j in zip(mi, pj))
    assert len(set(pj)) == len(pj)
    assert list(mi) == sorted(mi)
    src = ds.provenance["sources"][0]
    assert src["matched"] + src["dropped_metrics"] == len(mt)
    assert src["matched"] + src["dropped_power"] == len(pt)
    again = join(m, p, tolerance=tol)
    np.testing.assert_array_equal(again.X, ds.X)
    np.testing.assert_array_equal(again.y, ds.y)


def _ds(n, seed=0):
    rng = np.random.default_rng(seed)
    return TrainingDataset(rng.uniform(0, 100, (n, 6)), rng.uniform(0, 50, n),
                           provenance={"sources": [{"file": f"d{seed}"}]})


def test_merge_counts():
    merged = merge_datasets([_ds(100, 1), _ds(200, 2), _ds(300, 3)])
    assert len(merged) == 600
    assert [s["file"] for s in merged.provenance["sources"]] == ["d1", "d2", "d3"]


def test_merge_with_self():
    d = _ds(50)
    merged = merge_datasets([d, d])
    np.testing.assert_array_equal(merged.X, np.vstack([d.X, d.X]))
    np.testing.assert_array_equal(merged.y, np.concatenate([d.y, d.y]))


def test_merge_mismatched_names():
    a = _ds(5)
    b = TrainingDataset(a.X, a.y, tuple(reversed(a.feature_names)))
    with pytest.raises(SchemaError):
        merge_datasets([a, b])


def test_header_order_schema_error(tmp_path):
    path = tmp_path / "d.csv"
    cols = list(DATASET_HEADER)
    cols[0], cols[1] = cols[1], cols[0]
    path.write_text(",".join(cols) + "\n1,2,3,4,5,6,7\n")
    with pytest.raises(SchemaError):
        read_dataset_csv(path)


def test_dataset_round_trip_and_bytes(tmp_path):
    d = _ds(40, 5)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_dataset_csv(d, a)
    write_dataset_csv(read_dataset_csv(a), b)
    assert a.read_bytes() == b.read_bytes()
    back = read_dataset_csv(a)
    np.testing.assert_array_equal(back.X, d.X)
    np.testing.assert_array_equal(back.y, d.y)
    assert back.provenance == d.provenance
    assert a.read_text().splitlines()[0] == ",".join(DATASET_HEADER)


def test_dataset_negative_target(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text(",".join(DATASET_HEADER) + "\n1,2,3,4,5,6,-7\n")
    with pytest.raises(ParseError, match=":2:"):
        read_dataset_csv(path)
