import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vmwatt._clock import VirtualClock
from vmwatt.errors import BackendGone, ConfigError, DataError, ParseError, TimingError
from vmwatt.power import (
    FLAG_IMPLAUSIBLE, POWER_HEADER, CounterFileBackend, EnergyCounterState, ExternalCsvBackend,
    PowerSample, SyntheticPowerBackend, energy_delta_to_watts, energy_delta_uj, open_backend,
    read_external_csv, read_power_csv, run_power_logger, write_power_csv,
)


@pytest.mark.parametrize("last, current, max_range, dt, watts", [
    (0, 1_000_000, 10**12, 1, 1.0),
    (999_999, 500, 1_000_000, 1, 0.000501),
    (0, 5_000_000, 10**12, 2, 2.5),
])
def test_conversion_examples(last, current, max_range, dt, watts):
    state = EnergyCounterState(last, 100.0, max_range)
    w, new = energy_delta_to_watts(state, current, 100.0 + dt)
    assert w == watts
    assert new == EnergyCounterState(current, 100.0 + dt, max_range)


def test_non_advancing_time():
    state = EnergyCounterState(0, 5.0, 100)
    with pytest.raises(TimingError):
        energy_delta_to_watts(state, 10, 5.0)
    with pytest.raises(TimingError):
        energy_delta_to_watts(state, 10, 4.0)


def test_state_bounds():
    with pytest.raises(DataError):
        EnergyCounterState(101, 0, 100)


@settings(max_examples=300)
@given(st.integers(1, 2**63).flatmap(
    lambda r: st.tuples(st.just(r), st.integers(0, r), st.integers(0, r))))
def test_wraparound_delta_in_range(args):
    max_range, last, current = args
    assert 0 <= energy_delta_uj(last, current, max_range) <= max_range


@settings(max_examples=100)
@given(st.lists(st.tuples(st.integers(0, 10**9), st.integers(1, 5)), min_size=1, max_size=50),
       st.integers(0, 10**6))
def test_conservation_without_wrap(steps, start):
    total_uj = sum(d for d, _ in steps)
    state = EnergyCounterState(start, 0.0, start + total_uj + 1)
    energy, t, joules = start, 0.0, 0.0
    for d, dt in steps:
        energy += d
        t += dt
        w, state = energy_delta_to_watts(state, energy, t)
        joules += w * dt
    assert joules == pytest.approx(total_uj / 1e6, rel=1e-9, abs=1e-12)


def test_synthetic_constant_backend(vclock):
    buf = io.StringIO()
    n = run_power_logger(SyntheticPowerBackend({"watts": 20}), None, 1, 5, buf, clock=vclock)
    lines = buf.getvalue().splitlines()
    assert n == 5
    assert lines[0] == "timestamp,watts"
    assert [l.split(",")[1] for l in lines[1:]] == ["20"] * 5


def _powerjoular_file(path, n):
    with open(path, "w") as fh:
        fh.write("Date,CPU Utilization,CPU Power\n")
        for i in range(n):
            fh.write(f"{1_700_000_000 + i},0.{i % 10},{10 + 0.25 * i}\n")


def test_external_adapter_identity(tmp_path, vclock):
    src = tmp_path / "pj.csv"
    _powerjoular_file(src, 100)
    out = tmp_path / "p.csv"
    n = run_power_logger(ExternalCsvBackend(src), None, 1, 100, out, clock=vclock)
    assert n == 100
    got = read_power_csv(out)
    assert [(s.timestamp, s.watts) for s in got] == [(1_700_000_000 + i, 10 + 0.25 * i) for i in range(100)]


def test_external_extra_columns(tmp_path):
    src = tmp_path / "x.csv"
    src.write_text("host,timestamp,watts,note\nh,1,2.5,a\nh,2,3.5,b\n")
    assert [(s.timestamp, s.watts) for s in read_external_csv(src)] == [(1, 2.5), (2, 3.5)]


def test_external_missing_columns(tmp_path):
    src = tmp_path / "x.csv"
    src.write_text("a,b\n1,2\n")
    with pytest.raises(ParseError):
        read_external_csv(src)


def _counter_dir(tmp_path, max_range=10**12):
    d = tmp_path / "intel-rapl:0"
    d.mkdir()
    (d / "energy_uj").write_text("0\n")
    (d / "max_energy_range_uj").write_text(f"{max_range}\n")
    return d


def test_counter_file_backend(tmp_path):
    d = _counter_dir(tmp_path)
    t0 = 1_700_000_000

    def advance(t):
        (d / "energy_uj").write_text(f"{int(round(t - t0)) * 3_000_000}\n")

    clock = VirtualClock(start=t0, on_advance=advance)
    out = tmp_path / "p.csv"
    n = run_power_logger(open_backend(f"counter-file:{d}"), None, 1, 10, out, clock=clock)
    rows = read_power_csv(out)
    assert n == len(rows) == 10
    assert all(r.watts == 3.0 for r in rows)


def test_counter_file_wraps(tmp_path):
    d = _counter_dir(tmp_path, max_range=5_000_000)
    t0 = 1_700_000_000

    def advance(t):
        (d / "energy_uj").write_text(f"{(int(round(t - t0)) * 3_000_000) % 5_000_000}\n")

    clock = VirtualClock(start=t0, on_advance=advance)
    buf = io.StringIO()
    run_power_logger(CounterFileBackend.from_spec(str(d)), None, 1, 3, buf, clock=clock)
    watts = [float(l.split(",")[1]) for l in buf.getvalue().splitlines()[1:]]
    assert watts == [3.0, 3.0, 3.0]


def test_backend_disappears(tmp_path):
    d = _counter_dir(tmp_path)
    t0 = 1_700_000_000

    def advance(t):
        k = int(round(t - t0))
        if k == 4:
            (d / "energy_uj").unlink()
        elif k < 4:
            (d / "energy_uj").write_text(f"{k * 1_000_000}\n")

    clock = VirtualClock(start=t0, on_advance=advance)
    buf = io.StringIO()
    assert run_power_logger(CounterFileBackend.from_spec(str(d)), None, 1, 10, buf, clock=clock) == 3


def test_external_exhaustion_stops(tmp_path, vclock):
    src = tmp_path / "pj.csv"
    _powerjoular_file(src, 4)
    assert run_power_logger(ExternalCsvBackend(src), None, 1, 50, io.StringIO(), clock=vclock) == 4
    backend = ExternalCsvBackend(src)
    for _ in range(4):
        backend.read(0)
    with pytest.raises(BackendGone):
        backend.read(0)


def test_implausible_power_flagged_not_dropped(tmp_path, vclock):
    out = tmp_path / "p.csv"
    run_power_logger(SyntheticPowerBackend({"watts": 20_000}), None, 1, 2, out, clock=vclock)
    text = out.read_text()
    assert f"# flag={FLAG_IMPLAUSIBLE}" in text
    rows = read_power_csv(out)
    assert len(rows) == 2 and rows[0].watts == 20_000 and rows[0].flag == FLAG_IMPLAUSIBLE


def test_custom_ceiling(vclock):
    buf = io.StringIO()
    run_power_logger(SyntheticPowerBackend({"watts": 50}), None, 1, 1, buf, clock=vclock, ceiling=40)
    assert "implausible" in buf.getvalue()


def test_dead_pid_stops(vclock):
    buf = io.StringIO()
    n = run_power_logger(SyntheticPowerBackend(), 2**22 + 12345, 1, 5, buf, clock=vclock)
    assert n == 0


def test_bad_backend_string():
    with pytest.raises(ConfigError):
        open_backend("rapl")
    with pytest.raises(ConfigError):
        SyntheticPowerBackend({"noise_sigma": -1})


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1e5, allow_nan=False), max_size=40))
def test_power_csv_round_trip(tmp_path_factory, watts):
    path = tmp_path_factory.mktemp("p") / "p.csv"
    samples = [PowerSample(1000 + i, w) for i, w in enumerate(watts)]
    write_power_csv(samples, path)
    assert read_power_csv(path) == samples


def test_power_csv_rejects_negative(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("timestamp,watts\n1,3\n2,-1\n")
    with pytest.raises(ParseError, match=":3:"):
        read_power_csv(path)


def test_synthetic_noise_deterministic(vclock):
    a, b = io.StringIO(), io.StringIO()
    cfg = {"watts": 30, "amplitude": 5, "noise_sigma": 1, "seed": 4}
    run_power_logger(SyntheticPowerBackend(cfg), None, 1, 20, a, clock=VirtualClock())
    run_power_logger(SyntheticPowerBackend(cfg), None, 1, 20, b, clock=VirtualClock())
    assert a.getvalue() == b.getvalue()
    vals = np.array([float(l.split(",")[1]) for l in a.getvalue().splitlines()[1:]])
    assert (vals >= 0).all() and vals.std() > 0
