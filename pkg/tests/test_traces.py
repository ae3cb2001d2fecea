import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ehexit.ehsim import harvest
from ehexit.errors import ConfigError, InputError
from ehexit.traces import (EventStream, PowerTrace, constant_trace, solar_like_trace,
                           square_wave_trace)


def riemann_harvest(trace, t0, t1, n=200_000):
    t = np.linspace(t0, t1, n + 1)
    p = np.interp(t, trace.times, trace.power)
    return float(np.sum(0.5 * (p[1:] + p[:-1]) * np.diff(t)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_harvest_matches_fine_riemann_sum(seed, a, b):
    rng = np.random.default_rng(seed)
    t = np.cumsum(rng.uniform(0.5, 3.0, size=12))
    trace = PowerTrace(t, rng.uniform(0, 5, size=12))
    t0, t1 = sorted((t[0] + a * (t[-1] - t[0]), t[0] + b * (t[-1] - t[0])))
    assert harvest(trace, t0, t1) == pytest.approx(riemann_harvest(trace, t0, t1), rel=1e-6, abs=1e-9)


def test_harvest_is_additive():
    tr = square_wave_trace(3.0, 0.5, 10.0, 0.3, 100.0)
    assert harvest(tr, 0, 37.3) + harvest(tr, 37.3, 100) == pytest.approx(harvest(tr, 0, 100), abs=1e-12)
    with pytest.raises(InputError):
        harvest(tr, 5, 1)


def test_constant_trace_example():
    tr = constant_trace(2.0, 100.0)
    assert len(tr.times) == 101 and np.all(tr.power == 2.0)
    assert harvest(tr, 0, 100) == pytest.approx(200.0)


def test_solar_like_is_seeded_and_dark_at_night():
    a = solar_like_trace(np.random.default_rng(3))
    b = solar_like_trace(np.random.default_rng(3))
    assert a.to_csv() == b.to_csv()
    assert a.power[0] == 0.0 and a.power.max() <= 0.02
    night = a.times % 86400 < 21600
    assert np.all(a.power[night] == 0.0)


def test_csv_roundtrip():
    tr = square_wave_trace(1.0, 0.0, 7.0, 0.5, 30.0)
    back = PowerTrace.from_csv(tr.to_csv("note"))
    np.testing.assert_array_equal(back.times, tr.times)
    np.testing.assert_array_equal(back.power, tr.power)


@pytest.mark.parametrize("text,line", [
    ("time_s,power_mw\n0,1\n1,abc\n", 3),
    ("time_s,power_mw\n0,1\n0,2\n", 3),
    ("# c\ntime_s,power_mw\n0,1\n1,-2\n", 4),
    ("time_s,power_mw\n0,1,2\n", 2),
    ("t,p\n0,1\n", 1),
])
def test_csv_errors_name_the_line(text, line):
    with pytest.raises(InputError, match=f":{line}:"):
        PowerTrace.from_csv(text)


def test_trace_validation():
    with pytest.raises(InputError):
        PowerTrace([0.0], [1.0])
    with pytest.raises(InputError):
        PowerTrace([0.0, 1.0], [1.0, np.nan])
    with pytest.raises(ConfigError):
        constant_trace(-1.0, 10.0)


def test_event_stream(tmp_path):
    ev = EventStream.generate(50, np.random.default_rng(1), 0.0, 100.0)
    assert len(ev) == 50 and np.all(np.diff(ev.times) > 0)
    p = tmp_path / "ev.csv"
    p.write_text(ev.to_csv("x"))
    np.testing.assert_array_equal(EventStream.load(p).times, ev.times)
    with pytest.raises(InputError):
        EventStream([2.0, 1.0])
    with pytest.raises(InputError):
        EventStream([0.0, 200.0]).check_within(constant_trace(1.0, 100.0))
