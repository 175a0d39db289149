import io
import json
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mrenet.errors import UninformativePeriodError
from mrenet.gps_ingest import Session
from mrenet.profile import (
    DEFAULT_RESOLUTIONS,
    PeriodWindow,
    TrainingDistributionProfile,
    build_period_profiles,
    check_alignment,
    clean_sessions,
    dump_periods,
    endpoint,
    interval_times,
    observed_profile,
    period_average,
    periods_from_json,
    smooth_profile,
    speed_grid,
)

from oracles import isotonic_decreasing_bruteforce, profile_double_loop

GRID = speed_grid()


def stepped(pieces, sid="s", runner="r", start=0.0):
    """Session made of (speed, seconds) pieces sampled every second."""
    offsets, speeds, t = [0.0], [0.0], 0.0
    for v, seconds in pieces:
        for _ in range(int(seconds)):
            t += 1.0
            offsets.append(t)
            speeds.append(v)
    offsets = np.array(offsets)
    return Session(runner, sid, start, offsets, np.zeros_like(offsets), np.array(speeds), np.zeros(offsets.size, bool))


def profile_of(pieces, **kw):
    return smooth_profile(observed_profile(stepped(pieces, **kw), GRID))


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------


def test_default_grid_contains_every_endpoint():
    for G in DEFAULT_RESOLUTIONS:
        idx = check_alignment(GRID, G)
        assert idx.size == G + 1 and GRID[idx[0]] == 0.0 and GRID[idx[-1]] == 12.5
    assert GRID[0] == 0.0 and GRID[-1] == 12.5 and np.all(np.diff(GRID) > 0)


def test_base_grid_step_is_0025():
    base = speed_grid([5])
    np.testing.assert_allclose(np.diff(base), 0.025, rtol=1e-12)


def test_unaligned_resolution_refused():
    with pytest.raises(ValueError, match="not aligned"):
        check_alignment(speed_grid([5]), 15)


def test_resolution_125_has_width_one_tenth():
    assert endpoint(1, 125) == 0.1 and endpoint(54, 125) == 5.4


# ---------------------------------------------------------------------------
# observed_profile
# ---------------------------------------------------------------------------


def test_constant_pace_step_function():
    p = observed_profile(stepped([(3.0, 600)]), GRID)
    assert p.value_at(2.975) == 600 and p.value_at(3.0) == 0 and p.value_at(0.0) == 600
    assert p.total_duration == 600 and p.value_at(-1) == 600


def test_two_step_session():
    p = observed_profile(stepped([(2.0, 300), (5.0, 300)]), GRID)
    assert (p.value_at(1.0), p.value_at(3.0), p.value_at(6.0)) == (600, 300, 0)


def test_time_above_cap_excluded_from_intervals():
    p = smooth_profile(observed_profile(stepped([(3.0, 100), (13.0, 50)]), GRID))
    period = period_average([p], "r", 1)
    t = interval_times(period, 5)
    assert t.sum() == 100 and p.value_at(12.5) == 50


def test_empty_grid_rejected():
    with pytest.raises(ValueError):
        observed_profile(stepped([(3.0, 10)]), [])


@st.composite
def sessions(draw):
    n = draw(st.integers(1, 30))
    dts = draw(st.lists(st.integers(1, 64), min_size=n, max_size=n))
    speeds = draw(st.lists(st.floats(0, 14, allow_nan=False), min_size=n, max_size=n))
    offsets = np.concatenate(([0.0], np.cumsum(np.array(dts) / 8.0)))
    return Session("r", "s", 0.0, offsets, np.zeros(n + 1), np.array([0.0] + speeds), np.zeros(n + 1, bool))


@given(sessions())
def test_observed_profile_equals_double_loop(s):
    p = observed_profile(s, GRID)
    np.testing.assert_array_equal(p.values, profile_double_loop(s.offsets, s.speeds, GRID))
    assert p.total_duration == s.duration
    assert np.all(np.diff(p.values) <= 0) and p.values[0] <= p.total_duration


# ---------------------------------------------------------------------------
# smooth_profile
# ---------------------------------------------------------------------------


def raw(values, total):
    grid = np.linspace(0, 12.5, len(values))
    return TrainingDistributionProfile("s", "r", 0.0, grid, np.asarray(values, float), float(total))


def test_smoothing_hand_example():
    np.testing.assert_array_equal(smooth_profile(raw([10, 12, 5], 20)).values, [11, 11, 5])


def test_smoothing_keeps_monotone_input():
    vals = [30.0, 20.0, 20.0, 4.0]
    np.testing.assert_array_equal(smooth_profile(raw(vals, 40)).values, vals)


@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=10))
def test_smoothing_matches_projection_oracle(vals):
    total = max(vals) + 1
    out = smooth_profile(raw(vals, total)).values
    np.testing.assert_allclose(out, isotonic_decreasing_bruteforce(vals), rtol=1e-9, atol=1e-9)


@given(st.lists(st.floats(-10, 200, allow_nan=False), min_size=1, max_size=40))
def test_smoothing_is_idempotent_and_bounded(vals):
    once = smooth_profile(raw(vals, 150))
    twice = smooth_profile(once)
    np.testing.assert_array_equal(once.values, twice.values)
    assert np.all(np.diff(once.values) <= 0)
    assert np.all((once.values >= 0) & (once.values <= 150))


# ---------------------------------------------------------------------------
# clean_sessions
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("seconds, dropped", [(126, True), (125, False), (0, False)])
def test_cleaning_threshold(seconds, dropped):
    p = profile_of([(3.0, 600), (9.0, seconds)])
    kept, gone = clean_sessions([p])
    assert (gone == [p]) is dropped and (kept == [p]) is not dropped


# ---------------------------------------------------------------------------
# period_average and interval_times
# ---------------------------------------------------------------------------


def test_single_profile_average_is_itself():
    p = profile_of([(3.0, 600)])
    avg = period_average([p], "r", 1)
    np.testing.assert_array_equal(avg.values, p.values)
    assert avg.mean_session_length == 600 and avg.value_at(-1) == 600


def test_two_profile_average():
    a = profile_of([(3.0, 600)], sid="a")
    b = profile_of([(0.5, 600)], sid="b")
    avg = period_average([a, b], "r", 1)
    assert avg.value_at(1.0) == 300 and avg.value_at(0.25) == 600 and avg.session_count == 2


def test_empty_period_is_uninformative():
    with pytest.raises(UninformativePeriodError):
        period_average([], "r", 1)


def test_average_is_independent_of_input_order():
    rng = random.Random(0)
    profs = [profile_of([(rng.uniform(0, 8), rng.randint(10, 300)) for _ in range(4)], sid=f"s{i:02d}") for i in range(12)]
    a = period_average(profs, "r", 1)
    rng.shuffle(profs)
    b = period_average(profs, "r", 1)
    assert a.values.tobytes() == b.values.tobytes() and a.mean_session_length == b.mean_session_length


def test_constant_profile_lands_in_first_interval():
    period = period_average([profile_of([(3.0, 600)])], "r", 1)
    np.testing.assert_array_equal(interval_times(period, 5), [0, 600, 0, 0, 0])
    period = period_average([profile_of([(2.0, 600)])], "r", 1)
    np.testing.assert_array_equal(interval_times(period, 5), [600, 0, 0, 0, 0])


@given(st.lists(st.tuples(st.floats(0, 13, allow_nan=False), st.integers(1, 200)), min_size=1, max_size=6))
def test_interval_times_telescope_and_refine(pieces):
    period = period_average([profile_of(pieces)], "r", 1)
    for G in (5, 10, 25, 30, 55, 60):
        t = interval_times(period, G)
        assert np.all(t >= 0)
        assert t.sum() == period.value_at(0.0) - period.value_at(12.5)
        fine = interval_times(period, 2 * G)
        np.testing.assert_array_equal(fine[0::2] + fine[1::2], t)


def test_build_period_profiles_flags_empty_windows():
    p = profile_of([(3.0, 600)], start=50.0)
    windows = [PeriodWindow("r", 1, 0.0, 100.0), PeriodWindow("r", 2, 100.0, 200.0)]
    periods, uninformative = build_period_profiles([p], windows)
    assert list(periods) == [("r", 1)] and uninformative == [("r", 2)]


def test_period_json_round_trip():
    p = profile_of([(3.0, 600)], start=50.0)
    periods, _ = build_period_profiles([p], [PeriodWindow("r", 1, 0.0, 100.0)])
    buf = io.StringIO()
    dump_periods(periods, buf, [("r", 2)], ["x"])
    back, unin = periods_from_json(json.loads(buf.getvalue()))
    np.testing.assert_array_equal(back[("r", 1)].values, periods[("r", 1)].values)
    assert unin == [("r", 2)]
