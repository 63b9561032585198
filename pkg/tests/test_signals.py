import numpy as np
import pytest

from _pipeline import SAMPLE_PERIOD, dataset, truth
from mresysid import (
    FastDynamics,
    HammersteinModel,
    StepRecord,
    StepSchedule,
    TimeSeries,
    add_noise,
    chirp_excitation,
    default_schedule,
    make_step_excitation,
    simulate,
    split_steps,
    steady_state_points,
)
from mresysid.signals import AVERAGING_WINDOW


def test_default_schedule_protocol():
    sched = default_schedule()
    assert len(sched.levels) == 21
    assert sched.duration == 420.0
    assert max(sched.levels) == 12.0 and min(sched.levels) == -12.0
    assert len(sched.switches()) == 20
    u = make_step_excitation(sched, SAMPLE_PERIOD)
    assert len(u) * u.sample_period == pytest.approx(420.0)


def test_excitation_trivial_zero_schedule():
    u = make_step_excitation(StepSchedule((0.0, 0.0), 1.0), 0.5)
    assert len(u) == 4 and np.all(u.values == 0)


def test_schedule_rejects_bad_input():
    with pytest.raises(ValueError):
        StepSchedule((1.0,), 1.0)
    with pytest.raises(ValueError):
        StepSchedule((0.0, 1.0), 0.0)
    with pytest.raises(ValueError):
        make_step_excitation(StepSchedule((0.0, 1.0), 1.0), 3.0)


def test_split_default_schedule_gives_pairs():
    u, y, records, _, _ = dataset("single")
    sched = default_schedule()
    assert len(records) == 20
    assert [(r.u_pre, r.u_post) for r in records] == sched.switches()
    assert all(r.delta_y[0] == 0.0 for r in records)


def test_split_constant_input_is_empty():
    u = TimeSeries(0.1, np.ones(100))
    assert split_steps(u, TimeSeries(0.1, np.zeros(100))) == []


def test_split_rejects_mismatch():
    with pytest.raises(ValueError):
        split_steps(TimeSeries(0.1, np.ones(10)), TimeSeries(0.1, np.ones(11)))


def test_step_record_invariants():
    with pytest.raises(ValueError):
        StepRecord(0.0, 1.0, 0.1, [0.1, 0.2])
    with pytest.raises(ValueError):
        StepRecord(1.0, 1.0, 0.1, [0.0, 0.2])


def test_steady_state_trivial_record():
    rec = StepRecord(0.0, 3.0, 0.01, np.zeros(200))
    pts = steady_state_points([rec], y_offset=2.5)
    assert list(pts.U) == [3.0] and list(pts.Y) == [2.5]
    assert AVERAGING_WINDOW == 0.25


def test_steady_state_rejects_empty():
    with pytest.raises(ValueError):
        steady_state_points([])


def test_steady_state_points_match_nonlinearity():
    _, _, _, statics, _ = dataset("single")
    f = truth("single").nonlinearity
    rel = np.abs(statics.Y - f(statics.U)) / np.abs(f(statics.U))
    assert np.max(rel) <= 0.005


def test_steady_state_duplicates_averaged():
    recs = [StepRecord(0.0, 1.0, 0.01, np.full(100, 0.0)),
            StepRecord(1.0, 0.0, 0.01, np.r_[0.0, np.full(99, 1.0)]),
            StepRecord(0.0, 1.0, 0.01, np.zeros(100))]
    pts = steady_state_points(recs, averaging_window=0.1)
    assert list(pts.U) == [0.0, 1.0]
    assert pts.Y[1] == pytest.approx(0.5)


def test_steady_state_insensitive_to_fast_dynamics():
    m = truth("single")
    quick = HammersteinModel(m.nonlinearity,
                             FastDynamics(m.fast.k, 2 * m.fast.alpha, 2 * m.fast.omega), m.slow)
    sched = default_schedule(hold_period=160.0)  # >= 20 / s0
    u = make_step_excitation(sched, 1e-2)
    pts = []
    for model in (m, quick):
        y = simulate(model, u)
        pts.append(steady_state_points(split_steps(u, y), y_offset=float(y.values[0])).Y)
    assert np.max(np.abs(pts[0] - pts[1]) / np.abs(pts[0])) < 1e-3


def test_add_noise():
    s = TimeSeries(1e-3, np.zeros(100_000))
    assert add_noise(s, 0.0, 1) == s
    a, b = add_noise(s, 0.01, 5), add_noise(s, 0.01, 5)
    assert np.array_equal(a.values, b.values)
    assert np.std(a.values) == pytest.approx(0.01, rel=0.02)
    with pytest.raises(ValueError):
        add_noise(s, -1.0, 0)


def test_chirp_defaults():
    c = chirp_excitation()
    assert c.duration == pytest.approx(30.0)
    assert np.max(np.abs(c.values)) <= 6.0 + 1e-12
    assert c.values[0] == pytest.approx(0.0, abs=1e-12)
