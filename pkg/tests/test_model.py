import math

import numpy as np
import pytest

from _pipeline import truth
from mresysid import (
    FastDynamics,
    HammersteinModel,
    PolynomialNonlinearity,
    SlowDynamics,
    TimeSeries,
    eval_nonlinearity,
    frequency_response,
    simulate,
    step_response_fast,
    step_response_series,
    step_response_slow,
)
from mresysid.model import max_rk4_step

SINGLE_POLY = (7.077, -0.04435, -0.0009229, -1.709e-5)


def rk4_scalar_loop(rhs, x0, h, n):
    x = np.array(x0, dtype=float)
    for _ in range(n):
        k1 = rhs(x)
        k2 = rhs(x + 0.5 * h * k1)
        k3 = rhs(x + 0.5 * h * k2)
        k4 = rhs(x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


# --- nonlinearity -----------------------------------------------------------


def test_eval_nonlinearity_offset():
    f = PolynomialNonlinearity(SINGLE_POLY)
    assert eval_nonlinearity(f, 0.0) == 7.077
    assert f.offset == 7.077
    assert f.order == 3


def test_eval_nonlinearity_term_by_term_oracle():
    f = PolynomialNonlinearity(SINGLE_POLY)
    ref = sum(c * 12.0**i for i, c in enumerate(SINGLE_POLY))
    assert eval_nonlinearity(f, 12.0) == pytest.approx(ref, abs=1e-12)
    assert ref == pytest.approx(6.382, abs=5e-4)


def test_zero_polynomial():
    f = PolynomialNonlinearity((0.0, 0.0, 0.0))
    assert np.all(eval_nonlinearity(f, np.linspace(-12, 12, 7)) == 0)


def test_nonlinearity_rejects_non_finite():
    with pytest.raises(ValueError):
        PolynomialNonlinearity((1.0, math.nan))


# --- fast / slow step responses --------------------------------------------


def test_fast_step_zero_at_origin_and_settles_to_k():
    fast = FastDynamics(0.76, 39.98, 246.11)
    assert abs(step_response_fast(fast, 0.0)) <= 1e-12
    assert step_response_fast(fast, 1.0) == pytest.approx(0.76, abs=1e-9)


def test_fast_step_matches_rk4_at_10ms():
    k, a, w = 0.76, 39.98, 246.11
    wn2 = a * a + w * w
    x = rk4_scalar_loop(lambda s: np.array([s[1], k * wn2 - 2 * a * s[1] - wn2 * s[0]]),
                        [0.0, 0.0], 1e-6, 10_000)
    got = step_response_fast(FastDynamics(k, a, w), 0.01)
    assert got == pytest.approx(x[0], rel=1e-6)


def test_slow_step_values():
    slow = SlowDynamics(0.13, 0.13 / 0.76)
    assert step_response_slow(slow, 0.0) == 1.0
    assert step_response_slow(slow, 100.0) == pytest.approx(1 / 0.76, abs=1e-6)


def test_slow_step_matches_rk4_at_5s():
    s0, z0 = 0.13, 0.13 / 0.76
    x = rk4_scalar_loop(lambda s: np.array([-s0 * s[0] + 1.0]), [0.0], 1e-5, 500_000)
    expected = 1.0 + (z0 - s0) * x[0]
    assert step_response_slow(SlowDynamics(s0, z0), 5.0) == pytest.approx(expected, rel=1e-6)


@pytest.mark.parametrize("fn, block", [(step_response_fast, FastDynamics(1, 2, 3)),
                                       (step_response_slow, SlowDynamics(1, 2))])
def test_step_responses_reject_negative_time(fn, block):
    with pytest.raises(ValueError):
        fn(block, -0.1)


def test_block_invariants():
    with pytest.raises(ValueError):
        FastDynamics(0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        FastDynamics(1.0, -1.0, 1.0)
    with pytest.raises(ValueError):
        SlowDynamics(0.0, 1.0)
    with pytest.raises(ValueError):
        HammersteinModel(PolynomialNonlinearity((0.0, 1.0)), FastDynamics(0.76, 40, 246),
                         SlowDynamics(0.13, 0.2))


def test_series_step_is_convolution_of_blocks():
    m = truth("single")
    t = np.linspace(0, 0.3, 3001)
    # closed form against numerical convolution of the slow impulse with the fast step
    h_slow = (m.slow.z0 - m.slow.s0) * np.exp(-m.slow.s0 * t)
    fast = step_response_fast(m.fast, t)
    dt = t[1] - t[0]
    conv = fast + np.convolve(h_slow, fast)[: t.size] * dt
    series = step_response_series(m.fast, m.slow, t)
    assert np.max(np.abs(series - conv)) < 5e-4
    assert series[0] == pytest.approx(0.0, abs=1e-12)


# --- simulate ---------------------------------------------------------------


def test_simulate_equilibrium():
    m = truth("single")
    out = simulate(m, TimeSeries(1e-3, np.zeros(2000)), initial_output=m.nonlinearity.offset)
    assert np.allclose(out.values, 7.077, atol=1e-12)


def test_simulate_long_step_settles_at_f():
    m = truth("double")
    n = int(10 / m.slow.s0 / 1e-2) + 1
    u = np.full(n, 5.0)
    u[0] = 0.0
    out = simulate(m, TimeSeries(1e-2, u))
    f5 = m.nonlinearity(5.0)
    step = f5 - m.nonlinearity(0.0)
    assert abs(out.values[-1] - f5) <= 1e-3 * abs(step)


def test_simulate_matches_series_prediction_in_fast_window():
    m = truth("single")
    dt = 1e-3
    u = np.ones(301)
    u[0] = 0.0
    out = simulate(m, TimeSeries(dt, u))
    dv = m.nonlinearity(1.0) - m.nonlinearity(0.0)
    t = np.arange(300) * dt
    pred = m.nonlinearity(0.0) + dv * step_response_series(m.fast, m.slow, t)
    # the input switches at sample 1, so the response lags one sample
    err = np.abs(out.values[1:] - pred)
    assert np.max(err) <= 1e-5 * abs(dv)


def test_simulate_self_convergence():
    m = truth("single")
    u = np.ones(301)
    u[0] = 0.0
    coarse = simulate(m, TimeSeries(1e-3, u))
    h = max_rk4_step((m.fast.alpha, m.fast.omega, m.slow.s0))
    fine = simulate(m, TimeSeries(1e-3, u), max_step=h / 10)
    dv = m.nonlinearity(1.0) - m.nonlinearity(0.0)
    assert np.max(np.abs(coarse.values - fine.values)) <= 1e-5 * abs(dv)


def test_simulate_rejects_too_short_input():
    with pytest.raises(ValueError):
        TimeSeries(1e-3, np.zeros(1))


# --- frequency response -----------------------------------------------------


def test_frequency_response_limits():
    m = truth("single")
    fr = frequency_response(m.fast, m.slow, [1e-9, 1000 * m.slow.s0])
    assert fr.magnitude("fast")[0] == pytest.approx(m.fast.k, abs=1e-6)
    assert fr.magnitude("slow")[0] == pytest.approx(m.slow.z0 / m.slow.s0, rel=1e-9)
    assert abs(fr.magnitude("slow")[1] - 1) <= 0.005


def test_frequency_response_product():
    m = truth("double")
    w = np.logspace(-3, 4, 50)
    fr = frequency_response(m.fast, m.slow, w)
    assert np.max(np.abs(fr.total - fr.fast * fr.slow)) <= 1e-12


def test_frequency_response_matches_tf_polynomials():
    m = truth("single")
    w = np.logspace(-2, 3, 20)
    num, den = m.tf()
    direct = np.polyval(num, 1j * w) / np.polyval(den, 1j * w)
    fr = frequency_response(m.fast, m.slow, w)
    assert np.allclose(fr.total, direct, rtol=1e-10)


def test_frequency_response_rejects_non_positive():
    m = truth("single")
    with pytest.raises(ValueError):
        frequency_response(m.fast, m.slow, [0.0, 1.0])
