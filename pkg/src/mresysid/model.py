"""Hammerstein actuator model: polynomial static map followed by fast and slow
linear dynamics.

The fast block is an under-damped second-order system

    G_fast(s) = k (a^2 + w^2) / (s^2 + 2 a s + a^2 + w^2)

and the slow block a first-order lead-lag

    G_slow(s) = (s + z0) / (s + s0).

With the unit static gain constraint ``k * z0 / s0 == 1`` the polynomial alone
fixes the steady-state output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import signal

#: Tolerance on ``|k * z0 / s0 - 1|`` accepted by :class:`HammersteinModel`.
UNIT_GAIN_TOL = 1e-9


def _readonly(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PolynomialNonlinearity:
    """Static map ``f(u) = sum_k p_k u^k`` (volts to millimetres).

    ``coefficients`` are stored lowest power first, so ``coefficients[0]`` is
    the zero-voltage position ``y0``.
    """

    coefficients: np.ndarray

    def __post_init__(self):
        coeffs = _readonly(self.coefficients)
        if coeffs.ndim != 1 or coeffs.size == 0:
            raise ValueError("polynomial needs at least one coefficient")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("polynomial coefficients must be finite")
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def order(self) -> int:
        return self.coefficients.size - 1

    @property
    def offset(self) -> float:
        return float(self.coefficients[0])

    def __call__(self, u):
        return eval_nonlinearity(self, u)

    def __eq__(self, other):
        if not isinstance(other, PolynomialNonlinearity):
            return NotImplemented
        return np.array_equal(self.coefficients, other.coefficients)

    def __hash__(self):
        return hash(self.coefficients.tobytes())


@dataclass(frozen=True)
class FastDynamics:
    k: float
    alpha: float
    omega: float

    def __post_init__(self):
        for name in ("k", "alpha", "omega"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, value)
        if self.alpha <= 0 or self.omega <= 0:
            raise ValueError("fast dynamics must be under-damped: alpha > 0 and omega > 0")
        if self.k == 0:
            raise ValueError("fast gain k must be nonzero")

    @property
    def phase(self) -> float:
        """Phase offset of the analytic step response, in (-3pi/2, pi/2]."""
        return math.atan2(-self.omega, -self.alpha) - math.pi / 2

    @property
    def natural_frequency_sq(self) -> float:
        return self.alpha**2 + self.omega**2

    def tf(self):
        wn2 = self.natural_frequency_sq
        return np.array([self.k * wn2]), np.array([1.0, 2 * self.alpha, wn2])


@dataclass(frozen=True)
class SlowDynamics:
    s0: float
    z0: float

    def __post_init__(self):
        for name in ("s0", "z0"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, value)
        if self.s0 <= 0 or self.z0 <= 0:
            raise ValueError("slow dynamics need s0 > 0 and z0 > 0")

    def tf(self):
        return np.array([1.0, self.z0]), np.array([1.0, self.s0])


@dataclass(frozen=True)
class HammersteinModel:
    nonlinearity: PolynomialNonlinearity
    fast: FastDynamics
    slow: SlowDynamics

    def __post_init__(self):
        gain = self.fast.k * self.slow.z0 / self.slow.s0
        if abs(gain - 1.0) > UNIT_GAIN_TOL:
            raise ValueError(f"unit static gain violated: k*z0/s0 = {gain!r}")

    def tf(self):
        """Numerator and denominator of ``G_fast * G_slow`` (highest power first)."""
        nf, df = self.fast.tf()
        ns, ds = self.slow.tf()
        return np.polymul(nf, ns), np.polymul(df, ds)


@dataclass(frozen=True)
class TimeSeries:
    """Uniformly sampled signal; sample ``i`` sits at ``t = i * sample_period``."""

    sample_period: float
    values: np.ndarray
    unit: str = field(default="", compare=False)

    def __post_init__(self):
        dt = float(self.sample_period)
        if not (dt > 0 and math.isfinite(dt)):
            raise ValueError("sample_period must be positive")
        values = _readonly(self.values)
        if values.ndim != 1 or values.size < 2:
            raise ValueError("a time series needs at least 2 samples")
        object.__setattr__(self, "sample_period", dt)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.values.size) * self.sample_period

    @property
    def duration(self) -> float:
        return (self.values.size - 1) * self.sample_period

    def __eq__(self, other):
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return self.sample_period == other.sample_period and np.array_equal(
            self.values, other.values
        )

    __hash__ = None


def eval_nonlinearity(f: PolynomialNonlinearity, u):
    """Evaluate the static map with Horner's scheme.

    Accepts a scalar or an array of voltages; returns the same shape.
    """
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("input voltage must be finite")
    result = np.zeros_like(u)
    for p in f.coefficients[::-1]:
        result = result * u + p
    return float(result) if result.ndim == 0 else result


def _check_time(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise ValueError("step responses are defined for finite t >= 0 only")
    return t


def _scalar_or_array(arr):
    return float(arr) if np.ndim(arr) == 0 else arr


def step_response_fast(fast: FastDynamics, t):
    """Unit step response of ``G_fast`` at time(s) ``t``."""
    t = _check_time(t)
    a, w = fast.alpha, fast.omega
    amp = math.hypot(a, w) / w
    y = fast.k * (1.0 + amp * np.cos(w * t + fast.phase) * np.exp(-a * t))
    return _scalar_or_array(y)


def step_response_slow(slow: SlowDynamics, t):
    """Unit step response of ``G_slow`` at time(s) ``t``."""
    t = _check_time(t)
    s0, z0 = slow.s0, slow.z0
    # z0/s0 - (z0-s0)/s0 e^{-s0 t}, arranged so t = 0 gives exactly 1
    y = 1.0 - (z0 - s0) / s0 * np.expm1(-s0 * t)
    return _scalar_or_array(y)


def series_step_values(t, k, alpha, omega, s0, z0):
    """Unit step response of ``G_fast * G_slow`` by partial fractions.

    Plain-float version of :func:`step_response_series` for optimizer loops;
    no argument checking.
    """
    t = np.asarray(t, dtype=float)
    wn2 = alpha * alpha + omega * omega
    p = complex(-alpha, omega)
    r_slow = -k * wn2 * (z0 - s0) / (s0 * (s0 * s0 - 2 * alpha * s0 + wn2))
    r_osc = k * wn2 * (p + z0) / (p * (p + s0) * 2j * omega)
    osc = np.exp(-alpha * t) * (r_osc.real * np.cos(omega * t) - r_osc.imag * np.sin(omega * t))
    return k * z0 / s0 + r_slow * np.exp(-s0 * t) + 2 * osc


def step_response_series(fast: FastDynamics, slow: SlowDynamics, t):
    """Unit step response of the series connection ``G_fast * G_slow``."""
    t = _check_time(t)
    y = series_step_values(t, fast.k, fast.alpha, fast.omega, slow.s0, slow.z0)
    return _scalar_or_array(y)


# --- time-domain simulation -------------------------------------------------


def max_rk4_step(poles) -> float:
    """Largest internal integration step allowed for the given pole magnitudes."""
    fastest = max((abs(p) for p in poles), default=0.0)
    if fastest == 0:
        return 1e-3
    return min(1e-3, 0.05 / fastest)


def _companion(num, den):
    """Controllable canonical realization of a strictly proper transfer function."""
    den = np.asarray(den, dtype=float)
    num = np.asarray(num, dtype=float)
    num, den = num / den[0], den / den[0]
    n = den.size - 1
    if num.size > n:
        raise ValueError("transfer function must be strictly proper")
    A = np.zeros((n, n))
    A[:-1, 1:] = np.eye(n - 1)
    A[-1, :] = -den[:0:-1]
    B = np.zeros(n)
    B[-1] = 1.0
    C = np.zeros(n)
    C[: num.size] = num[::-1]
    return A, B, C


def rk4_discretize(num, den, sample_period: float, max_step: float | None = None):
    """Discrete-time ``(b, a)`` filter equivalent to classical RK4 integration.

    The input is held constant over each sample period, which is split into
    the smallest number of equal sub-steps not exceeding ``max_step``. For a
    linear system every RK4 sub-step is an affine map, so the composed
    per-sample map is computed once and applied with :func:`scipy.signal.lfilter`.
    Output sample ``n`` is the state at ``t_n`` before input ``n`` acts.
    """
    den = np.asarray(den, dtype=float)
    num = np.asarray(num, dtype=float)
    A, B, C = _companion(num, den)
    if max_step is None:
        max_step = max_rk4_step(np.roots(den))
    m = max(1, math.ceil(sample_period / max_step - 1e-12))
    h = sample_period / m
    n = A.shape[0]
    hA = h * A
    eye = np.eye(n)
    hA2 = hA @ hA
    hA3 = hA2 @ hA
    step_state = eye + hA + hA2 / 2 + hA3 / 6 + hA3 @ hA / 24
    step_input = h * (eye + hA / 2 + hA2 / 6 + hA3 / 24) @ B

    phi = eye.copy()
    gamma = np.zeros(n)
    for _ in range(m):
        gamma = step_state @ gamma + step_input
        phi = step_state @ phi
    b, a = signal.ss2tf(phi, gamma[:, None], C[None, :], np.zeros((1, 1)))
    b = np.atleast_1d(b.squeeze())
    b[0] = 0.0  # no direct feedthrough
    return b, a


def simulate_lti(num, den, values, sample_period: float, initial_output: float = 0.0,
                 max_step: float | None = None) -> np.ndarray:
    """Drive a stable strictly proper LTI system, starting in steady state.

    The state at ``t_0`` is the equilibrium whose output is ``initial_output``.
    """
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    dc_gain = num[-1] / den[-1]
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("empty input")
    if initial_output != 0.0:
        if dc_gain == 0:
            raise ValueError("cannot start in steady state with zero DC gain")
        rest_input = initial_output / dc_gain
    else:
        rest_input = 0.0
    b, a = rk4_discretize(num, den, sample_period, max_step)
    return initial_output + signal.lfilter(b, a, values - rest_input)


def simulate(model: HammersteinModel, input: TimeSeries, initial_output: float | None = None,
             max_step: float | None = None) -> TimeSeries:
    """Simulate the model output in global coordinates (millimetres).

    Parameters
    ----------
    model : HammersteinModel
    input : TimeSeries
        Voltage, held constant over each sample period.
    initial_output : float, optional
        Output at ``t = 0``; the dynamic state starts at rest there. Defaults
        to ``f(u[0])``, i.e. fully settled on the first input level.
    max_step : float, optional
        Override of the internal RK4 step bound.
    """
    if model.fast.alpha <= 0 or model.slow.s0 <= 0:
        raise ValueError("unstable parameterization")
    if len(input.values) == 0:
        raise ValueError("empty input")
    f = model.nonlinearity
    if initial_output is None:
        initial_output = eval_nonlinearity(f, input.values[0])
    p0 = f.offset
    local_in = eval_nonlinearity(f, input.values) - p0
    num, den = model.tf()
    if max_step is None:
        m = model
        max_step = min(1e-3, 0.05 / max(m.fast.alpha, m.fast.omega, m.slow.s0))
    y = p0 + simulate_lti(num, den, local_in, input.sample_period,
                          initial_output - p0, max_step)
    return TimeSeries(input.sample_period, y, unit="mm")


# --- frequency domain -------------------------------------------------------


@dataclass(frozen=True)
class FrequencyResponse:
    """Complex responses of both blocks and their series product."""

    omega: np.ndarray
    fast: np.ndarray
    slow: np.ndarray
    phase_fast: np.ndarray
    phase_slow: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.fast * self.slow

    @property
    def phase_total(self) -> np.ndarray:
        return self.phase_fast + self.phase_slow

    def magnitude(self, block: str = "total") -> np.ndarray:
        return np.abs(getattr(self, block))

    def phase(self, block: str = "total") -> np.ndarray:
        return getattr(self, "phase_" + block)


def frequency_response(fast: FastDynamics, slow: SlowDynamics,
                       frequencies: Sequence[float]) -> FrequencyResponse:
    """Evaluate both blocks on ``s = j * omega`` (rad/s).

    Phases are continuous along the frequency axis: the fast block runs from
    0 to -pi (plus pi for negative k), the slow block stays within (-pi/2, pi/2).
    """
    w = np.array(frequencies, dtype=float)
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ValueError("frequencies must be positive")
    s = 1j * w
    wn2 = fast.natural_frequency_sq
    g_fast = fast.k * wn2 / (s * s + 2 * fast.alpha * s + wn2)
    g_slow = (s + slow.z0) / (s + slow.s0)
    phase_fast = -np.arctan2(2 * fast.alpha * w, wn2 - w * w)
    if fast.k < 0:
        phase_fast = phase_fast + math.pi
    phase_slow = np.arctan(w / slow.z0) - np.arctan(w / slow.s0)
    for arr in (w, g_fast, g_slow, phase_fast, phase_slow):
        arr.setflags(write=False)
    return FrequencyResponse(w, g_fast, g_slow, phase_fast, phase_slow)
