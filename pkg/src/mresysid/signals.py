"""Excitation signals, step-record extraction and steady-state characteristics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import signal

from .model import TimeSeries

#: Input jumps larger than this (volts) count as a switch.
SWITCH_THRESHOLD = 1e-6
#: Length of the settled tail averaged into a static point (seconds).
AVERAGING_WINDOW = 0.25


@dataclass(frozen=True)
class StepSchedule:
    levels: tuple
    hold_period: float

    def __post_init__(self):
        levels = tuple(float(v) for v in self.levels)
        if len(levels) < 2:
            raise ValueError("a step schedule needs at least 2 levels")
        if not all(math.isfinite(v) for v in levels):
            raise ValueError("levels must be finite")
        if not self.hold_period > 0:
            raise ValueError("hold_period must be positive")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "hold_period", float(self.hold_period))

    @property
    def duration(self) -> float:
        return len(self.levels) * self.hold_period

    def switches(self):
        """Consecutive ``(u_pre, u_post)`` pairs that differ."""
        return [(a, b) for a, b in zip(self.levels, self.levels[1:])
                if abs(b - a) > SWITCH_THRESHOLD]


def default_schedule(hold_period: float = 20.0, v_max: float = 12.0,
                     n_switches: int = 20) -> StepSchedule:
    """Alternating schedule ``0, +a1, -a1, +a2, -a2, ...`` with shrinking ``a``.

    The amplitudes run linearly from ``v_max`` down to ``v_max / (n_switches/2)``,
    so every switch crosses zero and the whole range is visited.
    """
    if n_switches < 2 or n_switches % 2:
        raise ValueError("n_switches must be a positive even number")
    m = n_switches // 2
    levels = [0.0]
    for i in range(m, 0, -1):
        a = v_max * i / m
        levels += [a, -a]
    return StepSchedule(tuple(levels), hold_period)


def make_step_excitation(schedule: StepSchedule, sample_period: float) -> TimeSeries:
    """Piecewise-constant voltage holding each level for ``hold_period``."""
    if not schedule.levels:
        raise ValueError("empty schedule")
    if not sample_period > 0:
        raise ValueError("sample_period must be positive")
    per_hold = round(schedule.hold_period / sample_period)
    if per_hold < 1 or abs(per_hold * sample_period - schedule.hold_period) > sample_period:
        raise ValueError("sample_period must divide hold_period")
    values = np.repeat(np.asarray(schedule.levels, dtype=float), per_hold)
    return TimeSeries(sample_period, values, unit="V")


def chirp_excitation(duration: float = 30.0, f_start: float = 0.1, f_stop: float = 80.0,
                     amplitude: float = 6.0, offset: float = 0.0,
                     sample_period: float = 1e-3) -> TimeSeries:
    """Linear sine sweep from ``f_start`` to ``f_stop`` Hz, starting at ``offset``."""
    n = int(round(duration / sample_period)) + 1
    t = np.arange(n) * sample_period
    u = offset + amplitude * signal.chirp(t, f_start, duration, f_stop,
                                          method="linear", phi=-90)
    return TimeSeries(sample_period, u, unit="V")


@dataclass(frozen=True)
class StepRecord:
    """Output after one input switch, re-based so ``delta_y[0] == 0``."""

    u_pre: float
    u_post: float
    sample_period: float
    delta_y: np.ndarray

    def __post_init__(self):
        dy = np.array(self.delta_y, dtype=float)
        if dy.ndim != 1 or dy.size < 2:
            raise ValueError("a step record needs at least 2 samples")
        if dy[0] != 0.0:
            raise ValueError("step records must start at 0")
        if self.u_pre == self.u_post:
            raise ValueError("u_pre and u_post must differ")
        if not self.sample_period > 0:
            raise ValueError("sample_period must be positive")
        dy.setflags(write=False)
        object.__setattr__(self, "delta_y", dy)
        object.__setattr__(self, "u_pre", float(self.u_pre))
        object.__setattr__(self, "u_post", float(self.u_post))
        object.__setattr__(self, "sample_period", float(self.sample_period))

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.delta_y.size) * self.sample_period

    @property
    def duration(self) -> float:
        return (self.delta_y.size - 1) * self.sample_period

    def __eq__(self, other):
        if not isinstance(other, StepRecord):
            return NotImplemented
        return ((self.u_pre, self.u_post, self.sample_period)
                == (other.u_pre, other.u_post, other.sample_period)
                and np.array_equal(self.delta_y, other.delta_y))

    __hash__ = None


@dataclass(frozen=True)
class StaticCharacteristic:
    """Steady-state points ``(U_i, Y_i)``, sorted by voltage with unique ``U``."""

    U: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        U = np.array(self.U, dtype=float)
        Y = np.array(self.Y, dtype=float)
        if U.shape != Y.shape or U.ndim != 1:
            raise ValueError("U and Y must be 1-D and of equal length")
        if U.size == 0:
            raise ValueError("empty static characteristic")
        if np.any(np.diff(U) <= 0):
            raise ValueError("U must be strictly increasing; use from_points to merge")
        U.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "Y", Y)

    @classmethod
    def from_points(cls, U, Y):
        """Sort points and average ``Y`` over duplicate voltages."""
        U = np.asarray(U, dtype=float)
        Y = np.asarray(Y, dtype=float)
        uniq, inverse = np.unique(U, return_inverse=True)
        sums = np.bincount(inverse, weights=Y)
        counts = np.bincount(inverse)
        return cls(uniq, sums / counts)

    def __len__(self):
        return self.U.size

    def __eq__(self, other):
        if not isinstance(other, StaticCharacteristic):
            return NotImplemented
        return np.array_equal(self.U, other.U) and np.array_equal(self.Y, other.Y)

    __hash__ = None


def split_steps(input: TimeSeries, output: TimeSeries, min_hold: float = 1.0) -> list[StepRecord]:
    """Cut a long step experiment into one record per input switch.

    A record starts at the first sample carrying the new input level and runs
    up to and including the first sample of the next switch (the output there
    still belongs to the current level). Records shorter than ``min_hold``
    seconds are dropped.
    """
    if len(input) != len(output):
        raise ValueError("input and output lengths differ")
    if input.sample_period != output.sample_period:
        raise ValueError("input and output sample periods differ")
    if not min_hold > 0:
        raise ValueError("min_hold must be positive")
    u = input.values
    y = output.values
    starts = np.flatnonzero(np.abs(np.diff(u)) > SWITCH_THRESHOLD) + 1
    ends = np.append(starts[1:], u.size - 1)
    dt = input.sample_period
    records = []
    for start, end in zip(starts, ends):
        if (end - start) * dt < min_hold - 1e-9 * dt:
            continue
        segment = y[start:end + 1] - y[start]
        records.append(StepRecord(u[start - 1], u[start], dt, segment))
    return records


def steady_state_points(records: Sequence[StepRecord], averaging_window: float = AVERAGING_WINDOW,
                        y_offset: float = 0.0) -> StaticCharacteristic:
    """Steady-state ``(U, Y)`` pairs from consecutive step records.

    Each record is local, so the global level is rebuilt by chaining: record
    ``j`` starts where record ``j-1`` ended, and the first record starts at
    ``y_offset``. ``Y`` is the mean over the last ``averaging_window`` seconds
    and ``U`` is the post-switch voltage.
    """
    if not records:
        raise ValueError("no step records")
    U, Y = [], []
    level = float(y_offset)
    for rec in records:
        if averaging_window >= rec.duration:
            raise ValueError("averaging window longer than a step record")
        n = max(1, round(averaging_window / rec.sample_period))
        U.append(rec.u_post)
        Y.append(level + float(np.mean(rec.delta_y[-n:])))
        level += float(rec.delta_y[-1])
    return StaticCharacteristic.from_points(U, Y)


def add_noise(series: TimeSeries, sigma: float, seed: int) -> TimeSeries:
    """Add zero-mean white Gaussian noise from a generator seeded by ``seed``."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return series
    rng = np.random.default_rng(seed)
    noisy = series.values + rng.normal(0.0, sigma, size=len(series))
    return TimeSeries(series.sample_period, noisy, unit=series.unit)
