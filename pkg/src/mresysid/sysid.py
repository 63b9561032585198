"""Three-stage identification of the Hammerstein actuator model.

1. least-squares polynomial fit of the static characteristic,
2. per-record fit of the fast under-damped block on the start of each step,
   aggregated by the median,
3. per-record fit of the slow pole on the full records, median, then the zero
   follows from the unit static gain.

With hold periods that are short against the slow time constant, every record
still carries relaxation from earlier steps and every static point is taken
before the output has settled. :func:`identify` therefore refines the plain
three stages: the unfinished relaxation predicted by the current model is
accounted for in all three stages and the passes are iterated to a fixed point.

A single third-order transfer function fitted by output error is provided as
the conventional baseline.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize
from scipy import signal as sps

from .model import (
    FastDynamics,
    HammersteinModel,
    PolynomialNonlinearity,
    SlowDynamics,
    TimeSeries,
    eval_nonlinearity,
    series_step_values,
    simulate,
    simulate_lti,
    step_response_series,
)
from .signals import AVERAGING_WINDOW, StaticCharacteristic, StepRecord

#: Default length of the fast-stage window (seconds).
FAST_WINDOW = 0.3
#: Maximum number of refinement passes in :func:`identify`.
REFINE_PASSES = 20
#: Refinement stops once no dynamic parameter moves by more than this (relative).
REFINE_TOL = 1e-6
#: Degrees within this fraction of the best residual count as equally good.
PARSIMONY = 0.05
#: Bracket for the slow pole search (1/s).
S0_BRACKET = (1e-3, 10.0)
#: Simplex convergence threshold on the (log-)parameters.
PARAM_TOL = 1e-8
#: Fast gains below this magnitude are treated as a collapsed fit.
MIN_GAIN = 1e-3

FAST_GRID_K = (0.5, 1.0, 1.5)
FAST_GRID_ALPHA = (10.0, 50.0, 100.0)
FAST_GRID_OMEGA_SCALE = (0.5, 1.0, 2.0)


class IdentificationError(RuntimeError):
    """A fit could not produce a usable estimate."""


class NonIdentifiableError(IdentificationError):
    """The objective is flat, so the parameter is not determined by the data."""


class UnstableModelError(IdentificationError):
    pass


@dataclass(frozen=True)
class OptimizerSettings:
    tolerance: float = 1e-10
    max_iterations: int = 5000
    restarts: int = 8

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1 or self.restarts < 1:
            raise ValueError("max_iterations and restarts must be >= 1")


@dataclass(frozen=True)
class FitReport:
    """Goodness of fit of a prediction.

    ``fit_percent`` is ``100 * (1 - |y - yhat| / |y - mean(y)|)`` with 2-norms,
    ``residual_l1`` the mean absolute error and ``residual_l2`` the RMS error.
    """

    fit_percent: float
    residual_l1: float
    residual_l2: float

    def to_dict(self):
        return {"fit_percent": self.fit_percent, "l1": self.residual_l1,
                "l2": self.residual_l2}


def fit_report(measured, predicted) -> FitReport:
    y = np.asarray(measured, dtype=float)
    yhat = np.asarray(predicted, dtype=float)
    if y.shape != yhat.shape:
        raise ValueError("measured and predicted differ in shape")
    err = y - yhat
    num = float(np.linalg.norm(err))
    den = float(np.linalg.norm(y - y.mean()))
    if den == 0:
        fit = 100.0 if num == 0 else -math.inf
    else:
        fit = 100.0 * (1.0 - num / den)
    return FitReport(fit, float(np.mean(np.abs(err))), float(np.sqrt(np.mean(err**2))))


# --- static stage -----------------------------------------------------------


def fit_static(points: StaticCharacteristic, degree: int) -> PolynomialNonlinearity:
    """Least-squares polynomial through the static points (SVD solve)."""
    if degree < 1:
        raise ValueError("degree must be >= 1")
    U, Y = points.U, points.Y
    if np.unique(U).size < degree + 1:
        raise IdentificationError(
            f"degree {degree} needs {degree + 1} distinct voltages, got {np.unique(U).size}")
    V = np.vander(U, degree + 1, increasing=True)
    coeffs, _, rank, _ = np.linalg.lstsq(V, Y, rcond=None)
    if rank < degree + 1:
        raise IdentificationError("rank-deficient Vandermonde system")
    return PolynomialNonlinearity(coeffs)


def _sse(f: PolynomialNonlinearity, points: StaticCharacteristic) -> float:
    return float(np.sum((eval_nonlinearity(f, points.U) - points.Y) ** 2))


def select_degree(points: StaticCharacteristic, degrees: Sequence[int]):
    """Pick the lowest degree whose residual is within 5% of the best one.

    Returns ``(degree, [(degree, residual), ...])``. Residuals at rounding
    level are treated as zero so exact data does not favour spurious orders.
    """
    if not degrees:
        raise ValueError("no candidate degrees")
    fits = [(d, _sse(fit_static(points, d), points)) for d in sorted(set(degrees))]
    return _parsimonious(fits, points.Y), fits


def _parsimonious(fits, Y) -> int:
    floor = len(Y) * (1e-9 * max(1.0, float(np.max(np.abs(Y))))) ** 2
    best = min(r for _, r in fits)
    for d, r in fits:
        if r <= best * (1 + PARSIMONY) + floor:
            return d
    raise AssertionError("unreachable")


# --- optimizer plumbing -----------------------------------------------------


def _nelder_mead(cost, x0, settings: OptimizerSettings, rounds: int = 3):
    """Simplex search restarted in place until it stops improving.

    Returns ``(x, fun, converged)``.
    """
    x = np.asarray(x0, dtype=float)
    fun = cost(x)
    converged = True
    for _ in range(rounds):
        res = optimize.minimize(
            cost, x, method="Nelder-Mead",
            options={"maxiter": settings.max_iterations, "xatol": PARAM_TOL,
                     "fatol": settings.tolerance},
        )
        converged = bool(res.success)
        improvement = fun - res.fun
        if res.fun <= fun:
            x, fun = res.x, float(res.fun)
        if not converged or improvement <= settings.tolerance:
            break
    return x, fun, converged


def dominant_frequency(values, sample_period: float) -> float:
    """Angular frequency (rad/s) of the strongest non-DC spectral peak.

    The record is linearly detrended and zero padded to sharpen the peak.
    """
    y = sps.detrend(np.asarray(values, dtype=float))
    n_fft = 16 * (1 << max(1, (y.size - 1).bit_length()))
    spectrum = np.abs(np.fft.rfft(y, n_fft))
    spectrum[0] = 0.0
    freqs = np.fft.rfftfreq(n_fft, sample_period)
    return 2 * math.pi * float(freqs[int(np.argmax(spectrum))])


# --- fast stage -------------------------------------------------------------


@dataclass(frozen=True)
class FastFit:
    k: float
    alpha: float
    omega: float
    residual: float


def _eta_fast(t, k, alpha, omega):
    phase = math.atan2(-omega, -alpha) - math.pi / 2
    amp = math.hypot(alpha, omega) / omega
    return k * (1.0 + amp * np.cos(omega * t + phase) * np.exp(-alpha * t))


def fit_fast_single(record: StepRecord, delta_v: float, fast_window: float = FAST_WINDOW,
                    settings: OptimizerSettings = OptimizerSettings(),
                    slow_pole: float | None = None, carry=None,
                    initial: FastFit | None = None) -> FastFit:
    """Fit ``(k, alpha, omega)`` to the first ``fast_window`` seconds of a record.

    Minimizes the mean absolute deviation between ``eta_fast * delta_v`` and
    the record. Starting points come from a 27-point grid (three gains, three
    decay rates, the FFT peak frequency scaled by 0.5, 1 and 2); the best
    ``settings.restarts`` of them seed independent simplex runs.

    Parameters
    ----------
    slow_pole : float, optional
        When given, the prediction is the step response of the whole series
        ``G_fast * G_slow`` with ``s0 = slow_pole`` and ``z0 = s0 / k``, so the
        slow creep inside the window is not absorbed into ``k`` and ``alpha``.
    carry : array_like, optional
        Known output drift during the record from earlier steps, added to the
        prediction sample by sample.
    initial : FastFit, optional
        Warm start, typically the estimate from a previous pass. The grid is
        only searched when the simplex fails from here.
    """
    if delta_v == 0 or not math.isfinite(delta_v):
        raise ValueError("delta_v must be finite and nonzero")
    if record.duration < fast_window:
        raise IdentificationError("record shorter than the fast window")
    n = int(math.floor(fast_window / record.sample_period + 1e-9)) + 1
    t = record.t[:n]
    y = record.delta_y[:n]
    if carry is not None:
        y = y - np.asarray(carry, dtype=float)[:n]

    if slow_pole is None:
        def cost(x):
            pred = _eta_fast(t, x[0], math.exp(x[1]), math.exp(x[2]))
            return float(np.mean(np.abs(pred * delta_v - y)))
    else:
        def cost(x):
            k = x[0]
            if k <= 0:
                return math.inf
            pred = series_step_values(t, k, math.exp(x[1]), math.exp(x[2]), slow_pole, slow_pole / k)
            return float(np.mean(np.abs(pred * delta_v - y)))

    if initial is not None:
        x0 = np.array([initial.k, math.log(initial.alpha), math.log(initial.omega)])
        x, fun, ok = _nelder_mead(cost, x0, settings)
        if ok and abs(x[0]) >= MIN_GAIN:
            return FastFit(float(x[0]), math.exp(x[1]), math.exp(x[2]), fun)

    w_peak = dominant_frequency(y, record.sample_period)
    if w_peak <= 0:
        w_peak = 2 * math.pi / fast_window
    grid = [np.array([k, math.log(a), math.log(s * w_peak)])
            for k, a, s in itertools.product(FAST_GRID_K, FAST_GRID_ALPHA, FAST_GRID_OMEGA_SCALE)]
    scores = [cost(x) for x in grid]
    order = sorted(range(len(grid)), key=lambda i: scores[i])[: settings.restarts]

    best = None
    for i in order:
        x, fun, ok = _nelder_mead(cost, grid[i], settings)
        if ok and (best is None or fun < best[1]):
            best = (x, fun)
    if best is None:
        raise IdentificationError("simplex search did not converge from any start")
    x, fun = best
    k = float(x[0])
    if abs(k) < MIN_GAIN:
        raise IdentificationError(f"fast gain collapsed to {k!r}; record carries no step")
    return FastFit(k, math.exp(x[1]), math.exp(x[2]), fun)


# --- slow stage -------------------------------------------------------------


@dataclass(frozen=True)
class SlowFit:
    s0: float
    residual: float


def _series_modes(k, alpha, omega, s0):
    """Residues of the unit-gain series step ``1 + r_slow e^{-s0 t} + 2 Re(r_osc e^{p t})``."""
    z0 = s0 / k
    wn2 = alpha * alpha + omega * omega
    p = complex(-alpha, omega)
    r_slow = -k * wn2 * (z0 - s0) / (s0 * (s0 * s0 - 2 * alpha * s0 + wn2))
    r_osc = k * wn2 * (p + z0) / (p * (p + s0) * 2j * omega)
    return r_slow, r_osc


def _slow_predictor(t, k, fast, elapsed):
    """Record prediction as a function of ``(s0, delta_v, history increments)``.

    Without ``fast`` this is ``k * delta_v * eta_slow`` plus the slow decay of
    earlier increments. With ``fast`` it is the full series response, where
    the history terms ``dv_i [s(e_i + t) - s(e_i)]`` collapse onto the same
    two modes.
    """
    elapsed = np.asarray(elapsed, dtype=float)
    if fast is None:
        def predict(s0, delta_v, dvs):
            decay = np.exp(-s0 * t)
            # k*dv*(z0/s0 - (z0-s0)/s0 e^{-s0 t}) with z0 = s0/k
            pred = delta_v - (1.0 - k) * delta_v * decay
            if elapsed.size:
                pred = pred + (1.0 - k) * float(dvs @ np.exp(-s0 * elapsed)) * (1.0 - decay)
            return pred
        return predict

    p = complex(-fast.alpha, fast.omega)
    osc = np.exp(p * t)
    osc_re, osc_im = 2.0 * osc.real, 2.0 * osc.imag
    rot = np.exp(p * elapsed)

    def predict(s0, delta_v, dvs):
        r_slow, r_osc = _series_modes(k, fast.alpha, fast.omega, s0)
        decay = np.exp(-s0 * t)
        h_slow = float(dvs @ np.exp(-s0 * elapsed)) if elapsed.size else 0.0
        h_osc = complex(dvs @ rot) if elapsed.size else 0j
        c = r_osc * (delta_v + h_osc)
        return (delta_v + r_slow * ((delta_v + h_slow) * decay - h_slow)
                + c.real * osc_re - c.imag * osc_im - 2.0 * (r_osc * h_osc).real)
    return predict


def _minimize_log_s0(cost_log, settings: OptimizerSettings, initial=None):
    """Scan, golden-section and simplex search of a cost over ``log s0``."""
    lo, hi = (math.log(b) for b in S0_BRACKET)
    i = None
    if initial is not None and S0_BRACKET[0] < initial < S0_BRACKET[1]:
        scan = math.log(initial) + np.linspace(-0.1, 0.1, 5)
        values = np.array([cost_log(x) for x in scan])
        i = int(np.argmin(values))
        if i == 0 or i == scan.size - 1:
            i = None
    if i is None:
        scan = np.linspace(lo, hi, 61)
        values = np.array([cost_log(x) for x in scan])
        spread = float(values.max() - values.min())
        if spread <= settings.tolerance * (1.0 + float(values.min())):
            raise NonIdentifiableError("slow-stage objective is flat; s0 is not identifiable")
        i = int(np.argmin(values))
        if i == 0 or i == scan.size - 1:
            raise IdentificationError("no interior minimum of the slow objective in the bracket")
    x = optimize.golden(cost_log, brack=(scan[i - 1], scan[i], scan[i + 1]),
                        tol=1e-10, maxiter=settings.max_iterations)
    x, fun, ok = _nelder_mead(cost_log, [x], settings)
    if not ok:
        raise IdentificationError("slow-stage simplex did not converge")
    return SlowFit(math.exp(float(x[0])), fun)


def fit_slow_single(record: StepRecord, delta_v: float, k: float,
                    settings: OptimizerSettings = OptimizerSettings(),
                    history: Sequence[tuple] = (),
                    fast: FastDynamics | None = None,
                    initial: float | None = None) -> SlowFit:
    """Fit the slow pole ``s0`` with ``z0 = s0 / k`` on the whole record.

    The objective is the mean absolute deviation between
    ``eta_slow * k * delta_v`` and the record. A log-spaced scan over
    :data:`S0_BRACKET` locates the minimum, golden-section search narrows it
    and a 1-D simplex polishes it.

    ``history`` lists ``(delta_v_i, elapsed_i)`` for earlier steps of the same
    experiment, ``elapsed_i`` being the time from step ``i`` to the start of
    this record. Their unfinished slow relaxation, ``(1 - k) delta_v_i
    exp(-s0 elapsed_i)``, keeps decaying during this record and is added to the
    prediction. With an empty history the record is assumed to start settled.

    When ``fast`` is given (its ``alpha`` and ``omega``; the gain is ``k``), the
    prediction is the full series step response ``G_fast * G_slow`` instead,
    history included, so the oscillatory start of the record is modelled
    rather than absorbed into ``s0``.

    ``initial`` is a warm start: the scan is first restricted to a narrow
    bracket around it and only widened to the full bracket when the minimum
    is not inside.
    """
    if delta_v == 0 or not math.isfinite(delta_v):
        raise ValueError("delta_v must be finite and nonzero")
    if not k > 0:
        raise ValueError("k must be positive")
    y = record.delta_y
    dvs = np.array([dv for dv, _ in history], dtype=float)
    predict = _slow_predictor(record.t, k, fast, [e for _, e in history])

    def cost_log(log_s0):
        s0 = math.exp(float(np.atleast_1d(log_s0)[0]))
        return float(np.mean(np.abs(predict(s0, delta_v, dvs) - y)))

    return _minimize_log_s0(cost_log, settings, initial)


class _StaticSettler:
    """Static polynomial consistent with the relaxation it implies, per ``s0``.

    Each static point is the tail mean of a record whose output has not quite
    settled. The pending part, ``A(s0) @ delta_v``, depends on the polynomial
    through ``delta_v = D c``, and the polynomial is the least-squares fit
    ``c = P (Y + A D c)``. Both maps are linear in ``c``, so the consistent
    coefficients solve ``(I - P A D) c = P Y``.

    Built for fixed fast dynamics and evaluated for a given ``s0``. Tail
    means of the two response modes are taken analytically, so an evaluation
    is a handful of small array operations.
    """

    def __init__(self, statics, records, chains, fast, averaging_window):
        if not np.all(np.isin([r.u_post for r in records], statics.U)):
            raise ValueError("static points do not come from these records")
        self.statics = statics
        self.fast = fast
        self.u_pre = np.array([r.u_pre for r in records])
        self.u_post = np.array([r.u_post for r in records])
        index = {u: n for n, u in enumerate(statics.U)}
        counts = np.zeros(len(statics))
        rows, cols, owner, starts = [], [], [], []
        self.tails = []
        for j, (rec, chain) in enumerate(zip(records, chains)):
            n = max(1, round(averaging_window / rec.sample_period))
            self.tails.append(rec.t[-n:])
            counts[index[rec.u_post]] += 1
            for i, start in list(chain) + [(j, 0.0)]:
                rows.append(index[rec.u_post])
                cols.append(i)
                owner.append(j)
                starts.append(start)
        self.rows = np.array(rows)
        self.cols = np.array(cols)
        self.owner = np.array(owner)
        self.starts = np.array(starts)
        self.scale = 1.0 / counts[self.rows]
        p = complex(-fast.alpha, fast.omega)
        osc_mean = np.array([np.mean(np.exp(p * tail)) for tail in self.tails])
        self.osc_weight = np.exp(p * self.starts) * osc_mean[self.owner]
        self.shape = (len(statics), len(records))

    def pending_matrix(self, s0):
        k = self.fast.k
        r_slow, r_osc = _series_modes(k, self.fast.alpha, self.fast.omega, s0)
        slow_mean = np.array([np.mean(np.exp(-s0 * tail)) for tail in self.tails])
        w = -(r_slow * np.exp(-s0 * self.starts) * slow_mean[self.owner]
              + 2.0 * (r_osc * self.osc_weight).real)
        A = np.zeros(self.shape)
        np.add.at(A, (self.rows, self.cols), w * self.scale)
        return A

    def _solve(self, A, degree):
        U, Y = self.statics.U, self.statics.Y
        if np.unique(U).size < degree + 1:
            raise IdentificationError(
                f"degree {degree} needs {degree + 1} distinct voltages, got {U.size}")
        V = np.vander(U, degree + 1, increasing=True)
        D = (np.vander(self.u_post, degree + 1, increasing=True)
             - np.vander(self.u_pre, degree + 1, increasing=True))
        sol, _, rank, _ = np.linalg.lstsq(V, np.column_stack([Y, A @ D]), rcond=None)
        if rank < degree + 1:
            raise IdentificationError("rank-deficient Vandermonde system")
        c = np.linalg.solve(np.eye(degree + 1) - sol[:, 1:], sol[:, 0])
        residual = float(np.sum((V @ c - Y - A @ (D @ c)) ** 2))
        return c, D, residual

    def fit(self, s0, degree) -> PolynomialNonlinearity:
        c, _, _ = self._solve(self.pending_matrix(s0), degree)
        return PolynomialNonlinearity(c)

    def select(self, s0, degrees):
        """Degree selection on the settled points; ``(degree, fits, f)``."""
        A = self.pending_matrix(s0)
        solved = {d: self._solve(A, d) for d in sorted(set(degrees))}
        fits = [(d, r) for d, (_, _, r) in solved.items()]
        degree = _parsimonious(fits, self.statics.Y)
        return degree, fits, PolynomialNonlinearity(solved[degree][0])


# --- aggregation ------------------------------------------------------------


@dataclass(frozen=True)
class PerRecordEstimates:
    fast_params: tuple
    slow_poles: tuple
    record_ids: tuple

    def __post_init__(self):
        fast = tuple(tuple(float(v) for v in p) for p in self.fast_params)
        slow = tuple(float(s) for s in self.slow_poles)
        ids = tuple(self.record_ids)
        if not (len(fast) == len(slow) == len(ids)):
            raise ValueError("per-record lists must share length")
        for k, a, w in fast:
            if a <= 0 or w <= 0:
                raise ValueError("alpha and omega must be positive")
        if any(s <= 0 for s in slow):
            raise ValueError("slow poles must be positive")
        object.__setattr__(self, "fast_params", fast)
        object.__setattr__(self, "slow_poles", slow)
        object.__setattr__(self, "record_ids", ids)


def aggregate_median(estimates: PerRecordEstimates):
    """Componentwise median ``(k, alpha, omega, s0)`` of per-record estimates."""
    if not estimates.fast_params or not estimates.slow_poles:
        raise ValueError("no estimates to aggregate")
    k, a, w = (float(np.median(col)) for col in zip(*estimates.fast_params))
    return k, a, w, float(np.median(estimates.slow_poles))


def close_constraint(k: float, s0: float) -> SlowDynamics:
    """Slow block with ``z0 = s0 / k`` so the series static gain is one."""
    if not k > 0:
        raise ValueError("k must be positive")
    if not s0 > 0:
        raise ValueError("s0 must be positive")
    return SlowDynamics(s0, s0 / k)


# --- full procedure ---------------------------------------------------------


def unit_step(num, den, n: int, sample_period: float) -> np.ndarray:
    """Sampled unit step response of a strictly proper transfer function."""
    return simulate_lti(num, den, np.ones(n), sample_period)


@dataclass
class RecordDiagnostics:
    j: int
    u_pre: float
    u_post: float
    k: float | None = None
    alpha: float | None = None
    omega: float | None = None
    s0: float | None = None
    residual_fast: float | None = None
    residual_slow: float | None = None
    excluded: bool = False
    reason: str | None = None

    def to_dict(self):
        d = {"j": self.j, "u_pre": self.u_pre, "u_post": self.u_post, "k": self.k,
             "alpha": self.alpha, "omega": self.omega, "s0": self.s0,
             "residual_fast": self.residual_fast, "residual_slow": self.residual_slow,
             "excluded": self.excluded}
        if self.reason is not None:
            d["reason"] = self.reason
        return d


@dataclass
class Identification:
    """Result of :func:`identify`.

    ``estimates`` holds only records that passed both stages; ``reports`` has
    one :class:`FitReport` per input record (``None`` when excluded) comparing
    the final model's step prediction to the record. ``converged`` is False
    when the refinement passes stopped before the parameters settled.
    """

    model: HammersteinModel
    estimates: PerRecordEstimates
    reports: list
    diagnostics: list = field(default_factory=list)
    degree_fits: list = field(default_factory=list)
    converged: bool = True

    def __iter__(self):
        return iter((self.model, self.estimates, self.reports))


def _chains(records):
    """For each record, ``(i, elapsed)`` for the earlier records of its run.

    Records are taken as back-to-back when one starts at the level where its
    predecessor ended (``u_pre == previous u_post``); a break starts a new
    run, whose first record is assumed to start settled. ``elapsed`` is the
    time from the start of record ``i`` to the start of the current record.
    """
    chains = []
    past = []
    prev = None
    for rec in records:
        if prev is None or rec.u_pre != prev.u_post or rec.sample_period != prev.sample_period:
            past = []
        else:
            past = [(i, e + prev.duration) for i, e in past] + [(len(chains) - 1, prev.duration)]
        chains.append(tuple(past))
        prev = rec
    return chains


def _carry(model: HammersteinModel, chain, delta_v, t):
    """Output drift at times ``t`` of a record caused by the earlier steps in ``chain``."""
    fast, slow = model.fast, model.slow
    out = np.zeros_like(t)
    for i, elapsed in chain:
        s = series_step_values(elapsed + t, fast.k, fast.alpha, fast.omega, slow.s0, slow.z0)
        s_start = series_step_values(elapsed, fast.k, fast.alpha, fast.omega, slow.s0, slow.z0)
        out += delta_v[i] * (s - s_start)
    return out


def _dynamic_stages(records, f, chains, fast_window, settings, carry_over,
                    previous=None, warm=None):
    """Fast and slow stages for a fixed static map; returns the pieces of an Identification.

    ``previous`` switches on the refined fast and slow predictions and
    ``warm`` holds the per-record fits of the previous pass.
    """
    diags = [RecordDiagnostics(j, r.u_pre, r.u_post) for j, r in enumerate(records, start=1)]
    delta_v = [eval_nonlinearity(f, r.u_post) - eval_nonlinearity(f, r.u_pre) for r in records]

    fast_fits = {}
    for idx, (rec, dv, diag) in enumerate(zip(records, delta_v, diags)):
        if dv == 0:
            diag.excluded, diag.reason = True, "zero static increment"
            continue
        kwargs = {}
        if previous is not None:
            kwargs["slow_pole"] = previous.slow.s0
            if carry_over:
                kwargs["carry"] = _carry(previous, chains[idx], delta_v, rec.t)
        if warm and diag.j in warm[0]:
            kwargs["initial"] = warm[0][diag.j]
        try:
            fit = fit_fast_single(rec, dv, fast_window, settings, **kwargs)
        except IdentificationError as exc:
            diag.excluded, diag.reason = True, f"fast: {exc}"
            continue
        fast_fits[diag.j] = fit
        diag.k, diag.alpha, diag.omega, diag.residual_fast = fit.k, fit.alpha, fit.omega, fit.residual
    if len(fast_fits) < 3:
        raise IdentificationError(f"only {len(fast_fits)} records gave valid fast estimates")

    ids = sorted(fast_fits)
    k_med = float(np.median([fast_fits[j].k for j in ids]))
    alpha_med = float(np.median([fast_fits[j].alpha for j in ids]))
    omega_med = float(np.median([fast_fits[j].omega for j in ids]))
    if not k_med > 0:
        raise IdentificationError(f"median fast gain {k_med!r} is not positive")
    slow_shape = FastDynamics(k_med, alpha_med, omega_med) if previous is not None else None

    slow_fits = {}
    for idx, (rec, dv, diag) in enumerate(zip(records, delta_v, diags)):
        if diag.j not in fast_fits:
            continue
        start = warm[1][diag.j].s0 if warm and diag.j in warm[1] else None
        history = [(delta_v[i], e) for i, e in chains[idx]] if carry_over else ()
        try:
            fit = fit_slow_single(rec, dv, k_med, settings, history, fast=slow_shape,
                                  initial=start)
        except IdentificationError as exc:
            diag.excluded, diag.reason = True, f"slow: {exc}"
            continue
        slow_fits[diag.j] = fit
        diag.s0, diag.residual_slow = fit.s0, fit.residual
    if not slow_fits:
        raise IdentificationError("no record gave a valid slow estimate")

    s0_med = float(np.median([slow_fits[j].s0 for j in sorted(slow_fits)]))
    model = HammersteinModel(f, FastDynamics(k_med, alpha_med, omega_med),
                             close_constraint(k_med, s0_med))
    both = [j for j in ids if j in slow_fits]
    estimates = PerRecordEstimates(
        tuple((fast_fits[j].k, fast_fits[j].alpha, fast_fits[j].omega) for j in both),
        tuple(slow_fits[j].s0 for j in both),
        tuple(both),
    )
    return model, estimates, diags, delta_v, (fast_fits, slow_fits)


def identify(records: Sequence[StepRecord], statics: StaticCharacteristic,
             degree_candidates: Sequence[int] = (1, 2, 3, 4, 5),
             fast_window: float = FAST_WINDOW,
             settings: OptimizerSettings = OptimizerSettings(),
             carry_over: bool = True, refine: int = REFINE_PASSES,
             settle_statics: bool = True,
             averaging_window: float = AVERAGING_WINDOW) -> Identification:
    """Identify the Hammerstein model from step records and static points.

    The first pass is the plain three-stage procedure: polynomial fit, fast
    fits on the record starts with median, slow fits on whole records with
    median, ``z0 = s0 / k``.

    Holds that are short compared with ``1 / s0`` leave every record with
    some unfinished relaxation, which biases all three stages. The following
    switches compensate using the model of the previous pass:

    carry_over
        Earlier steps of a contiguous run keep relaxing during later records;
        their contribution is added to the slow-stage prediction (and to the
        fast-stage prediction in refinement passes).
    refine
        Maximum number of refinement passes. A pass takes the current
        ``(k, alpha, omega, s0)`` and refits with it: the fast block is fitted
        with the slow block included in the prediction, the slow block with
        the fast oscillation included, and with ``settle_statics`` the static
        points are first shifted by the relaxation still pending at the end of
        the records that produced them. The fixed point of this map is found
        with Anderson mixing, stopping once a pass moves no dynamic parameter
        by more than ``REFINE_TOL`` (relative). The polynomial degree is held
        at the largest candidate while iterating, selected on the settled
        points, and the iteration repeated at that degree.
        ``settle_statics`` is ignored when the static points did not come from
        these records.

    ``refine=0, carry_over=False`` is the plain procedure.
    """
    if len(records) < 3:
        raise IdentificationError(f"need at least 3 step records, got {len(records)}")
    if len(statics) == 0:
        raise IdentificationError("empty static characteristic")
    if refine < 0:
        raise ValueError("refine must be >= 0")

    degree, degree_fits = select_degree(statics, degree_candidates)
    f = fit_static(statics, degree)
    chains = _chains(records)
    model, estimates, diags, delta_v, warm = _dynamic_stages(
        records, f, chains, fast_window, settings, carry_over)

    settle = settle_statics and bool(np.all(np.isin([r.u_post for r in records], statics.U)))
    converged = True
    if refine:
        state = {"result": (model, estimates, diags, delta_v, warm)}

        def one_pass(x, degree):
            fast = FastDynamics(*np.exp(x[:3]))
            slow = close_constraint(fast.k, math.exp(x[3]))
            g = f
            if settle:
                g = _StaticSettler(statics, records, chains, fast, averaging_window).fit(
                    slow.s0, degree)
            result = _dynamic_stages(records, g, chains, fast_window, settings, carry_over,
                                     previous=HammersteinModel(g, fast, slow),
                                     warm=state["result"][4])
            state["result"] = result
            m = result[0]
            return np.log([m.fast.k, m.fast.alpha, m.fast.omega, m.slow.s0]) - x

        def solve(degree):
            m = state["result"][0]
            x0 = np.log([m.fast.k, m.fast.alpha, m.fast.omega, m.slow.s0])
            try:
                with np.errstate(invalid="ignore"):  # scipy's x_rtol check on the first step
                    optimize.anderson(lambda x: one_pass(x, degree), x0, alpha=1.0, M=4,
                                      line_search=None, f_tol=REFINE_TOL, maxiter=refine)
                return True
            except (optimize.NoConvergence, IdentificationError, ValueError):
                return False

        # Iterate at the largest degree so the map stays continuous, then
        # choose the degree on points settled with the converged dynamics.
        converged = solve(max(degree_candidates) if settle else degree)
        if settle and converged:
            m = state["result"][0]
            settler = _StaticSettler(statics, records, chains, m.fast, averaging_window)
            degree, degree_fits, _ = settler.select(m.slow.s0, degree_candidates)
            converged = solve(degree)
        model, estimates, diags, delta_v, _ = state["result"]

    reports = []
    for idx, (rec, dv, diag) in enumerate(zip(records, delta_v, diags)):
        if diag.excluded:
            reports.append(None)
            continue
        pred = dv * step_response_series(model.fast, model.slow, rec.t)
        if carry_over:
            pred = pred + _carry(model, chains[idx], delta_v, rec.t)
        reports.append(fit_report(rec.delta_y, pred))
    return Identification(model, estimates, reports, diags, degree_fits, converged)


def validate(model: HammersteinModel, input: TimeSeries, measured: TimeSeries) -> FitReport:
    """Simulate ``model`` on ``input`` (settled at ``f(u[0])``) and score it."""
    if len(input) != len(measured) or input.sample_period != measured.sample_period:
        raise ValueError("input and measured series are on different grids")
    predicted = simulate(model, input)
    return fit_report(measured.values, predicted.values)


# --- single transfer-function baseline --------------------------------------


@dataclass(frozen=True)
class BaselineTF:
    """``(b1 s + b0) / (s^3 + a2 s^2 + a1 s + a0)``."""

    b1: float
    b0: float
    a2: float
    a1: float
    a0: float

    @property
    def is_stable(self) -> bool:
        # Routh-Hurwitz for a monic cubic
        return self.a2 > 0 and self.a0 > 0 and self.a2 * self.a1 > self.a0

    def tf(self):
        return np.array([self.b1, self.b0]), np.array([1.0, self.a2, self.a1, self.a0])

    @property
    def dc_gain(self) -> float:
        return self.b0 / self.a0

    @classmethod
    def from_model(cls, fast: FastDynamics, slow: SlowDynamics) -> "BaselineTF":
        wn2 = fast.natural_frequency_sq
        return cls(
            fast.k * wn2,
            fast.k * wn2 * slow.z0,
            2 * fast.alpha + slow.s0,
            wn2 + 2 * fast.alpha * slow.s0,
            wn2 * slow.s0,
        )

    def predict(self, nonlinearity: PolynomialNonlinearity, input: TimeSeries) -> TimeSeries:
        """Global output for ``input``, settled at ``f(u[0])`` initially."""
        if not self.is_stable:
            raise UnstableModelError("baseline transfer function is unstable")
        p0 = nonlinearity.offset
        v = eval_nonlinearity(nonlinearity, input.values) - p0
        num, den = self.tf()
        y = simulate_lti(num, den, v, input.sample_period, initial_output=v[0] * self.dc_gain)
        return TimeSeries(input.sample_period, p0 + y, unit="mm")

    def to_dict(self):
        return {"b1": self.b1, "b0": self.b0, "a2": self.a2, "a1": self.a1, "a0": self.a0}


def _baseline_data(datasets, degree_candidates):
    """Static fits, per-record increments and target arrays for the baseline."""
    dvs, targets = [], []
    statics_fits = []
    for records, statics in datasets:
        degree, _ = select_degree(statics, degree_candidates)
        f = fit_static(statics, degree)
        statics_fits.append(f)
        for rec in records:
            dvs.append(eval_nonlinearity(f, rec.u_post) - eval_nonlinearity(f, rec.u_pre))
            targets.append(rec.delta_y)
    return statics_fits, dvs, targets


def fit_baseline_pooled(datasets, settings: OptimizerSettings = OptimizerSettings(),
                        degree_candidates: Sequence[int] = (1, 2, 3, 4, 5),
                        fast_window: float = FAST_WINDOW):
    """Output-error fit of one :class:`BaselineTF` over several datasets.

    ``datasets`` is a sequence of ``(records, statics)`` pairs; each dataset
    keeps its own static polynomial, the dynamics are shared. Every record is
    simulated as a step of size ``delta_v`` from rest and the squared errors
    of all records are summed.

    Returns ``(BaselineTF, FitReport)``, the report covering all records
    concatenated.
    """
    datasets = [(list(r), s) for r, s in datasets]
    records = [rec for recs, _ in datasets for rec in recs]
    if not records:
        raise IdentificationError("no step records")
    dt = records[0].sample_period
    if any(r.sample_period != dt for r in records):
        raise ValueError("records must share a sample period")
    _, dvs, targets = _baseline_data(datasets, degree_candidates)
    n_max = max(t.size for t in targets)
    y_all = np.concatenate(targets)

    def predict(theta):
        b1, b0 = theta[0], theta[1]
        a2, a1, a0 = np.exp(theta[2:5])
        if not a2 * a1 > a0:
            return None
        step = unit_step([b1, b0], [1.0, a2, a1, a0], n_max, dt)
        return np.concatenate([dv * step[: y.size] for dv, y in zip(dvs, targets)])

    def cost(theta):
        yhat = predict(theta)
        if yhat is None or not np.all(np.isfinite(yhat)):
            return np.inf
        return float(np.sum((yhat - y_all) ** 2))

    n_fast = int(math.floor(fast_window / dt + 1e-9)) + 1
    w_peak = float(np.median([dominant_frequency(t[:n_fast], dt) for t in targets]))
    if w_peak <= 0:
        w_peak = 2 * math.pi / fast_window
    starts = []
    for k, a, s0 in itertools.product((0.5, 1.0), (10.0, 50.0), (0.1, 1.0)):
        tf = BaselineTF.from_model(FastDynamics(k, a, w_peak), SlowDynamics(s0, s0 / k))
        starts.append(np.array([tf.b1, tf.b0, math.log(tf.a2), math.log(tf.a1), math.log(tf.a0)]))
    scores = [cost(x) for x in starts]
    order = sorted(range(len(starts)), key=lambda i: scores[i])[: settings.restarts]

    best = None
    for i in order:
        x, fun, _ = _nelder_mead(cost, starts[i], settings)
        if math.isfinite(fun) and (best is None or fun < best[1]):
            best = (x, fun)
    if best is None:
        raise UnstableModelError("no stable baseline candidate found")
    x = best[0]
    a2, a1, a0 = (float(v) for v in np.exp(x[2:5]))
    tf = BaselineTF(float(x[0]), float(x[1]), a2, a1, a0)
    if not tf.is_stable:
        raise UnstableModelError("best baseline candidate is unstable")
    return tf, fit_report(y_all, predict(x))


def fit_baseline(records: Sequence[StepRecord], statics: StaticCharacteristic,
                 settings: OptimizerSettings = OptimizerSettings(),
                 degree_candidates: Sequence[int] = (1, 2, 3, 4, 5),
                 fast_window: float = FAST_WINDOW):
    """Single-dataset form of :func:`fit_baseline_pooled`."""
    if not records:
        raise IdentificationError("no step records")
    return fit_baseline_pooled([(records, statics)], settings, degree_candidates, fast_window)
