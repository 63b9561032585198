"""Noiseless round-trip over 20 random true models (the core property).

Each model draws k in [0.3, 1.5], alpha in [10, 100], omega in [100, 400],
s0 in [0.05, 0.5] and a cubic whose coefficients are within 3x the
single-magnet magnitudes. Slow: a few minutes, spread over up to 4 processes.
"""

import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest

from _pipeline import IDENTIFIED, SAMPLE_PERIOD, relative_errors
from mresysid import (
    FastDynamics,
    HammersteinModel,
    PolynomialNonlinearity,
    close_constraint,
    default_schedule,
    identify,
    make_step_excitation,
    simulate,
    split_steps,
    steady_state_points,
)

BASE_POLY = np.array([7.077, -4.435e-2, -9.229e-4, -1.709e-5])
SEEDS = range(20)


def random_model(seed):
    rng = np.random.default_rng(seed)
    k = rng.uniform(0.3, 1.5)
    alpha = rng.uniform(10, 100)
    omega = rng.uniform(100, 400)
    s0 = rng.uniform(0.05, 0.5)
    c = BASE_POLY * rng.uniform(-3, 3, 4)
    c[0] = rng.uniform(5, 8)
    return HammersteinModel(PolynomialNonlinearity(c), FastDynamics(k, alpha, omega),
                            close_constraint(k, s0))


def round_trip(seed):
    truth = random_model(seed)
    u = make_step_excitation(default_schedule(), SAMPLE_PERIOD)
    y = simulate(truth, u)
    records = split_steps(u, y)
    statics = steady_state_points(records, y_offset=float(y.values[0]))
    return truth, identify(records, statics).model


@pytest.fixture(scope="module")
def results():
    workers = min(4, os.cpu_count() or 1)
    with ProcessPoolExecutor(workers) as pool:
        out = list(pool.map(round_trip, SEEDS))
    IDENTIFIED.extend(m for _, m in out)
    return out


@pytest.mark.parametrize("seed", SEEDS)
def test_random_model_round_trip(results, seed):
    truth, model = results[seed]
    params = (truth.fast.k, truth.fast.alpha, truth.fast.omega, truth.slow.s0)
    errs = relative_errors(model, params)
    assert max(errs) <= 0.02, f"seed {seed}: relative errors {errs}"
