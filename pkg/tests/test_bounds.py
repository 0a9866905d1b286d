import dataclasses
import math

import numpy as np
import pytest

from robust_liquidation.bounds import (compute_constants, subsolution_lower, supersolution_upper,
                                       terminal_rate_fit, verify_sandwich)
from robust_liquidation.grid import make_grid
from robust_liquidation.model import DomainError, constant_model, make_params
from robust_liquidation.pde_solver import solve_benchmark


@pytest.fixture(scope="module")
def tanh_consts(tanh_model):
    return compute_constants(tanh_model, make_params(2.0, 4.0, 1.0, 0.1), sample_box_=[(-5.0, 5.0)])


def test_window_is_positive_and_at_most_one(tanh_consts):
    c = tanh_consts
    assert 0 < c.delta <= min(1.0, c.delta1)
    assert c.L > 0 and c.K > 0


def test_lower_below_upper_on_window(tanh_consts, tanh_model):
    p = make_params(2.0, 4.0, 1.0, 0.1)
    y = np.linspace(-4, 4, 41)[:, None]
    for tau in np.geomspace(1e-4, tanh_consts.delta, 12):
        lo = subsolution_lower(1.0 - tau, y, tanh_consts, tanh_model, p)
        hi = supersolution_upper(1.0 - tau, y, tanh_consts, tanh_model, p)
        assert np.all(lo <= hi)


def test_surfaces_refuse_maturities_outside_window(tanh_consts, tanh_model):
    p = make_params(2.0, 4.0, 1.0, 0.1)
    for t in (1.0, 1.0 - 2 * tanh_consts.delta):
        with pytest.raises(DomainError, match="outside"):
            subsolution_lower(t, [0.0], tanh_consts, tanh_model, p)
        with pytest.raises(DomainError, match="outside"):
            supersolution_upper(t, [0.0], tanh_consts, tanh_model, p)


def test_sandwich_holds_for_solver_output(tanh_solutions, tanh_consts):
    cert = verify_sandwich(tanh_solutions[0.1], tanh_consts)
    assert cert.passed, cert.violations[:3]
    assert cert.n_violations == 0
    assert cert.summary()["n_check_times"] > 10


def test_sandwich_detects_a_corrupted_solution(tanh_solutions, tanh_consts):
    sol = tanh_solutions[0.1]
    halved = dataclasses.replace(sol, w=0.5 * sol.w)
    cert = verify_sandwich(halved, tanh_consts)
    assert not cert.passed
    assert cert.violations and cert.violations[0]["bound"] == "lower"


def test_terminal_rates_on_tanh_model(tanh_solutions):
    r = terminal_rate_fit(tanh_solutions[0.1])
    eps = make_params(2.0, 4.0, 1.0, 0.1).epsilon
    assert r["rate_v"] >= eps - 0.15
    assert r["rate_Dv"] >= 0.5 - 1 / 3 - 0.15
    r0 = terminal_rate_fit(tanh_solutions[0.0])
    assert r0["rate_v"] == pytest.approx(1.0, abs=0.05)


def test_constant_model_gives_sentinel_rate():
    model = constant_model(1, eta=1.3, lam=0.0)
    sol = solve_benchmark(model, make_params(2.0, 4.0, 1.0, 0.0), make_grid(1.0, [(-1.0, 1.0)], 11, per_octave=8))
    r = terminal_rate_fit(sol)
    assert r["rate_v"] == math.inf and r["rate_Dv"] == math.inf
