import numpy as np
import pytest

from robust_liquidation.control import (estimate_cost, optimal_vartheta, optimal_xi, path_tau_grid,
                                        residual_costs, saddle_check, simulate)
from robust_liquidation.grid import make_grid
from robust_liquidation.model import DomainError, constant_model, make_params
from robust_liquidation.pde_solver import solve_benchmark

P2 = make_params(2.0, 4.0, 1.0, 0.0)
ETA = 1.5


@pytest.fixture(scope="module")
def flat_sol():
    """Constant liquidity, no running risk: ``v = eta / (T - t)`` everywhere."""
    model = constant_model(1, eta=ETA, lam=0.0)
    return solve_benchmark(model, P2, make_grid(1.0, [(-6.0, 6.0)], 61, per_octave=16))


def test_feedback_rate_for_flat_model(flat_sol):
    m = flat_sol.model
    for s in (0.0, 0.3, 0.9):
        assert optimal_xi(s, [0.5], 2.0, flat_sol, m, P2) == pytest.approx(2.0 / (1 - s), rel=1e-10)
    assert optimal_xi(0.3, [0.5], 0.0, flat_sol, m, P2) == 0.0
    with pytest.raises(DomainError):
        optimal_xi(1.0, [0.0], 1.0, flat_sol, m, P2)


def test_feedback_rate_nondecreasing_in_theta(tanh_solutions, tanh_model):
    base = make_params(2.0, 4.0, 1.0, 0.0)
    ys = np.linspace(-3, 3, 13)[:, None]
    for s in (0.0, 0.5, 0.99):
        rates = [optimal_xi(s, ys, 1.0, tanh_solutions[th], tanh_model, base.with_theta(th))
                 for th in sorted(tanh_solutions)]
        for lo, hi in zip(rates[:-1], rates[1:]):
            assert np.all(hi >= lo * (1 - 1e-9))


def test_density_generator_vanishes_without_ambiguity_or_gradient(tanh_solutions, tanh_model, flat_sol):
    ys = np.linspace(-2, 2, 5)[:, None]
    assert np.all(optimal_vartheta(0.2, ys, tanh_solutions[0.0], tanh_model, P2) == 0)
    # round-off gradients of order 1e-15 enter through |q|^alpha
    th = optimal_vartheta(0.2, ys, flat_sol, flat_sol.model, P2.with_theta(0.1))
    assert np.max(np.abs(th)) < 1e-4
    th = optimal_vartheta(0.2, ys, tanh_solutions[0.1], tanh_model, P2.with_theta(0.1))
    assert np.max(np.abs(th)) > 1e-2


def test_position_follows_linear_schedule_on_flat_model(flat_sol):
    paths = simulate(flat_sol.model, P2, flat_sol, 0.0, [0.0], 1.0, n_paths=64, n_steps=50,
                     extra_tau=(0.5, 1e-3))
    for t in (0.5, 1 - 1e-3):
        assert np.allclose(paths.X_at(t), 1 - t, rtol=1e-10)
    cost = estimate_cost(paths, P2)
    assert cost.mean == pytest.approx(ETA * 1.0**2 / 1.0, rel=1e-3)


def test_zero_inventory_costs_nothing(tanh_solutions, tanh_model):
    paths = simulate(tanh_model, P2.with_theta(0.1), tanh_solutions[0.1], 0.0, [0.0], 0.0, n_paths=32)
    assert np.all(paths.X == 0) and estimate_cost(paths, P2.with_theta(0.1)).mean == 0.0


def test_cost_components_add_up(tanh_solutions, tanh_model):
    p = P2.with_theta(0.1)
    paths = simulate(tanh_model, p, tanh_solutions[0.1], 0.0, [0.0], 1.0, n_paths=256)
    c = estimate_cost(paths, p)
    pc = c.per_path_components
    assert np.array_equal(c.per_path, pc["impact"] + pc["risk"] - pc["penalty"])
    assert np.all(pc["penalty"] >= 0) and np.all(pc["impact"] > 0)


def test_measures_coincide_without_ambiguity(tanh_solutions, tanh_model):
    kw = dict(n_paths=128, seed=3)
    a = simulate(tanh_model, P2, tanh_solutions[0.0], 0.0, [0.2], 1.0, measure="reference", **kw)
    b = simulate(tanh_model, P2, tanh_solutions[0.0], 0.0, [0.2], 1.0, measure="worst-case", **kw)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.impact, b.impact)
    assert np.all(a.logweight == 0) and np.all(b.penalty == 0)


def test_nonzero_generator_with_zero_theta_is_rejected(tanh_solutions, tanh_model):
    paths = simulate(tanh_model, P2.with_theta(0.1), tanh_solutions[0.1], 0.0, [0.0], 1.0, n_paths=16)
    with pytest.raises(DomainError, match="theta is zero"):
        estimate_cost(paths, P2)
    with pytest.raises(DomainError, match="reference-measure"):
        estimate_cost(paths, P2.with_theta(0.1), under="reweighted")


def test_likelihood_weights_have_unit_mean(tanh_solutions, tanh_model):
    p = P2.with_theta(0.2)
    paths = simulate(tanh_model, p, tanh_solutions[0.2], 0.0, [0.0], 1.0, measure="reference", n_paths=8192)
    w = np.exp(paths.logweight)
    assert abs(w.mean() - 1) <= 4 * w.std(ddof=1) / np.sqrt(w.size)


def test_residual_cost_vanishes_toward_horizon(tanh_solutions, tanh_model):
    p = P2.with_theta(0.1)
    sol = tanh_solutions[0.1]
    paths = simulate(tanh_model, p, sol, 0.0, [0.0], 1.0, n_paths=512, store_paths=True, extra_tau=(1e-3,))
    r = residual_costs(paths, sol, p, [0.0, 0.5, 1 - 1e-3])
    assert r[0] == pytest.approx(sol.v(0.0, [0.0]), rel=1e-9)
    assert r[2] < 5e-3 * r[0]
    assert np.all(np.diff(r) < 0)


def test_results_do_not_depend_on_thread_count(tanh_solutions, tanh_model):
    p = P2.with_theta(0.1)
    a = simulate(tanh_model, p, tanh_solutions[0.1], 0.0, [0.0], 1.0, n_paths=5000, threads=1, seed=9)
    b = simulate(tanh_model, p, tanh_solutions[0.1], 0.0, [0.0], 1.0, n_paths=5000, threads=2, seed=9)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.penalty, b.penalty)


def test_invalid_simulation_requests(tanh_solutions, tanh_model):
    sol = tanh_solutions[0.0]
    with pytest.raises(DomainError, match="infinite impact"):
        simulate(tanh_model, P2, sol, 0.0, [0.0], 1.0, xi_scale=0.4, n_paths=8)
    with pytest.raises(DomainError, match="n_steps"):
        simulate(tanh_model, P2, sol, 0.0, [0.0], 1.0, n_steps=5, n_paths=8)
    with pytest.raises(DomainError, match="measure"):
        simulate(tanh_model, P2, sol, 0.0, [0.0], 1.0, measure="physical", n_paths=8)
    with pytest.raises(DomainError, match="outside the box"):
        simulate(tanh_model, P2, sol, 0.0, [7.0], 1.0, n_paths=8)


def test_path_grid_keeps_solver_nodes_and_caps_steps(tanh_solutions):
    tau = tanh_solutions[0.0].tau
    g = path_tau_grid(tau, 1.0, 1e-4, 50)
    assert g[0] == 1.0 and g[-1] == 1e-4 and np.all(np.diff(g) < 0)
    assert np.max(-np.diff(g)) <= (1 - 1e-4) / 50 * (1 + 1e-12)
    inside = tau[(tau < 1.0) & (tau > 1e-4)]
    assert np.all(np.isin(inside, g))


def test_saddle_inequalities_on_tanh_model(tanh_solutions, tanh_model):
    p = P2.with_theta(0.1)
    rep = saddle_check(tanh_model, p, tanh_solutions[0.1], 0.0, [0.0], 1.0, n_paths=2000, n_steps=100)
    assert rep.saddle_ok, rep.as_dict()
    assert rep.value_match
    assert len(rep.xi_perturbations) == 2 and len(rep.vartheta_perturbations) == 2
