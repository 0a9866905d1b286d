import numpy as np
import pytest

from robust_liquidation.grid import make_grid
from robust_liquidation.model import DomainError, constant_model, example_ex1_model, make_params
from robust_liquidation.terminal_layer import layer_constants, sigma_norm, terminal_layer


def test_zero_is_the_fixed_point_without_data():
    model = constant_model(1, eta=1.0, lam=0.0)
    params = make_params(2.0, 4.0, 1.0, 0.0)
    g = make_grid(0.5, [(-1.0, 1.0)], 11, per_octave=8)
    sol = terminal_layer(model, params, g, R=1.0, delta=0.5)
    assert sol.norm == 0.0
    assert np.all(sol.u == 0.0)
    assert sol.iterations <= 2 and sol.certified


def test_riccati_layer_matches_closed_form():
    lam = 0.25
    model = constant_model(1, eta=1.0, lam=lam)
    params = make_params(2.0, 4.0, 1.0, 0.0)
    c = layer_constants(model, params, make_grid(1.0, [(-2.0, 2.0)], 21, per_octave=32))
    assert 0 < c.delta_max <= 1
    g = make_grid(c.delta_max, [(-2.0, 2.0)], 21, per_octave=32)
    sol = terminal_layer(model, params, g, c.R, c.delta_max)
    assert sol.certified and sol.max_ratio <= 0.5
    tau = sol.tau
    r = np.sqrt(lam)
    w = np.ones_like(tau)
    w[1:] = r * tau[1:] / np.tanh(r * tau[1:])
    u_exact = ((w - 1) * tau)[:, None]
    err = sigma_norm(tau, sol.u - u_exact, np.zeros_like(sol.Du), 1.0)
    assert err / sol.norm < 1e-3


def test_ex1_layer_contracts():
    model = example_ex1_model()
    params = make_params(2.0, 4.0, 1.0, 0.1)
    box = [(-4.0, 4.0), (-4.0, 4.0)]
    c = layer_constants(model, params, make_grid(1.0, box, 41, per_octave=16))
    g = make_grid(c.delta_max, box, 41, per_octave=16)
    sol = terminal_layer(model, params, g, c.R, c.delta_max)
    assert sol.certified
    assert sol.max_ratio <= 0.5
    assert 0 < sol.norm <= c.R
    eta = model.eta.value(g.points())
    # the layer stays in the ball |w / eta - 1| <= 1
    assert np.all(np.abs(sol.w(len(sol.tau) - 1, eta) / eta - 1) <= 1)


def test_window_violation_is_rejected():
    model = constant_model(1, eta=1.0, lam=0.25)
    params = make_params(2.0, 4.0, 1.0, 0.0)
    g = make_grid(1.0, [(-1.0, 1.0)], 11, per_octave=8)
    with pytest.raises(DomainError, match="contraction window"):
        terminal_layer(model, params, g, R=10.0, delta=1.0)


def test_irregular_exponents_have_no_window():
    model = constant_model(1, eta=1.0, lam=0.25)
    g = make_grid(1.0, [(-1.0, 1.0)], 11, per_octave=8)
    with pytest.raises(DomainError, match="eps > 1/2"):
        layer_constants(model, make_params(3.0, 4.0, 1.0, 0.1), g)
