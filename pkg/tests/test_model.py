import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robust_liquidation.model import (Affine, Constant, DomainError, Product, Sum, Tanh, constant_model,
                                      custom_model, example_ex1_model, field_from_spec, make_params,
                                      tanh_liquidity_1d, validate_assumptions)


def test_derived_parameters():
    p = make_params(2.0, 4.0, 1.0, 0.1)
    assert p.alpha == pytest.approx(1 / 3)
    assert p.beta == pytest.approx(1.0)
    assert p.epsilon == pytest.approx(2 / 3)
    assert p.a == pytest.approx(27 / 256)
    assert p.regular


def test_irregular_pair_is_flagged():
    p = make_params(3.0, 4.0, 1.0, 0.1)
    assert not p.regular
    with pytest.raises(DomainError, match="beta > 2"):
        p.require_regular()


@pytest.mark.parametrize("field,kwargs", [
    ("p", dict(p=1.0, m=4.0, T=1.0, theta=0.1)),
    ("m", dict(p=2.0, m=1.5, T=1.0, theta=0.1)),
    ("T", dict(p=2.0, m=4.0, T=0.0, theta=0.1)),
    ("theta", dict(p=2.0, m=4.0, T=1.0, theta=-0.1)),
    ("T", dict(p=2.0, m=4.0, T=math.inf, theta=0.1)),
])
def test_params_validation_names_field(field, kwargs):
    with pytest.raises(DomainError, match=f"^{field}="):
        make_params(**kwargs)


FIELDS = [
    Constant(1.5),
    Affine(0.5, (1.0, -2.0)),
    Tanh(2.0, 1.0, -1.0, coord=0),
    Tanh(0.5, 0.3, 1.0, coord=1),
    Sum(Tanh(2.0, 1.0, -1.0, coord=0), Affine(0.0, (0.0, 0.3))),
    Product(Tanh(2.0, 1.0, -1.0, coord=0), Tanh(1.0, 0.5, 2.0, coord=1)),
]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-4, 4), min_size=2, max_size=2), st.sampled_from(range(len(FIELDS))))
def test_field_derivatives_match_differences(y, which):
    f = FIELDS[which]
    y = np.array([y])
    h = 1e-5
    g_fd = np.array([(f.value(y + h * e) - f.value(y - h * e)) / (2 * h) for e in np.eye(2)]).T
    assert np.allclose(f.grad(y), g_fd, atol=1e-7, rtol=1e-6)
    H_fd = np.stack([(f.grad(y + h * e) - f.grad(y - h * e)) / (2 * h) for e in np.eye(2)], axis=1)
    assert np.allclose(f.hess(y), H_fd, atol=1e-7, rtol=1e-6)


def test_field_spec_round_trip_and_unknown_keys():
    f = field_from_spec({"kind": "tanh", "level": 2.0, "amp": 1.0, "scale": -1.0, "coord": 0})
    y = np.array([[0.3, 0.0]])
    assert f.value(y)[0] == pytest.approx(2 + math.tanh(-0.3))
    with pytest.raises(ValueError, match="unknown keys"):
        field_from_spec({"kind": "tanh", "levle": 2.0})
    with pytest.raises(ValueError, match="unknown field kind"):
        field_from_spec({"kind": "spline"})


def test_ex1_model_shape_and_coefficients():
    m = example_ex1_model()
    y = np.array([[0.0, 0.0], [1.0, -1.0]])
    assert np.allclose(m.eta.value(y), 2 + np.tanh(-y[:, 0]))
    assert np.allclose(m.lam.value(y), 0.5 + 0.3 * np.tanh(y[:, 1]))
    assert np.allclose(m.drift.value(y), np.stack([-y[:, 0], np.zeros(2)], axis=1))
    assert m.is_diagonal


def test_ex1_rejects_unbounded_risk_profile():
    with pytest.raises(DomainError, match="bounded"):
        example_ex1_model(sigma_tilde_sq=Affine(0.5, (0.0, 1.0)))


def test_generator_matches_manual_formula():
    m = example_ex1_model()
    y = np.array([[0.4, -0.2]])
    s = 1 / np.cosh(-0.4) ** 2
    # eta = 2 - tanh(y1): eta' = -sech^2, eta'' = 2 tanh(y1) sech^2
    d1 = -s
    d2 = 2 * np.tanh(0.4) * s
    expected = 0.5 * d2 + (-0.4) * d1
    assert m.generator_eta(y)[0] == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("builder", [example_ex1_model, tanh_liquidity_1d, lambda: constant_model(1, 1.0, 0.25)])
def test_registry_models_pass_assumptions(builder):
    model = builder()
    report = validate_assumptions(model, make_params(2.0, 4.0, 1.0, 0.1), n_samples=500)
    assert report.ok, [c.__dict__ for c in report.failures()]
    assert {"L.1", "L.2", "L.3", "F.1", "F.2", "DERIV"} <= set(report.passed)


def test_assumption_failure_is_reported_with_witness():
    bad = custom_model(1, {"kind": "tanh", "level": 1.0, "amp": 0.9, "scale": 1.0, "coord": 0},
                       0.25, {"kind": "constant", "mu": [0.0]}, [1.0], c_lower=0.5, c_upper=3.0,
                       declared=["F.3"])
    report = validate_assumptions(bad, make_params(2.0, 4.0, 1.0, 0.1), n_samples=200)
    assert not report.ok
    fail = {c.id for c in report.failures()}
    assert "F.3" in fail
    assert report.get("F.3").witness is not None
    assert report.get("F.3").worst_margin < 0
