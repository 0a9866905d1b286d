"""Explicit sub- and supersolutions and the certificates built on them.

The lower surface is ``eta (1 - ||L eta / eta|| tau) / tau^(1/beta)`` and the
upper one ``eta (1 + K tau^eps) / tau^(1/beta) + exp(L tau) <y>^n``; both are
valid for maturities ``tau <= delta``.  Sup-norms over the whole space are
replaced by sampled sups over a box, inflated by a safety factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import time_weights
from .model import DomainError, FactorModel, RobustParams, as_points, japanese_bracket, sample_box
from .pde_solver import ValueSolution
from .stepper import SpatialOperator


@dataclass(frozen=True)
class BoundConstants:
    """Constants of the sub/supersolution pair.

    Attributes:
        L: growth rate of the weight ``exp(L tau) <y>^n``.
        K: coefficient of the ``tau^eps`` bump in the upper surface.
        delta0: ``1 / ||L eta / eta||`` (``inf`` when the ratio vanishes).
        delta1: ``min(1, K^(-1/eps))``.
        delta: validity window for both surfaces.
        C0_hat: sampled constant that seeds the search for ``L``.
        Leta_ratio: inflated sampled sup of ``|L eta / eta|``.
        n: growth exponent of the weight.
        inflation: safety factor applied to sampled sups.
        sample_margin: uninflated sampled sup, for the record.
    """

    L: float
    K: float
    delta0: float
    delta1: float
    delta: float
    C0_hat: float
    Leta_ratio: float
    n: float
    inflation: float
    sample_margin: float
    H_factor: float = 1.0

    def as_dict(self) -> dict:
        return {k: (v if math.isfinite(v) else "inf") for k, v in self.__dict__.items()}


def bump_coefficient(model: FactorModel, params: RobustParams) -> float:
    """Smallest admissible ``K = (2 C + 2^(2 alpha + 1) C^(alpha + 2)) / (1 + eps)``.

    For ``theta > 1`` the gradient part is multiplied by ``theta^alpha`` so the
    bound on ``H`` stays valid.
    """
    C, a = model.c_upper, params.alpha
    factor = max(1.0, params.theta**a)
    eps = params.epsilon
    if eps <= 0:
        raise DomainError(f"need eps = 1 - alpha/beta > 0, got {eps:g}")
    return (2 * C + factor * 2 ** (2 * a + 1) * C ** (a + 2)) / (1 + eps)


def _weight_terms(model: FactorModel, y: np.ndarray, n: float):
    """``<y>^n`` with its gradient and generator."""
    br = japanese_bracket(y)
    val = br**n
    grad = n * br[:, None] ** (n - 2) * y
    d = y.shape[1]
    hess = (n * br ** (n - 2))[:, None, None] * np.eye(d) \
        + (n * (n - 2) * br ** (n - 4))[:, None, None] * y[:, :, None] * y[:, None, :]
    gen = model.generator((val, grad, hess), y)
    return val, grad, gen


def weight_inequality(L: float, model: FactorModel, params: RobustParams, y: np.ndarray,
                      tau: np.ndarray, H_factor: float = 1.0) -> np.ndarray:
    """LHS of the weight inequality at all ``(tau, y)`` pairs; shape ``(len(tau), N)``.

    ``-d_t h - L h - 2^alpha C^(alpha+1) |Dh|^(alpha+1) - lambda + h^(beta+1) / (beta eta^beta)``
    with ``h = exp(L tau) <y>^n`` and ``-d_t h = L h``.
    """
    n = model.n_growth(params.m)
    a, b, C = params.alpha, params.beta, model.c_upper
    val, grad, gen = _weight_terms(model, y, n)
    e = np.exp(L * tau)[:, None]
    gnorm = np.linalg.norm(grad, axis=1)
    eta = model.eta.value(y)
    lam = model.lam.value(y)
    h = e * val
    return (L * h - e * gen - H_factor * 2**a * C ** (a + 1) * (e * gnorm) ** (a + 1) - lam
            + h ** (b + 1) / (b * eta**b))


def compute_constants(model: FactorModel, params: RobustParams, sample_box_=None, n_samples: int = 4096,
                      inflation: float = 1.1, n_tau: int = 65, L_max: float = 1e8) -> BoundConstants:
    """Evaluate ``K``, ``delta0``, ``delta1``, ``delta`` and search for ``L``.

    ``L`` is the first value of a doubling sequence, started at ``2 C0_hat``,
    for which the weight inequality holds at every sampled ``(tau, y)``.

    Raises:
        DomainError: if no ``L <= L_max`` works; the message names the worst node.
    """
    if sample_box_ is None:
        sample_box_ = [(-3.0, 3.0)] * model.dim
    y = sample_box(sample_box_, n_samples)
    eta = model.eta.value(y)
    if np.any(eta <= 0):
        raise DomainError("eta must be positive on the sample box")
    ratio = float(np.max(np.abs(model.generator_eta(y) / eta)))
    Leta = inflation * ratio
    b, a, eps = params.beta, params.alpha, params.epsilon
    K = bump_coefficient(model, params)
    delta0 = math.inf if Leta == 0 else 1.0 / Leta
    delta1 = min(1.0, K ** (-1.0 / eps))
    shrink = 1.0 - ((b / 2 + 1) / (b + 1)) ** (1 / b)
    delta = min(delta0 * shrink, delta1)
    delta = min(delta, params.T)

    H_factor = max(1.0, params.theta**a)
    n = model.n_growth(params.m)
    val, grad, gen = _weight_terms(model, y, n)
    lam = model.lam.value(y)
    C = model.c_upper
    C0 = float(np.max(np.concatenate([
        np.abs(gen) / val,
        H_factor * 2**a * C ** (a + 1) * np.linalg.norm(grad, axis=1) ** (a + 1) / val,
        lam / val,
    ])))
    tau = np.linspace(0.0, params.T, n_tau)
    L = max(2 * C0, 1e-3)
    while True:
        lhs = weight_inequality(L, model, params, y, tau, H_factor)
        if np.min(lhs) >= 0:
            break
        if L > L_max:
            i, j = np.unravel_index(np.argmin(lhs), lhs.shape)
            raise DomainError(f"no L <= {L_max:g} satisfies the weight inequality; worst node "
                              f"tau={tau[i]:g}, y={y[j].tolist()}")
        L *= 2
    return BoundConstants(L=float(L), K=float(K), delta0=delta0, delta1=delta1, delta=float(delta),
                          C0_hat=C0, Leta_ratio=Leta, n=float(n), inflation=inflation,
                          sample_margin=ratio, H_factor=H_factor)


def _check_window(tau, consts: BoundConstants):
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0) or np.any(tau > consts.delta * (1 + 1e-12)):
        raise DomainError(f"maturity outside (0, delta={consts.delta:g}]")
    return tau


def subsolution_lower(t, y, consts: BoundConstants, model: FactorModel, params: RobustParams):
    """Lower surface at calendar time ``t`` (valid on ``[T - delta, T)``)."""
    tau = _check_window(params.T - np.asarray(t, dtype=float), consts)
    pts, single = as_points(y, model.dim)
    eta = model.eta.value(pts)
    out = eta * (1 - consts.Leta_ratio * tau) / tau ** (1 / params.beta)
    return float(out[0]) if single and np.ndim(t) == 0 else out


def supersolution_upper(t, y, consts: BoundConstants, model: FactorModel, params: RobustParams):
    """Upper surface at calendar time ``t`` (valid on ``[T - delta, T)``)."""
    tau = _check_window(params.T - np.asarray(t, dtype=float), consts)
    pts, single = as_points(y, model.dim)
    eta = model.eta.value(pts)
    weight = np.exp(consts.L * tau) * japanese_bracket(pts) ** consts.n
    out = eta * (1 + consts.K * tau**params.epsilon) / tau ** (1 / params.beta) + weight
    return float(out[0]) if single and np.ndim(t) == 0 else out


@dataclass
class BoundCertificate:
    """Node-by-node comparison of a solution with the two surfaces.

    ``lower``, ``upper``, ``value`` and the verdict arrays have shape
    ``(len(t_nodes), N)`` with spatial nodes in C order.
    """

    t_nodes: np.ndarray
    points: np.ndarray
    value: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    slack: np.ndarray
    lower_ok: np.ndarray
    upper_ok: np.ndarray
    min_lower_margin: float
    min_upper_margin: float
    interval_ok: bool
    interval_C: float
    consts: BoundConstants
    violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(np.all(self.lower_ok) and np.all(self.upper_ok))

    @property
    def n_violations(self) -> int:
        return int(np.sum(~self.lower_ok) + np.sum(~self.upper_ok))

    def summary(self) -> dict:
        return {
            "passed": self.passed,
            "n_check_times": int(self.t_nodes.size),
            "n_nodes": int(self.lower_ok.size),
            "n_violations": self.n_violations,
            "min_lower_margin": self.min_lower_margin,
            "min_upper_margin": self.min_upper_margin,
            "interval_ok": self.interval_ok,
            "interval_C": self.interval_C,
            "constants": self.consts.as_dict(),
            "violations": self.violations[:50],
        }


def verify_sandwich(sol: ValueSolution, consts: BoundConstants, slack_factor: float = 3.0,
                    slack: np.ndarray | float | None = None) -> BoundCertificate:
    """Check ``lower <= v <= upper`` at all solved nodes with ``tau <= delta``.

    The per-node slack defaults to ``slack_factor`` times the accumulated local
    truncation error of the solve (in ``w`` units, rescaled to ``v``).
    """
    model, params = sol.model, sol.params
    idx = sol.grid.window(consts.delta)
    if idx.size == 0:
        raise DomainError("solution has no nodes inside the bound window")
    pts = sol.grid.points()
    t = sol.grid.t_nodes[idx]
    tau = sol.grid.T - t
    b = params.beta
    scale = tau ** (-1 / b)
    value = sol.w[idx].reshape(idx.size, -1) * scale[:, None]
    lower = np.stack([subsolution_lower(s, pts, consts, model, params) for s in t])
    upper = np.stack([supersolution_upper(s, pts, consts, model, params) for s in t])
    if slack is None:
        cum = np.asarray(sol.meta.get("lte_cumulative", np.zeros(sol.grid.t_nodes.size)))
        slack_w = slack_factor * cum[idx]
    else:
        slack_w = np.broadcast_to(np.asarray(slack, dtype=float), idx.shape)
    sl = (slack_w * scale)[:, None]
    lo_margin = value - lower + sl
    up_margin = upper - value + sl
    lower_ok = lo_margin >= 0
    upper_ok = up_margin >= 0
    violations = []
    for kind, ok, margin, ref in (("lower", lower_ok, lo_margin, lower), ("upper", upper_ok, up_margin, upper)):
        for i, j in zip(*np.nonzero(~ok)):
            violations.append({"bound": kind, "t": float(t[i]), "y": pts[j].tolist(),
                               "v": float(value[i, j]), "bound_value": float(ref[i, j]),
                               "margin": float(margin[i, j])})
    eta = model.eta.value(pts)
    floor = ((b / 2 + 1) / (b + 1)) ** (1 / b) * eta
    interval_ok = bool(np.all(lower * tau[:, None] ** (1 / b) >= floor * (1 - 1e-12)))
    bracket_n = japanese_bracket(pts) ** consts.n
    interval_C = float(np.max(upper * tau[:, None] ** (1 / b) / bracket_n))
    return BoundCertificate(t, pts, value, lower, upper, sl[:, 0] * np.ones(idx.size), lower_ok, upper_ok,
                            float(np.min(value - lower)), float(np.min(upper - value)), interval_ok,
                            interval_C, consts, violations)


def dyadic_levels(sol: ValueSolution, ks=range(6, 14)) -> np.ndarray:
    """Maturities ``T 2^-k`` that lie inside the solved range."""
    tau = np.array([sol.grid.T * 2.0**-k for k in ks])
    return tau[(tau >= sol.grid.tau_min * (1 - 1e-12)) & (tau <= sol.grid.T)]


def terminal_rate_fit(sol: ValueSolution, model: FactorModel | None = None, ks=range(6, 14)) -> dict:
    """Fit decay exponents of ``sup |w - eta|`` and ``sup |D(w - eta)|`` as ``tau -> 0``.

    The gradient error uses the same difference operator on ``w - eta``, so
    the fixed ``O(h^2)`` error of differencing ``eta`` does not mask the rate.
    Errors that vanish to round-off give the sentinel rate ``inf``.
    """
    model = model or sol.model
    op = SpatialOperator(model, sol.grid)
    eta = model.eta.value(op.points)
    tau = dyadic_levels(sol, ks)
    if tau.size < 6:
        raise DomainError("need at least 6 dyadic maturities inside the solved range")
    ev, eg = [], []
    for s in tau:
        k, f = time_weights(sol.tau, s)
        w = ((1 - f) * sol.w[k] + f * sol.w[k + 1]).ravel()
        d = w - eta
        ev.append(np.max(np.abs(d)))
        eg.append(np.max(np.linalg.norm(op.gradient(d), axis=1)))
    ev, eg = np.array(ev), np.array(eg)
    tiny = 1e-12 * max(1.0, float(np.max(np.abs(eta))))

    def fit(e):
        if np.all(e <= tiny):
            return math.inf
        e = np.maximum(e, tiny)
        return float(np.polyfit(np.log(tau), np.log(e), 1)[0])

    return {"rate_v": fit(ev), "rate_Dv": fit(eg), "tau": tau, "err_v": ev, "err_Dv": eg}
