"""Value-function solver for the singular-terminal HJBI equation.

The value ``v`` blows up like ``(T-t)^(-1/beta)`` at the horizon, so the
solver works with ``w = (T-t)^(1/beta) v``, which starts from the finite datum
``w = eta``.  In time to maturity ``tau = T - t`` the equation reads

    dw/dtau = L w + tau^(-alpha/beta) H(y, Dw) + tau^(1/beta) lambda
              - (|w|^(beta+1) / eta^beta - w) / (beta tau).

The generator is implicit, the stiff reaction is solved by Newton's method and
the gradient term is explicit at an extrapolated level (variable-step IMEX
BDF2).  The first two levels come from the near-terminal expansion.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import SpaceTimeGrid, interp_space, space_weights, time_weights
from .model import DomainError, FactorModel, RobustParams, as_points
from .stepper import SolverError, SpatialOperator, bdf2_march

__all__ = [
    "SolverError", "SolverOptions", "ValueSolution", "nonlinearity_F", "hamiltonian_H",
    "hamiltonian_maximiser", "F0_closed_form", "binomial_tail", "solve_singular",
    "solve_benchmark", "solve_with_extra_risk", "gradient", "starting_level",
    "residual_w", "residual_v",
]


# ---------------------------------------------------------------------------
# Pointwise nonlinearities
# ---------------------------------------------------------------------------


def nonlinearity_F(y, v, model: FactorModel, params: RobustParams) -> np.ndarray:
    """lambda(y) - |v|^(beta+1) / (beta eta(y)^beta)."""
    pts, single = as_points(y, model.dim)
    eta = model.eta.value(pts)
    if np.any(eta <= 0):
        raise DomainError("eta must be positive")
    b = params.beta
    out = model.lam.value(pts) - np.abs(v) ** (b + 1) / (b * eta**b)
    return float(out[0]) if single and np.ndim(v) == 0 else out


def _sigma_t_q(model: FactorModel, pts: np.ndarray, q: np.ndarray) -> np.ndarray:
    return np.einsum("nij,ni->nj", model.sigma(pts), q)


def hamiltonian_H(y, q, model: FactorModel, params: RobustParams) -> np.ndarray:
    """theta^alpha |sigma^T(y) q|^(alpha+1); zero when theta is zero."""
    pts, single = as_points(y, model.dim)
    q = np.asarray(q, dtype=float).reshape(pts.shape[0], model.dim)
    if params.theta == 0.0:
        out = np.zeros(pts.shape[0])
    else:
        s = np.linalg.norm(_sigma_t_q(model, pts, q), axis=1)
        out = params.theta**params.alpha * s ** (params.alpha + 1)
    return float(out[0]) if single else out


def hamiltonian_maximiser(y, q, model: FactorModel, params: RobustParams) -> np.ndarray:
    """Maximiser of ``<sigma th, q> - (a/theta)|th|^m`` over ``th``.

    Equals ``theta^alpha (1+alpha) |s|^(alpha-1) s`` with ``s = sigma^T q``,
    extended by zero where ``s = 0``.
    """
    pts, single = as_points(y, model.dim)
    q = np.asarray(q, dtype=float).reshape(pts.shape[0], model.dim)
    s = _sigma_t_q(model, pts, q)
    out = maximiser_from_sq(s, params)
    return out[0] if single else out


def maximiser_from_sq(s: np.ndarray, params: RobustParams) -> np.ndarray:
    """Maximiser given ``s = sigma^T q`` with shape ``(N, n)``."""
    if params.theta == 0.0:
        return np.zeros_like(s)
    norm = np.linalg.norm(s, axis=1)
    scale = np.zeros_like(norm)
    nz = norm > 0
    a = params.alpha
    scale[nz] = params.theta**a * (1 + a) * norm[nz] ** (a - 1)
    return scale[:, None] * s


def binomial_tail(z, beta: float) -> np.ndarray:
    """(1+z)^(beta+1) - 1 - (beta+1) z, the tail of the binomial series from k=2."""
    z = np.asarray(z, dtype=float)
    return (1 + z) ** (beta + 1) - 1 - (beta + 1) * z


def F0_closed_form(t, y, u, Du, model: FactorModel, params: RobustParams, Leta=None, Deta=None):
    """Right-hand side of the near-terminal equation for ``u = tau (w - eta)``.

    Here ``t`` is the time to maturity.  ``Leta`` and ``Deta`` default to the
    analytic generator and gradient of eta.

    Raises:
        DomainError: if ``|u / (t eta)| > 1``.
    """
    pts, single = as_points(y, model.dim)
    u = np.asarray(u, dtype=float).reshape(-1)
    Du = np.asarray(Du, dtype=float).reshape(pts.shape[0], model.dim)
    eta = model.eta.value(pts)
    if Leta is None:
        Leta = model.generator_eta(pts)
    if Deta is None:
        Deta = model.eta.grad(pts)
    z = u / (t * eta)
    if np.any(np.abs(z) > 1 + 1e-12):
        i = int(np.argmax(np.abs(z)))
        raise DomainError(f"|z|={abs(z[i]):.3g} > 1 at y={pts[i].tolist()}: iterate left the contraction ball")
    b = params.beta
    eps = params.epsilon if params.theta > 0 else 1.0
    out = t * Leta + t**params.p * model.lam.value(pts) - (eta / b) * binomial_tail(z, b)
    if params.theta > 0:
        s = np.linalg.norm(_sigma_t_q(model, pts, Du / t + Deta), axis=1)
        out = out + params.theta**params.alpha * t**eps * s ** (params.alpha + 1)
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# Residuals of the two equivalent forms
# ---------------------------------------------------------------------------


def residual_w(tau, w, dw_dtau, Lw, Dw, pts, model, params) -> np.ndarray:
    """Residual of the rescaled equation, written with ``-d/dt = d/dtau``."""
    b, a = params.beta, params.alpha
    H = hamiltonian_H(pts, Dw, model, params) if params.theta > 0 else 0.0
    eta = model.eta.value(pts)
    return (dw_dtau - Lw - tau ** (-a / b) * H - tau ** (1 / b) * model.lam.value(pts)
            + (np.abs(w) ** (b + 1) / eta**b - w) / (b * tau))


def residual_v(tau, v, dv_dtau, Lv, Dv, pts, model, params) -> np.ndarray:
    """Residual of ``-v_t - L v - H(y, Dv) - F(y, v) = 0`` with ``-d/dt = d/dtau``."""
    H = hamiltonian_H(pts, Dv, model, params) if params.theta > 0 else 0.0
    return dv_dtau - Lv - H - nonlinearity_F(pts, v, model, params)


# ---------------------------------------------------------------------------
# Solutions
# ---------------------------------------------------------------------------


@dataclass
class SolverOptions:
    """Numerical knobs of the value solver.

    Attributes:
        linear: ``"direct"`` (sparse LU) or ``"adi"`` (approximate factorisation
            iterated to convergence).
        newton_tol: relative update size that ends the Newton loop.
        max_newton: Newton iterations before the step is declared failed.
        check_positive: raise when ``w`` loses positivity.
    """

    linear: str = "adi"
    newton_tol: float = 1e-12
    max_newton: int = 40
    check_positive: bool = True

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ValueSolution:
    """Gridded ``w`` and ``Dw`` in calendar-time order.

    ``w`` has shape ``(n_t, *space)``, ``Dw`` shape ``(n_t, d, *space)``.
    """

    grid: SpaceTimeGrid
    w: np.ndarray
    Dw: np.ndarray
    params: RobustParams
    model: FactorModel
    meta: dict = field(default_factory=dict)

    @property
    def tau(self) -> np.ndarray:
        return self.grid.tau

    @property
    def beta(self) -> float:
        return self.params.beta

    def v_nodes(self) -> np.ndarray:
        s = self.tau ** (-1 / self.beta)
        return self.w * s.reshape((-1,) + (1,) * self.grid.dim)

    def Dv_nodes(self) -> np.ndarray:
        s = self.tau ** (-1 / self.beta)
        return self.Dw * s.reshape((-1,) + (1,) * (self.grid.dim + 1))

    def flat_w(self, k: int) -> np.ndarray:
        return self.w[k].ravel()

    def flat_Dw(self, k: int) -> np.ndarray:
        return np.stack([g.ravel() for g in self.Dw[k]], axis=1)

    def time_slice(self, t: float):
        """``(w, Dw)`` gridded at calendar time ``t`` by log-maturity interpolation."""
        tau_desc = self.tau
        k, f = time_weights(tau_desc, self.grid.T - t)
        w = (1 - f) * self.w[k] + f * self.w[k + 1]
        Dw = (1 - f) * self.Dw[k] + f * self.Dw[k + 1]
        return w, Dw

    def w_at(self, t: float, y, clip: bool = False) -> np.ndarray:
        pts, single = as_points(y, self.grid.dim)
        w, _ = self.time_slice(t)
        idx, frac = space_weights(self.grid.y_nodes, pts, clip)
        out = interp_space(w, idx, frac)
        return float(out[0]) if single else out

    def Dw_at(self, t: float, y, clip: bool = False) -> np.ndarray:
        pts, single = as_points(y, self.grid.dim)
        _, Dw = self.time_slice(t)
        idx, frac = space_weights(self.grid.y_nodes, pts, clip)
        out = np.stack([interp_space(Dw[k], idx, frac) for k in range(self.grid.dim)], axis=1)
        return out[0] if single else out

    def v(self, t: float, y, clip: bool = False):
        return self.w_at(t, y, clip) * (self.grid.T - t) ** (-1 / self.beta)

    def Dv(self, t: float, y, clip: bool = False):
        return self.Dw_at(t, y, clip) * (self.grid.T - t) ** (-1 / self.beta)


def gradient(sol: ValueSolution) -> dict:
    """Gradient samples ``Dw`` and ``Dv`` with the uniform bound on ``sup |Dw|``."""
    axes = tuple(range(1, sol.grid.dim + 1))
    sup_Dw = np.max(np.linalg.norm(sol.Dw, axis=1), axis=axes[:-1] if sol.grid.dim > 1 else None) \
        if sol.grid.dim > 1 else np.max(np.abs(sol.Dw[:, 0]), axis=1)
    return {"Dw": sol.Dw, "Dv": sol.Dv_nodes(), "sup_Dw": sup_Dw,
            "sup_Dw_max": float(np.max(sup_Dw))}


def _gradient_all(op: SpatialOperator, W_t: np.ndarray) -> np.ndarray:
    n_t = W_t.shape[0]
    out = np.empty((n_t, op.grid.dim) + op.shape)
    for k in range(n_t):
        g = op.gradient(W_t[k].ravel())
        for j in range(op.grid.dim):
            out[k, j] = g[:, j].reshape(op.shape)
    return out


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------


def starting_level(tau: float, op: SpatialOperator, eta: np.ndarray, lam: np.ndarray,
                   params: RobustParams, H_eta: np.ndarray | None = None) -> np.ndarray:
    """Near-terminal expansion ``eta + sum c_k tau^(g_k + 1) / (g_k + 2)``.

    Each source ``c tau^g`` of the linearised equation (whose reaction is
    ``-(w - eta)/tau`` to leading order) contributes ``c tau^(g+1)/(g+2)``.
    """
    b, a = params.beta, params.alpha
    w = eta + tau * op.apply(eta) / 2 + tau ** (1 + 1 / b) * lam / (2 + 1 / b)
    if H_eta is not None:
        w = w + tau ** (1 - a / b) * H_eta / (2 - a / b)
    return w


def _reaction(eta: np.ndarray, beta: float):
    eta_b = eta**beta

    def react(n, tau, w):
        aw = np.abs(w)
        g = -(aw ** (beta + 1) / eta_b - w) / (beta * tau)
        dg = -((beta + 1) * aw**beta * np.sign(w) / eta_b - 1) / (beta * tau)
        return g, dg

    return react


def _solve(model: FactorModel, params: RobustParams, grid: SpaceTimeGrid, opts: SolverOptions | None,
           use_H: bool, extra_source: Callable[[int, float], np.ndarray] | None = None,
           extra_exponent: float = 0.0, label: str = "singular") -> ValueSolution:
    opts = opts or SolverOptions()
    start = time.perf_counter()
    op = SpatialOperator(model, grid)
    pts = op.points
    eta = model.eta.value(pts)
    if np.any(eta <= 0):
        raise DomainError("eta must be positive on the grid")
    lam = model.lam.value(pts)
    b, a = params.beta, params.alpha
    tau = grid.tau[::-1].copy()
    n_t = tau.size

    H_eta = None
    if use_H:
        H_eta = hamiltonian_H(pts, op.gradient(eta), model, params)

    def source(n, t, w_star):
        s = t ** (1 / b) * lam
        if use_H:
            s = s + t ** (-a / b) * hamiltonian_H(pts, op.gradient(w_star), model, params)
        if extra_source is not None:
            s = s + extra_source(n, t)
        return s

    w_first, w_second = (starting_level(t, op, eta, lam, params, H_eta) for t in tau[:2])
    if extra_source is not None:
        # a source c tau^g adds tau^(g+1) c / (g+2) to the expansion
        w_first = w_first + tau[0] * extra_source(0, tau[0]) / (extra_exponent + 2)
        w_second = w_second + tau[1] * extra_source(1, tau[1]) / (extra_exponent + 2)
    res = bdf2_march(op, tau, w_first, w_second, source, _reaction(eta, b), opts.linear,
                     opts.newton_tol, opts.max_newton, opts.check_positive)
    W_t = res.W[::-1].reshape((n_t,) + grid.shape)
    Dw = _gradient_all(op, W_t)
    lte_t = res.lte[::-1]
    cum = np.cumsum(res.lte)[::-1]
    eps = params.epsilon if use_H else 1.0
    dev = np.max(np.abs(W_t[-1].ravel() - eta))
    meta = {
        "solver": label,
        "params": params.as_dict(),
        "model": model.name,
        "options": opts.as_dict(),
        "n_t": int(n_t),
        "shape": list(grid.shape),
        "lte_max": float(np.max(res.lte)),
        "grid_tolerance": float(np.sum(res.lte)),
        "lte": lte_t,
        "lte_cumulative": cum,
        "newton_max_iters": int(np.max(res.newton_iters)),
        "newton_residual_max": float(np.max(res.residuals)),
        "terminal_constant": float(dev / grid.tau_min**eps),
        "terminal_exponent": float(eps),
        "elapsed_s": time.perf_counter() - start,
    }
    sol = ValueSolution(grid, W_t, Dw, params, model, meta)
    g = gradient(sol)
    meta["sup_Dw"] = g["sup_Dw"]
    meta["sup_Dw_max"] = g["sup_Dw_max"]
    return sol


def solve_singular(model: FactorModel, params: RobustParams, grid: SpaceTimeGrid,
                   opts: SolverOptions | None = None) -> ValueSolution:
    """Solve the full equation with the gradient term.

    Raises:
        DomainError: if theta > 0 and beta <= 2 alpha.
        SolverError: on Newton failure or loss of positivity.
    """
    if params.theta > 0:
        params.require_regular("solve_singular with theta > 0")
    return _solve(model, params, grid, opts, use_H=params.theta > 0, label="singular")


def solve_benchmark(model: FactorModel, params: RobustParams, grid: SpaceTimeGrid,
                    opts: SolverOptions | None = None) -> ValueSolution:
    """Solve with the gradient term removed (no ambiguity)."""
    return _solve(model, params.with_theta(0.0), grid, opts, use_H=False, label="benchmark")


def solve_with_extra_risk(model: FactorModel, params: RobustParams, grid: SpaceTimeGrid,
                          extra_lambda: Callable[[int, float], np.ndarray],
                          opts: SolverOptions | None = None,
                          extra_order: float | None = None) -> ValueSolution:
    """Benchmark equation with ``lambda`` replaced by ``lambda + extra(t, y)``.

    ``extra_lambda(n, tau)`` returns the flattened extra risk at march index
    ``n`` (maturity ``tau``, increasing with ``n``).  ``extra_order`` is the
    power of ``tau`` with which the extra risk grows near the horizon, used
    only in the starting expansion; the default ``-(1+alpha)/beta`` is the
    growth of ``H(y, Dv)``.
    """
    b = params.beta
    if extra_order is None:
        extra_order = -(1 + params.alpha) / b

    def src(n, t):
        return t ** (1 / b) * extra_lambda(n, t)

    return _solve(model, params.with_theta(0.0), grid, opts, use_H=False, extra_source=src,
                  extra_exponent=extra_order + 1 / b, label="benchmark+extra-risk")
