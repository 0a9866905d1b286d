"""First-order expansion of the value in the ambiguity level.

For small ``theta`` the rescaled value behaves like ``w0 + theta^alpha w1``
where ``w0`` is the benchmark (no ambiguity) solution and ``w1`` solves the
linear equation

    dw1/dtau = L w1 + tau^(-alpha/beta) |sigma^T Dw0|^(1+alpha)
               + (1 - (beta+1) (w0/eta)^beta) / (beta tau) * w1,   w1(0) = 0.

The grid solver reuses the IMEX BDF2 march of the value solver so that ``w1``
is the exact derivative of the discrete scheme in ``theta^alpha``.  A
Feynman-Kac Monte Carlo estimator gives an independent check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bounds import compute_constants
from .grid import SpaceTimeGrid, time_weights
from .model import DomainError, FactorModel, RobustParams, as_points
from .pde_solver import (SolverOptions, ValueSolution, hamiltonian_H, solve_benchmark,
                         solve_singular, solve_with_extra_risk)
from .rng import block_generator, concat, map_blocks, mean_and_stderr
from .sampling import SliceReader, mc_tau_grid, reflect
from .stepper import SolverError, SpatialOperator, bdf2_march


@dataclass
class CorrectionSolution:
    """First-order correction ``w1`` (gridded, or at evaluation points for Monte Carlo).

    For ``method="grid"``, ``w1`` has the value-grid layout ``(n_t, *space)``.
    For ``method="feynman-kac"``, ``w1`` and ``stderr`` are 1-d arrays over
    ``eval_points``.
    """

    w1: np.ndarray
    v1: np.ndarray
    method: str
    grid: SpaceTimeGrid | None = None
    eval_points: list | None = None
    stderr: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def w1_at_node(self, k: int, j) -> float:
        return float(self.w1[k].reshape(-1)[j])


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


def driver_f1(t: float, y, v, bench: ValueSolution, model: FactorModel, params: RobustParams):
    """Driver of the correction equation in calendar time.

    ``|sigma^T Dv0|^(1+alpha) tau^(1/beta) - (beta+1) v0^beta / (beta eta^beta) v + v / (beta tau)``
    with ``v0``, ``Dv0`` read from the benchmark solution.
    """
    tau = params.T - t
    if tau <= 0:
        raise DomainError("driver is singular at the horizon")
    pts, single = as_points(y, model.dim)
    b, a = params.beta, params.alpha
    v0 = np.atleast_1d(bench.v(t, pts))
    Dv0 = bench.Dv(t, pts)
    s = np.linalg.norm(np.einsum("nij,ni->nj", model.sigma(pts), Dv0), axis=1)
    eta = model.eta.value(pts)
    v = np.asarray(v, dtype=float)
    out = s ** (1 + a) * tau ** (1 / b) - (b + 1) * v0**b / (b * eta**b) * v + v / (b * tau)
    return float(out[0]) if single and np.ndim(v) == 0 else out


# ---------------------------------------------------------------------------
# Grid solver
# ---------------------------------------------------------------------------


def _source_density(model, pts, Dw, alpha):
    s = np.linalg.norm(np.einsum("nij,ni->nj", model.sigma(pts), Dw), axis=1)
    return s ** (1 + alpha)


def solve_w1_grid(bench: ValueSolution, model: FactorModel, params: RobustParams,
                  grid: SpaceTimeGrid | None = None, opts: SolverOptions | None = None,
                  neg_tol: float = 1e-10) -> CorrectionSolution:
    """Solve the linear correction equation on the benchmark grid.

    Raises:
        DomainError: if ``beta <= 2 alpha`` or ``grid`` differs from the benchmark grid.
        SolverError: if ``w1`` drops below ``-neg_tol``.
    """
    params.require_regular("the first-order correction")
    if grid is not None and (grid.shape != bench.grid.shape
                             or not np.array_equal(grid.t_nodes, bench.grid.t_nodes)):
        raise DomainError("the correction is solved on the benchmark grid")
    grid = bench.grid
    opts = opts or SolverOptions()
    op = SpatialOperator(model, grid)
    pts = op.points
    eta = model.eta.value(pts)
    b, a = params.beta, params.alpha
    ab = a / b
    tau = grid.tau[::-1].copy()
    n_t = tau.size
    W0 = bench.w[::-1].reshape(n_t, -1)

    def source(n, t, w_star):
        om = (tau[n] - tau[n - 1]) / (tau[n - 1] - tau[n - 2])
        w0_star = (1 + om) * W0[n - 1] - om * W0[n - 2]
        return t ** (-ab) * _source_density(model, pts, op.gradient(w0_star), a)

    def reaction(n, t, w):
        c = (1 - (b + 1) * (W0[n] / eta) ** b) / (b * t)
        return c * w, c

    g_eta = _source_density(model, pts, op.gradient(eta), a)
    first = [t ** (1 - ab) * g_eta / (2 - ab) for t in tau[:2]]
    res = bdf2_march(op, tau, first[0], first[1], source, reaction, opts.linear,
                     opts.newton_tol, opts.max_newton, positive=False)
    W1 = res.W[::-1].reshape((n_t,) + grid.shape)
    if np.min(W1) < -neg_tol:
        k, j = np.unravel_index(np.argmin(W1.reshape(n_t, -1)), (n_t, op.size))
        raise SolverError(f"w1 negative ({W1.reshape(n_t, -1)[k, j]:.3e}) at t={grid.t_nodes[k]:.6g}, "
                          f"y={pts[j].tolist()}")
    tau_t = grid.tau.reshape((-1,) + (1,) * grid.dim)
    ratio = W1 / tau_t ** (1 - ab)
    meta = {
        "C1": float(np.max(ratio)),
        "min_w1": float(np.min(W1)),
        "lte_max": float(np.max(res.lte)),
        "grid_tolerance": float(np.sum(res.lte)),
        "lte_cumulative": np.cumsum(res.lte)[::-1],
    }
    return CorrectionSolution(W1, W1 / tau_t ** (1 / b), "grid", grid=grid, meta=meta)


def vanishing_rate(corr: CorrectionSolution, ks=range(6, 14)) -> float:
    """Fitted exponent of ``sup |w1|`` at dyadic maturities."""
    g = corr.grid
    tau = np.array([g.T * 2.0**-k for k in ks])
    tau = tau[tau >= g.tau_min]
    vals = []
    for s in tau:
        k, f = time_weights(g.tau, s)
        vals.append(np.max(np.abs((1 - f) * corr.w1[k] + f * corr.w1[k + 1])))
    vals = np.array(vals)
    if np.all(vals == 0):
        return math.inf
    return float(np.polyfit(np.log(tau), np.log(vals), 1)[0])


# ---------------------------------------------------------------------------
# Feynman-Kac estimator
# ---------------------------------------------------------------------------


def _fk_block(bench, model, params, tau_path, y0, seed, stream, block, n):
    """Per-path Feynman-Kac integrals for one block of paths."""
    b, a = params.beta, params.alpha
    ab = a / b
    reader = SliceReader(bench)
    box = bench.grid.box
    rng = block_generator(seed, stream, block)
    d = model.dim
    Y = np.tile(np.asarray(y0, dtype=float), (n, 1))
    S = model.vol.S
    log_phi = np.zeros(n)
    acc = np.zeros(n)
    reflected = np.zeros(n, dtype=bool)

    def local(tau, Y):
        w0, Dw0 = reader.at(tau, Y)
        eta = model.eta.value(Y)
        k_tilde = (1 - (b + 1) * (w0 / eta) ** b) / b
        g = np.linalg.norm(Dw0 @ S, axis=1) ** (1 + a)
        return k_tilde, g

    k_prev, g_prev = local(tau_path[0], Y)
    u_prev = tau_path[0] ** (1 - ab)
    for j in range(1, tau_path.size):
        dt = tau_path[j - 1] - tau_path[j]
        Z = rng.standard_normal((n, S.shape[1]))
        Y = Y + model.drift.value(Y) * dt + math.sqrt(dt) * (Z @ S.T)
        Y, hit = reflect(Y, box)
        reflected |= hit
        k_new, g_new = local(tau_path[j], Y)
        phi_prev = np.exp(log_phi)
        log_phi = log_phi + 0.5 * (k_prev + k_new) * math.log(tau_path[j - 1] / tau_path[j])
        phi_new = np.exp(log_phi)
        u_new = tau_path[j] ** (1 - ab)
        # the source integrates tau^(-a/b) g d tau = g du / (1 - a/b) with u = tau^(1 - a/b)
        acc += 0.5 * (phi_prev * g_prev + phi_new * g_new) * (u_prev - u_new) / (1 - ab)
        k_prev, g_prev, u_prev = k_new, g_new, u_new
    # tail below the last node: w0 ~ eta, so phi ~ tau and the source is frozen
    acc += np.exp(log_phi) * g_prev * u_prev / (2 - ab)
    del d
    return acc, reflected


def solve_w1_feynman_kac(bench: ValueSolution, model: FactorModel, params: RobustParams, eval_points,
                         n_paths: int, seed: int, max_dt: float = 2.5e-3, stride: int = 2, threads: int = 1,
                         max_reflected: float = 0.01) -> CorrectionSolution:
    """Monte Carlo estimate of ``w1`` at ``(t, y)`` pairs.

    Each estimate averages, over Euler-Maruyama factor paths started at
    ``(t, y)``, the discounted source integral
    ``int_t^T Phi(t, s) tau_s^(-alpha/beta) |sigma^T Dw0(s, Y_s)|^(1+alpha) ds``
    with ``log Phi`` the integral of ``(1 - (beta+1)(w0/eta)^beta) / (beta tau)``.

    Raises:
        DomainError: if ``beta <= 2 alpha``, on bad inputs, or if more than
            ``max_reflected`` of the paths hit the box edge.
    """
    params.require_regular("the first-order correction")
    if n_paths < 2:
        raise DomainError("need at least two paths")
    T = params.T
    est, err, frac = [], [], []
    for i, (t, y) in enumerate(eval_points):
        tau0 = T - t
        if not bench.grid.tau_min < tau0 <= T:
            raise DomainError(f"evaluation time {t} outside the solved range")
        tau_path = mc_tau_grid(bench.tau, tau0, max_dt, stride)
        parts = map_blocks(lambda j, n: _fk_block(bench, model, params, tau_path, y, seed, i, j, n),
                           n_paths, threads)
        vals = concat([p[0] for p in parts])
        refl = concat([p[1] for p in parts])
        m, s = mean_and_stderr(vals)
        if not np.all(np.isfinite(vals)):
            raise DomainError(f"path blow-up at evaluation point {i}")
        est.append(m)
        err.append(s)
        frac.append(float(np.mean(refl)))
        if frac[-1] > max_reflected:
            raise DomainError(f"{100 * frac[-1]:.2f}% of paths hit the box edge at point {i}")
    est, err = np.array(est), np.array(err)
    taus = np.array([T - t for t, _ in eval_points])
    return CorrectionSolution(est, est / taus ** (1 / params.beta), "feynman-kac",
                              eval_points=list(eval_points), stderr=err,
                              meta={"reflected_fraction": frac, "n_paths": int(n_paths),
                                    "seed": int(seed), "max_dt": max_dt, "stride": stride})


# ---------------------------------------------------------------------------
# Expansion check and observational equivalence
# ---------------------------------------------------------------------------


@dataclass
class ExpansionConstants:
    C0_tilde: float
    C1_tilde: float
    c: float
    b: float
    L1: float
    L2: float
    theta_max: float

    def envelope(self, theta: float, params: RobustParams) -> float:
        L = max(abs(self.L1), abs(self.L2))
        return theta ** (2 * params.alpha) * L * (self.b * params.T ** (1 / params.beta) + 1)


def expansion_constants(model: FactorModel, params: RobustParams, bench: ValueSolution,
                        corr: CorrectionSolution, theta: float, delta0: float) -> ExpansionConstants:
    """Constants of the second-order sandwich, evaluated on the computed fields.

    Sups over the whole space are taken over grid nodes and times; the
    cross term of order ``theta^(4 alpha)`` in ``C1_tilde`` is dropped.
    """
    b, a, T = params.beta, params.alpha, params.T
    C, c_lo = model.c_upper, model.c_lower
    op = SpatialOperator(model, bench.grid)
    eta = model.eta.value(op.points)
    n_t = bench.grid.t_nodes.size
    C0 = C1 = 0.0
    for k in range(n_t):
        Dw0 = np.linalg.norm(bench.flat_Dw(k), axis=1)
        Dw1v = op.gradient(corr.w1[k].ravel())
        Dw1 = np.linalg.norm(Dw1v, axis=1)
        Dsum = np.linalg.norm(bench.flat_Dw(k) + theta**a * Dw1v, axis=1)
        C0 = max(C0, float(np.max(C**a * (Dw0**a + Dsum**a) * Dw1)))
        w0 = bench.flat_w(k)
        w1 = corr.w1[k].ravel()
        C1 = max(C1, float(np.max((b + 1) * w0 ** (b - 1) * w1**2 / (2 * eta**b))))
    c = min(0.5, (b + 1) * c_lo**b / (b * C**b))
    delta = T if not math.isfinite(delta0) else min(T, b / (2 * (b + 1)) * delta0)
    bb = C**b / ((b + 1) * c_lo**b * delta ** (1 / b))
    L1 = C0 * T ** (1 - a / b) / c
    L2 = -(C1 + C0 * T ** (1 - a / b)) / c
    if L2 == 0:
        theta_max = 1.0
    else:
        theta_max = min(1.0, (c_lo / (2 * abs(L2) * (T ** (1 / b) * bb + 1))) ** (1 / (2 * a)))
    return ExpansionConstants(C0, C1, c, bb, L1, L2, theta_max)


@dataclass
class ExpansionReport:
    thetas: list
    residual_norms: list
    fitted_order: float
    envelopes: list
    within_envelope: list
    above_threshold: list
    monotone: bool
    constants: list
    meta: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "thetas": list(self.thetas), "residual_norms": list(self.residual_norms),
            "fitted_order": self.fitted_order, "envelopes": list(self.envelopes),
            "within_envelope": list(self.within_envelope), "above_threshold": list(self.above_threshold),
            "monotone": self.monotone, "constants": [c.__dict__ for c in self.constants],
            **self.meta,
        }


def expansion_check(model: FactorModel, params_base: RobustParams, theta_list, grid: SpaceTimeGrid,
                    opts: SolverOptions | None = None, bench: ValueSolution | None = None,
                    corr: CorrectionSolution | None = None, sample_box_=None,
                    mono_tol: float = 0.0) -> ExpansionReport:
    """Residuals ``sup |w_theta - w0 - theta^alpha w1|`` and their order in ``theta``.

    Raises:
        DomainError: if fewer than two thetas are given or ``beta <= 2 alpha``.
    """
    thetas = sorted({float(t) for t in theta_list}, reverse=True)
    if len(thetas) < 2:
        raise DomainError("need at least two theta values for an order fit")
    if any(t <= 0 for t in thetas):
        raise DomainError("theta values must be positive")
    params_base.require_regular("the expansion check")
    bench = bench or solve_benchmark(model, params_base, grid, opts)
    corr = corr or solve_w1_grid(bench, model, params_base, opts=opts)
    box = sample_box_ or grid.box
    delta0 = compute_constants(model, params_base.with_theta(thetas[-1]), box).delta0
    a = params_base.alpha
    res, env, ok, flag, consts = [], [], [], [], []
    for th in thetas:
        sol = solve_singular(model, params_base.with_theta(th), grid, opts)
        r = float(np.max(np.abs(sol.w - bench.w - th**a * corr.w1)))
        k = expansion_constants(model, params_base.with_theta(th), bench, corr, th, delta0)
        res.append(r)
        env.append(k.envelope(th, params_base))
        ok.append(r <= env[-1])
        flag.append(th > k.theta_max)
        consts.append(k)
    res_arr = np.array(res)
    tiny = 1e-12 * max(1.0, float(np.max(np.abs(bench.w))))
    if np.all(res_arr <= tiny):
        # round-off residuals, e.g. constant liquidity where w1 vanishes
        order = math.inf
    else:
        order = float(np.polyfit(np.log(thetas), np.log(np.maximum(res_arr, 1e-300)), 1)[0])
    monotone = bool(np.all(np.diff(res_arr) <= mono_tol))
    return ExpansionReport(thetas, res, order, env, ok, flag, monotone, consts,
                           meta={"w1_C1": corr.meta.get("C1"), "two_alpha": 2 * a})


def equivalent_risk_refit(sol_theta: ValueSolution, model: FactorModel | None = None,
                          params: RobustParams | None = None, grid: SpaceTimeGrid | None = None,
                          opts: SolverOptions | None = None) -> dict:
    """Re-solve the benchmark with ``lambda + H(y, Dv_theta(t, y))``.

    The extra risk is read at the solver's own nodes.  Returns the refit,
    the sup-norm gap in ``w`` and the grid tolerance of ``sol_theta``.
    """
    model = model or sol_theta.model
    params = params or sol_theta.params
    if grid is not None and (grid.shape != sol_theta.grid.shape
                             or not np.array_equal(grid.t_nodes, sol_theta.grid.t_nodes)):
        raise DomainError("interpolation coverage: the refit uses the grid of sol_theta")
    grid = sol_theta.grid
    pts = grid.points()
    n_t = grid.t_nodes.size
    b, a = params.beta, params.alpha

    def extra(n, tau):
        k = n_t - 1 - n
        return hamiltonian_H(pts, sol_theta.flat_Dw(k), model, params) * tau ** (-(1 + a) / b)

    if params.theta == 0:
        refit = solve_benchmark(model, params, grid, opts)
    else:
        refit = solve_with_extra_risk(model, params, grid, extra, opts)
    gap = float(np.max(np.abs(refit.w - sol_theta.w)))
    return {"refit": refit, "sup_gap": gap, "grid_tolerance": sol_theta.meta["grid_tolerance"]}


def liquidation_rate_field(sol: ValueSolution) -> np.ndarray:
    """``v^beta / eta^beta`` at every node (the feedback rate per unit position)."""
    eta = sol.model.eta.value(sol.grid.points()).reshape(sol.grid.shape)
    return sol.v_nodes() ** sol.beta / eta**sol.beta


def rate_monotone_in_theta(sols: list[ValueSolution], tol: float = 0.0) -> dict:
    """Check the liquidation-rate field is nondecreasing along increasing theta."""
    sols = sorted(sols, key=lambda s: s.params.theta)
    worst = math.inf
    for lo, hi in zip(sols[:-1], sols[1:]):
        r_lo, r_hi = liquidation_rate_field(lo), liquidation_rate_field(hi)
        rel = (r_hi - r_lo) / np.maximum(r_lo, 1e-300)
        worst = min(worst, float(np.min(rel)))
    return {"ok": worst >= -tol, "worst_relative_increase": worst,
            "thetas": [s.params.theta for s in sols]}
