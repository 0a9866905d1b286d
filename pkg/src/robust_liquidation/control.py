"""Feedback controls, path simulation and Monte Carlo cost estimation.

Paths run on ``[t0, T - h_end]``.  The factor follows an Euler-Maruyama
scheme with drift ``b`` (reference measure) or ``b + sigma vartheta``
(least-favourable measure).  The position uses the exact exponential formula
``X_{j+1} = X_j exp(-gamma int ratio / tau dtau)`` with the liquidation ratio
``(w / eta)^beta`` integrated by the trapezoid rule in ``log tau``.  The last
leg on ``[T - h_end, T]`` is closed analytically with frozen coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import DomainError, FactorModel, RobustParams, as_points
from .pde_solver import ValueSolution, maximiser_from_sq
from .rng import block_generator, map_blocks, mean_and_stderr
from .sampling import SliceReader, reflect

__all__ = [
    "PathBundle", "CostEstimate", "SaddleReport", "optimal_xi", "optimal_vartheta", "path_tau_grid",
    "simulate", "estimate_cost", "saddle_check", "residual_costs",
]

MEASURES = ("reference", "worst-case")


# ---------------------------------------------------------------------------
# Pointwise feedback
# ---------------------------------------------------------------------------


def optimal_xi(s: float, y, x: float, sol: ValueSolution, model: FactorModel, params: RobustParams):
    """Optimal trading rate ``(v/eta)^beta x``.

    Raises:
        OutsideGridError: if ``(s, y)`` is not covered by ``sol``.
    """
    pts, single = as_points(y, model.dim)
    tau = params.T - s
    if tau <= 0:
        raise DomainError("the feedback rate is only defined before the horizon")
    ratio = (sol.w_at(s, pts) / model.eta.value(pts)) ** params.beta / tau
    out = ratio * x
    return float(out[0]) if single else out


def optimal_vartheta(s: float, y, sol: ValueSolution, model: FactorModel, params: RobustParams):
    """Least-favourable density generator ``theta^alpha (1+alpha)|q|^(alpha-1) q`` with ``q = sigma^T Dv``."""
    pts, single = as_points(y, model.dim)
    if params.theta > 0:
        params.require_regular("the least-favourable control")
    Dv = sol.Dv(s, pts)
    q = np.einsum("nij,ni->nj", model.sigma(pts), Dv)
    out = maximiser_from_sq(q, params)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Paths
# ---------------------------------------------------------------------------


@dataclass
class PathBundle:
    """A batch of simulated paths on a common time grid.

    ``X`` and ``xi`` have shape ``(n_paths, n_times)``.  ``Y`` (``(n_paths,
    n_times, d)``) and ``vartheta`` (``(n_paths, n_times, n)``) are kept only
    when requested.  The running cost is split into per-path integrals
    ``impact``, ``risk`` and ``penalty`` including the analytic final leg.
    """

    times: np.ndarray
    X: np.ndarray
    xi: np.ndarray
    logweight: np.ndarray
    impact: np.ndarray
    risk: np.ndarray
    penalty: np.ndarray
    reflected: np.ndarray
    measure: str
    theta: float
    Y: np.ndarray | None = None
    vartheta: np.ndarray | None = None
    max_abs_vartheta: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return int(self.X.shape[0])

    @property
    def running_cost(self) -> np.ndarray:
        return self.impact + self.risk - self.penalty

    def X_at(self, t: float) -> np.ndarray:
        """Positions at a simulated time node."""
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-12 * max(1.0, abs(t)):
            raise DomainError(f"time {t} is not a simulation node")
        return self.X[:, k]


def path_tau_grid(sol_tau_desc: np.ndarray, tau0: float, h_end: float, n_steps: int,
                  extra_tau=()) -> np.ndarray:
    """Decreasing maturities from ``tau0`` to ``h_end``.

    Solver nodes inside the range are kept so the solution is mostly read
    without time interpolation; intervals longer than ``(tau0 - h_end) /
    n_steps`` are split uniformly.
    """
    if n_steps < 10:
        raise DomainError("n_steps must be at least 10")
    if not 0 < h_end < tau0:
        raise DomainError(f"need 0 < h_end < T - t0, got h_end={h_end}, T - t0={tau0}")
    inside = sol_tau_desc[(sol_tau_desc < tau0 * (1 - 1e-12)) & (sol_tau_desc > h_end * (1 + 1e-12))]
    extra = [e for e in extra_tau if h_end < e < tau0]
    nodes = np.unique(np.concatenate([[tau0, h_end], inside, extra]))[::-1]
    cap = (tau0 - h_end) / n_steps
    out = [nodes[:1]]
    for hi, lo in zip(nodes[:-1], nodes[1:]):
        k = max(1, int(math.ceil((hi - lo) / cap - 1e-9)))
        out.append(hi - (hi - lo) * np.arange(1, k + 1) / k)
    grid = np.concatenate(out)
    grid[-1] = h_end
    return grid


class _Local:
    """Feedback quantities at one maturity for a batch of factor values."""

    def __init__(self, reader: SliceReader, model: FactorModel, params: RobustParams):
        self.reader = reader
        self.model = model
        self.params = params

    def __call__(self, tau: float, Y: np.ndarray):
        w, Dw = self.reader.at(tau, Y)
        eta = self.model.eta.value(Y)
        ratio = (w / eta) ** self.params.beta
        q = np.einsum("nij,ni->nj", self.model.sigma(Y), Dw) * tau ** (-1 / self.params.beta)
        th = maximiser_from_sq(q, self.params)
        return ratio, th, eta, self.model.lam.value(Y)


def _block(sol, model, params, tau_path, y0, x0, measure, xi_scale, th_scale, h_end, store,
           seed, stream, block, n):
    p, m = params.p, params.m
    a_cost = params.a
    theta = params.theta
    reader = SliceReader(sol)
    local = _Local(reader, model, params)
    rng = block_generator(seed, stream, block)
    S = model.vol.S
    n_bm = S.shape[1]
    n_t = tau_path.size
    Y = np.tile(np.asarray(y0, dtype=float), (n, 1))
    X = np.empty((n, n_t))
    xi = np.empty((n, n_t))
    X[:, 0] = x0
    Ys = np.empty((n, n_t, model.dim)) if store else None
    ths = np.empty((n, n_t, n_bm)) if store else None
    logw = np.zeros(n)
    impact = np.zeros(n)
    risk = np.zeros(n)
    penalty = np.zeros(n)
    reflected = np.zeros(n, dtype=bool)
    max_th = np.zeros(n)
    worst = measure == "worst-case"

    ratio, th, eta, lam = local(tau_path[0], Y)
    th = th_scale * th

    def integrands(k, ratio, th, eta, lam):
        xi[:, k] = xi_scale * ratio / tau_path[k] * X[:, k]
        absX_p = np.abs(X[:, k]) ** p
        imp = eta * np.abs(xi[:, k]) ** p
        rsk = lam * absX_p
        pen = (a_cost / theta) * np.linalg.norm(th, axis=1) ** m * absX_p if theta > 0 else np.zeros(n)
        return imp, rsk, pen

    cur = integrands(0, ratio, th, eta, lam)
    if store:
        Ys[:, 0] = Y
        ths[:, 0] = th
    max_th = np.maximum(max_th, np.linalg.norm(th, axis=1))
    for j in range(1, n_t):
        dt = tau_path[j - 1] - tau_path[j]
        Z = rng.standard_normal((n, n_bm))
        sdW = math.sqrt(dt) * Z
        drift = model.drift.value(Y)
        if worst:
            drift = drift + th @ S.T
        else:
            logw += np.sum(th * sdW, axis=1) - 0.5 * np.sum(th * th, axis=1) * dt
        Y = Y + drift * dt + sdW @ S.T
        Y, hit = reflect(Y, sol.grid.box)
        reflected |= hit
        ratio_new, th_new, eta_new, lam_new = local(tau_path[j], Y)
        th_new = th_scale * th_new
        X[:, j] = X[:, j - 1] * np.exp(-xi_scale * 0.5 * (ratio + ratio_new)
                                       * math.log(tau_path[j - 1] / tau_path[j]))
        new = integrands(j, ratio_new, th_new, eta_new, lam_new)
        impact += 0.5 * (cur[0] + new[0]) * dt
        risk += 0.5 * (cur[1] + new[1]) * dt
        penalty += 0.5 * (cur[2] + new[2]) * dt
        ratio, th, eta, lam, cur = ratio_new, th_new, eta_new, lam_new, new
        max_th = np.maximum(max_th, np.linalg.norm(th, axis=1))
        if store:
            Ys[:, j] = Y
            ths[:, j] = th
    # final leg: with frozen coefficients the rate k X / tau gives X = X_e (tau/h)^k
    kk = xi_scale * ratio
    absX_p = np.abs(X[:, -1]) ** p
    impact += eta * kk**p * absX_p * h_end ** (1 - p) / ((kk - 1) * p + 1)
    risk += lam * absX_p * h_end / (kk * p + 1)
    if theta > 0:
        penalty += (a_cost / theta) * np.linalg.norm(th, axis=1) ** m * absX_p * h_end / (kk * p + 1)
    return X, xi, logw, impact, risk, penalty, reflected, Ys, ths, max_th


def simulate(model: FactorModel, params: RobustParams, sol: ValueSolution, t0: float, y0, x0: float,
             measure: str = "worst-case", n_paths: int = 10_000, n_steps: int = 200, seed: int = 0,
             xi_scale: float = 1.0, vartheta_scale: float = 1.0, h_end: float | None = None,
             store_paths: bool = False, threads: int = 1, stream: int = 0, extra_tau=(),
             max_reflected: float = 0.01) -> PathBundle:
    """Simulate the feedback strategy under the reference or least-favourable measure.

    ``xi_scale`` and ``vartheta_scale`` multiply the optimal feedbacks; the
    same ``seed`` and ``stream`` give the same Brownian increments, so runs
    with different scales use common random numbers.

    Raises:
        DomainError: on invalid inputs, a time range outside the solution,
            an infeasible rate scaling or too many reflected paths.
    """
    if measure not in MEASURES:
        raise DomainError(f"measure must be one of {MEASURES}, got {measure!r}")
    if not math.isfinite(x0):
        raise DomainError("x0 must be finite")
    if n_paths < 1:
        raise DomainError("n_paths must be positive")
    if params.theta > 0:
        params.require_regular("the least-favourable control")
    if xi_scale <= 1 - 1 / params.p:
        raise DomainError(f"rate scaling {xi_scale} leaves infinite impact cost at the horizon "
                          f"(need > {1 - 1 / params.p:.4g})")
    T = params.T
    tau0 = T - t0
    h_end = T * 1e-4 if h_end is None else h_end
    if tau0 > sol.tau[0] * (1 + 1e-12) or h_end < sol.tau[-1] * (1 - 1e-12):
        raise DomainError(f"solution covers maturities [{sol.tau[-1]:g}, {sol.tau[0]:g}], "
                          f"simulation needs [{h_end:g}, {tau0:g}]")
    y0 = np.asarray(y0, dtype=float).reshape(model.dim)
    box = sol.grid.box
    if any(not lo <= y0[k] <= hi for k, (lo, hi) in enumerate(box)):
        raise DomainError(f"start point {y0.tolist()} outside the box")
    tau_path = path_tau_grid(sol.tau, tau0, h_end, n_steps, extra_tau)
    parts = map_blocks(lambda j, n: _block(sol, model, params, tau_path, y0, x0, measure, xi_scale,
                                           vartheta_scale, h_end, store_paths, seed, stream, j, n),
                       n_paths, threads)
    X, xi, logw, imp, rsk, pen, refl, Ys, ths, max_th = (
        np.concatenate([q[i] for q in parts]) if parts[0][i] is not None else None for i in range(10))
    frac = float(np.mean(refl))
    if frac > max_reflected:
        raise DomainError(f"{100 * frac:.2f}% of paths hit the box edge")
    return PathBundle(times=T - tau_path, X=X, xi=xi, logweight=logw, impact=imp, risk=rsk, penalty=pen,
                      reflected=refl, measure=measure, theta=params.theta, Y=Ys, vartheta=ths,
                      max_abs_vartheta=max_th,
                      meta={"t0": float(t0), "y0": y0.tolist(), "x0": float(x0), "n_paths": int(n_paths),
                            "n_steps": int(tau_path.size - 1), "seed": int(seed), "stream": int(stream),
                            "h_end": float(h_end), "xi_scale": float(xi_scale),
                            "vartheta_scale": float(vartheta_scale), "reflected_fraction": frac})


# ---------------------------------------------------------------------------
# Costs
# ---------------------------------------------------------------------------


@dataclass
class CostEstimate:
    """Sample mean and standard error of the penalised cost.

    ``per_path`` holds ``impact + risk - penalty`` path by path; the
    component means are those of the matching per-path arrays.
    """

    mean: float
    stderr: float
    n_paths: int
    components: dict
    per_path: np.ndarray
    per_path_components: dict

    def as_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "n_paths": self.n_paths,
                "components": dict(self.components)}


def estimate_cost(paths: PathBundle, params: RobustParams, under: str = "direct") -> CostEstimate:
    """Estimate the penalised cost from simulated paths.

    ``direct`` averages the path integrals of a least-favourable-measure
    simulation; ``reweighted`` multiplies reference-measure path integrals by
    their likelihood weights.

    Raises:
        DomainError: for mismatched measures or a nonzero density generator
            when ``theta`` is zero.
    """
    if under not in ("direct", "reweighted"):
        raise DomainError(f"under must be 'direct' or 'reweighted', got {under!r}")
    if under == "reweighted" and paths.measure != "reference":
        raise DomainError("reweighted estimates need reference-measure paths")
    if params.theta == 0 and paths.max_abs_vartheta is not None and np.any(paths.max_abs_vartheta > 0):
        raise DomainError("theta is zero but the paths carry a nonzero density generator")
    if under == "reweighted":
        wgt = np.exp(paths.logweight)
        comp = {"impact": wgt * paths.impact, "risk": wgt * paths.risk, "penalty": wgt * paths.penalty}
    else:
        comp = {"impact": paths.impact.copy(), "risk": paths.risk.copy(), "penalty": paths.penalty.copy()}
    total = comp["impact"] + comp["risk"] - comp["penalty"]
    mean, se = mean_and_stderr(total)
    return CostEstimate(mean, se, paths.n_paths, {k: mean_and_stderr(v)[0] for k, v in comp.items()},
                        total, comp)


def residual_costs(paths: PathBundle, sol: ValueSolution, params: RobustParams, times) -> np.ndarray:
    """Mean of ``v(s, Y_s)|X_s|^p`` at the given simulation nodes (needs stored paths)."""
    if paths.Y is None:
        raise DomainError("residual costs need stored factor paths")
    reader = SliceReader(sol)
    out = []
    for s in times:
        k = int(np.argmin(np.abs(paths.times - s)))
        tau = params.T - paths.times[k]
        w, _ = reader.at(tau, paths.Y[:, k])
        val = w * tau ** (-1 / params.beta) * np.abs(paths.X[:, k]) ** params.p
        if paths.measure == "reference":
            val = val * np.exp(paths.logweight)
        out.append(float(np.mean(val)))
    return np.array(out)


# ---------------------------------------------------------------------------
# Saddle point check
# ---------------------------------------------------------------------------


@dataclass
class SaddleReport:
    value_grid: float
    optimal: dict
    xi_perturbations: list
    vartheta_perturbations: list
    value_match: bool
    value_z: float
    saddle_ok: bool
    meta: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"value_grid": self.value_grid, "optimal": self.optimal,
                "xi_perturbations": self.xi_perturbations,
                "vartheta_perturbations": self.vartheta_perturbations, "value_match": self.value_match,
                "value_z": self.value_z, "saddle_ok": self.saddle_ok, "meta": self.meta}


def _paired(base: CostEstimate, other: CostEstimate) -> tuple[float, float]:
    """Mean and standard error of ``other - base`` from paired per-path costs."""
    return mean_and_stderr(other.per_path - base.per_path)


def saddle_check(model: FactorModel, params: RobustParams, sol: ValueSolution, t0: float, y0, x0: float,
                 gammas=(0.8, 1.25), rhos=(0.5, 1.5), n_paths: int = 10_000, seed: int = 0,
                 n_steps: int = 200, threads: int = 1, z_saddle: float = 2.0,
                 z_value: float = 3.0, value_rtol: float = 1e-4) -> SaddleReport:
    """Compare the optimal pair with scaled rates and scaled density generators.

    All runs simulate under the measure induced by their density generator
    with the same Brownian increments, so the differences are paired.  A
    scaling ``gamma`` of the rate must raise the cost and a scaling ``rho`` of
    the generator must lower it, each by more than ``z_saddle`` paired
    standard errors.  For ``theta = 0`` the generator side is skipped.

    The value match accepts ``|J - v x^p| <= z_value * stderr + value_rtol *
    v x^p``; the relative allowance covers the time discretisation when the
    costs are (nearly) deterministic.  ``value_z`` reports the pure
    Monte Carlo z-score.

    Raises:
        DomainError: for an infeasible rate scaling or invalid inputs.
    """
    if any(g == 1.0 for g in gammas) or any(r == 1.0 for r in rhos):
        raise DomainError("perturbation scales must differ from 1")
    if n_paths < 2:
        raise DomainError("need at least two paths")
    kw = dict(measure="worst-case", n_paths=n_paths, n_steps=n_steps, seed=seed, threads=threads)
    base = estimate_cost(simulate(model, params, sol, t0, y0, x0, **kw), params)
    v_grid = float(sol.v(t0, np.asarray(y0, dtype=float))) * abs(x0) ** params.p
    z = (base.mean - v_grid) / base.stderr if base.stderr > 0 else (0.0 if base.mean == v_grid else math.inf)
    xi_rows = []
    for g in gammas:
        est = estimate_cost(simulate(model, params, sol, t0, y0, x0, xi_scale=g, **kw), params)
        d, se = _paired(base, est)
        xi_rows.append({"gamma": g, "mean": est.mean, "stderr": est.stderr, "diff": d, "diff_stderr": se,
                        "ok": bool(d > z_saddle * se)})
    th_rows = []
    if params.theta > 0:
        for r in rhos:
            est = estimate_cost(simulate(model, params, sol, t0, y0, x0, vartheta_scale=r, **kw), params)
            d, se = _paired(base, est)
            th_rows.append({"rho": r, "mean": est.mean, "stderr": est.stderr, "diff": d, "diff_stderr": se,
                            "ok": bool(-d > z_saddle * se)})
    ok = all(r["ok"] for r in xi_rows + th_rows)
    match = abs(base.mean - v_grid) <= z_value * base.stderr + value_rtol * abs(v_grid)
    return SaddleReport(v_grid, base.as_dict(), xi_rows, th_rows, bool(match), float(z), ok,
                        meta={"t0": t0, "y0": np.asarray(y0, dtype=float).tolist(), "x0": x0,
                              "n_paths": n_paths, "seed": seed, "n_steps": n_steps})
