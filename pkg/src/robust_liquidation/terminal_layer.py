"""Near-horizon layer by Picard iteration on the mild formulation.

Writing ``w = eta + u / tau`` turns the rescaled equation into
``du/dtau = L u + F0(tau, y, u, Du)`` with ``u(0) = 0``.  The layer solution
is the fixed point of ``Gamma[u](t) = int_0^t P_(t-s) F0(s, u(s), Du(s)) ds``.
The semigroup is applied by Crank-Nicolson steps, so every time node costs
one implicit diffusion solve per iteration.  Iterates are compared in the
weighted norm ``sup |u| / tau^(1+eps) + sup |Du| / tau^(1/2+eps)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import beta as beta_fn

from .grid import SpaceTimeGrid
from .model import DomainError, FactorModel, RobustParams
from .pde_solver import F0_closed_form
from .stepper import LinearSolver, SolverError, SpatialOperator

__all__ = ["ContractionError", "LayerConstants", "TerminalLayerSolution", "layer_constants",
           "semigroup_gradient_constant", "sigma_norm", "terminal_layer"]


class ContractionError(SolverError):
    """Successive Picard updates failed to halve; carries the iteration trace."""

    def __init__(self, message: str, trace: list):
        super().__init__(message)
        self.trace = trace


def _layer_eps(params: RobustParams) -> float:
    return params.epsilon if params.theta > 0 else 1.0


def sigma_norm(tau: np.ndarray, u: np.ndarray, Du: np.ndarray, eps: float) -> float:
    """Weighted sup norm over positive maturities; ``u`` is ``(n_t, N)`` and ``Du`` ``(n_t, N, d)``."""
    pos = tau > 0
    t = tau[pos]
    a = np.max(np.abs(u[pos]), axis=1) / t ** (1 + eps)
    b = np.max(np.linalg.norm(Du[pos], axis=2), axis=1) / t ** (0.5 + eps)
    return float(np.max(a) + np.max(b))


def semigroup_gradient_constant(model: FactorModel, grid: SpaceTimeGrid, n_times: int = 17) -> float:
    """Measured constant ``M`` in ``|D P_t f| <= M t^(-1/2) sup|f|``.

    Step functions across the box centre, one per axis, are propagated by
    implicit Euler steps; ``M`` is the largest ``sqrt(t) sup|D P_t f| / sup|f|``
    seen for ``t`` between a few squared mesh widths and one.
    """
    op = SpatialOperator(model, grid)
    h = float(np.max(op.h))
    times = np.geomspace(4 * h * h, 1.0, n_times)
    M = 0.0
    for k in range(grid.dim):
        mid = 0.5 * (grid.box[k][0] + grid.box[k][1])
        f = np.where(op.points[:, k] >= mid, 1.0, -1.0)
        x = f.copy()
        t_prev = 0.0
        for t in times:
            # a few substeps per interval keep implicit Euler close to the semigroup
            for dt in np.diff(np.linspace(t_prev, t, 5)):
                solver = LinearSolver(op, "direct")
                solver.prepare(dt, np.zeros(op.size))
                x = solver.solve(x)
            t_prev = t
            M = max(M, math.sqrt(t) * float(np.max(np.linalg.norm(op.gradient(x), axis=1))))
    return M


@dataclass
class LayerConstants:
    M: float
    B0: float
    R: float
    delta_max: float
    eps: float
    data_norm: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def layer_constants(model: FactorModel, params: RobustParams, grid: SpaceTimeGrid,
                    M: float | None = None) -> LayerConstants:
    """Ball radius ``R`` and the largest admissible layer width.

    ``R = 2 (1 + M B(1+eps, 1/2)) (sup|L eta| + sup|lambda| + sup|sigma^T D eta|^(alpha+1))``
    with sups over the grid nodes, and the width bound is
    ``min((c_lower / R)^(1/(eps - 1/2)), 1)``.
    """
    eps = _layer_eps(params)
    if eps <= 0.5:
        raise DomainError("the contraction window needs eps > 1/2 (beta > 2 alpha)")
    pts = grid.points()
    if M is None:
        M = semigroup_gradient_constant(model, grid)
    B0 = float(beta_fn(1 + eps, 0.5))
    Leta = float(np.max(np.abs(model.generator_eta(pts))))
    lam = float(np.max(np.abs(model.lam.value(pts))))
    sDeta = np.linalg.norm(np.einsum("nij,ni->nj", model.sigma(pts), model.eta.grad(pts)), axis=1)
    data = Leta + lam + float(np.max(sDeta)) ** (params.alpha + 1)
    R = 2 * (1 + M * B0) * data
    delta_max = 1.0 if R == 0 else min((model.c_lower / R) ** (1 / (eps - 0.5)), 1.0)
    return LayerConstants(float(M), B0, float(R), float(delta_max), eps, data)


@dataclass
class TerminalLayerSolution:
    """Layer fixed point on increasing maturities ``tau`` (starting at 0)."""

    tau: np.ndarray
    u: np.ndarray
    Du: np.ndarray
    grid: SpaceTimeGrid
    norm: float
    R: float
    delta: float
    iterations: int
    trace: list
    contraction_ratios: list
    certified: bool
    meta: dict = field(default_factory=dict)

    @property
    def max_ratio(self) -> float:
        return max(self.contraction_ratios) if self.contraction_ratios else 0.0

    def w(self, k: int, eta: np.ndarray) -> np.ndarray:
        """Rescaled value ``eta + u / tau`` at node ``k > 0``."""
        eta = np.asarray(eta, dtype=float)
        return eta + self.u[k].reshape(eta.shape) / self.tau[k]


def terminal_layer(model: FactorModel, params: RobustParams, layer_grid: SpaceTimeGrid, R: float,
                   delta: float, tol: float = 1e-12, max_iter: int = 60, linear: str = "adi",
                   noise_floor: float = 1e-7) -> TerminalLayerSolution:
    """Fixed point of the mild layer map on ``[0, delta]``.

    The maturities are ``0`` followed by the grid maturities up to ``delta``.
    Iteration stops once the weighted-norm update drops below
    ``tol * max(1, norm)``, or once updates below ``noise_floor`` times the
    norm stop decreasing (the round-off floor, which the weights amplify at
    tiny maturities).  Above that floor every ratio of successive updates is
    recorded and a ratio above one half is a contraction failure.

    Raises:
        DomainError: if ``delta`` exceeds the contraction window for ``R`` or
            an iterate leaves the ball ``|u / (tau eta)| <= 1``.
        ContractionError: if the updates do not halve or ``max_iter`` is hit.
    """
    eps = _layer_eps(params)
    if eps <= 0.5:
        raise DomainError("the contraction window needs eps > 1/2 (beta > 2 alpha)")
    if R <= 0:
        raise DomainError("R must be positive")
    window = min((model.c_lower / R) ** (1 / (eps - 0.5)), 1.0)
    if not 0 < delta <= window * (1 + 1e-12):
        raise DomainError(f"delta={delta:.6g} outside the contraction window (0, {window:.6g}]")
    grid_tau = layer_grid.tau[::-1]
    inside = grid_tau[grid_tau <= delta * (1 + 1e-12)]
    if inside.size < 2:
        raise DomainError("layer grid has fewer than two maturities inside [0, delta]")
    tau = np.concatenate([[0.0], inside])
    op = SpatialOperator(model, layer_grid)
    pts = op.points
    Leta = model.generator_eta(pts)
    Deta = model.eta.grad(pts)
    n_t, N, d = tau.size, op.size, layer_grid.dim
    solvers = []
    for j in range(1, n_t):
        s = LinearSolver(op, linear)
        s.prepare(0.5 * (tau[j] - tau[j - 1]), np.zeros(N))
        solvers.append(s)
    A = op.matrix

    def gamma_map(U, DU):
        f = np.zeros((n_t, N))
        for j in range(1, n_t):
            f[j] = F0_closed_form(tau[j], pts, U[j], DU[j], model, params, Leta=Leta, Deta=Deta)
        G = np.zeros((n_t, N))
        DG = np.zeros((n_t, N, d))
        for j in range(1, n_t):
            half = 0.5 * (tau[j] - tau[j - 1])
            rhs = G[j - 1] + half * (A @ G[j - 1]) + half * (f[j - 1] + f[j])
            G[j] = solvers[j - 1].solve(rhs)
            DG[j] = op.gradient(G[j])
        return G, DG

    U = np.zeros((n_t, N))
    DU = np.zeros((n_t, N, d))
    trace, ratios = [], []
    converged = False
    for it in range(1, max_iter + 1):
        G, DG = gamma_map(U, DU)
        upd = sigma_norm(tau, G - U, DG - DU, eps)
        norm = sigma_norm(tau, G, DG, eps)
        trace.append(upd)
        U, DU = G, DG
        if upd <= tol * max(1.0, norm):
            converged = True
            break
        if len(trace) >= 2:
            ratio = upd / trace[-2]
            if trace[-2] > noise_floor * max(1.0, norm):
                ratios.append(ratio)
                if ratio > 0.5:
                    raise ContractionError(f"Picard update ratio {ratio:.3g} > 1/2 at iteration {it}", trace)
            elif ratio > 0.5:
                # updates have reached the round-off floor of the weighted norm
                converged = True
                break
    if not converged:
        raise ContractionError(f"no convergence in {max_iter} Picard iterations", trace)
    norm = sigma_norm(tau, U, DU, eps)
    shape = (n_t,) + op.shape
    return TerminalLayerSolution(tau, U.reshape(shape), DU.reshape(shape[:1] + (N, d)), layer_grid, norm,
                                 float(R), float(delta), it, trace, ratios, bool(norm <= R),
                                 meta={"eps": eps, "window": window, "linear": linear, "tol": tol})
