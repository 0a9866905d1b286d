"""Finite-difference generator and the variable-step IMEX BDF2 integrator.

The integrator advances ``dw/dtau = A w + g(tau, w) + S(tau, w*)`` where ``A``
is the discrete generator, ``g`` a pointwise stiff reaction handled by Newton's
method and ``S`` an explicit source evaluated at the extrapolated level ``w*``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import lapack

from .grid import SpaceTimeGrid
from .model import DomainError, FactorModel


class SolverError(RuntimeError):
    """Nonlinear solve failure, positivity loss or another step-level failure."""


class SpatialOperator:
    """Central-difference generator ``1/2 tr(sigma sigma^T D^2) + <b, D>`` on a box.

    At the box edge the ghost node is linearly extrapolated, which sets the
    second derivative to zero and leaves a one-sided first derivative.
    """

    def __init__(self, model: FactorModel, grid: SpaceTimeGrid):
        if model.dim != grid.dim:
            raise DomainError(f"model dim {model.dim} does not match grid dim {grid.dim}")
        if grid.dim == 2 and not model.is_diagonal:
            raise DomainError("the two-factor solver needs a diagonal sigma sigma^T")
        self.model = model
        self.grid = grid
        self.shape = grid.shape
        self.size = int(np.prod(self.shape))
        self.h = grid.spacing
        self.points = grid.points()
        drift = model.drift.value(self.points)
        diff = model.diffusion_matrix(self.points)
        self.bands = []
        for k in range(grid.dim):
            D = 0.5 * diff[:, k, k].reshape(self.shape)
            B = drift[:, k].reshape(self.shape)
            self.bands.append(self._axis_bands(D, B, k))
        self.axis_mats = [self._axis_matrix(k) for k in range(grid.dim)]
        self.matrix = sum(self.axis_mats[1:], self.axis_mats[0]).tocsr()

    def _axis_bands(self, D, B, k):
        h = self.h[k]
        lo = D / h**2 - B / (2 * h)
        di = -2 * D / h**2
        up = D / h**2 + B / (2 * h)
        lo, di, up = (np.moveaxis(a, k, 0).copy() for a in (lo, di, up))
        Bm = np.moveaxis(B, k, 0)
        lo[0], di[0], up[0] = 0.0, -Bm[0] / h, Bm[0] / h
        lo[-1], di[-1], up[-1] = -Bm[-1] / h, Bm[-1] / h, 0.0
        return lo, di, up

    def _axis_matrix(self, k):
        lo, di, up = (np.moveaxis(a, 0, k) for a in self.bands[k])
        idx = np.arange(self.size).reshape(self.shape)
        stride = int(np.prod(self.shape[k + 1:]))
        rows, cols, vals = [idx.ravel()], [idx.ravel()], [di.ravel()]
        inner = [slice(None)] * len(self.shape)
        inner[k] = slice(1, None)
        rows.append(idx[tuple(inner)].ravel())
        cols.append(idx[tuple(inner)].ravel() - stride)
        vals.append(lo[tuple(inner)].ravel())
        inner[k] = slice(None, -1)
        rows.append(idx[tuple(inner)].ravel())
        cols.append(idx[tuple(inner)].ravel() + stride)
        vals.append(up[tuple(inner)].ravel())
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.size, self.size))

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.matrix @ u

    def gradient(self, u: np.ndarray) -> np.ndarray:
        """Second-order differences (one-sided second order at edges); shape ``(N, d)``."""
        U = u.reshape(self.shape)
        if self.grid.dim == 1:
            return np.gradient(U, self.grid.y_nodes[0], edge_order=2).reshape(-1, 1)
        gs = np.gradient(U, *self.grid.y_nodes, edge_order=2)
        return np.stack([g.ravel() for g in gs], axis=1)


class LinearSolver:
    """Solves ``(I - gamma (A + diag(r))) x = b`` for the Newton updates."""

    def __init__(self, op: SpatialOperator, method: str = "direct", tol: float = 1e-13, max_iter: int = 200):
        if method not in ("direct", "adi"):
            raise ValueError(f"unknown linear solver {method!r}")
        self.op = op
        self.method = method
        self.tol = tol
        self.max_iter = max_iter
        self.eye = sp.identity(op.size, format="csr")
        self._lu = None

    def prepare(self, gamma: float, react: np.ndarray) -> None:
        self.gamma = gamma
        self.react = react
        self.J = (self.eye - gamma * (self.op.matrix + sp.diags(react))).tocsr()
        if self.method == "direct":
            self._lu = spla.splu(self.J.tocsc(), permc_spec="MMD_AT_PLUS_A")
            return
        self._lu = None
        # one tridiagonal factorisation per axis; lines along the axis are
        # laid out contiguously with zero coupling between lines
        half = 0.5 * react.reshape(self.op.shape)
        dim = self.op.grid.dim
        self._factors = []
        for k in range(dim):
            lo, di, up = self.op.bands[k]
            share = half if dim > 1 else 2 * half
            hk = np.moveaxis(share, k, 0)
            dl = np.moveaxis(-gamma * lo, 0, -1).ravel()[1:]
            du = np.moveaxis(-gamma * up, 0, -1).ravel()[:-1]
            d = np.moveaxis(1 - gamma * (di + hk), 0, -1).ravel()
            fac = lapack.dgttrf(dl, d, du)
            if fac[-1] != 0:
                raise SolverError("singular tridiagonal factor in ADI")
            self._factors.append(fac[:5])

    def _factor_solve(self, r: np.ndarray) -> np.ndarray:
        """Apply the inverse of the approximate factorisation."""
        x = r.reshape(self.op.shape)
        for k, fac in enumerate(self._factors):
            xk = np.moveaxis(x, k, -1)
            shp = xk.shape
            sol, info = lapack.dgttrs(*fac, np.ascontiguousarray(xk).ravel())
            x = np.moveaxis(sol.reshape(shp), -1, k)
        return x.ravel()

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self._lu is not None:
            return self._lu.solve(b)
        x = self._factor_solve(b)
        scale = max(np.max(np.abs(b)), 1e-300)
        r = b - self.J @ x
        prev = np.max(np.abs(r))
        for _ in range(self.max_iter):
            if prev <= self.tol * scale:
                return x
            x = x + self._factor_solve(r)
            r = b - self.J @ x
            err = np.max(np.abs(r))
            if err > 0.5 * prev:
                break
            prev = err
        # slow or divergent splitting iteration: let GMRES use it as a preconditioner
        M = spla.LinearOperator(self.J.shape, matvec=self._factor_solve, dtype=float)
        x, info = spla.gmres(self.J, b, x0=x, rtol=self.tol, atol=0.0, restart=40, maxiter=50, M=M)
        if info != 0:
            raise SolverError("ADI-preconditioned GMRES did not converge")
        return x


@dataclass
class MarchResult:
    W: np.ndarray
    lte: np.ndarray
    newton_iters: np.ndarray
    residuals: np.ndarray
    info: dict = field(default_factory=dict)


Source = Callable[[int, float, np.ndarray], np.ndarray]
Reaction = Callable[[int, float, np.ndarray], tuple[np.ndarray, np.ndarray]]


def bdf2_march(op: SpatialOperator, tau: np.ndarray, w_first: np.ndarray, w_second: np.ndarray,
               source: Source, reaction: Reaction, linear: str = "direct", newton_tol: float = 1e-12,
               max_newton: int = 40, positive: bool = True) -> MarchResult:
    """Advance from the two starting levels over increasing maturities ``tau``.

    Step ``n -> n+1`` solves
    ``w - gamma (A w + g(w)) = c0 w^n - c1 w^(n-1) + gamma S(w*)`` with the
    variable-step BDF2 weights and ``w* = (1+omega) w^n - omega w^(n-1)``.
    The local truncation error is estimated from the gap to a quadratic
    predictor.
    """
    n_tau = tau.size
    W = np.empty((n_tau, op.size))
    W[0], W[1] = w_first, w_second
    lte = np.zeros(n_tau)
    iters = np.zeros(n_tau, dtype=int)
    resid = np.zeros(n_tau)
    solver = LinearSolver(op, linear)
    A = op.matrix
    for n in range(1, n_tau - 1):
        dt = tau[n + 1] - tau[n]
        om = dt / (tau[n] - tau[n - 1])
        c0 = (1 + om) ** 2 / (1 + 2 * om)
        c1 = om**2 / (1 + 2 * om)
        gam = dt * (1 + om) / (1 + 2 * om)
        t_new = tau[n + 1]
        w_star = (1 + om) * W[n] - om * W[n - 1]
        rhs = c0 * W[n] - c1 * W[n - 1] + gam * source(n + 1, t_new, w_star)
        w = w_star.copy()
        g, dg = reaction(n + 1, t_new, w)
        solver.prepare(gam, dg)
        scale = 1.0 + np.max(np.abs(w))
        prev = np.inf
        for k in range(1, max_newton + 1):
            R = w - gam * (A @ w + g) - rhs
            delta = solver.solve(-R)
            w = w + delta
            step = np.max(np.abs(delta))
            g, dg = reaction(n + 1, t_new, w)
            if step <= newton_tol * scale:
                break
            if step > 0.5 * prev:
                solver.prepare(gam, dg)
            prev = step
        else:
            raise SolverError(f"Newton did not converge at tau={t_new:.6g} (last update {step:.3e})")
        iters[n + 1] = k
        resid[n + 1] = np.max(np.abs(w - gam * (A @ w + g) - rhs))
        if positive and np.any(w <= 0):
            i = int(np.argmin(w))
            raise SolverError(f"positivity lost at tau={t_new:.6g}, node {op.points[i].tolist()}: w={w[i]:.3e}")
        if not np.all(np.isfinite(w)):
            raise SolverError(f"non-finite values at tau={t_new:.6g}")
        W[n + 1] = w
        if n >= 2:
            pred = _quadratic_extrapolate(tau[n - 2:n + 1], W[n - 2:n + 1], t_new)
            lte[n + 1] = (2.0 / 11.0) * np.max(np.abs(w - pred))
    return MarchResult(W, lte, iters, resid)


def _quadratic_extrapolate(ts: np.ndarray, ws: np.ndarray, t: float) -> np.ndarray:
    t0, t1, t2 = ts
    l0 = (t - t1) * (t - t2) / ((t0 - t1) * (t0 - t2))
    l1 = (t - t0) * (t - t2) / ((t1 - t0) * (t1 - t2))
    l2 = (t - t0) * (t - t1) / ((t2 - t0) * (t2 - t1))
    return l0 * ws[0] + l1 * ws[1] + l2 * ws[2]
