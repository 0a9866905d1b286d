"""Path-wise access to gridded solutions and helpers for Monte Carlo time grids."""

from __future__ import annotations

import math

import numpy as np

from .grid import space_weights, time_weights
from .pde_solver import ValueSolution


def mc_tau_grid(solver_tau_desc: np.ndarray, tau0: float, max_dt: float, stride: int = 1) -> np.ndarray:
    """Decreasing maturities from ``tau0`` to the smallest solved one.

    Every ``stride``-th solver node is kept (always including the last) so the
    benchmark is mostly read without time interpolation; each interval is
    split so no step exceeds ``max_dt``.
    """
    below = solver_tau_desc[solver_tau_desc < tau0 * (1 - 1e-12)]
    keep = below[::-1][::stride][::-1]
    nodes = np.concatenate([[tau0], keep])
    out = [nodes[:1]]
    for hi, lo in zip(nodes[:-1], nodes[1:]):
        k = max(1, int(math.ceil((hi - lo) / max_dt - 1e-9)))
        out.append(hi - (hi - lo) * np.arange(1, k + 1) / k)
    return np.concatenate(out)


def reflect(Y: np.ndarray, box) -> tuple[np.ndarray, np.ndarray]:
    """Mirror points back into the box; also return which rows were touched."""
    hit = np.zeros(Y.shape[0], dtype=bool)
    for k, (lo, hi) in enumerate(box):
        for _ in range(4):
            below, above = Y[:, k] < lo, Y[:, k] > hi
            if not (below.any() or above.any()):
                break
            Y[below, k] = 2 * lo - Y[below, k]
            Y[above, k] = 2 * hi - Y[above, k]
            hit |= below | above
        np.clip(Y[:, k], lo, hi, out=Y[:, k])
    return Y, hit


class SliceReader:
    """Reads ``w`` and ``Dw`` of a solution at any maturity inside its range.

    The fields are stacked as ``(1 + d, N)`` so one multilinear gather serves
    all of them.
    """

    def __init__(self, sol: ValueSolution):
        self.sol = sol
        self.tau_desc = sol.tau
        n_t = sol.grid.t_nodes.size
        self.stack = np.concatenate([sol.w.reshape(n_t, 1, -1), sol.Dw.reshape(n_t, sol.grid.dim, -1)],
                                    axis=1)
        self.y_nodes = sol.grid.y_nodes
        self.shape = sol.grid.shape

    def fields(self, tau: float) -> np.ndarray:
        k, f = time_weights(self.tau_desc, tau)
        if f == 0.0:
            return self.stack[k]
        if f == 1.0:
            return self.stack[k + 1]
        return (1 - f) * self.stack[k] + f * self.stack[k + 1]

    def at(self, tau: float, Y: np.ndarray):
        F = self.fields(tau)
        out = interp_stack(F, self.y_nodes, self.shape, Y)
        return out[0], out[1:].T


def interp_stack(F: np.ndarray, y_nodes, shape, Y: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of stacked flat fields ``F`` (``(k, N)``) at points ``Y``."""
    idx, frac = space_weights(y_nodes, Y, clip=True)
    if len(shape) == 1:
        i, f = idx[:, 0], frac[:, 0]
        return F[:, i] * (1 - f) + F[:, i + 1] * f
    n1 = shape[1]
    base = idx[:, 0] * n1 + idx[:, 1]
    fx, fy = frac[:, 0], frac[:, 1]
    return ((F[:, base] * (1 - fx) + F[:, base + n1] * fx) * (1 - fy)
            + (F[:, base + 1] * (1 - fx) + F[:, base + n1 + 1] * fx) * fy)
