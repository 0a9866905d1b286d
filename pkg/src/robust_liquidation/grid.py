"""Space-time grids and interpolation on them.

Time is stored both as calendar time ``t`` (increasing, as in the public
contract) and as time to maturity ``tau = T - t``.  All solvers march in
``tau`` from the terminal standoff ``tau_min`` up to ``T``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Tensor grid on ``[0, T - tau_min] x box``.

    Attributes:
        t_nodes: strictly increasing calendar times, first 0, last ``T - tau_min``.
        y_nodes: one strictly increasing, uniformly spaced array per dimension.
        tau_min: terminal standoff.
        T: horizon.
    """

    t_nodes: np.ndarray
    y_nodes: tuple
    tau_min: float
    T: float

    def __post_init__(self):
        t = np.asarray(self.t_nodes, dtype=float)
        if t.ndim != 1 or t.size < 3 or np.any(np.diff(t) <= 0):
            raise ValueError("t_nodes must be strictly increasing with at least 3 nodes")
        if not np.isclose(t[-1], self.T - self.tau_min, rtol=0, atol=1e-12 * self.T):
            raise ValueError("last time node must equal T - tau_min")
        if self.tau_min <= 0:
            raise ValueError("tau_min must be positive")
        ys = tuple(np.asarray(y, dtype=float) for y in self.y_nodes)
        for y in ys:
            if y.ndim != 1 or y.size < 5 or np.any(np.diff(y) <= 0):
                raise ValueError("y_nodes must be strictly increasing with at least 5 nodes")
            h = np.diff(y)
            if np.max(np.abs(h - h[0])) > 1e-9 * h[0]:
                raise ValueError("y_nodes must be uniformly spaced")
        object.__setattr__(self, "t_nodes", t)
        object.__setattr__(self, "y_nodes", ys)

    @property
    def dim(self) -> int:
        return len(self.y_nodes)

    @property
    def tau(self) -> np.ndarray:
        """Time to maturity at each node, decreasing."""
        return self.T - self.t_nodes

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(y.size for y in self.y_nodes)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(float(y[1] - y[0]) for y in self.y_nodes)

    @property
    def box(self) -> list[tuple[float, float]]:
        return [(float(y[0]), float(y[-1])) for y in self.y_nodes]

    def points(self) -> np.ndarray:
        """All space nodes as an ``(N, d)`` array in C order."""
        mesh = np.meshgrid(*self.y_nodes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def refined_space(self, factor: int = 2) -> "SpaceTimeGrid":
        ys = tuple(np.linspace(y[0], y[-1], factor * (y.size - 1) + 1) for y in self.y_nodes)
        return SpaceTimeGrid(self.t_nodes, ys, self.tau_min, self.T)

    def with_box(self, box, n_space) -> "SpaceTimeGrid":
        ys = tuple(np.linspace(lo, hi, n) for (lo, hi), n in zip(box, _per_dim(n_space, len(box))))
        return SpaceTimeGrid(self.t_nodes, ys, self.tau_min, self.T)

    def window(self, tau_max: float) -> np.ndarray:
        """Indices of time nodes with ``tau <= tau_max``."""
        return np.nonzero(self.tau <= tau_max * (1 + 1e-12))[0]


def _per_dim(n, d):
    if np.isscalar(n):
        return [int(n)] * d
    n = [int(k) for k in n]
    if len(n) != d:
        raise ValueError("n_space length must match box dimension")
    return n


def geometric_tau(T: float, tau_min: float, n_t: int) -> np.ndarray:
    """``n_t`` maturities from ``tau_min`` to ``T`` with constant ratio."""
    if n_t < 3:
        raise ValueError("n_t must be >= 3")
    return np.geomspace(tau_min, T, n_t)


def octave_tau(T: float, tau_min: float, per_octave: int, max_step: float | None = None) -> np.ndarray:
    """Geometric maturities anchored at ``T * 2**(-j / per_octave)``.

    Every dyadic maturity ``T * 2**-k`` above ``tau_min`` is a node, which lets
    rate fits read the solution without time interpolation.  ``max_step``
    caps the spacing far from the terminal time.
    """
    if per_octave < 1:
        raise ValueError("per_octave must be >= 1")
    j_max = int(np.floor(per_octave * np.log2(T / tau_min) + 1e-9))
    tau = T * 2.0 ** (-np.arange(j_max + 1) / per_octave)
    tau = np.unique(np.concatenate([tau, [tau_min]]))
    if tau[1] - tau[0] < 0.25 * (tau[2] - tau[1]):
        tau = np.delete(tau, 1)
    if max_step is not None:
        out = [tau[0]]
        for a, b in zip(tau[:-1], tau[1:]):
            k = int(np.ceil((b - a) / max_step - 1e-12))
            out.extend(a + (b - a) * np.arange(1, k + 1) / k)
        tau = np.asarray(out)
    return tau


def make_grid(T: float, box, n_space, n_t: int | None = None, tau_min: float | None = None,
              per_octave: int | None = None, max_step: float | None = None) -> SpaceTimeGrid:
    """Build a grid from a box, node counts and a time refinement rule.

    Exactly one of ``n_t`` (constant-ratio nodes) and ``per_octave``
    (dyadic-anchored nodes) should be given; ``per_octave`` wins if both are.
    """
    if tau_min is None:
        tau_min = 1e-4 * T
    if per_octave is not None:
        tau = octave_tau(T, tau_min, per_octave, max_step)
    elif n_t is not None:
        tau = geometric_tau(T, tau_min, n_t)
    else:
        raise ValueError("give n_t or per_octave")
    t = np.sort(T - tau)
    t[0] = 0.0
    t[-1] = T - tau_min
    ys = tuple(np.linspace(lo, hi, n) for (lo, hi), n in zip(box, _per_dim(n_space, len(box))))
    return SpaceTimeGrid(t, ys, float(tau_min), float(T))


# ---------------------------------------------------------------------------
# Interpolation
# ---------------------------------------------------------------------------


class OutsideGridError(ValueError):
    """A query point lies outside the solved box or time range."""


def space_weights(y_nodes: tuple, pts: np.ndarray, clip: bool = False):
    """Cell indices and fractional offsets for multilinear interpolation.

    Returns ``(idx, frac)`` arrays of shape ``(N, d)``.  Points outside the box
    raise unless ``clip``.
    """
    idx = np.empty(pts.shape, dtype=np.intp)
    frac = np.empty(pts.shape)
    for k, y in enumerate(y_nodes):
        lo, h, n = y[0], y[1] - y[0], y.size
        s = (pts[:, k] - lo) / h
        if not clip:
            bad = (s < -1e-9) | (s > n - 1 + 1e-9)
            if np.any(bad):
                i = int(np.argmax(bad))
                raise OutsideGridError(f"point {pts[i].tolist()} outside box on axis {k}")
        s = np.clip(s, 0.0, n - 1)
        i = np.minimum(np.floor(s).astype(np.intp), n - 2)
        idx[:, k] = i
        frac[:, k] = s - i
    return idx, frac


def interp_space(field: np.ndarray, idx: np.ndarray, frac: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of a gridded field (shape = grid shape)."""
    d = idx.shape[1]
    if d == 1:
        i, f = idx[:, 0], frac[:, 0]
        return field[i] * (1 - f) + field[i + 1] * f
    i, j = idx[:, 0], idx[:, 1]
    fx, fy = frac[:, 0], frac[:, 1]
    return ((field[i, j] * (1 - fx) + field[i + 1, j] * fx) * (1 - fy)
            + (field[i, j + 1] * (1 - fx) + field[i + 1, j + 1] * fx) * fy)


def time_weights(tau_nodes_desc: np.ndarray, tau: float) -> tuple[int, float]:
    """Bracket ``tau`` in decreasing maturities; linear weights in ``log tau``.

    Returns ``(k, f)`` so that the value is ``(1-f) * X[k] + f * X[k+1]``.
    """
    tn = tau_nodes_desc
    if tau > tn[0] * (1 + 1e-12) or tau < tn[-1] * (1 - 1e-12):
        raise OutsideGridError(f"maturity {tau:g} outside [{tn[-1]:g}, {tn[0]:g}]")
    tau = min(max(tau, tn[-1]), tn[0])
    k = int(np.searchsorted(-tn, -tau, side="right") - 1)
    k = min(max(k, 0), tn.size - 2)
    f = (np.log(tn[k]) - np.log(tau)) / (np.log(tn[k]) - np.log(tn[k + 1]))
    return k, float(f)
