"""Model parameters, coefficient fields and sampled assumption checks.

Coefficient fields come from a small closed registry (constant, affine, tanh)
that can be combined with ``+`` and ``*``.  Every field carries exact first and
second derivatives, so nothing downstream relies on symbolic differentiation.

All point arguments are arrays of shape ``(N, d)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import qmc


class DomainError(ValueError):
    """An input lies outside the domain of the requested operation."""


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RobustParams:
    """Exponents, horizon and ambiguity level.

    The derived constants are properties so they can never drift away from
    ``p`` and ``m``.
    """

    p: float
    m: float
    T: float
    theta: float

    @property
    def alpha(self) -> float:
        return 1.0 / (self.m - 1.0)

    @property
    def beta(self) -> float:
        return 1.0 / (self.p - 1.0)

    @property
    def epsilon(self) -> float:
        return 1.0 - self.alpha / self.beta

    @property
    def a(self) -> float:
        m = self.m
        return (m - 1.0) ** (m - 1.0) / m**m

    @property
    def regular(self) -> bool:
        """Whether beta > 2 alpha, needed for gradient-based controls."""
        return self.beta > 2.0 * self.alpha

    def require_regular(self, what: str = "this operation") -> None:
        if not self.regular:
            raise DomainError(
                f"{what} needs beta > 2*alpha, got beta={self.beta:g}, alpha={self.alpha:g}"
            )

    def with_theta(self, theta: float) -> "RobustParams":
        return make_params(self.p, self.m, self.T, theta)

    def as_dict(self) -> dict:
        return {"p": self.p, "m": self.m, "T": self.T, "theta": self.theta}


def make_params(p: float, m: float, T: float, theta: float) -> RobustParams:
    """Validate and build :class:`RobustParams`."""
    checks = [
        ("p", p, p > 1.0, "p > 1"),
        ("m", m, m >= 2.0, "m >= 2"),
        ("T", T, T > 0.0, "T > 0"),
        ("theta", theta, theta >= 0.0, "theta >= 0"),
    ]
    for name, value, ok, rule in checks:
        if not (isinstance(value, (int, float)) and math.isfinite(value)) or not ok:
            raise DomainError(f"{name}={value!r} violates {rule}")
    return RobustParams(float(p), float(m), float(T), float(theta))


# ---------------------------------------------------------------------------
# Point helpers
# ---------------------------------------------------------------------------


def as_points(y, dim: int) -> tuple[np.ndarray, bool]:
    """Coerce ``y`` to shape ``(N, dim)``; also report whether it was one point."""
    arr = np.asarray(y, dtype=float)
    if arr.ndim == 2:
        if arr.shape[1] != dim:
            raise ValueError(f"points have dimension {arr.shape[1]}, expected {dim}")
        return arr, False
    if arr.size == dim and arr.ndim <= 1:
        return arr.reshape(1, dim), True
    if dim == 1 and arr.ndim == 1:
        return arr.reshape(-1, 1), False
    raise ValueError(f"cannot interpret array of shape {arr.shape} as {dim}-d points")


def japanese_bracket(y: np.ndarray) -> np.ndarray:
    """<y> = (1 + |y|^2)^(1/2) for points of shape (N, d)."""
    return np.sqrt(1.0 + np.sum(y * y, axis=-1))


# ---------------------------------------------------------------------------
# Scalar fields
# ---------------------------------------------------------------------------


class ScalarField:
    """A twice differentiable map R^d -> R with exact derivatives."""

    bounded: bool = False

    def value(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hess(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def spec(self) -> dict:
        raise NotImplementedError

    def __call__(self, y: np.ndarray) -> np.ndarray:
        return self.value(y)

    def __add__(self, other: "ScalarField") -> "ScalarField":
        return Sum(self, other)

    def __mul__(self, other: "ScalarField") -> "ScalarField":
        return Product(self, other)


@dataclass(frozen=True)
class Constant(ScalarField):
    c: float

    bounded = True

    def value(self, y):
        return np.full(y.shape[0], float(self.c))

    def grad(self, y):
        return np.zeros_like(y)

    def hess(self, y):
        n, d = y.shape
        return np.zeros((n, d, d))

    def spec(self):
        return {"kind": "constant", "value": self.c}


@dataclass(frozen=True)
class Affine(ScalarField):
    """c0 + <coef, y>."""

    c0: float
    coef: tuple[float, ...]

    @property
    def bounded(self) -> bool:  # type: ignore[override]
        return not any(self.coef)

    def value(self, y):
        return self.c0 + y @ np.asarray(self.coef, dtype=float)

    def grad(self, y):
        return np.broadcast_to(np.asarray(self.coef, dtype=float), y.shape).copy()

    def hess(self, y):
        n, d = y.shape
        return np.zeros((n, d, d))

    def spec(self):
        return {"kind": "affine", "c0": self.c0, "coef": list(self.coef)}


@dataclass(frozen=True)
class Tanh(ScalarField):
    """level + amp * tanh(scale * y[coord])."""

    level: float
    amp: float
    scale: float
    coord: int = 0

    bounded = True

    def value(self, y):
        return self.level + self.amp * np.tanh(self.scale * y[:, self.coord])

    def grad(self, y):
        g = np.zeros_like(y)
        s = 1.0 / np.cosh(self.scale * y[:, self.coord])
        g[:, self.coord] = self.amp * self.scale * s * s
        return g

    def hess(self, y):
        n, d = y.shape
        h = np.zeros((n, d, d))
        z = self.scale * y[:, self.coord]
        s = 1.0 / np.cosh(z)
        h[:, self.coord, self.coord] = -2.0 * self.amp * self.scale**2 * s * s * np.tanh(z)
        return h

    def spec(self):
        return {"kind": "tanh", "level": self.level, "amp": self.amp,
                "scale": self.scale, "coord": self.coord}


@dataclass(frozen=True)
class Sum(ScalarField):
    f: ScalarField
    g: ScalarField

    @property
    def bounded(self) -> bool:  # type: ignore[override]
        return self.f.bounded and self.g.bounded

    def value(self, y):
        return self.f.value(y) + self.g.value(y)

    def grad(self, y):
        return self.f.grad(y) + self.g.grad(y)

    def hess(self, y):
        return self.f.hess(y) + self.g.hess(y)

    def spec(self):
        return {"kind": "sum", "terms": [self.f.spec(), self.g.spec()]}


@dataclass(frozen=True)
class Product(ScalarField):
    f: ScalarField
    g: ScalarField

    @property
    def bounded(self) -> bool:  # type: ignore[override]
        return self.f.bounded and self.g.bounded

    def value(self, y):
        return self.f.value(y) * self.g.value(y)

    def grad(self, y):
        return self.f.grad(y) * self.g.value(y)[:, None] + self.g.grad(y) * self.f.value(y)[:, None]

    def hess(self, y):
        fv, gv = self.f.value(y), self.g.value(y)
        fg, gg = self.f.grad(y), self.g.grad(y)
        cross = fg[:, :, None] * gg[:, None, :]
        return (self.f.hess(y) * gv[:, None, None] + self.g.hess(y) * fv[:, None, None]
                + cross + np.swapaxes(cross, 1, 2))

    def spec(self):
        return {"kind": "product", "factors": [self.f.spec(), self.g.spec()]}


def field_from_spec(spec) -> ScalarField:
    """Build a scalar field from a nested dict (as read from a config file)."""
    if isinstance(spec, (int, float)):
        return Constant(float(spec))
    spec = dict(spec)
    kind = spec.pop("kind", None)
    allowed = {
        "constant": {"value"},
        "affine": {"c0", "coef"},
        "tanh": {"level", "amp", "scale", "coord"},
        "sum": {"terms"},
        "product": {"factors"},
    }
    if kind not in allowed:
        raise ValueError(f"unknown field kind {kind!r}")
    unknown = set(spec) - allowed[kind]
    if unknown:
        raise ValueError(f"unknown keys for {kind} field: {sorted(unknown)}")
    if kind == "constant":
        return Constant(float(spec["value"]))
    if kind == "affine":
        return Affine(float(spec.get("c0", 0.0)), tuple(float(c) for c in spec["coef"]))
    if kind == "tanh":
        return Tanh(float(spec.get("level", 0.0)), float(spec.get("amp", 1.0)),
                    float(spec.get("scale", 1.0)), int(spec.get("coord", 0)))
    parts = [field_from_spec(s) for s in spec["terms" if kind == "sum" else "factors"]]
    if len(parts) < 2:
        raise ValueError(f"{kind} field needs at least two parts")
    out = parts[0]
    for part in parts[1:]:
        out = Sum(out, part) if kind == "sum" else Product(out, part)
    return out


# ---------------------------------------------------------------------------
# Drift and volatility
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AffineDrift:
    """b(y) = A y + c.  Covers constant and Ornstein-Uhlenbeck drifts."""

    A: tuple[tuple[float, ...], ...]
    c: tuple[float, ...]

    def value(self, y):
        return y @ np.asarray(self.A, dtype=float).T + np.asarray(self.c, dtype=float)

    def jacobian(self, y):
        A = np.asarray(self.A, dtype=float)
        return np.broadcast_to(A, (y.shape[0],) + A.shape).copy()

    def spec(self):
        return {"kind": "affine", "A": [list(r) for r in self.A], "c": list(self.c)}


def constant_drift(mu) -> AffineDrift:
    mu = tuple(float(x) for x in np.atleast_1d(mu))
    d = len(mu)
    return AffineDrift(tuple((0.0,) * d for _ in range(d)), mu)


def ou_drift(kappa, mean) -> AffineDrift:
    """Componentwise mean reversion -kappa_i (y_i - mean_i)."""
    kappa = np.atleast_1d(np.asarray(kappa, dtype=float))
    mean = np.broadcast_to(np.asarray(mean, dtype=float), kappa.shape)
    A = tuple(tuple(-k if i == j else 0.0 for j in range(len(kappa))) for i, k in enumerate(kappa))
    return AffineDrift(A, tuple(float(x) for x in kappa * mean))


def drift_from_spec(spec, dim: int) -> AffineDrift:
    spec = dict(spec)
    kind = spec.pop("kind", "constant")
    if kind == "constant":
        out = constant_drift(spec.pop("mu", [0.0] * dim))
    elif kind == "ou":
        out = ou_drift(spec.pop("kappa"), spec.pop("mean", 0.0))
    elif kind == "affine":
        out = AffineDrift(tuple(tuple(float(x) for x in r) for r in spec.pop("A")),
                          tuple(float(x) for x in spec.pop("c")))
    else:
        raise ValueError(f"unknown drift kind {kind!r}")
    if spec:
        raise ValueError(f"unknown keys for {kind} drift: {sorted(spec)}")
    if len(out.c) != dim:
        raise ValueError(f"drift has dimension {len(out.c)}, model has {dim}")
    return out


@dataclass(frozen=True)
class ConstantVolatility:
    """sigma(y) = S for a fixed d x n matrix S."""

    matrix: tuple[tuple[float, ...], ...]

    @property
    def S(self) -> np.ndarray:
        return np.asarray(self.matrix, dtype=float)

    def value(self, y):
        S = self.S
        return np.broadcast_to(S, (y.shape[0],) + S.shape).copy()

    def derivative(self, y):
        S = self.S
        return np.zeros((y.shape[0],) + S.shape + (S.shape[0],))

    def spec(self):
        return {"matrix": [list(r) for r in self.matrix]}


def diagonal_volatility(diag) -> ConstantVolatility:
    diag = np.atleast_1d(np.asarray(diag, dtype=float))
    return ConstantVolatility(tuple(tuple(float(v) if i == j else 0.0 for j in range(len(diag)))
                                    for i, v in enumerate(diag)))


# ---------------------------------------------------------------------------
# Factor model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FactorModel:
    """Factor dynamics and cost coefficients with their growth constants.

    ``declared`` lists the optional assumptions the model claims, out of
    ``"L.4"`` (uniform ellipticity) and ``"F.3"`` (bounded impact, bounded C^1
    risk factor).
    """

    name: str
    dim: int
    drift: AffineDrift
    vol: ConstantVolatility
    eta: ScalarField
    lam: ScalarField
    c_lower: float
    c_upper: float
    k0: float = 1.0
    declared: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise DomainError(f"dim={self.dim}: only d in {{1, 2}} is supported")
        if not 0.0 < self.k0 <= 1.0:
            raise DomainError(f"k0={self.k0} must lie in (0, 1]")
        if self.vol.S.shape[0] != self.dim:
            raise DomainError("volatility matrix rows must equal dim")

    def n_growth(self, m: float) -> float:
        return (1.0 - self.k0) * m

    def sigma(self, y):
        return self.vol.value(y)

    def diffusion_matrix(self, y):
        s = self.vol.value(y)
        return s @ np.swapaxes(s, 1, 2)

    def generator(self, value_grad_hess: tuple[np.ndarray, np.ndarray, np.ndarray], y):
        """Apply L = 1/2 tr(sigma sigma^T D^2) + <b, D> given derivative data."""
        _, g, h = value_grad_hess
        a = self.diffusion_matrix(y)
        return 0.5 * np.einsum("nij,nij->n", a, h) + np.sum(self.drift.value(y) * g, axis=1)

    def generator_eta(self, y):
        return self.generator((None, self.eta.grad(y), self.eta.hess(y)), y)

    @property
    def is_diagonal(self) -> bool:
        S = self.vol.S
        a = S @ S.T
        return bool(np.all(a[~np.eye(self.dim, dtype=bool)] == 0.0))

    def spec(self) -> dict:
        return {
            "name": self.name, "dim": self.dim, "drift": self.drift.spec(),
            "vol": self.vol.spec(), "eta": self.eta.spec(), "lam": self.lam.spec(),
            "c_lower": self.c_lower, "c_upper": self.c_upper, "k0": self.k0,
            "declared": sorted(self.declared),
        }


def constant_model(dim: int = 1, eta: float = 1.0, lam: float = 0.0, drift=0.0, vol=1.0) -> FactorModel:
    """Constant coefficients; sigma is diagonal with entries ``vol``."""
    if eta <= 0:
        raise DomainError("constant model needs eta > 0")
    drift_v = np.broadcast_to(np.asarray(drift, dtype=float), (dim,))
    vol_v = np.broadcast_to(np.asarray(vol, dtype=float), (dim,))
    c_upper = float(max(eta, lam, 1.0, np.max(np.abs(drift_v)), np.max(np.abs(vol_v))))
    return FactorModel(
        name="constant", dim=dim, drift=constant_drift(drift_v), vol=diagonal_volatility(vol_v),
        eta=Constant(eta), lam=Constant(lam), c_lower=float(eta), c_upper=c_upper,
        k0=1.0, declared=frozenset({"L.4", "F.3"}),
    )


def example_ex1_model(mu: float = 0.0, sigma: float = 1.0,
                      sigma_tilde_sq: ScalarField | None = None) -> FactorModel:
    """Two-factor model: OU liquidity factor and arithmetic BM volatility factor.

    dY1 = -Y1 dt + dW1, dY2 = mu dt + sigma dW2, eta = tanh(-y1) + 2 and
    lambda = sigma_tilde^2(y2), where ``sigma_tilde_sq`` must be bounded
    (default 0.5 + 0.3 tanh(y2)).
    """
    if sigma_tilde_sq is None:
        sigma_tilde_sq = Tanh(0.5, 0.3, 1.0, coord=1)
    if not sigma_tilde_sq.bounded:
        raise DomainError("sigma_tilde^2 must have bounded range")
    if sigma <= 0:
        raise DomainError("sigma must be positive")
    eta = Tanh(2.0, 1.0, -1.0, coord=0)
    lam_bound = _field_sup(sigma_tilde_sq)
    c_upper = float(max(3.0, abs(mu), sigma, lam_bound, 1.0))
    return FactorModel(
        name="ex1", dim=2, drift=AffineDrift(((-1.0, 0.0), (0.0, 0.0)), (0.0, float(mu))),
        vol=diagonal_volatility([1.0, sigma]), eta=eta, lam=sigma_tilde_sq,
        c_lower=1.0, c_upper=c_upper, k0=1.0, declared=frozenset({"L.4", "F.3"}),
    )


def tanh_liquidity_1d(kappa: float = 1.0, vol: float = 1.0, lam: float = 0.25) -> FactorModel:
    """One-factor analogue of ``ex1``: OU factor, eta = tanh(-y) + 2, constant lambda."""
    return FactorModel(
        name="tanh1d", dim=1, drift=ou_drift([kappa], [0.0]), vol=diagonal_volatility([vol]),
        eta=Tanh(2.0, 1.0, -1.0, coord=0), lam=Constant(lam), c_lower=1.0,
        c_upper=float(max(3.0, kappa, vol, lam)), k0=1.0, declared=frozenset({"L.4", "F.3"}),
    )


def custom_model(dim: int, eta, lam, drift, vol, c_lower: float, c_upper: float,
                 k0: float = 1.0, declared=()) -> FactorModel:
    """Model assembled from field specs (dicts) or field objects."""
    eta_f = eta if isinstance(eta, ScalarField) else field_from_spec(eta)
    lam_f = lam if isinstance(lam, ScalarField) else field_from_spec(lam)
    drift_f = drift if isinstance(drift, AffineDrift) else drift_from_spec(drift, dim)
    if isinstance(vol, ConstantVolatility):
        vol_f = vol
    elif isinstance(vol, dict):
        vol_f = ConstantVolatility(tuple(tuple(float(x) for x in r) for r in vol["matrix"]))
    else:
        vol_f = diagonal_volatility(vol)
    return FactorModel("custom", dim, drift_f, vol_f, eta_f, lam_f, float(c_lower),
                       float(c_upper), float(k0), frozenset(declared))


def _field_sup(f: ScalarField) -> float:
    """Rough sup of |f| for registry fields with bounded range."""
    if isinstance(f, Constant):
        return abs(f.c)
    if isinstance(f, Tanh):
        return abs(f.level) + abs(f.amp)
    if isinstance(f, Sum):
        return _field_sup(f.f) + _field_sup(f.g)
    if isinstance(f, Product):
        return _field_sup(f.f) * _field_sup(f.g)
    return math.inf


MODEL_REGISTRY: dict[str, Callable[..., FactorModel]] = {
    "constant": constant_model,
    "ex1": example_ex1_model,
    "tanh1d": tanh_liquidity_1d,
    "custom": custom_model,
}


# ---------------------------------------------------------------------------
# Assumption checks
# ---------------------------------------------------------------------------


@dataclass
class AssumptionCheck:
    id: str
    n_samples: int
    worst_margin: float
    passed: bool
    witness: list[float] | None = None
    detail: str = ""


@dataclass
class AssumptionReport:
    checked: list[AssumptionCheck]

    @property
    def passed(self) -> dict[str, bool]:
        return {c.id: c.passed for c in self.checked}

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checked)

    def failures(self) -> list[AssumptionCheck]:
        return [c for c in self.checked if not c.passed]

    def get(self, ident: str) -> AssumptionCheck:
        for c in self.checked:
            if c.id == ident:
                return c
        raise KeyError(ident)

    def as_dict(self) -> dict:
        return {"ok": self.ok, "checked": [c.__dict__ for c in self.checked]}


def sample_box(box, n_samples: int) -> np.ndarray:
    """Deterministic Halton points scaled to ``box`` (a list of (lo, hi))."""
    box = np.asarray(box, dtype=float)
    if box.ndim != 2 or box.shape[1] != 2 or np.any(box[:, 1] <= box[:, 0]):
        raise ValueError(f"invalid sample box {box.tolist()}")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    u = qmc.Halton(d=box.shape[0], scramble=False).random(n_samples)
    return box[:, 0] + u * (box[:, 1] - box[:, 0])


def _check(ident: str, margins: np.ndarray, y: np.ndarray, detail: str = "") -> AssumptionCheck:
    margins = np.where(np.isnan(margins), -np.inf, margins)
    i = int(np.argmin(margins))
    worst = float(margins[i])
    passed = worst >= 0.0
    return AssumptionCheck(ident, int(y.shape[0]), worst, passed,
                           None if passed else y[i].tolist(), detail)


def _fd_grad(f, y, h):
    g = np.empty_like(y)
    for j in range(y.shape[1]):
        e = np.zeros(y.shape[1])
        e[j] = h
        g[:, j] = (f(y + e) - f(y - e)) / (2 * h)
    return g


def _fd_jac(f, y, h):
    cols = []
    for j in range(y.shape[1]):
        e = np.zeros(y.shape[1])
        e[j] = h
        cols.append((f(y + e) - f(y - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def derivative_errors(model: FactorModel, y: np.ndarray, h: float = 1e-5) -> dict[str, float]:
    """Max relative error of declared derivatives against central differences."""

    def rel(a, b):
        return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a))))

    return {
        "grad_eta": rel(model.eta.grad(y), _fd_grad(model.eta.value, y, h)),
        "hess_eta": rel(model.eta.hess(y), _fd_jac(model.eta.grad, y, h)),
        "grad_lam": rel(model.lam.grad(y), _fd_grad(model.lam.value, y, h)),
        "jac_drift": rel(model.drift.jacobian(y), _fd_jac(model.drift.value, y, h)),
    }


def validate_assumptions(model: FactorModel, params: RobustParams, sample_box_=None,
                         n_samples: int = 1000, fd_rtol: float = 1e-6) -> AssumptionReport:
    """Evaluate the standing assumptions at quasi-random points of a box.

    Violations are reported, never raised.  Each margin is ``rhs - lhs`` of the
    corresponding inequality, minimised over the samples.
    """
    if sample_box_ is None:
        sample_box_ = [(-3.0, 3.0)] * model.dim
    y = sample_box(sample_box_, n_samples)
    C, c = model.c_upper, model.c_lower
    m, p, alpha = params.m, params.p, params.alpha
    br = japanese_bracket(y)
    norm_y = np.linalg.norm(y, axis=1)
    b = model.drift.value(y)
    s = model.sigma(y)
    eta = model.eta.value(y)
    lam = model.lam.value(y)
    checks = []

    jac_norm = np.linalg.norm(model.drift.jacobian(y), ord=2, axis=(1, 2))
    checks.append(_check("L.1", np.minimum(C - jac_norm,
                                           C * (1 + norm_y) - np.linalg.norm(b, axis=1)), y,
                         "Lipschitz via |Db| <= C and linear growth"))
    s_norm = np.linalg.norm(s, ord=2, axis=(1, 2))
    ds = model.vol.derivative(y)
    ds_norm = np.sqrt(np.sum(ds**2, axis=tuple(range(1, ds.ndim))))
    checks.append(_check("L.2", np.minimum(C - ds_norm, C * (1 + norm_y) - s_norm), y,
                         "Lipschitz via |D sigma| <= C and linear growth"))
    checks.append(_check("L.3", C - s_norm, y, "|sigma| <= C"))
    if "L.4" in model.declared:
        eig = np.linalg.eigvalsh(model.diffusion_matrix(y))[:, 0]
        checks.append(_check("L.4", eig, y, "smallest eigenvalue of sigma sigma^T"))

    k0 = model.k0
    with np.errstate(invalid="ignore", divide="ignore"):
        f1 = np.minimum.reduce([
            eta - c * br ** ((1 - p * k0) * m),
            C * br ** ((1 - k0) * m) - eta,
            C * br ** ((1 - k0) * m) - lam,
            lam,
        ])
        checks.append(_check("F.1", f1, y, "growth bounds on eta and lambda"))
        ratio_gen = np.abs(model.generator_eta(y) / eta)
        grad_ratio = np.linalg.norm(model.eta.grad(y), axis=1) ** (alpha + 1) / eta
        f2 = np.where(eta > 0, np.minimum(C - ratio_gen, C - grad_ratio), -np.inf)
    checks.append(_check("F.2", f2, y, "||L eta / eta|| and |||D eta|^(alpha+1)/eta|| <= C"))
    if "F.3" in model.declared:
        grad_lam = np.linalg.norm(model.lam.grad(y), axis=1)
        f3 = np.minimum.reduce([eta - c, C - eta, C - np.abs(lam), C - grad_lam])
        checks.append(_check("F.3", f3, y, "c <= eta <= C, lambda in C^1_b"))

    errs = derivative_errors(model, y)
    worst = max(errs.values())
    deriv = _check("DERIV", np.array([fd_rtol - worst]), y[:1],
                   "declared derivatives vs central differences: "
                   + ", ".join(f"{k}={v:.2e}" for k, v in errs.items()))
    checks.append(deriv)
    return AssumptionReport(checks)
