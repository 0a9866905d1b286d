"""Experiment configuration files (TOML) with strict key checking."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .grid import SpaceTimeGrid, make_grid
from .model import MODEL_REGISTRY, DomainError, FactorModel, RobustParams, field_from_spec, make_params
from .pde_solver import SolverOptions


class ConfigError(ValueError):
    """Malformed or inconsistent configuration; names the offending field."""


SECTIONS = {
    "seed": None,
    "out": None,
    "model": {"id", "coefficients"},
    "params": {"p", "m", "T", "theta"},
    "grid": {"box", "n_space", "per_octave", "n_t", "tau_min", "max_step"},
    "solver": {"linear", "newton_tol", "max_newton", "check_positive"},
    "checks": {"assumption_box", "n_samples", "slack_factor", "rate_ks"},
    "simulation": {"t0", "y0", "x0", "n_paths", "n_steps", "h_end", "gammas", "rhos", "dump_paths"},
    "asymptotics": {"thetas", "order_band", "fk_points", "fk_paths", "fk_max_dt"},
}

DEFAULTS = {
    "grid": {"per_octave": 16, "n_t": None, "tau_min": None, "max_step": None},
    "solver": {"linear": "adi", "newton_tol": 1e-12, "max_newton": 40, "check_positive": True},
    "checks": {"assumption_box": None, "n_samples": 1000, "slack_factor": 3.0, "rate_ks": [6, 13]},
    "simulation": {"t0": 0.0, "y0": None, "x0": 1.0, "n_paths": 10_000, "n_steps": 200, "h_end": None,
                   "gammas": [0.8, 1.25], "rhos": [0.5, 1.5], "dump_paths": False},
    "asymptotics": {"thetas": [0.2, 0.1, 0.05], "order_band": None, "fk_points": 0, "fk_paths": 100_000,
                    "fk_max_dt": 2.5e-3},
}


@dataclass
class ExperimentConfig:
    """Parsed experiment: model, parameters, grid, solver and pipeline sections."""

    model_id: str
    coefficients: dict
    params: dict
    grid: dict
    solver: dict
    checks: dict
    simulation: dict
    asymptotics: dict
    seed: int = 0
    out: str | None = None
    text: str = ""
    source: str = ""
    extra: dict = field(default_factory=dict)

    def build_model(self) -> FactorModel:
        kwargs = dict(self.coefficients)
        if self.model_id == "ex1" and isinstance(kwargs.get("sigma_tilde_sq"), dict):
            kwargs["sigma_tilde_sq"] = _field(kwargs["sigma_tilde_sq"], "model.coefficients.sigma_tilde_sq")
        try:
            return MODEL_REGISTRY[self.model_id](**kwargs)
        except TypeError as exc:
            raise ConfigError(f"model.coefficients: {exc}") from exc
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"model.coefficients: {exc}") from exc

    def build_params(self) -> RobustParams:
        return make_params(self.params["p"], self.params["m"], self.params["T"], self.params["theta"])

    def build_grid(self) -> SpaceTimeGrid:
        g = self.grid
        try:
            return make_grid(self.params["T"], [tuple(b) for b in g["box"]], g["n_space"], n_t=g["n_t"],
                             tau_min=g["tau_min"], per_octave=g["per_octave"], max_step=g["max_step"])
        except ValueError as exc:
            raise ConfigError(f"grid: {exc}") from exc

    def solver_options(self) -> SolverOptions:
        return SolverOptions(**self.solver)

    def solution_key(self) -> dict:
        """Sections that determine the value solution."""
        return {"model": {"id": self.model_id, "coefficients": self.coefficients}, "params": self.params,
                "grid": self.grid, "solver": self.solver}

    def solution_hash(self) -> str:
        blob = json.dumps(self.solution_key(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def as_dict(self) -> dict:
        return {"seed": self.seed, "out": self.out, "model": {"id": self.model_id,
                                                               "coefficients": self.coefficients},
                "params": self.params, "grid": self.grid, "solver": self.solver, "checks": self.checks,
                "simulation": self.simulation, "asymptotics": self.asymptotics}


def _field(spec, where: str):
    try:
        return field_from_spec(spec)
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"missing required field {where}.{key}")
    return section[key]


def _number(value, where: str, integer: bool = False):
    ok = isinstance(value, int) if integer else isinstance(value, (int, float))
    if isinstance(value, bool) or not ok:
        kind = "an integer" if integer else "a number"
        raise ConfigError(f"{where} must be {kind}, got {value!r}")
    return value


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    """Parse TOML text into an :class:`ExperimentConfig`.

    Raises:
        ConfigError: on TOML syntax errors (with line and column), unknown
            keys, missing fields or wrongly typed values.
    """
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    for key in raw:
        if key not in SECTIONS:
            raise ConfigError(f"unknown top-level key {key!r}")
    for name, allowed in SECTIONS.items():
        if allowed is None or name not in raw:
            continue
        if not isinstance(raw[name], dict):
            raise ConfigError(f"{name} must be a table")
        for key in raw[name]:
            if key not in allowed:
                raise ConfigError(f"unknown key {name}.{key}")
    model = _require(raw, "model", "config")
    model_id = _require(model, "id", "model")
    if model_id not in MODEL_REGISTRY:
        raise ConfigError(f"model.id={model_id!r} is not registered (known: {sorted(MODEL_REGISTRY)})")
    coefficients = model.get("coefficients", {})
    if not isinstance(coefficients, dict):
        raise ConfigError("model.coefficients must be a table")
    params_raw = _require(raw, "params", "config")
    params = {k: float(_number(_require(params_raw, k, "params"), f"params.{k}")) for k in ("p", "m", "T", "theta")}
    sections = {}
    for name in ("grid", "solver", "checks", "simulation", "asymptotics"):
        merged = dict(DEFAULTS[name])
        merged.update(raw.get(name, {}))
        sections[name] = merged
    grid = sections["grid"]
    _require(raw.get("grid", {}), "box", "grid")
    _require(raw.get("grid", {}), "n_space", "grid")
    box = grid["box"]
    if not isinstance(box, list) or not all(isinstance(b, list) and len(b) == 2 for b in box):
        raise ConfigError("grid.box must be a list of [lo, hi] pairs")
    grid["box"] = [[float(_number(x, "grid.box")) for x in b] for b in box]
    ns = grid["n_space"]
    if isinstance(ns, list):
        grid["n_space"] = [int(_number(n, "grid.n_space", integer=True)) for n in ns]
    else:
        grid["n_space"] = int(_number(ns, "grid.n_space", integer=True))
    for key in ("per_octave", "n_t"):
        if grid[key] is not None:
            grid[key] = int(_number(grid[key], f"grid.{key}", integer=True))
    if "n_t" in raw.get("grid", {}) and "per_octave" not in raw.get("grid", {}):
        grid["per_octave"] = None
    for key in ("tau_min", "max_step"):
        if grid[key] is not None:
            grid[key] = float(_number(grid[key], f"grid.{key}"))
    solver = sections["solver"]
    if solver["linear"] not in ("adi", "direct"):
        raise ConfigError(f"solver.linear must be 'adi' or 'direct', got {solver['linear']!r}")
    sim = sections["simulation"]
    n_paths = _number(sim["n_paths"], "simulation.n_paths", integer=True)
    if n_paths < 1:
        raise ConfigError(f"simulation.n_paths must be positive, got {n_paths}")
    if _number(sim["n_steps"], "simulation.n_steps", integer=True) < 10:
        raise ConfigError("simulation.n_steps must be at least 10")
    asy = sections["asymptotics"]
    if not isinstance(asy["thetas"], list) or len(set(asy["thetas"])) < 2:
        raise ConfigError("asymptotics.thetas needs at least two distinct values")
    seed = int(_number(raw.get("seed", 0), "seed", integer=True))
    out = raw.get("out")
    return ExperimentConfig(model_id, coefficients, params, grid, solver, sections["checks"], sim, asy,
                            seed=seed, out=out, text=text, source=source)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "load_config", "DomainError"]
