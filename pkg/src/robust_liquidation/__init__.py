"""Robust optimal liquidation under factor uncertainty."""

from .model import (DomainError, FactorModel, RobustParams, constant_model, example_ex1_model,
                    make_params, tanh_liquidity_1d, validate_assumptions)
from .grid import SpaceTimeGrid, make_grid
from .pde_solver import (SolverError, SolverOptions, ValueSolution, solve_benchmark, solve_singular)
from .bounds import compute_constants, terminal_rate_fit, verify_sandwich
from .asymptotics import expansion_check, solve_w1_feynman_kac, solve_w1_grid
from .terminal_layer import layer_constants, terminal_layer
from .control import estimate_cost, saddle_check, simulate

__all__ = [
    "DomainError", "FactorModel", "RobustParams", "constant_model", "example_ex1_model",
    "make_params", "tanh_liquidity_1d", "validate_assumptions", "SpaceTimeGrid", "make_grid",
    "SolverError", "SolverOptions", "ValueSolution", "solve_benchmark", "solve_singular",
    "compute_constants", "terminal_rate_fit", "verify_sandwich", "expansion_check",
    "solve_w1_feynman_kac", "solve_w1_grid", "layer_constants", "terminal_layer",
    "estimate_cost", "saddle_check", "simulate",
]
