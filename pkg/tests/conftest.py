"""Shared solves (session scoped) and the acceptance summary printer."""

from __future__ import annotations

import pytest

from robust_liquidation.asymptotics import solve_w1_grid
from robust_liquidation.grid import make_grid
from robust_liquidation.model import example_ex1_model, make_params, tanh_liquidity_1d
from robust_liquidation.pde_solver import solve_benchmark, solve_singular

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(ident: str, passed: bool, detail: str) -> None:
    line = f"{ident} {'PASS' if passed else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def ex1_model():
    return example_ex1_model()


@pytest.fixture(scope="session")
def ex1_grid():
    return make_grid(1.0, [(-5.0, 5.0), (-5.0, 5.0)], 101, per_octave=16)


@pytest.fixture(scope="session")
def ex1_params():
    return make_params(2.0, 4.0, 1.0, 0.1)


@pytest.fixture(scope="session")
def ex1_bench(ex1_model, ex1_grid, ex1_params):
    return solve_benchmark(ex1_model, ex1_params, ex1_grid)


@pytest.fixture(scope="session")
def ex1_corr(ex1_model, ex1_params, ex1_bench):
    return solve_w1_grid(ex1_bench, ex1_model, ex1_params.with_theta(0.0))


@pytest.fixture(scope="session")
def ex1_solutions(ex1_model, ex1_grid, ex1_params):
    """theta -> solution on the shared ex1 grid."""
    return {th: solve_singular(ex1_model, ex1_params.with_theta(th), ex1_grid) for th in (0.05, 0.1, 0.2)}


@pytest.fixture(scope="session")
def ex1_sol(ex1_solutions):
    return ex1_solutions[0.1]


@pytest.fixture(scope="session")
def tanh_model():
    return tanh_liquidity_1d()


@pytest.fixture(scope="session")
def tanh_grid():
    return make_grid(1.0, [(-5.0, 5.0)], 201, per_octave=16)


@pytest.fixture(scope="session")
def tanh_solutions(tanh_model, tanh_grid):
    base = make_params(2.0, 4.0, 1.0, 0.0)
    return {th: solve_singular(tanh_model, base.with_theta(th), tanh_grid) if th > 0
            else solve_benchmark(tanh_model, base, tanh_grid) for th in (0.0, 0.05, 0.1, 0.2)}


@pytest.fixture(scope="session")
def tanh_corr(tanh_model, tanh_solutions):
    return solve_w1_grid(tanh_solutions[0.0], tanh_model, make_params(2.0, 4.0, 1.0, 0.0))
