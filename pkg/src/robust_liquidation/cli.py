"""Command-line front end: solve, verify, simulate and asymptotics pipelines.

Exit codes: 0 success, 1 verification or statistical failure (and solver
failures), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .asymptotics import expansion_check, solve_w1_feynman_kac, solve_w1_grid
from .bounds import compute_constants, terminal_rate_fit, verify_sandwich
from .config import ConfigError, ExperimentConfig, load_config
from .control import estimate_cost, saddle_check, simulate
from .grid import OutsideGridError
from .io import read_solution, write_json, write_solution, write_table
from .model import DomainError, validate_assumptions
from .pde_solver import solve_benchmark, solve_singular
from .stepper import SolverError

log = logging.getLogger("robust_liquidation")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad invocation or inconsistent inputs (exit code 2)."""


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = args.out or cfg.out
    if not out:
        raise UsageError("no output directory: pass --out or set 'out' in the config")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _echo_config(cfg: ExperimentConfig, out: Path, command: str) -> None:
    (out / f"config_{command}.toml").write_text(cfg.text)


def _run_info(args, cfg: ExperimentConfig, command: str) -> dict:
    return {"command": command, "seed": _seed(args, cfg), "threads": int(args.threads),
            "config_source": Path(cfg.source).name, "config": cfg.as_dict(),
            "solution_hash": cfg.solution_hash()}


def _seed(args, cfg: ExperimentConfig) -> int:
    return int(args.seed) if args.seed is not None else cfg.seed


def _check_assumptions(cfg: ExperimentConfig, model, params, force: bool) -> dict:
    box = cfg.checks["assumption_box"] or cfg.grid["box"]
    report = validate_assumptions(model, params, [tuple(b) for b in box], n_samples=int(cfg.checks["n_samples"]))
    if not report.ok:
        lines = ", ".join(f"{c.id} (margin {c.worst_margin:.3g} at {c.witness})" for c in report.failures())
        if not force:
            raise UsageError(f"assumption checks failed: {lines}; rerun with --force to solve anyway")
        log.warning("assumption checks failed but --force given: %s", lines)
    return report.as_dict()


def _solve(cfg: ExperimentConfig, model, params):
    grid = cfg.build_grid()
    opts = cfg.solver_options()
    if params.theta > 0:
        return solve_singular(model, params, grid, opts)
    return solve_benchmark(model, params, grid, opts)


def _load_solution(args, cfg: ExperimentConfig, model, params):
    sol_dir = Path(args.solution or args.out or cfg.out or "")
    try:
        sol, meta = read_solution(sol_dir, model, params)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"cannot read solution: {exc}") from exc
    if meta.get("solution_hash") != cfg.solution_hash():
        raise UsageError(f"solution in {sol_dir} was computed from a different model/params/grid/solver "
                         f"configuration (hash mismatch)")
    return sol


def cmd_solve(args, cfg: ExperimentConfig) -> int:
    model, params = cfg.build_model(), cfg.build_params()
    out = _out_dir(args, cfg)
    assumptions = _check_assumptions(cfg, model, params, args.force)
    sol = _solve(cfg, model, params)
    info = _run_info(args, cfg, "solve")
    info["assumptions"] = assumptions
    write_solution(sol, out, info)
    _echo_config(cfg, out, "solve")
    log.info("solved %s on %s nodes, max LTE %.3g", model.name, sol.w.shape, sol.meta["lte_max"])
    return EXIT_OK


def _rate_thresholds(params) -> tuple[float, float]:
    if params.theta == 0:
        return 1.0 - 0.15, 0.5 - 0.15
    return params.epsilon - 0.15, (0.5 - params.alpha / params.beta) - 0.15


def cmd_verify(args, cfg: ExperimentConfig) -> int:
    model, params = cfg.build_model(), cfg.build_params()
    out = _out_dir(args, cfg)
    sol = _load_solution(args, cfg, model, params)
    consts = compute_constants(model, params, [tuple(b) for b in cfg.grid["box"]])
    cert = verify_sandwich(sol, consts, slack_factor=float(cfg.checks["slack_factor"]))
    k_lo, k_hi = cfg.checks["rate_ks"]
    rates = terminal_rate_fit(sol, model, ks=range(int(k_lo), int(k_hi) + 1))
    need_v, need_Dv = _rate_thresholds(params)
    rate_ok = rates["rate_v"] >= need_v and rates["rate_Dv"] >= need_Dv
    report = {"sandwich": cert.summary(), "terminal_rates": rates,
              "rate_thresholds": {"rate_v": need_v, "rate_Dv": need_Dv}, "rates_ok": rate_ok,
              "passed": bool(cert.passed and rate_ok), **_run_info(args, cfg, "verify")}
    write_json(out / "certificate.json", report)
    _echo_config(cfg, out, "verify")
    if not report["passed"]:
        log.error("verification failed: %d sandwich violations, rates %.3g/%.3g (need %.3g/%.3g)",
                  cert.n_violations, rates["rate_v"], rates["rate_Dv"], need_v, need_Dv)
        return EXIT_FAIL
    return EXIT_OK


def cmd_simulate(args, cfg: ExperimentConfig) -> int:
    model, params = cfg.build_model(), cfg.build_params()
    out = _out_dir(args, cfg)
    sol = _load_solution(args, cfg, model, params)
    sim = cfg.simulation
    seed = _seed(args, cfg)
    y0 = sim["y0"] if sim["y0"] is not None else [0.0] * model.dim
    if len(y0) != model.dim:
        raise UsageError(f"simulation.y0 has {len(y0)} entries, model dimension is {model.dim}")
    t0, x0 = float(sim["t0"]), float(sim["x0"])
    common = dict(n_paths=int(sim["n_paths"]), n_steps=int(sim["n_steps"]), seed=seed, threads=args.threads,
                  h_end=sim["h_end"])
    dump = bool(sim["dump_paths"])
    worst = simulate(model, params, sol, t0, y0, x0, measure="worst-case", store_paths=dump, **common)
    ref = simulate(model, params, sol, t0, y0, x0, measure="reference", stream=1, **common)
    direct = estimate_cost(worst, params, "direct")
    reweighted = estimate_cost(ref, params, "reweighted")
    lw = np.exp(ref.logweight)
    lw_mean, lw_se = float(np.mean(lw)), float(np.std(lw, ddof=1) / math.sqrt(lw.size))
    saddle = saddle_check(model, params, sol, t0, y0, x0, gammas=tuple(sim["gammas"]), rhos=tuple(sim["rhos"]),
                          n_paths=int(sim["n_paths"]), seed=seed, n_steps=int(sim["n_steps"]),
                          threads=args.threads)
    comb = math.sqrt(direct.stderr**2 + reweighted.stderr**2)
    report = {
        "direct": direct.as_dict(), "reweighted": reweighted.as_dict(),
        "direct_vs_reweighted_z": (direct.mean - reweighted.mean) / comb if comb > 0 else 0.0,
        "weight_mean": lw_mean, "weight_stderr": lw_se,
        "saddle": saddle.as_dict(), "passed": saddle.saddle_ok, **_run_info(args, cfg, "simulate"),
    }
    write_json(out / "saddle.json", report)
    rows = [("direct", direct), ("reweighted", reweighted)]
    write_table(out / "cost.csv", {
        "mode": [0, 1], "mean": [r.mean for _, r in rows], "stderr": [r.stderr for _, r in rows],
        "impact": [r.components["impact"] for _, r in rows], "risk": [r.components["risk"] for _, r in rows],
        "penalty": [r.components["penalty"] for _, r in rows], "n_paths": [r.n_paths for _, r in rows]})
    write_table(out / "paths_summary.csv", {
        "path": np.arange(worst.n_paths), "X_end": worst.X[:, -1], "impact": worst.impact, "risk": worst.risk,
        "penalty": worst.penalty, "cost": direct.per_path, "reflected": worst.reflected})
    if dump:
        n, k = worst.X.shape
        cols = {"path": np.repeat(np.arange(n), k), "t": np.tile(worst.times, n), "X": worst.X.ravel(),
                "xi": worst.xi.ravel()}
        for j in range(model.dim):
            cols[f"y{j + 1}"] = worst.Y[:, :, j].ravel()
        for j in range(worst.vartheta.shape[2]):
            cols[f"vartheta{j + 1}"] = worst.vartheta[:, :, j].ravel()
        write_table(out / "paths.csv", cols)
    _echo_config(cfg, out, "simulate")
    if not saddle.saddle_ok:
        log.error("saddle inequalities not confirmed beyond the stated standard errors")
        return EXIT_FAIL
    return EXIT_OK


def cmd_asymptotics(args, cfg: ExperimentConfig) -> int:
    model, params = cfg.build_model(), cfg.build_params()
    out = _out_dir(args, cfg)
    asy = cfg.asymptotics
    thetas = [float(t) for t in asy["thetas"]]
    if len(set(thetas)) < 2:
        raise UsageError("need at least two theta values for an order fit")
    base = params.with_theta(0.0)
    base.require_regular("the expansion check")
    grid = cfg.build_grid()
    opts = cfg.solver_options()
    bench = solve_benchmark(model, base, grid, opts)
    corr = solve_w1_grid(bench, model, base, opts=opts)
    rep = expansion_check(model, base, thetas, grid, opts, bench=bench, corr=corr)
    band = asy["order_band"] or [2 * base.alpha - 0.3, math.inf]
    order_ok = bool(band[0] <= rep.fitted_order <= band[1])
    report = {"expansion": rep.as_dict(), "order_band": band, "order_ok": order_ok,
              **_run_info(args, cfg, "asymptotics")}
    passed = order_ok
    n_fk = int(asy["fk_points"])
    if n_fk > 0:
        rng = np.random.default_rng(_seed(args, cfg))
        t_nodes = grid.t_nodes[grid.t_nodes <= 0.9 * params.T]
        lo = np.array([b[0] for b in grid.box]) / 2
        hi = np.array([b[1] for b in grid.box]) / 2
        picks = []
        for _ in range(n_fk):
            k = int(rng.integers(t_nodes.size))
            idx = [int(rng.integers(np.searchsorted(y, l), np.searchsorted(y, h, side="right")))
                   for y, l, h in zip(grid.y_nodes, lo, hi)]
            picks.append((k, idx))
        pts = [(float(t_nodes[k]), tuple(float(y[i]) for y, i in zip(grid.y_nodes, idx))) for k, idx in picks]
        fk = solve_w1_feynman_kac(bench, model, base, pts, int(asy["fk_paths"]), seed=_seed(args, cfg),
                                  max_dt=float(asy["fk_max_dt"]), threads=args.threads)
        grid_vals = np.array([corr.w1[(k,) + tuple(idx)] for k, idx in picks])
        z = (fk.w1 - grid_vals) / fk.stderr
        report["feynman_kac"] = {"points": pts, "grid": grid_vals, "mc": fk.w1, "stderr": fk.stderr, "z": z,
                                 "agree": bool(np.all(np.abs(z) <= 3))}
        passed = passed and report["feynman_kac"]["agree"]
    report["passed"] = passed
    write_json(out / "report.json", report)
    write_table(out / "residuals.csv", {"theta": rep.thetas, "residual": rep.residual_norms,
                                        "envelope": rep.envelopes})
    cols = {"t": np.repeat(grid.t_nodes, int(np.prod(grid.shape)))}
    pts = grid.points()
    for k in range(grid.dim):
        cols[f"y{k + 1}"] = np.tile(pts[:, k], grid.t_nodes.size)
    cols["w1"] = corr.w1.reshape(-1)
    cols["v1"] = corr.v1.reshape(-1)
    write_table(out / "w1.csv", cols)
    _echo_config(cfg, out, "asymptotics")
    return EXIT_OK if passed else EXIT_FAIL


COMMANDS = {"solve": cmd_solve, "verify": cmd_verify, "simulate": cmd_simulate, "asymptotics": cmd_asymptotics}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robust-liquidation",
                                     description="Robust optimal liquidation: PDE solves, bounds, "
                                                 "asymptotics and Monte Carlo checks.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment TOML file")
        p.add_argument("--out", help="output directory (overrides 'out' in the config)")
        p.add_argument("--seed", type=int, help="random seed (overrides the config)")
        p.add_argument("--threads", type=int, default=1, help="worker threads for Monte Carlo blocks")
        p.add_argument("--force", action="store_true", help="solve even if assumption checks fail")
        if name in ("verify", "simulate"):
            p.add_argument("--solution", help="directory holding w.csv and meta.json (default: --out)")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.threads < 1:
        log.error("--threads must be positive")
        return EXIT_USAGE
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, UsageError, DomainError, OutsideGridError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except SolverError as exc:
        log.error("solver failure: %s", exc)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
