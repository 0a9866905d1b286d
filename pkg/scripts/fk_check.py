"""Compare the grid first-order correction with Feynman-Kac estimates.

Usage:
    python3 scripts/fk_check.py [--n-space 101] [--paths 100000] [--points 5] [--seed 1]
"""

import argparse

import numpy as np

from robust_liquidation.asymptotics import solve_w1_feynman_kac, solve_w1_grid
from robust_liquidation.grid import make_grid
from robust_liquidation.model import example_ex1_model, make_params
from robust_liquidation.pde_solver import solve_benchmark


def main():
    ap = argparse.ArgumentParser(description="grid w1 against Feynman-Kac on the ex1 model")
    ap.add_argument("--n-space", type=int, default=101)
    ap.add_argument("--paths", type=int, default=100_000)
    ap.add_argument("--points", type=int, default=5)
    ap.add_argument("--seed", type=int, default=1)
    a = ap.parse_args()
    model = example_ex1_model()
    base = make_params(2.0, 4.0, 1.0, 0.0)
    grid = make_grid(1.0, [(-5.0, 5.0), (-5.0, 5.0)], a.n_space, per_octave=16)
    bench = solve_benchmark(model, base, grid)
    corr = solve_w1_grid(bench, model, base)
    rng = np.random.default_rng(a.seed)
    t_ok = np.flatnonzero(grid.t_nodes <= 0.9)
    inner = [np.flatnonzero(np.abs(y) <= 2.5) for y in grid.y_nodes]
    picks = [(int(rng.choice(t_ok)), int(rng.choice(inner[0])), int(rng.choice(inner[1])))
             for _ in range(a.points)]
    pts = [(grid.t_nodes[k], (grid.y_nodes[0][i], grid.y_nodes[1][j])) for k, i, j in picks]
    fk = solve_w1_feynman_kac(bench, model, base, pts, n_paths=a.paths, seed=a.seed)
    print(f"{'t':>8s} {'y1':>6s} {'y2':>6s} {'grid':>10s} {'mc':>10s} {'stderr':>9s} {'z':>6s}")
    for (k, i, j), (t, y), m, s in zip(picks, pts, fk.w1, fk.stderr):
        g = corr.w1[k, i, j]
        print(f"{t:8.4f} {y[0]:6.2f} {y[1]:6.2f} {g:10.6f} {m:10.6f} {s:9.2e} {(m - g) / s:6.2f}")


if __name__ == "__main__":
    main()
