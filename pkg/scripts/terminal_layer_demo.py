"""Contraction constants and the Picard fixed point of the terminal layer.

Runs the constant-coefficient model (closed form available) and the
two-factor tanh model, printing the ball radius, the admissible width, the
iteration trace and the contraction ratios.
"""

import numpy as np

from robust_liquidation.grid import make_grid
from robust_liquidation.model import constant_model, example_ex1_model, make_params
from robust_liquidation.terminal_layer import layer_constants, sigma_norm, terminal_layer


def report(name, model, params, box, n_space):
    c = layer_constants(model, params, make_grid(1.0, box, n_space, per_octave=16))
    grid = make_grid(c.delta_max, box, n_space, per_octave=16)
    sol = terminal_layer(model, params, grid, c.R, c.delta_max)
    print(f"{name}: M={c.M:.4f} R={c.R:.4f} delta={c.delta_max:.4g} iterations={sol.iterations} "
          f"max ratio={sol.max_ratio:.2e} certified={sol.certified} norm={sol.norm:.4g}")
    print("  update trace:", " ".join(f"{u:.2e}" for u in sol.trace))
    return sol


def main():
    lam = 0.25
    sol = report("constant", constant_model(1, eta=1.0, lam=lam), make_params(2.0, 4.0, 1.0, 0.0),
                 [(-2.0, 2.0)], 21)
    tau = sol.tau
    w = np.ones_like(tau)
    w[1:] = np.sqrt(lam) * tau[1:] / np.tanh(np.sqrt(lam) * tau[1:])
    err = sigma_norm(tau, sol.u - ((w - 1) * tau)[:, None], np.zeros_like(sol.Du), 1.0) / sol.norm
    print(f"  relative weighted-norm error against the closed form: {err:.2e}")
    report("ex1", example_ex1_model(), make_params(2.0, 4.0, 1.0, 0.1), [(-4.0, 4.0), (-4.0, 4.0)], 41)


if __name__ == "__main__":
    main()
