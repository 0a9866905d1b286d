import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robust_liquidation.grid import OutsideGridError, make_grid, octave_tau, space_weights, time_weights
from robust_liquidation.rng import block_generator, block_sizes, map_blocks, mean_and_stderr


def test_octave_grid_contains_dyadic_maturities():
    tau = octave_tau(1.0, 1e-4, 16)
    for k in range(0, 14):
        assert np.min(np.abs(tau - 2.0**-k)) < 1e-15
    assert tau.min() == pytest.approx(1e-4) and tau.max() == 1.0
    assert np.all(np.diff(np.sort(tau)) > 0)


def test_grid_layout():
    g = make_grid(2.0, [(-1.0, 1.0), (0.0, 3.0)], (11, 31), per_octave=8)
    assert g.shape == (11, 31)
    assert g.t_nodes[0] == 0.0
    assert g.T - g.t_nodes[-1] == pytest.approx(g.tau_min)
    assert np.allclose(g.spacing, [0.2, 0.1])
    assert g.points().shape == (11 * 31, 2)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1.0, 1.0), st.floats(0.0, 3.0))
def test_bilinear_interpolation_exact_on_affine(y1, y2):
    g = make_grid(1.0, [(-1.0, 1.0), (0.0, 3.0)], (11, 31), per_octave=4)
    pts = g.points()
    f = (1.5 * pts[:, 0] - 0.7 * pts[:, 1] + 0.2).reshape(g.shape)
    idx, frac = space_weights(g.y_nodes, np.array([[y1, y2]]))
    i, j = idx[0]
    fx, fy = frac[0]
    val = ((f[i, j] * (1 - fx) + f[i + 1, j] * fx) * (1 - fy) + (f[i, j + 1] * (1 - fx) + f[i + 1, j + 1] * fx) * fy)
    assert val == pytest.approx(1.5 * y1 - 0.7 * y2 + 0.2, abs=1e-12)


def test_outside_grid_raises_with_location():
    g = make_grid(1.0, [(-1.0, 1.0)], 11, per_octave=4)
    with pytest.raises(OutsideGridError):
        space_weights(g.y_nodes, np.array([[1.5]]))
    with pytest.raises(OutsideGridError, match="maturity"):
        time_weights(g.tau, 2.0)


def test_random_blocks_do_not_depend_on_threads():
    def draw(j, n):
        return block_generator(7, 3, j).standard_normal(n)

    a = np.concatenate(map_blocks(draw, 10_000, threads=1))
    b = np.concatenate(map_blocks(draw, 10_000, threads=3))
    assert np.array_equal(a, b)
    assert block_sizes(10_000) == [4096, 4096, 1808]


def test_streams_are_distinct_and_reproducible():
    a = block_generator(1, 0, 0).standard_normal(8)
    assert np.array_equal(a, block_generator(1, 0, 0).standard_normal(8))
    assert not np.array_equal(a, block_generator(1, 1, 0).standard_normal(8))
    assert not np.array_equal(a, block_generator(1, 0, 1).standard_normal(8))


def test_mean_and_stderr():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    m, s = mean_and_stderr(x)
    assert m == 2.5
    assert s == pytest.approx(np.std(x, ddof=1) / 2)
