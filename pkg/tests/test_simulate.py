import numpy as np
import pytest

from ldplab.problems import load_problem
from ldplab.simulate import (EscapeError, brownian_increments, coarsen_increments,
                             conjugacy_check, simulate_degenerate, simulate_original,
                             simulate_transformed)
from ldplab.zvonkin import transform


def test_increments_reproducible_and_independent():
    a = brownian_increments(7, 0, 100, 2, 0.01)
    b = brownian_increments(7, 0, 100, 2, 0.01)
    c = brownian_increments(7, 1, 100, 2, 0.01)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert a.shape == (100, 2)


def test_increments_variance():
    dt = 0.25
    inc = brownian_increments(0, 0, 20000, 1, dt)
    assert np.var(inc) == pytest.approx(dt, rel=0.05)


def test_coarsen_preserves_total():
    inc = brownian_increments(3, 0, 64, 1, 0.01)
    coarse = coarsen_increments(inc, 4)
    assert coarse.shape == (16, 1)
    assert np.allclose(coarse.sum(axis=0), inc.sum(axis=0))
    with pytest.raises(ValueError):
        coarsen_increments(inc, 7)


def test_simulate_deterministic_at_zero_noise():
    problem = load_problem("ou-1d")
    problem.start[:] = 1.0
    path = simulate_original(problem, 0.0, 200, seed=1)
    # noiseless Euler flow of x' = -x from 1
    expected = (1.0 - problem.horizon_T / 200) ** 200
    assert path.states[-1, 0] == pytest.approx(expected, rel=1e-12)
    problem.start[:] = 0.0


def test_simulate_reproducible():
    problem = load_problem("brownian-1d")
    p1 = simulate_original(problem, 0.5, 100, seed=9)
    p2 = simulate_original(problem, 0.5, 100, seed=9)
    assert np.array_equal(p1.states, p2.states)


def test_brownian_terminal_matches_increment_sum():
    problem = load_problem("brownian-1d")
    path = simulate_original(problem, 0.25, 128, seed=4, keep_increments=True)
    assert path.states[-1, 0] == pytest.approx(
        0.5 * path.brownian_increments.sum(), rel=1e-12)


def test_escape_raises():
    problem = load_problem("brownian-1d")
    inc = np.full((10, 1), 5.0)  # deterministic huge jumps
    with pytest.raises(EscapeError):
        simulate_original(problem, 1.0, 10, seed=0, increments=inc)


def test_degenerate_x_block_noise_free():
    problem = load_problem("hamiltonian-2d")
    path = simulate_degenerate(problem, 0.25, 200, seed=11)
    dt = problem.horizon_T / 200
    dx = np.abs(np.diff(path.states[:, 0]))
    bbar_bound = np.max(np.abs(path.states[:, 1]))  # bbar(x, y) = y
    assert np.max(dx) <= bbar_bound * dt + 1e-12


def test_conjugacy_eps_zero_is_integrator_mismatch(dini_problem, dini_map):
    disc = conjugacy_check(dini_problem, dini_map, 0.0, 400, seed=0)
    assert disc <= 1e-4


def test_conjugacy_moderate_eps(dini_problem, dini_map):
    disc = conjugacy_check(dini_problem, dini_map, 0.5, 400, seed=0)
    assert disc <= 0.05


def test_transformed_path_reproducible(dini_problem, dini_map):
    tsde = transform(dini_problem, dini_map)
    p1 = simulate_transformed(tsde, 0.5, 100, seed=2)
    p2 = simulate_transformed(tsde, 0.5, 100, seed=2)
    assert np.array_equal(p1.states, p2.states)
