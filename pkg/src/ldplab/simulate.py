"""Euler-Maruyama simulation of the original, transformed, and degenerate
systems, with shared-noise coupling for conjugacy and refinement checks.

Noise is counter-based: every path derives its Brownian increments from a
Philox stream keyed by (seed, path_index), so results are independent of
execution order and worker count, and increments can be block-summed to
couple refinements of the time grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PathSample",
    "EscapeError",
    "brownian_increments",
    "coarsen_increments",
    "simulate_original",
    "simulate_transformed",
    "simulate_degenerate",
    "simulate_transformed_degenerate",
    "conjugacy_check",
]


class EscapeError(RuntimeError):
    def __init__(self, step, state):
        super().__init__(f"state escaped the working box at step {step}: {state}")
        self.step = step
        self.state = state


@dataclass
class PathSample:
    times: np.ndarray
    states: np.ndarray            # (n_steps + 1, dim)
    seed: int
    epsilon: float
    dt: float
    brownian_increments: np.ndarray | None = None


def brownian_increments(seed, path_index, n_steps, dim, dt):
    """Increments dW_k ~ N(0, dt I), a pure function of (seed, path_index)."""
    gen = np.random.Generator(np.random.Philox(key=np.array([seed, path_index],
                                                            dtype=np.uint64)))
    return gen.standard_normal((n_steps, dim)) * np.sqrt(dt)


def coarsen_increments(increments, factor):
    """Block-sum fine increments to a grid coarser by an integer factor."""
    n, dim = increments.shape
    if n % factor:
        raise ValueError("n_steps must be divisible by the coarsening factor")
    return increments.reshape(n // factor, factor, dim).sum(axis=1)


def _euler_path(x0, drift_fn, noise_fn, increments, dt, box=None, keep_increments=False,
                seed=0, eps=0.0):
    """Single-path explicit Euler-Maruyama with escape and finiteness checks."""
    n_steps = increments.shape[0]
    dim = x0.size
    states = np.empty((n_steps + 1, dim))
    states[0] = x0
    x = x0.copy()
    for k in range(n_steps):
        x = x + drift_fn(x) * dt + noise_fn(x, increments[k])
        if not np.all(np.isfinite(x)):
            raise EscapeError(k + 1, x)
        if box is not None and not bool(box.contains(x)[0]):
            raise EscapeError(k + 1, x)
        states[k + 1] = x
    times = np.arange(n_steps + 1) * dt
    return PathSample(times=times, states=states, seed=seed, epsilon=eps, dt=dt,
                      brownian_increments=increments if keep_increments else None)


def simulate_original(problem, eps, n_steps, seed, path_index=0, increments=None,
                      keep_increments=False, with_singular=True):
    """dX = (b1^eps + eps*b2) dt + sqrt(eps) sigma dW on the working box."""
    if not (0.0 <= eps < 1.0) and eps != 1.0:
        raise ValueError("eps must lie in [0, 1]")
    if n_steps < 1:
        raise ValueError("n_steps must be positive")
    n = problem.state_dim
    dt = problem.horizon_T / n_steps
    if increments is None:
        increments = brownian_increments(seed, path_index, n_steps, n, dt)
    b1 = problem.drift.at(eps)
    b2 = problem.singular_or_zero() if with_singular else None
    sigma = problem.diffusion
    sqrt_eps = np.sqrt(eps)

    def drift(x):
        out = b1(x)
        if b2 is not None and eps != 0.0:
            out = out + eps * b2(x)
        return out

    def noise(x, dw):
        if eps == 0.0:
            return 0.0
        return sqrt_eps * (sigma(x) @ dw)

    return _euler_path(problem.start.astype(float), drift, noise, increments, dt,
                       box=problem.working_box, keep_increments=keep_increments,
                       seed=seed, eps=eps)


def simulate_transformed(tsde, eps, n_steps, seed, path_index=0, increments=None,
                         keep_increments=False):
    """Transformed system started from theta(x0); same noise conventions."""
    if tsde.layout == "degenerate":
        return simulate_transformed_degenerate(tsde, eps, n_steps, seed,
                                               path_index=path_index,
                                               increments=increments,
                                               keep_increments=keep_increments)
    m = tsde.base.state_dim
    dt = tsde.base.horizon_T / n_steps
    if increments is None:
        increments = brownian_increments(seed, path_index, n_steps, m, dt)
    drift_fn = tsde.drift(eps)
    sigma_fn = tsde.diffusion()
    sqrt_eps = np.sqrt(eps)
    box = tsde.map.interior_box()

    def drift(y):
        return drift_fn(y)

    def noise(y, dw):
        if eps == 0.0:
            return 0.0
        return sqrt_eps * (sigma_fn(y) @ dw)

    return _euler_path(tsde.start().astype(float), drift, noise, increments, dt,
                       box=box, keep_increments=keep_increments, seed=seed, eps=eps)


def simulate_degenerate(problem, eps, n_steps, seed, path_index=0, increments=None,
                        keep_increments=False, with_singular=True):
    """dX = bbar^eps dt (no noise); dY = (Bbar^eps + eps*b) dt + sqrt(eps) sigma dW."""
    if problem.layout != "degenerate":
        raise ValueError("problem is not in the degenerate layout")
    d1, d2 = problem.dims
    dt = problem.horizon_T / n_steps
    if increments is None:
        increments = brownian_increments(seed, path_index, n_steps, d2, dt)
    bbar = problem.bbar.at(eps)
    Bbar = problem.Bbar.at(eps)
    b = problem.singular_or_zero() if with_singular else None
    sigma = problem.diffusion
    sqrt_eps = np.sqrt(eps)

    def drift(z):
        y = z[d1:]
        out_x = bbar(z)
        out_y = Bbar(z)
        if b is not None and eps != 0.0:
            out_y = out_y + eps * b(y)
        return np.concatenate([out_x, out_y])

    def noise(z, dw):
        if eps == 0.0:
            return 0.0
        y = z[d1:]
        dy = sqrt_eps * (sigma(y) @ dw)
        return np.concatenate([np.zeros(d1), dy])

    return _euler_path(problem.start.astype(float), drift, noise, increments, dt,
                       box=problem.working_box, keep_increments=keep_increments,
                       seed=seed, eps=eps)


def simulate_transformed_degenerate(tsde, eps, n_steps, seed, path_index=0,
                                    increments=None, keep_increments=False):
    d1, d2 = tsde.base.dims
    dt = tsde.base.horizon_T / n_steps
    if increments is None:
        increments = brownian_increments(seed, path_index, n_steps, d2, dt)
    x_drift, y_drift = tsde.degenerate_drifts(eps)
    sigma_fn = tsde.degenerate_diffusion()
    sqrt_eps = np.sqrt(eps)
    ibox = tsde.map.interior_box()
    xbox_lo = tsde.base.working_box.lo[:d1]
    xbox_hi = tsde.base.working_box.hi[:d1]

    def drift(z):
        return np.concatenate([x_drift(z), y_drift(z)])

    def noise(z, dw):
        if eps == 0.0:
            return 0.0
        dy = sqrt_eps * (sigma_fn(z) @ dw)
        return np.concatenate([np.zeros(d1), dy])

    class _JointBox:
        def contains(self, z):
            z = np.atleast_2d(z)
            ok_x = np.all((z[:, :d1] >= xbox_lo) & (z[:, :d1] <= xbox_hi), axis=-1)
            ok_y = ibox.contains(z[:, d1:])
            return ok_x & ok_y

    return _euler_path(tsde.start().astype(float), drift, noise, increments, dt,
                       box=_JointBox(), keep_increments=keep_increments, seed=seed,
                       eps=eps)


def conjugacy_check(problem, zmap, eps, n_steps, seed, tsde=None):
    """sup_k |theta(X_k) - Y_k| for shared-noise X and Y paths.

    The discrepancy is pure discretization error and must shrink as dt -> 0.
    """
    from .zvonkin import theta, transform

    tsde = tsde or transform(problem, zmap)
    if problem.layout == "nondegenerate":
        x_path = simulate_original(problem, eps, n_steps, seed, keep_increments=True)
        y_path = simulate_transformed(tsde, eps, n_steps, seed,
                                      increments=x_path.brownian_increments)
        mapped = theta(zmap, x_path.states)
        return float(np.max(np.linalg.norm(mapped - y_path.states, axis=-1)))
    d1, _ = problem.dims
    x_path = simulate_degenerate(problem, eps, n_steps, seed, keep_increments=True)
    y_path = simulate_transformed_degenerate(tsde, eps, n_steps, seed,
                                             increments=x_path.brownian_increments)
    mapped = np.concatenate([x_path.states[:, :d1],
                             theta(zmap, x_path.states[:, d1:])], axis=1)
    return float(np.max(np.linalg.norm(mapped - y_path.states, axis=-1)))
