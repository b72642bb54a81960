"""Monte Carlo rare-event ladders, slope regression, and bound checks.

Paths are simulated in vectorized chunks with counter-based noise: the
increments of path ``i`` at ladder point ``j`` depend only on (seed, j, i),
so estimates are byte-for-byte reproducible for any chunking or worker count,
and runs with and without the singular drift share their noise exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "EventSpec",
    "terminal_event",
    "path_sup_event",
    "predicate_event",
    "LadderPoint",
    "LdpEstimate",
    "BoundReport",
    "wilson_interval",
    "estimate_probability",
    "fit_slope",
    "ldp_experiment",
    "bound_check",
]

_CHUNK = 32768


# ---------------------------------------------------------------------------
# Events

@dataclass
class EventSpec:
    """A path event: terminal set membership, running-sup exceedance, or a
    user predicate on the full path.

    ``open_or_closed`` is a declared reporting label selecting which side of
    the large-deviation sandwich the event nominally exercises; it is not a
    computed topological fact.
    """

    kind: str                      # terminal_in | path_sup_exceeds | predicate
    open_or_closed: str = "closed"
    target: object = None          # Target with .distance, for terminal_in
    level: float = 0.0
    coordinate: int = 0
    predicate: object = None       # PathSample -> bool
    description: str = ""

    def __post_init__(self):
        if self.kind not in ("terminal_in", "path_sup_exceeds", "predicate"):
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.open_or_closed not in ("open", "closed"):
            raise ValueError("open_or_closed must be 'open' or 'closed'")


def terminal_event(target, open_or_closed="closed"):
    return EventSpec(kind="terminal_in", target=target, open_or_closed=open_or_closed,
                     description=f"terminal in {target.description}")


def path_sup_event(level, coordinate=0, open_or_closed="closed"):
    return EventSpec(kind="path_sup_exceeds", level=level, coordinate=coordinate,
                     open_or_closed=open_or_closed,
                     description=f"sup_t z[{coordinate}] >= {level}")


def predicate_event(fn, open_or_closed="closed", description="predicate"):
    return EventSpec(kind="predicate", predicate=fn, open_or_closed=open_or_closed,
                     description=description)


# ---------------------------------------------------------------------------
# Results

@dataclass
class LadderPoint:
    eps: float
    n_paths: int
    hits: int
    p_hat: float
    ci_lo: float
    ci_hi: float
    escapes: int = 0


@dataclass
class LdpEstimate:
    ladder: list
    slope: float
    slope_stderr: float
    per_eps_points: list           # (1/eps, log p_hat) pairs used in the fit
    with_singular: bool = True

    def as_csv(self):
        lines = ["eps,n_paths,hits,p_hat,ci_lo,ci_hi"]
        for pt in self.ladder:
            lines.append(f"{pt.eps},{pt.n_paths},{pt.hits},{pt.p_hat:.10g},"
                         f"{pt.ci_lo:.10g},{pt.ci_hi:.10g}")
        return "\n".join(lines) + "\n"


@dataclass
class BoundReport:
    passed: bool
    side: str
    slope: float
    stderr: float
    rate_value: float
    margin: float

    def line(self):
        verdict = "pass" if self.passed else "FAIL"
        return (f"{verdict}: side={self.side} slope={self.slope:.5f} "
                f"stderr={self.stderr:.5f} rate={self.rate_value:.5f} "
                f"margin={self.margin:.5f}")


def wilson_interval(hits, n, z=1.959963984540054):
    """Wilson 95% score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("n must be positive")
    p = hits / n
    denom = 1.0 + z ** 2 / n
    center = (p + z ** 2 / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z ** 2 / (4 * n ** 2)) / denom
    lo = 0.0 if hits == 0 else max(center - half, 0.0)
    hi = 1.0 if hits == n else min(center + half, 1.0)
    return float(lo), float(hi)


# ---------------------------------------------------------------------------
# Vectorized chunk simulation

def _chunk_increments(seed, point_index, path_lo, path_hi, n_steps, dim, dt):
    """Per-path Philox increments for a contiguous block of path indices."""
    out = np.empty((path_hi - path_lo, n_steps, dim))
    base = np.uint64((int(seed) + int(point_index) * 0x9E3779B97F4A7C15) % 2 ** 64)
    sd = np.sqrt(dt)
    for i in range(path_lo, path_hi):
        gen = np.random.Generator(np.random.Philox(
            key=np.array([base, np.uint64(i)], dtype=np.uint64)))
        out[i - path_lo] = gen.standard_normal((n_steps, dim)) * sd
    return out


def _batch_dynamics(problem, eps, with_singular):
    """(drift, noise_map, x0, noisy_slice) callables on (B, dim) batches."""
    if problem.layout == "nondegenerate":
        b1 = problem.drift.at(eps)
        b2 = problem.singular_or_zero() if with_singular else None
        sigma = problem.diffusion

        def drift(z):
            out = b1(z)
            if b2 is not None and eps != 0.0:
                out = out + eps * b2(z)
            return out

        def noise(z, dw):
            return np.einsum("nij,nj->ni", sigma(z), dw)

        return drift, noise, problem.state_dim
    d1, d2 = problem.dims
    bbar = problem.bbar.at(eps)
    Bbar = problem.Bbar.at(eps)
    b2 = problem.singular_or_zero() if with_singular else None
    sigma = problem.diffusion

    def drift(z):
        vy = Bbar(z)
        if b2 is not None and eps != 0.0:
            vy = vy + eps * b2(z[:, d1:])
        return np.concatenate([bbar(z), vy], axis=1)

    def noise(z, dw):
        dy = np.einsum("nij,nj->ni", sigma(z[:, d1:]), dw)
        return np.concatenate([np.zeros((z.shape[0], d1)), dy], axis=1)

    return drift, noise, d2


def _simulate_chunk(problem, event, eps, n_steps, increments, collect_paths=False):
    """Euler-Maruyama over one chunk; returns (hit mask, escaped mask).

    Escaped paths are frozen at their last in-box state and excluded from the
    hit count by the caller.
    """
    B = increments.shape[0]
    dt = problem.horizon_T / n_steps
    drift, noise, _ = _batch_dynamics(problem, eps, getattr(event, "_with_singular", True))
    z = np.broadcast_to(problem.start.astype(float), (B, problem.state_dim)).copy()
    alive = np.ones(B, dtype=bool)
    sup_track = z[:, event.coordinate].copy() if event.kind == "path_sup_exceeds" else None
    paths = np.empty((B, n_steps + 1, problem.state_dim)) if collect_paths else None
    if collect_paths:
        paths[:, 0] = z
    sqrt_eps = np.sqrt(eps)
    box = problem.working_box
    for k in range(n_steps):
        if not alive.any():
            if collect_paths:
                paths[:, k + 1:] = z[:, None, :]
            break
        idx = np.nonzero(alive)[0]
        za = z[idx]
        step = za + drift(za) * dt
        if eps != 0.0:
            step = step + sqrt_eps * noise(za, increments[idx, k])
        ok = np.all(np.isfinite(step), axis=1) & box.contains(step)
        z[idx[ok]] = step[ok]
        alive[idx[~ok]] = False
        if sup_track is not None:
            sup_track[idx[ok]] = np.maximum(sup_track[idx[ok]], step[ok, event.coordinate])
        if collect_paths:
            paths[:, k + 1] = z
    escaped = ~alive
    if event.kind == "terminal_in":
        hits = event.target.distance(z) <= 0.0
    elif event.kind == "path_sup_exceeds":
        hits = sup_track >= event.level
    else:
        from .simulate import PathSample

        times = np.arange(n_steps + 1) * dt
        hits = np.array([bool(event.predicate(
            PathSample(times=times, states=paths[i], seed=0, epsilon=eps, dt=dt)))
            for i in range(B)])
    return np.asarray(hits, dtype=bool), escaped


def estimate_probability(problem, event, eps, n_paths, n_steps, seed,
                         with_singular=True, point_index=0, chunk=_CHUNK):
    """Monte Carlo event probability with Wilson 95% interval and escape count."""
    if n_paths < 100:
        raise ValueError("n_paths must be at least 100")
    if n_steps < 1:
        raise ValueError("n_steps must be positive")
    event._with_singular = with_singular
    dt = problem.horizon_T / n_steps
    dim = _batch_dynamics(problem, eps, with_singular)[2]
    hits = 0
    escapes = 0
    collect = event.kind == "predicate"
    for lo in range(0, n_paths, chunk):
        hi = min(lo + chunk, n_paths)
        inc = _chunk_increments(seed, point_index, lo, hi, n_steps, dim, dt)
        hit_mask, esc_mask = _simulate_chunk(problem, event, eps, n_steps, inc,
                                             collect_paths=collect)
        hits += int(np.sum(hit_mask & ~esc_mask))
        escapes += int(np.sum(esc_mask))
    if escapes == n_paths:
        raise RuntimeError("all paths escaped the working box")
    p_hat = hits / n_paths
    lo_ci, hi_ci = wilson_interval(hits, n_paths)
    return LadderPoint(eps=float(eps), n_paths=n_paths, hits=hits, p_hat=p_hat,
                       ci_lo=lo_ci, ci_hi=hi_ci, escapes=escapes)


# ---------------------------------------------------------------------------
# Slope fit

def _as_point(entry):
    if isinstance(entry, LadderPoint):
        return entry.eps, entry.p_hat, entry.n_paths
    if len(entry) == 2:
        eps, p = entry
        return float(eps), float(p), None
    eps, p, n = entry[:3]
    return float(eps), float(p), int(n) if n else None


def fit_slope(ladder):
    """Weighted least squares of log p_hat against 1/eps with free intercept.

    Weights come from the delta-method variance of log p_hat, (1-p)/(n p);
    entries without a path count get unit weight. Points with p_hat in {0, 1}
    are dropped with a warning; at least 3 usable points are required.
    Returns (slope, stderr) where stderr scales the weighted covariance by
    the residual variance, so an exact affine ladder reports stderr 0.
    """
    pts = [_as_point(e) for e in ladder]
    usable = [(e, p, n) for e, p, n in pts if 0.0 < p < 1.0]
    dropped = len(pts) - len(usable)
    if dropped:
        warnings.warn(f"dropped {dropped} ladder point(s) with p_hat in {{0, 1}}",
                      stacklevel=2)
    if len(usable) < 3:
        raise ValueError("slope fit needs at least 3 ladder points with p_hat in (0,1)")
    x = np.array([1.0 / e for e, _, _ in usable])
    y = np.array([np.log(p) for _, p, _ in usable])
    w = np.array([n * p / (1.0 - p) if n else 1.0 for _, p, n in usable])
    X = np.column_stack([x, np.ones_like(x)])
    WX = X * w[:, None]
    cov = np.linalg.inv(X.T @ WX)
    beta = cov @ (WX.T @ y)
    resid = y - X @ beta
    dof = len(usable) - 2
    s2 = float(resid @ (w * resid)) / dof if dof > 0 else 0.0
    slope = float(beta[0])
    stderr = float(np.sqrt(max(s2, 0.0) * cov[0, 0]))
    return slope, stderr


def ldp_experiment(problem, event, eps_ladder, n_paths, n_steps, seed,
                   with_singular=True, chunk=_CHUNK):
    """Ladder of probability estimates plus the fitted decay slope.

    Noise streams depend only on (seed, ladder position, path index), so a
    rerun with ``with_singular`` toggled reuses the identical Brownian paths.
    """
    ladder = []
    for j, eps in enumerate(eps_ladder):
        ladder.append(estimate_probability(problem, event, eps, n_paths, n_steps,
                                           seed, with_singular=with_singular,
                                           point_index=j, chunk=chunk))
    slope, stderr = fit_slope(ladder)
    if slope > 0 and all(pt.p_hat < 1.0 for pt in ladder):
        warnings.warn("fitted slope is positive while probabilities decay",
                      stacklevel=2)
    used = [(1.0 / pt.eps, float(np.log(pt.p_hat))) for pt in ladder
            if 0.0 < pt.p_hat < 1.0]
    return LdpEstimate(ladder=ladder, slope=slope, slope_stderr=stderr,
                       per_eps_points=used, with_singular=with_singular)


def bound_check(estimate, rate, side):
    """Compare the Monte Carlo slope with the minimized rate on one side.

    For closed-type events the decay can only be as slow as the rate allows
    (slope <= -value + margin); for open-type at least as fast is forbidden
    (slope >= -value - margin). margin = 2*stderr + 0.1*|value|.
    """
    if side not in ("upper_for_closed", "lower_for_open"):
        raise ValueError("side must be 'upper_for_closed' or 'lower_for_open'")
    if hasattr(rate, "converged") and not rate.converged:
        raise ValueError("rate result did not converge")
    value = rate.value if hasattr(rate, "value") else float(rate)
    slope, stderr = estimate.slope, estimate.slope_stderr
    margin = 2.0 * stderr + 0.1 * abs(value)
    if side == "upper_for_closed":
        passed = slope <= -value + margin
    else:
        passed = slope >= -value - margin
    return BoundReport(passed=bool(passed), side=side, slope=slope, stderr=stderr,
                       rate_value=float(value), margin=float(margin))
