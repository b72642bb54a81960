"""Resolvent-PDE solver and the drift-removing change of variables.

Solves (lambda - L) u = b2 + (b2 . grad) u on a box with homogeneous Neumann
conditions, where L is the second-order part of the diffusion generator.
A solution with small enough norms certifies that theta(x) = x + u(x) is a
bi-Lipschitz homeomorphism, which is then used to push the SDE coefficients
forward to a system with Lipschitz drift.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import splu

from .model import Box

__all__ = [
    "GridFunction",
    "ZvonkinMap",
    "TransformedSde",
    "SolveFailure",
    "solve_resolvent",
    "find_lambda0",
    "Lambda0Result",
    "theta",
    "theta_inv",
    "transform",
    "save_map",
    "load_map",
]

CERTIFY_NORM_SUM = 0.5
DEFAULT_MARGIN = 0.2


class SolveFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Grid functions

def _axis_gradient(values, axes_h, axis):
    """Centered differences, one-sided at the boundary, along one grid axis."""
    return np.gradient(values, axes_h[axis], axis=axis, edge_order=2)


@dataclass
class GridFunction:
    """Vector-valued multilinear-interpolated function on a tensor grid."""

    box: Box
    axes: list            # per-axis node coordinates
    values: np.ndarray    # shape (*grid_shape, m)

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")
        self._interp = RegularGridInterpolator(self.axes, self.values, method="linear",
                                               bounds_error=True)
        self._jac_interp = None
        self._hess_interp = None

    @property
    def m(self):
        return self.values.shape[-1]

    @property
    def grid_shape(self):
        return self.values.shape[:-1]

    def steps(self):
        return [ax[1] - ax[0] for ax in self.axes]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        if len(self.axes) == 1:
            out = self._interp1d(pts, self.values)
        else:
            out = self._interp(pts)
        return out[0] if single else out

    def _interp1d(self, pts, values):
        """np.interp fast path for 1-D grids (the interpolator overhead
        dominates the per-step cost of simulation and optimization)."""
        ax = self.axes[0]
        xq = pts[:, 0]
        if xq.min() < ax[0] - 1e-9 or xq.max() > ax[-1] + 1e-9:
            raise ValueError("interpolation point outside the grid box")
        flat = values.reshape(len(ax), -1)
        return np.stack([np.interp(xq, ax, flat[:, c])
                         for c in range(flat.shape[1])], axis=-1)

    def jacobian_grid(self):
        """J[..., c, i] = d u_c / d x_i at the nodes (finite differences)."""
        h = self.steps()
        m, d = self.m, len(self.axes)
        jac = np.empty(self.grid_shape + (m, d))
        for c in range(m):
            for i in range(d):
                jac[..., c, i] = _axis_gradient(self.values[..., c], h, i)
        return jac

    def hessian_grid(self):
        """H[..., c, i, j] = d^2 u_c / d x_i d x_j at the nodes."""
        h = self.steps()
        m, d = self.m, len(self.axes)
        jac = self.jacobian_grid()
        hess = np.empty(self.grid_shape + (m, d, d))
        for c in range(m):
            for i in range(d):
                for j in range(d):
                    hess[..., c, i, j] = _axis_gradient(jac[..., c, i], h, j)
        return hess

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        if len(self.axes) == 1:
            if self._jac_interp is None:
                self._jac_interp = self.jacobian_grid()
            out = self._interp1d(pts, self._jac_interp)
            out = out.reshape(pts.shape[0], self.m, 1)
        else:
            if self._jac_interp is None:
                self._jac_interp = RegularGridInterpolator(
                    self.axes, self.jacobian_grid(), method="linear", bounds_error=True)
            out = self._jac_interp(pts)
        return out[0] if single else out


# ---------------------------------------------------------------------------
# Discrete generator assembly

def _reflect(idx, n):
    """Reflect out-of-range neighbor indices for homogeneous Neumann walls."""
    idx = np.where(idx < 0, -idx, idx)
    idx = np.where(idx >= n, 2 * (n - 1) - idx, idx)
    return idx


def _assemble_operator(axes, a_nodes, lam):
    """Sparse matrix of lambda*I - L with centered stencils and Neumann walls.

    a_nodes: (n_points, d, d) diffusion matrix sigma sigma^T at the nodes.
    """
    shape = tuple(len(ax) for ax in axes)
    d = len(shape)
    n_pts = int(np.prod(shape))
    h = [ax[1] - ax[0] for ax in axes]
    strides = np.array([int(np.prod(shape[k + 1:])) for k in range(d)])
    idx_nd = np.stack(np.meshgrid(*[np.arange(n) for n in shape], indexing="ij"),
                      axis=-1).reshape(n_pts, d)

    def flat(nd):
        return nd @ strides

    rows, cols, data = [], [], []
    diag = np.full(n_pts, lam)
    base = np.arange(n_pts)

    def add(nd_neighbor, coeff):
        rows.append(base)
        cols.append(flat(nd_neighbor))
        data.append(coeff)

    for i in range(d):
        aii = a_nodes[:, i, i]
        coeff = 0.5 * aii / h[i] ** 2
        for sgn in (+1, -1):
            nb = idx_nd.copy()
            nb[:, i] = _reflect(nb[:, i] + sgn, shape[i])
            add(nb, -coeff)
        diag += 2 * coeff

    for i in range(d):
        for j in range(i + 1, d):
            aij = a_nodes[:, i, j]
            coeff = aij / (4.0 * h[i] * h[j])  # symmetric pair: 2 * (1/2) a_ij
            for si, sj, sign in ((1, 1, -1.0), (-1, -1, -1.0), (1, -1, 1.0), (-1, 1, 1.0)):
                nb = idx_nd.copy()
                nb[:, i] = _reflect(nb[:, i] + si, shape[i])
                nb[:, j] = _reflect(nb[:, j] + sj, shape[j])
                add(nb, sign * coeff)

    rows.append(base)
    cols.append(base)
    data.append(diag)
    A = csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                   shape=(n_pts, n_pts))
    A.sum_duplicates()
    return A


# ---------------------------------------------------------------------------
# Norms

def _spectral_norm(mats):
    """Largest singular value per stacked matrix."""
    if mats.shape[-1] == 1 and mats.shape[-2] == 1:
        return np.abs(mats[..., 0, 0])
    return np.linalg.norm(mats, ord=2, axis=(-2, -1))


def _measure_norms(gf):
    u_norm = float(np.max(np.linalg.norm(gf.values, axis=-1)))
    jac = gf.jacobian_grid()
    grad_norm = float(np.max(_spectral_norm(jac.reshape(-1, gf.m, len(gf.axes)))))
    hess = gf.hessian_grid()
    # sup over nodes of the Euclidean norm over components of per-component
    # Hessian spectral norms (plain sup-norm reading of the bound)
    per_comp = _spectral_norm(hess.reshape(-1, gf.m, len(gf.axes), len(gf.axes))
                              .reshape(-1, len(gf.axes), len(gf.axes)))
    per_comp = per_comp.reshape(-1, gf.m)
    hess_norm = float(np.max(np.linalg.norm(per_comp, axis=-1)))
    return u_norm, grad_norm, hess_norm


# ---------------------------------------------------------------------------
# Zvonkin map

@dataclass
class ZvonkinMap:
    lam: float
    u: GridFunction
    norms: tuple          # (||u||, ||grad u||, ||hess u||) on the grid
    residual: float       # interior sup-norm PDE residual
    certified: bool
    picard_iters: int = 0
    margin: float = DEFAULT_MARGIN

    @property
    def norm_sum(self):
        return float(sum(self.norms))

    @property
    def box(self):
        return self.u.box

    def interior_box(self):
        return self.u.box.shrink(self.margin)

    def certificate_line(self):
        a, b, c = self.norms
        return (f"lambda={self.lam:g} norms=({a:.6g},{b:.6g},{c:.6g}) "
                f"sum={self.norm_sum:.6g} certified={str(self.certified).lower()}")


def _interior_mask(shape):
    mask = np.ones(shape, dtype=bool)
    for axis, n in enumerate(shape):
        sl = [slice(None)] * len(shape)
        sl[axis] = 0
        mask[tuple(sl)] = False
        sl[axis] = n - 1
        mask[tuple(sl)] = False
    return mask.reshape(-1)


def solve_resolvent(problem, lam, box=None, resolution=257, tol=1e-10, max_iters=60,
                    margin=DEFAULT_MARGIN):
    """Picard iteration for the vector resolvent equation on the noisy block.

    Each step solves the linear problem (lambda - L) u_{k+1} = b2 + (b2 . grad) u_k
    with one sparse LU factorization shared across steps and components.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    box = box or problem.noisy_box()
    m = problem.noisy_dim
    if resolution < 17:
        raise ValueError("resolution must be at least 17 points per axis")
    axes = [np.linspace(box.lo[i], box.hi[i], resolution) for i in range(m)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    nodes = mesh.reshape(-1, m)
    grid_shape = tuple(len(ax) for ax in axes)
    h = [ax[1] - ax[0] for ax in axes]

    sigma = problem.diffusion(nodes)
    a_nodes = sigma @ np.swapaxes(sigma, -1, -2)
    b2 = problem.singular_or_zero()(nodes)

    A = _assemble_operator(axes, a_nodes, lam)
    lu = splu(A.tocsc())

    u = np.zeros(grid_shape + (m,))
    update = np.inf
    for it in range(1, max_iters + 1):
        rhs = b2.copy()
        # transport term (b2 . grad) u_k via grid differences
        grad_dot = np.zeros_like(rhs)
        for c in range(m):
            for i in range(m):
                gi = _axis_gradient(u[..., c], h, i).reshape(-1)
                grad_dot[:, c] += b2[:, i] * gi
        rhs += grad_dot
        u_new = np.stack([lu.solve(rhs[:, c]) for c in range(m)], axis=-1)
        u_new = u_new.reshape(grid_shape + (m,))
        update = float(np.max(np.abs(u_new - u)))
        u = u_new
        if update < tol:
            break
    else:
        raise SolveFailure(f"Picard iteration did not converge within {max_iters} steps "
                           f"(last update {update:.3e})")

    gf = GridFunction(box=box, axes=axes, values=u)
    norms = _measure_norms(gf)

    # interior residual of L u + b2 + (b2.grad)u - lambda u with the same stencils
    flat_u = u.reshape(-1, m)
    rhs_final = b2.copy()
    for c in range(m):
        for i in range(m):
            rhs_final[:, c] += b2[:, i] * _axis_gradient(u[..., c], h, i).reshape(-1)
    res = rhs_final - np.stack([A @ flat_u[:, c] for c in range(m)], axis=-1)
    interior = _interior_mask(grid_shape)
    residual = float(np.max(np.abs(res[interior]))) if np.any(interior) else 0.0

    # tiny slack so a norm sum of exactly 1/2 is not rejected by roundoff
    certified = sum(norms) <= CERTIFY_NORM_SUM * (1.0 + 1e-9) + 1e-12
    return ZvonkinMap(lam=lam, u=gf, norms=norms, residual=residual,
                      certified=certified, picard_iters=it, margin=margin)


@dataclass
class Lambda0Result:
    lambda0: float
    map: ZvonkinMap
    trail: list  # (lambda, norms, norm_sum) along the ladder


def find_lambda0(problem, box=None, resolution=257, lambda_start=1.0, growth=2.0,
                 tol=1e-10, max_doublings=20, margin=DEFAULT_MARGIN):
    """Geometric lambda ladder; returns the first certified resolvent map."""
    if lambda_start <= 0 or growth <= 1:
        raise ValueError("need lambda_start > 0 and growth > 1")
    trail = []
    lam = lambda_start
    for _ in range(max_doublings + 1):
        zmap = solve_resolvent(problem, lam, box=box, resolution=resolution, tol=tol,
                               margin=margin)
        trail.append((lam, zmap.norms, zmap.norm_sum))
        if zmap.certified:
            return Lambda0Result(lambda0=lam, map=zmap, trail=trail)
        lam *= growth
    sums = ", ".join(f"{l:g}:{s:.3g}" for l, _, s in trail)
    raise SolveFailure(f"no certified lambda at or below {lam / growth:g} "
                       f"(norm-sum trajectory {sums})")


# ---------------------------------------------------------------------------
# Homeomorphism

def theta(zmap, x):
    """theta(x) = x + u(x)."""
    x = np.asarray(x, dtype=float)
    return x + zmap.u(x)


def theta_inv(zmap, y, tol=1e-12, max_iters=200, record_steps=False):
    """Inverse by the contraction x <- y - u(x); geometric rate <= 1/2."""
    if not zmap.certified:
        raise SolveFailure("theta_inv requires a certified map")
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    x = np.atleast_2d(y).copy()
    steps = []
    for _ in range(max_iters):
        inside = zmap.box.contains(x, tol=1e-12)
        if not np.all(inside):
            raise SolveFailure("inverse iteration left the box: target outside the image")
        x_new = np.atleast_2d(y) - zmap.u(np.clip(x, zmap.box.lo, zmap.box.hi))
        step = float(np.max(np.linalg.norm(x_new - x, axis=-1)))
        steps.append(step)
        x = x_new
        if step < tol:
            break
    else:
        raise SolveFailure(f"inverse iteration did not reach tol={tol}")
    if record_steps:
        return (x[0] if single else x), steps
    return x[0] if single else x


# ---------------------------------------------------------------------------
# Coefficient transform

@dataclass
class TransformedSde:
    """Coefficients of the conjugated system driven through theta."""

    base: object          # the source SdeProblem
    map: ZvonkinMap

    def __post_init__(self):
        if not self.map.certified:
            raise SolveFailure("transform requires a certified map")

    @property
    def layout(self):
        return self.base.layout

    def start(self):
        x0 = self.base.start
        if self.layout == "nondegenerate":
            return theta(self.map, x0)
        d1, _ = self.base.dims
        return np.concatenate([x0[:d1], theta(self.map, x0[d1:])])

    def _inv(self, y):
        return theta_inv(self.map, y)

    def _grad_theta(self, x):
        jac = self.map.u.jacobian(x)
        eye = np.eye(self.map.u.m)
        return jac + eye

    # non-degenerate coefficients ------------------------------------------
    def drift(self, eps):
        base, zmap = self.base, self.map

        def func(y):
            x = self._inv(y)
            pts = np.atleast_2d(x)
            grad = self._grad_theta(pts)
            b1 = np.atleast_2d(base.drift.at(eps)(pts))
            out = np.einsum("nij,nj->ni", grad, b1)
            if eps != 0.0:
                out = out + eps * zmap.lam * np.atleast_2d(zmap.u(pts))
            return out if np.asarray(y).ndim > 1 else out[0]

        return func

    def drift_limit(self):
        return self.drift(0.0)

    def diffusion(self):
        base = self.base

        def func(y):
            x = self._inv(y)
            pts = np.atleast_2d(x)
            grad = self._grad_theta(pts)
            sig = base.diffusion(pts)
            out = grad @ np.atleast_3d(sig).reshape(pts.shape[0], base.noisy_dim,
                                                    base.noisy_dim)
            return out if np.asarray(y).ndim > 1 else out[0]

        return func

    # degenerate coefficients ----------------------------------------------
    def degenerate_drifts(self, eps):
        """Returns (x-drift, y-drift) callables on the joint state (x, ytilde)."""
        base, zmap = self.base, self.map
        d1, d2 = base.dims

        def split(z):
            pts = np.atleast_2d(z)
            x, yt = pts[:, :d1], pts[:, d1:]
            yorig = theta_inv(zmap, yt)
            return pts, np.concatenate([x, np.atleast_2d(yorig)], axis=1), np.atleast_2d(yorig)

        def x_drift(z):
            pts, joint, _ = split(z)
            out = np.atleast_2d(base.bbar.at(eps)(joint))
            return out if np.asarray(z).ndim > 1 else out[0]

        def y_drift(z):
            pts, joint, yorig = split(z)
            grad = self._grad_theta(yorig)
            Bb = np.atleast_2d(base.Bbar.at(eps)(joint))
            out = np.einsum("nij,nj->ni", grad, Bb)
            if eps != 0.0:
                out = out + eps * zmap.lam * np.atleast_2d(zmap.u(yorig))
            return out if np.asarray(z).ndim > 1 else out[0]

        return x_drift, y_drift

    def degenerate_diffusion(self):
        base, zmap = self.base, self.map
        d1, d2 = base.dims

        def func(z):
            pts = np.atleast_2d(z)
            yorig = np.atleast_2d(theta_inv(zmap, pts[:, d1:]))
            grad = self._grad_theta(yorig)
            sig = np.atleast_3d(base.diffusion(yorig)).reshape(pts.shape[0], d2, d2)
            out = grad @ sig
            return out if np.asarray(z).ndim > 1 else out[0]

        return func


def transform(problem, zmap):
    return TransformedSde(base=problem, map=zmap)


# ---------------------------------------------------------------------------
# Serialization: JSON header + CSV node values

def save_map(zmap, header_path, values_path):
    header = {
        "lambda": zmap.lam,
        "box_lo": zmap.box.lo.tolist(),
        "box_hi": zmap.box.hi.tolist(),
        "resolution": list(zmap.u.grid_shape),
        "norms": list(zmap.norms),
        "residual": zmap.residual,
        "certified": zmap.certified,
        "margin": zmap.margin,
    }
    with open(header_path, "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2)
        fh.write("\n")
    flat = zmap.u.values.reshape(-1, zmap.u.m)
    with open(values_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"u{c + 1}" for c in range(zmap.u.m)])
        for row in flat:
            writer.writerow([f"{float(v):.17g}" for v in row])


def load_map(header_path, values_path):
    with open(header_path, "r", encoding="utf-8") as fh:
        header = json.load(fh)
    box = Box.of(header["box_lo"], header["box_hi"])
    shape = tuple(header["resolution"])
    with open(values_path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        flat = np.array([[float(v) for v in row] for row in reader])
    gf = GridFunction(box=box,
                      axes=[np.linspace(box.lo[i], box.hi[i], shape[i])
                            for i in range(len(shape))],
                      values=flat.reshape(shape + (flat.shape[-1],)))
    return ZvonkinMap(lam=header["lambda"], u=gf, norms=tuple(header["norms"]),
                      residual=header["residual"], certified=header["certified"],
                      margin=header.get("margin", DEFAULT_MARGIN))
