"""Slanted graphs over tilted planes: grids, the linearized operator, curvature, barriers and the Neumann solve.

A slanted graph is the surface ``{(x', -cot(theta) x_1 + u(x'))}`` over the
slice coordinates ``x' = (x_1, ..., x_n)`` with ``x_1 <= 0``.  Grids use the
spacing ``h sin(theta)`` along x_1 and ``h`` along x_2, so that in the
stretched coordinates ``y_1 = x_1 / sin(theta)`` the lattice is square, the
squashed ball is round and the linearized operator is the plain Laplacian.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from .geometry import AngleField, MetricField, _check_angle, metric_unit_normal, squashed_norm
from .varifold import DiscreteVarifold, _empty, stable_sum

Array = np.ndarray

TOL_SOLVE = 1e-10
MAX_SOLVER_ITERATIONS = 100_000


class SolverError(RuntimeError):
    """Iterative solve failed; ``history`` holds the residual after each refinement round."""

    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = history


# ----------------------------------------------------------------------
# grids


@dataclass(frozen=True, eq=False)
class SliceGrid:
    """Structured lattice over the squashed ball ``B^theta_radius(center)`` intersected with ``{x_1 <= 0}``.

    Node ``(i, j)`` sits at ``x_1 = -i h sin(theta)``, ``x_2 = c_2 + j h``.
    Nodes strictly inside the squashed ball are *inside*; nodes outside with
    an inside neighbour (diagonals included) form the Dirichlet *ring*.
    """

    theta: float
    n: int
    h: float
    radius: float = 1.0
    center: tuple[float, ...] | None = None

    def __post_init__(self):
        _check_angle(self.theta)
        if self.n not in (1, 2):
            raise ValueError("n must be 1 or 2")
        if self.h <= 0 or self.radius <= 0:
            raise ValueError("spacing and radius must be positive")
        c = (0.0,) * self.n if self.center is None else tuple(float(v) for v in self.center)
        if len(c) != self.n or c[0] > 0:
            raise ValueError("centre must be a slice point with x_1 <= 0")
        object.__setattr__(self, "center", c)

    @property
    def sin(self) -> float:
        return float(np.sin(self.theta))

    @property
    def cot(self) -> float:
        return float(np.cos(self.theta) / np.sin(self.theta))

    @property
    def spacing(self) -> tuple[float, ...]:
        return (self.h * self.sin,) if self.n == 1 else (self.h * self.sin, self.h)

    @cached_property
    def shape(self) -> tuple[int, ...]:
        reach = self.radius - self.center[0] / self.sin
        n1 = int(np.ceil(reach / self.h - 1e-9)) + 2
        if self.n == 1:
            return (n1,)
        m = int(np.ceil(self.radius / self.h - 1e-9)) + 1
        return (n1, 2 * m + 1)

    @cached_property
    def coords(self) -> Array:
        """Slice coordinates of every node, shape ``shape + (n,)``."""
        x1 = -np.arange(self.shape[0]) * self.spacing[0]
        if self.n == 1:
            return x1[:, None]
        m = (self.shape[1] - 1) // 2
        x2 = self.center[1] + np.arange(-m, m + 1) * self.h
        a, b = np.meshgrid(x1, x2, indexing="ij")
        return np.stack([a, b], axis=-1)

    @cached_property
    def squashed(self) -> Array:
        return squashed_norm(self.coords - np.asarray(self.center), self.theta)

    @cached_property
    def inside(self) -> Array:
        return self.squashed < self.radius

    @cached_property
    def ring(self) -> Array:
        ins = self.inside
        pad = np.pad(ins, 1, constant_values=False)
        near = np.zeros_like(ins)
        offsets = [(-1,), (1,)] if self.n == 1 else [(a, b) for a in (-1, 0, 1) for b in (-1, 0, 1) if (a, b) != (0, 0)]
        for off in offsets:
            sl = tuple(slice(1 + o, 1 + o + s) for o, s in zip(off, ins.shape))
            near |= pad[sl]
        return near & ~ins

    @cached_property
    def active(self) -> Array:
        return self.inside | self.ring

    @property
    def wall(self) -> Array:
        """Mask of inside nodes on the wall x_1 = 0."""
        out = np.zeros(self.shape, dtype=bool)
        out[0] = self.inside[0]
        return out

    def same_lattice(self, other: "SliceGrid") -> bool:
        return (self.theta, self.n, self.h, self.radius, self.center) == (
            other.theta, other.n, other.h, other.radius, other.center)


@dataclass(eq=False)
class GraphFunction:
    """Height field ``u`` on a slice grid; NaN marks nodes outside the active set."""

    grid: SliceGrid
    values: Array
    params: dict = field(default_factory=dict)
    label: str = "u"

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise ValueError(f"values have shape {vals.shape}, grid has {self.grid.shape}")
        vals[~self.grid.active] = np.nan
        if not np.all(np.isfinite(vals[self.grid.active])):
            raise ValueError("values must be finite on the active nodes")
        self.values = vals

    @classmethod
    def from_function(cls, grid: SliceGrid, fn, label: str = "u", params: dict | None = None) -> "GraphFunction":
        vals = np.full(grid.shape, np.nan)
        vals[grid.active] = np.asarray(fn(grid.coords[grid.active]), dtype=float)
        return cls(grid, vals, dict(params or {}), label)

    @classmethod
    def zeros(cls, grid: SliceGrid) -> "GraphFunction":
        return cls.from_function(grid, lambda x: np.zeros(len(x)), "zero")

    @property
    def theta(self) -> float:
        return self.grid.theta

    def with_values(self, values, label: str | None = None) -> "GraphFunction":
        return GraphFunction(self.grid, values, dict(self.params), label or self.label)

    def heights(self) -> Array:
        """Graph height ``-cot(theta) x_1 + u`` at every node."""
        return -self.grid.cot * self.grid.coords[..., 0] + self.values

    def points(self, mask: Array | None = None) -> Array:
        """Ambient points of the graph over the masked nodes (default: active)."""
        mask = self.grid.active if mask is None else mask
        return np.concatenate([self.grid.coords[mask], self.heights()[mask][:, None]], axis=1)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values[self.grid.active])))

    def to_csv(self, path) -> None:
        """Grid export: slice coordinates and value per active node, plus a sidecar parameter block."""
        path = Path(path)
        g = self.grid
        names = ["x1"] if g.n == 1 else ["x1", "x2"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names + ["value"])
            for x, v in zip(g.coords[g.active], self.values[g.active]):
                w.writerow([repr(float(c)) for c in x] + [repr(float(v))])
        meta = {"theta": g.theta, "n": g.n, "h": g.h, "radius": g.radius, "center": g.center, "label": self.label}
        meta.update(self.params)
        with open(path.with_name(path.name + ".meta"), "w", encoding="utf-8") as fh:
            for k in sorted(meta):
                fh.write(f"{k} = {meta[k]!r}\n")


def _padded(values: Array) -> Array:
    return np.pad(values, 1, constant_values=np.nan)


def _shift(pad: Array, offset: tuple[int, ...]) -> Array:
    sl = tuple(slice(1 + o, pad.shape[k] - 1 + o) for k, o in enumerate(offset))
    return pad[sl]


# ----------------------------------------------------------------------
# operators


def linear_operator(u: GraphFunction, neumann: bool = False) -> Array:
    """Three/five-point evaluation of ``Delta u - cos^2(theta) d_1^2 u`` at inside nodes.

    Nodes whose stencil leaves the active set get NaN; wall nodes are
    evaluated only with ``neumann=True``, using the reflected ghost value.
    """
    g = u.grid
    pad = _padded(u.values)
    if neumann:
        pad[0] = pad[2]
    h2 = g.h * g.h
    # sin^2 / (h sin)^2 = 1 / h^2 along x_1
    out = (_shift(pad, (1,) + (0,) * (g.n - 1)) + _shift(pad, (-1,) + (0,) * (g.n - 1)) - 2.0 * u.values) / h2
    if g.n == 2:
        out = out + (_shift(pad, (0, 1)) + _shift(pad, (0, -1)) - 2.0 * u.values) / h2
    out = np.where(g.inside, out, np.nan)
    if not neumann:
        out[0] = np.nan
    return out


def _flux(p1: Array, p2: Array | None) -> tuple[Array, Array | None]:
    w = np.sqrt(1.0 + p1 * p1 + (0.0 if p2 is None else p2 * p2))
    return p1 / w, (None if p2 is None else p2 / w)


def _exact_curvature(u: GraphFunction) -> Array:
    g = u.grid
    h1 = g.spacing[0]
    cot = g.cot
    pad = _padded(u.values)
    if g.n == 1:
        # flux at i + 1/2 (between nodes i and i + 1, x_1 decreasing with i)
        d_plus = (u.values - _shift(pad, (1,))) / h1 - cot
        d_minus = (_shift(pad, (-1,)) - u.values) / h1 - cot
        f_plus, _ = _flux(d_plus, None)
        f_minus, _ = _flux(d_minus, None)
        div = (f_minus - f_plus) / h1
    else:
        h2 = g.h
        c, e, w_ = pad[1:-1, 1:-1], _shift(pad, (0, 1)), _shift(pad, (0, -1))
        s_ = _shift(pad, (1, 0))  # i + 1
        n_ = _shift(pad, (-1, 0))  # i - 1
        se, sw = _shift(pad, (1, 1)), _shift(pad, (1, -1))
        ne, nw = _shift(pad, (-1, 1)), _shift(pad, (-1, -1))
        # x_1 faces
        p1 = (c - s_) / h1 - cot
        p2 = (e + se - w_ - sw) / (4 * h2)
        f_south, _ = _flux(p1, p2)
        p1 = (n_ - c) / h1 - cot
        p2 = (ne + e - nw - w_) / (4 * h2)
        f_north, _ = _flux(p1, p2)
        # x_2 faces
        p2 = (e - c) / h2
        p1 = (n_ + ne - s_ - se) / (4 * h1) - cot
        _, f_east = _flux(p1, p2)
        p2 = (c - w_) / h2
        p1 = (nw + n_ - sw - s_) / (4 * h1) - cot
        _, f_west = _flux(p1, p2)
        div = (f_north - f_south) / h1 + (f_east - f_west) / h2
    out = div / g.sin
    out = np.where(g.inside, out, np.nan)
    out[0] = np.nan
    return out


def mean_curvature(u: GraphFunction, g: MetricField | None = None, mode: str = "exact_euclidean") -> Array:
    """Scalar mean curvature of the slanted graph, normalized so its linearization at u = 0 is exactly the linear operator.

    ``exact_euclidean``: divergence form ``div(Df / W) / sin(theta)`` with
    face fluxes.  ``quadrature_metric``: minus the g-area gradient of the
    triangulated graph divided by the nodal dual area.  ``linear_expansion``:
    the linear operator itself.
    """
    dim = u.grid.n + 1
    g = MetricField.euclidean(dim) if g is None else g
    if g.dim != dim:
        raise ValueError("metric dimension does not match the grid")
    if mode == "exact_euclidean":
        if not g.is_euclidean:
            raise ValueError("exact_euclidean mode requires the Euclidean metric")
        return _exact_curvature(u)
    if mode == "linear_expansion":
        if not g.is_euclidean:
            raise ValueError("linear_expansion mode requires the Euclidean metric")
        return linear_operator(u)
    if mode == "quadrature_metric":
        mesh = GraphMesh(u.grid)
        heights = u.heights()[u.grid.active]
        grad = mesh.area_gradient(heights, g)
        out = np.full(u.grid.shape, np.nan)
        out[u.grid.active] = -grad / mesh.dual / u.grid.sin
        out[~u.grid.inside] = np.nan
        out[0] = np.nan
        return out
    raise ValueError(f"unknown mode {mode!r}")


# ----------------------------------------------------------------------
# wall normal


@dataclass
class WallField:
    """Values on the wall nodes of a grid."""

    coords: Array  # slice coordinates of the wall nodes
    values: Array
    d1u: Array
    residual: Array  # value minus the first-order expansion in d_1 u


def wall_derivatives(u: GraphFunction) -> tuple[Array, Array, Array]:
    """Indices, one-sided second-order d_1 u and d_2 u at the inside wall nodes."""
    g = u.grid
    h1 = g.spacing[0]
    vals = u.values
    if g.n == 1:
        idx = np.array([0]) if g.inside[0] else np.zeros(0, dtype=int)
        d1 = (3 * vals[0] - 4 * vals[1] + vals[2]) / (2 * h1) * np.ones(len(idx))
        return idx, d1, np.zeros(len(idx))
    idx = np.nonzero(g.inside[0])[0]
    d1 = (3 * vals[0, idx] - 4 * vals[1, idx] + vals[2, idx]) / (2 * h1)
    if np.any(~np.isfinite(d1)):
        raise ValueError("wall derivative needs two active layers next to the wall")
    row = vals[0]
    d2 = np.empty(len(idx))
    for k, j in enumerate(idx):
        left = row[j - 1] if j > 0 else np.nan
        right = row[j + 1] if j + 1 < len(row) else np.nan
        if np.isfinite(left) and np.isfinite(right):
            d2[k] = (right - left) / (2 * g.h)
        elif np.isfinite(right):
            d2[k] = (right - row[j]) / g.h
        else:
            d2[k] = (row[j] - left) / g.h
    return idx, d1, d2


def normal_e1_component(u: GraphFunction, g: MetricField | None = None, orientation: int = 1) -> WallField:
    """g(nu, nu_wall) for the upward unit normal of the graph at each wall node.

    ``orientation=-1`` uses the downward normal, i.e. the opposite side of
    the interface.
    """
    grid = u.grid
    dim = grid.n + 1
    g = MetricField.euclidean(dim) if g is None else g
    idx, d1, d2 = wall_derivatives(u)
    f1 = -grid.cot + d1
    w = np.zeros((len(idx), dim))
    w[:, 0] = -f1
    if grid.n == 2:
        w[:, 1] = -d2
    w[:, -1] = 1.0
    if grid.n == 1:
        xs = grid.coords[0][None, :].repeat(len(idx), axis=0)
        hts = u.heights()[0] * np.ones(len(idx))
    else:
        xs = grid.coords[0, idx]
        hts = u.heights()[0, idx]
    pts = np.concatenate([xs, hts[:, None]], axis=1)
    if g.is_euclidean:
        vals = w[:, 0] / np.linalg.norm(w, axis=1)
    else:
        gm = g(pts)
        ginv_w = np.linalg.solve(gm, w[..., None])[..., 0]
        nrm = ginv_w / np.sqrt(np.sum(w * ginv_w, axis=1))[:, None]
        nu = metric_unit_normal(g, pts)
        vals = np.einsum("ka,kab,kb->k", nrm, gm, nu)
    vals = orientation * vals
    expansion = orientation * (np.cos(grid.theta) - np.sin(grid.theta) ** 3 * d1)
    return WallField(xs, vals, d1, vals - expansion)


# ----------------------------------------------------------------------
# triangulated graphs


class GraphMesh:
    """Piecewise-linear triangulation of the active nodes of a slice grid.

    Cells with all corners active are split along the (i, j)-(i+1, j+1)
    diagonal; for n = 1 consecutive active nodes form segments.  Barycentric
    gradients, cell measures and lumped nodal areas are precomputed.
    """

    def __init__(self, grid: SliceGrid):
        self.grid = grid
        act = grid.active
        index = -np.ones(grid.shape, dtype=int)
        index[act] = np.arange(int(act.sum()))
        self.index = index
        self.xy = grid.coords[act]
        simp = []
        if grid.n == 1:
            for i in range(grid.shape[0] - 1):
                if act[i] and act[i + 1]:
                    simp.append((index[i], index[i + 1]))
        else:
            a = index[:-1, :-1]
            b = index[1:, :-1]
            c = index[1:, 1:]
            d = index[:-1, 1:]
            ok = (a >= 0) & (b >= 0) & (c >= 0) & (d >= 0)
            t1 = np.stack([a[ok], b[ok], c[ok]], axis=1)
            t2 = np.stack([a[ok], c[ok], d[ok]], axis=1)
            simp = np.concatenate([t1, t2])
        self.simplices = np.asarray(simp, dtype=int).reshape(-1, grid.n + 1)
        self.grads, self.measures = self._geometry()
        self.dual = np.bincount(self.simplices.ravel(), weights=np.repeat(self.measures / (grid.n + 1), grid.n + 1),
                                minlength=len(self.xy))
        wall = grid.inside[0] if grid.n == 2 else np.array([grid.inside[0]])
        self.wall_nodes = index[0][wall] if grid.n == 2 else index[:1][wall]
        self.wall_weights = self._wall_weights()
        self.free = grid.inside[act]

    def _geometry(self) -> tuple[Array, Array]:
        p = self.xy[self.simplices]  # (T, n + 1, n)
        if self.grid.n == 1:
            L = p[:, 1, 0] - p[:, 0, 0]
            gr = np.stack([-1.0 / L, 1.0 / L], axis=1)[..., None]
            return gr, np.abs(L)
        E = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns are edges
        inv = np.linalg.inv(E)  # rows are gradients of lambda_1, lambda_2
        g12 = inv
        g0 = -(g12[:, 0] + g12[:, 1])
        gr = np.concatenate([g0[:, None], g12], axis=1)
        return gr, 0.5 * np.abs(np.linalg.det(E))

    def _wall_weights(self) -> Array:
        """Lumped wall lengths (trapezoid rule) of the wall nodes; 1 for n = 1."""
        if self.grid.n == 1:
            return np.ones(len(self.wall_nodes))
        nodes = self.wall_nodes
        row = self.index[0]
        out = np.zeros(len(nodes))
        for k, v in enumerate(nodes):
            j = int(np.nonzero(row == v)[0][0])
            for jj in (j - 1, j + 1):
                if 0 <= jj < len(row) and row[jj] >= 0:
                    out[k] += 0.5 * self.grid.h
        return out

    def slopes(self, heights: Array) -> Array:
        return np.einsum("tv,tvk->tk", heights[self.simplices], self.grads)

    def centroids(self, heights: Array) -> Array:
        xy = self.xy[self.simplices].mean(axis=1)
        z = heights[self.simplices].mean(axis=1)
        return np.concatenate([xy, z[:, None]], axis=1)

    def _metric_blocks(self, heights: Array, g: MetricField):
        p = self.slopes(heights)
        n = self.grid.n
        J = np.zeros((len(p), n + 1, n))
        J[:, :n, :] = np.eye(n)
        J[:, n, :] = p
        pts = self.centroids(heights)
        gm = g(pts)
        M = np.einsum("tai,tab,tbj->tij", J, gm, J)
        return p, J, pts, gm, M

    def cell_areas(self, heights: Array, g: MetricField | None = None) -> Array:
        if g is None or g.is_euclidean:
            p = self.slopes(heights)
            return self.measures * np.sqrt(1.0 + np.sum(p * p, axis=1))
        _, _, _, _, M = self._metric_blocks(heights, g)
        return self.measures * np.sqrt(np.linalg.det(M))

    def area(self, heights: Array, g: MetricField | None = None) -> float:
        return stable_sum(self.cell_areas(heights, g))

    def area_difference(self, heights: Array, step: Array) -> float:
        """Euclidean area(heights + step) - area(heights) without cancellation."""
        p = self.slopes(heights)
        q = self.slopes(heights + step)
        wp = np.sqrt(1.0 + np.sum(p * p, axis=1))
        wq = np.sqrt(1.0 + np.sum(q * q, axis=1))
        return stable_sum(self.measures * np.sum((q - p) * (q + p), axis=1) / (wp + wq))

    def area_gradient(self, heights: Array, g: MetricField | None = None) -> Array:
        """Derivative of the (g-)area with respect to each node height."""
        n = self.grid.n
        if g is None or g.is_euclidean:
            p = self.slopes(heights)
            w = np.sqrt(1.0 + np.sum(p * p, axis=1))
            contrib = self.measures[:, None] * np.einsum("tvk,tk->tv", self.grads, p / w[:, None])
        else:
            p, J, pts, gm, M = self._metric_blocks(heights, g)
            sq = np.sqrt(np.linalg.det(M))
            Minv = np.linalg.inv(M)
            q = np.einsum("tai,ta->ti", J, gm[:, :, n])
            mq = np.einsum("tij,tj->ti", Minv, q)
            dgz = g.derivative(pts)[..., n]
            tr = np.einsum("tij,tai,tab,tbj->t", Minv, J, dgz, J)
            contrib = self.measures[:, None] * sq[:, None] * (
                np.einsum("tvk,tk->tv", self.grads, mq) + (0.5 / (n + 1)) * tr[:, None])
        return np.bincount(self.simplices.ravel(), weights=contrib.ravel(), minlength=len(self.xy))

    def area_hessian(self, heights: Array) -> sp.csr_matrix:
        """Exact Hessian of the Euclidean piecewise-linear area."""
        p = self.slopes(heights)
        w = np.sqrt(1.0 + np.sum(p * p, axis=1))
        n = self.grid.n
        mid = np.eye(n)[None] / w[:, None, None] - np.einsum("ti,tj->tij", p, p) / (w**3)[:, None, None]
        loc = self.measures[:, None, None] * np.einsum("tvi,tij,tuj->tvu", self.grads, mid, self.grads)
        rows = np.repeat(self.simplices, n + 1, axis=1).ravel()
        cols = np.tile(self.simplices, (1, n + 1)).ravel()
        N = len(self.xy)
        return sp.csr_matrix((loc.ravel(), (rows, cols)), shape=(N, N))


def slanted_graph_surface(u: GraphFunction, check: bool = True) -> DiscreteVarifold:
    """Triangulated graph ``{(x', -cot(theta) x_1 + u)}`` with unit density."""
    mesh = GraphMesh(u.grid)
    heights = u.heights()[u.grid.active]
    if check:
        slopes = mesh.slopes(u.values[u.grid.active])
        if u.sup_norm() > 1.0 or np.max(np.linalg.norm(slopes, axis=1)) > 1.0:
            raise ValueError("slanted graph violates the standing smallness |u|_C1 <= 1")
    pts = np.concatenate([mesh.xy, heights[:, None]], axis=1)
    faces = pts[mesh.simplices]
    return DiscreteVarifold(u.grid.n, faces, np.ones(len(faces)), _empty(u.grid.n), np.zeros(0),
                            resolution=u.grid.h, label=f"graph({u.label})")


# ----------------------------------------------------------------------
# barrier


def barrier_constant(theta: float, r0: float, n: int) -> float:
    """Coefficient making the annular piece of the barrier continuous at both radii."""
    return 1.0 / (4.0 * np.sin(theta) * (r0 ** (-n) - 2.0**n))


def default_barrier_center(theta: float, n: int) -> Array:
    x0 = np.zeros(n)
    x0[0] = -0.25 * np.sin(theta)
    return x0


def barrier_values(xp, t: float, theta: float, r0: float, eta: float, x0) -> Array:
    """Piecewise barrier: t outside the squashed ball of radius 1/2, a constant dip inside radius r0."""
    xp = np.asarray(xp, dtype=float)
    n = xp.shape[-1]
    if not 0.0 < r0 < 0.5:
        raise ValueError("r0 must lie in (0, 1/2)")
    s = squashed_norm(xp - np.asarray(x0, dtype=float), theta)
    cbar = barrier_constant(theta, r0, n)
    safe = np.maximum(s, r0)
    ann = t - eta * cbar * (safe ** (-n) - 2.0**n)
    inner = t - eta / (4.0 * np.sin(theta))
    return np.where(s >= 0.5, t, np.where(s >= r0, ann, inner))


def barrier_function(t: float, theta: float, r0: float, eta: float, x0, grid: SliceGrid) -> GraphFunction:
    x0 = default_barrier_center(theta, grid.n) if x0 is None else np.asarray(x0, dtype=float)
    params = {"t": float(t), "theta": float(theta), "r0": float(r0), "eta": float(eta),
              "x0": tuple(float(v) for v in x0), "cbar": barrier_constant(theta, r0, grid.n)}
    return GraphFunction.from_function(grid, lambda x: barrier_values(x, t, theta, r0, eta, x0), "barrier", params)


# ----------------------------------------------------------------------
# Neumann problem


def _as_grid_values(data, grid: SliceGrid) -> Array:
    if data is None:
        return np.zeros(grid.shape)
    if callable(data):
        out = np.full(grid.shape, np.nan)
        out[grid.active] = np.asarray(data(grid.coords[grid.active]), dtype=float)
        return out
    if isinstance(data, GraphFunction):
        return data.values
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 0:
        return np.full(grid.shape, float(arr))
    if arr.shape != grid.shape:
        raise ValueError("grid field has the wrong shape")
    return arr


def neumann_system(grid: SliceGrid) -> tuple[sp.csr_matrix, Array, list]:
    """Symmetric system ``A u = b`` for minus h^2 times the linear operator with reflected wall rows.

    Returns the matrix on the inside nodes, the inside node index map and
    the list of (row, ring node, coefficient) couplings to Dirichlet data.
    Wall rows are halved so the matrix is symmetric positive definite.
    """
    ins = grid.inside
    idx = -np.ones(grid.shape, dtype=int)
    idx[ins] = np.arange(int(ins.sum()))
    rows, cols, vals, ring = [], [], [], []
    offsets = [(-1,), (1,)] if grid.n == 1 else [(-1, 0), (1, 0), (0, -1), (0, 1)]
    for node in zip(*np.nonzero(ins)):
        k = idx[node]
        scale = 0.5 if node[0] == 0 else 1.0
        diag = 0.0
        for off in offsets:
            nb = tuple(a + b for a, b in zip(node, off))
            if nb[0] < 0:
                nb = (1,) + nb[1:]  # ghost reflection across the wall
            diag += 1.0
            if ins[nb]:
                rows.append(k)
                cols.append(idx[nb])
                vals.append(-scale)
            else:
                ring.append((k, nb, scale))
        rows.append(k)
        cols.append(k)
        vals.append(scale * diag)
    n = int(ins.sum())
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    A.sum_duplicates()
    return A, idx, ring


def solve_neumann(rhs, dirichlet, theta: float, grid: SliceGrid, tol: float = TOL_SOLVE,
                  maxiter: int = MAX_SOLVER_ITERATIONS) -> GraphFunction:
    """Solve ``L u = rhs`` inside, ``d_1 u = 0`` on the wall, ``u = dirichlet`` on the ring.

    Conjugate gradients with Jacobi preconditioning, zero initial guess,
    followed by refinement rounds until the max-norm residual of the
    discrete operator is below ``tol``.
    """
    if abs(theta - grid.theta) > 0:
        raise ValueError("theta does not match the grid")
    A, idx, ring = neumann_system(grid)
    f = _as_grid_values(rhs, grid)
    d = _as_grid_values(dirichlet, grid)
    if np.any(~np.isfinite(d[grid.ring])):
        raise ValueError("Dirichlet data must be finite on the ring")
    ins = grid.inside
    h2 = grid.h * grid.h
    row_scale = np.where(grid.coords[ins][:, 0] == 0.0, 0.5, 1.0) if grid.n == 2 else np.where(np.nonzero(ins)[0] == 0, 0.5, 1.0)
    b = -h2 * row_scale * f[ins]
    for k, nb, scale in ring:
        b[k] += scale * d[nb]
    diag = A.diagonal()
    precond = sp.diags(1.0 / diag)
    u = np.zeros(len(b))
    history: list[float] = []
    total = 0

    def op_residual(x):
        # residual of the discrete operator: undo the row scaling and the factor -h^2
        return np.max(np.abs((A @ x - b) / (h2 * row_scale))) if len(x) else 0.0

    for _ in range(30):
        r = b - A @ u
        res = op_residual(u)
        history.append(float(res))
        if res <= tol:
            break
        count = [0]

        def cb(_xk):
            count[0] += 1

        delta, info = cg(A, r, rtol=1e-12, atol=0.0, maxiter=maxiter, M=precond, callback=cb)
        total += count[0]
        if info < 0:
            raise SolverError("conjugate gradients broke down", history)
        u = u + delta
    else:
        raise SolverError(f"residual {history[-1]:.3e} did not reach {tol:.1e}", history)
    vals = np.full(grid.shape, np.nan)
    vals[ins] = u
    vals[grid.ring] = d[grid.ring]
    return GraphFunction(grid, vals, {"residual": history[-1], "iterations": total, "rounds": len(history)}, "neumann")


# ----------------------------------------------------------------------
# sliding barriers


@dataclass
class SlideResult:
    contact: bool
    t_star: float | None = None
    point: Array | None = None
    side: str | None = None
    touching: Array | None = None
    normal_e1: float | None = None
    cos_beta: float | None = None
    margin: float | None = None

    @property
    def principle_ok(self) -> bool | None:
        """For a from-above wall touch: nu . e_1 >= cos(beta) - margin."""
        if self.side != "boundary" or self.normal_e1 is None or self.cos_beta is None:
            return None
        return bool(self.normal_e1 >= self.cos_beta - self.margin)


def _vertex_normal_e1(V: DiscreteVarifold, point: Array) -> float:
    verts, _, _ = V.faces("interior")
    hit = np.any(np.all(np.abs(verts - point) <= 1e-12, axis=2), axis=1)
    faces = verts[hit]
    if V.n == 1:
        t = faces[:, 1] - faces[:, 0]
        nrm = np.stack([-t[:, 1], t[:, 0]], axis=1)
    else:
        nrm = np.cross(faces[:, 1] - faces[:, 0], faces[:, 2] - faces[:, 0]) * 0.5
    nrm = nrm * np.sign(nrm[:, -1])[:, None]  # upward, length = face measure
    tot = nrm.sum(axis=0)
    return float(tot[0] / np.linalg.norm(tot))


def slide_barrier(V: DiscreteVarifold, theta: float, t_range: tuple[float, float], eta: float, r0: float = 0.125,
                  x0=None, tol: float | None = None, beta: AngleField | None = None,
                  graph: GraphFunction | None = None, g: MetricField | None = None,
                  margin: float | None = None) -> SlideResult:
    """Lower the barrier graph until it first touches the interior support of V from above.

    Bisection on t for the predicate "every interior vertex in the window
    lies more than ``tol`` below the barrier".  Ties count as touching.
    """
    n = V.n
    x0 = default_barrier_center(theta, n) if x0 is None else np.asarray(x0, dtype=float)
    tol = V.mesh_size if tol is None else float(tol)
    margin = 2.0 * V.mesh_size if margin is None else float(margin)
    pts = V.vertices("interior")
    xp = pts[:, :n]
    window = squashed_norm(xp - x0, theta) < 0.5
    pts, xp = pts[window], xp[window]
    if len(pts) == 0:
        return SlideResult(False)
    cot = np.cos(theta) / np.sin(theta)
    shape = barrier_values(xp, 0.0, theta, r0, eta, x0)

    def gaps(t):
        return (-cot * xp[:, 0] + t + shape) - pts[:, -1]

    def below(t):
        return bool(np.min(gaps(t)) > tol)

    lo, hi = map(float, t_range)
    if below(lo):
        return SlideResult(False)
    if not below(hi):
        raise ValueError("barrier already touches at the top of the range")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if below(mid):
            hi = mid
        else:
            lo = mid
    t_star = hi
    gp = gaps(t_star)
    k = int(np.argmin(gp))
    point = pts[k]
    touching = pts[gp <= tol + 1e-9]
    side = "boundary" if abs(point[0]) <= 1e-12 else "interior"
    res = SlideResult(True, t_star, point, side, touching, margin=margin)
    if side == "boundary":
        if graph is not None:
            wf = normal_e1_component(graph, g)
            j = int(np.argmin(np.linalg.norm(wf.coords - point[:n], axis=1)))
            res.normal_e1 = float(wf.values[j])
        else:
            res.normal_e1 = _vertex_normal_e1(V, point)
        res.cos_beta = float(np.cos(beta(point))) if beta is not None else None
    return res
