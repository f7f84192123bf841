"""Signed discrete varifolds in the half-space {x_1 <= 0}.

A varifold is a weighted simplicial complex split into an interior part
(simplices in {x_1 <= 0}, densities >= 1) and a boundary sheet on the wall
{x_1 = 0} whose signed densities are cos(beta) at the face barycenters.
Optionally the wall tiles that are *not* wet are stored too, so that the
wet and dry regions can be exchanged exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.special import gamma as gamma_fn

from . import simplex
from .fields import ScalarField, TestVectorField
from .geometry import (
    AngleField,
    MetricField,
    _check_angle,
    _smooth_bump,
    boundary_rotation,
    tangential_divergence_arrays,
)

Array = np.ndarray

OMEGA = {1: 2.0, 2: np.pi}  # volume of the unit n-ball
METRIC_SUBDIVISION = 4  # sub-simplices per edge when the metric is not Euclidean
WALL_TOL = 1e-12


def stable_sum(values) -> float:
    """Exactly rounded sum; independent of ordering and of how work is split."""
    return math.fsum(np.ravel(np.asarray(values, dtype=float)))


def _empty(n: int) -> Array:
    return np.zeros((0, n + 1, n + 1))


@dataclass(frozen=True, eq=False)
class DiscreteVarifold:
    n: int
    interior: Array
    interior_density: Array
    boundary: Array
    boundary_density: Array
    metric: MetricField | None = None
    dry: Array | None = None
    resolution: float | None = None
    label: str = "varifold"

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError("varifold dimension must be 1 or 2")
        d = self.n + 1
        object.__setattr__(self, "interior", np.array(self.interior, dtype=float).reshape(-1, d, d))
        object.__setattr__(self, "boundary", np.array(self.boundary, dtype=float).reshape(-1, d, d))
        object.__setattr__(self, "interior_density", np.asarray(self.interior_density, dtype=float).reshape(-1))
        object.__setattr__(self, "boundary_density", np.asarray(self.boundary_density, dtype=float).reshape(-1))
        if self.metric is None:
            object.__setattr__(self, "metric", MetricField.euclidean(d))
        if self.metric.dim != d:
            raise ValueError("metric dimension does not match the varifold")
        if self.dry is not None:
            object.__setattr__(self, "dry", np.array(self.dry, dtype=float).reshape(-1, d, d))
        self._validate()

    def _validate(self) -> None:
        if self.interior.shape[0] != self.interior_density.shape[0]:
            raise ValueError("one density per interior face required")
        if self.boundary.shape[0] != self.boundary_density.shape[0]:
            raise ValueError("one density per boundary face required")
        if np.any(self.interior[..., 0] > WALL_TOL):
            raise ValueError("interior faces must lie in {x_1 <= 0}")
        for arr, what in ((self.boundary, "boundary"), (self.dry, "dry")):
            if arr is None:
                continue
            if np.any(np.abs(arr[..., 0]) > WALL_TOL):
                raise ValueError(f"{what} faces must lie exactly in {{x_1 = 0}}")
            arr[..., 0] = 0.0
        interior = self.interior
        interior[..., 0] = np.minimum(interior[..., 0], 0.0)
        if np.any(self.interior_density < 1.0 - 1e-12):
            raise ValueError("interior densities must be at least 1")
        if np.any(np.abs(self.boundary_density) > 1.0 + 1e-12):
            raise ValueError("boundary densities must lie in [-1, 1]")
        for arr in (self.interior, self.boundary):
            if arr.shape[0] and np.any(simplex.measures(arr) <= 1e-15):
                raise ValueError("degenerate face with zero area")

    # basic geometry -----------------------------------------------------
    @property
    def dim(self) -> int:
        return self.n + 1

    @cached_property
    def interior_frames(self) -> Array:
        return simplex.frames(self.interior) if len(self.interior) else np.zeros((0, self.n, self.dim))

    @cached_property
    def boundary_frames(self) -> Array:
        return simplex.frames(self.boundary) if len(self.boundary) else np.zeros((0, self.n, self.dim))

    def faces(self, part: str = "all") -> tuple[Array, Array, Array]:
        """Vertices, densities and frames of the requested part."""
        if part == "interior":
            return self.interior, self.interior_density, self.interior_frames
        if part == "boundary":
            return self.boundary, self.boundary_density, self.boundary_frames
        if part != "all":
            raise ValueError(f"unknown part {part!r}")
        return (
            np.concatenate([self.interior, self.boundary]),
            np.concatenate([self.interior_density, self.boundary_density]),
            np.concatenate([self.interior_frames, self.boundary_frames]),
        )

    def vertices(self, part: str = "interior") -> Array:
        verts, _, _ = self.faces(part)
        return verts.reshape(-1, self.dim)

    @property
    def mesh_size(self) -> float:
        if self.resolution is not None:
            return float(self.resolution)
        verts, _, _ = self.faces()
        if len(verts) == 0:
            return 0.0
        return float(np.max(np.linalg.norm(verts[:, 1] - verts[:, 0], axis=1)))

    # derived varifolds --------------------------------------------------
    def replace(self, **kw) -> "DiscreteVarifold":
        data = dict(n=self.n, interior=self.interior, interior_density=self.interior_density,
                    boundary=self.boundary, boundary_density=self.boundary_density, metric=self.metric,
                    dry=self.dry, resolution=self.resolution, label=self.label)
        data.update(kw)
        return DiscreteVarifold(**data)

    def transformed(self, matrix, shift=None, metric: MetricField | None = None) -> "DiscreteVarifold":
        """Push forward by x -> A x + b; A must preserve the wall and the half-space."""
        a = np.asarray(matrix, dtype=float)
        b = np.zeros(self.dim) if shift is None else np.asarray(shift, dtype=float)
        if np.any(a[0, 1:] != 0.0) or a[0, 0] <= 0 or b[0] != 0.0:
            raise ValueError("map must preserve the wall {x_1 = 0} and the side x_1 <= 0")

        def move(v):
            return None if v is None else v @ a.T + b

        res = None if self.resolution is None else self.resolution * float(np.linalg.norm(a, 2))
        return self.replace(interior=move(self.interior), boundary=move(self.boundary), dry=move(self.dry),
                            metric=metric if metric is not None else self.metric, resolution=res)

    def rotated(self, q) -> "DiscreteVarifold":
        """Apply an orthogonal map of the wall coordinates (fixing e_1)."""
        return self.transformed(boundary_rotation(q, self.dim))

    def scaled(self, factor: float) -> "DiscreteVarifold":
        return self.transformed(factor * np.eye(self.dim))

    def interior_part(self) -> "DiscreteVarifold":
        return self.replace(boundary=_empty(self.n), boundary_density=np.zeros(0), dry=None)

    def boundary_part(self) -> "DiscreteVarifold":
        return self.replace(interior=_empty(self.n), interior_density=np.zeros(0))

    def __add__(self, other: "DiscreteVarifold") -> "DiscreteVarifold":
        if other.n != self.n:
            raise ValueError("dimension mismatch")
        return self.replace(
            interior=np.concatenate([self.interior, other.interior]),
            interior_density=np.concatenate([self.interior_density, other.interior_density]),
            boundary=np.concatenate([self.boundary, other.boundary]),
            boundary_density=np.concatenate([self.boundary_density, other.boundary_density]),
            dry=None,
        )


# ----------------------------------------------------------------------
# quadrature helpers


def metric_area_factor(g: MetricField, points: Array, frames: Array) -> Array:
    """sqrt(det(tau g tau^T)): ratio of g-area to Euclidean area for orthonormal frames."""
    if g.is_euclidean:
        return np.ones(points.shape[0])
    gm = g(points)
    gram = np.einsum("fia,fab,fjb->fij", frames, gm, frames)
    return np.sqrt(np.linalg.det(gram))


def integrate_in_ball(V: DiscreteVarifold, center, r: float, integrand=None, part: str = "all",
                      signed: bool = True, level: int = 1, g: MetricField | None = None) -> float:
    """Integral of ``integrand(points, frames)`` against mu_V restricted to the closed ball.

    Faces are split into ``level^n`` pieces; each piece is clipped against
    the sphere exactly and the integrand (and g-area factor) is sampled at
    the piece centroid.
    """
    g = V.metric if g is None else g
    verts, dens, frames = V.faces(part)
    if len(verts) == 0:
        return 0.0
    center = np.asarray(center, dtype=float)
    # discard faces that cannot meet the ball
    cen = verts.mean(axis=1)
    diam = np.max(np.linalg.norm(verts - cen[:, None], axis=2), axis=1)
    near = np.linalg.norm(cen - center, axis=1) <= r + diam + 1e-12
    verts, dens, frames = verts[near], dens[near], frames[near]
    if len(verts) == 0:
        return 0.0
    if not signed:
        dens = np.abs(dens)
    if not g.is_euclidean:
        level = max(level, METRIC_SUBDIVISION)
    sub, parent = simplex.subdivide(verts, level)
    sub = sub.reshape(-1, V.dim, V.dim)
    meas = simplex.ball_measure(sub, center, r)
    live = meas > 0
    if not np.any(live):
        return 0.0
    sub, parent, meas = sub[live], parent[live], meas[live]
    pts = sub.mean(axis=1)
    fr = frames[parent]
    weight = meas * dens[parent] * metric_area_factor(g, pts, fr)
    if integrand is not None:
        weight = weight * integrand(pts, fr)
    return stable_sum(weight)


def mass_in_ball(V: DiscreteVarifold, x, r: float, signed: bool = True) -> float:
    """mu_V(B_r(x)) with the g-area element; exact for planar faces and Euclidean g."""
    if r <= 0:
        raise ValueError("radius must be positive")
    return integrate_in_ball(V, x, r, None, "all", signed)


def density_ratio(V: DiscreteVarifold, x, r: float) -> float:
    """Signed mass in B_r(x) over omega_n r^n."""
    return mass_in_ball(V, x, r, signed=True) / (OMEGA[V.n] * r**V.n)


def _face_integral(verts: Array, frames: Array, dens: Array, integrand, g: MetricField,
                   adaptive: bool = True) -> Array:
    """Per-face integrals of ``integrand`` (midpoint rule, one adaptive refinement level)."""
    if len(verts) == 0:
        return np.zeros(0)
    meas = simplex.measures(verts)
    cen = verts.mean(axis=1)
    i0 = integrand(cen, frames) * metric_area_factor(g, cen, frames) * meas
    if not adaptive:
        return dens * i0
    sub, parent = simplex.subdivide(verts, 2)
    sub = sub.reshape(-1, verts.shape[1], verts.shape[2])
    sc = sub.mean(axis=1)
    sf = frames[parent]
    vals = integrand(sc, sf) * metric_area_factor(g, sc, sf) * simplex.measures(sub)
    i1 = np.bincount(parent, weights=vals, minlength=len(verts))
    refine = np.abs(i1 - i0) > 0.1 * np.abs(i1) + 1e-300
    return dens * np.where(refine, i1, i0)


def _support_filter(verts: Array, X: TestVectorField) -> Array:
    if not np.isfinite(X.radius):
        return np.ones(len(verts), dtype=bool)
    cen = verts.mean(axis=1)
    diam = np.max(np.linalg.norm(verts - cen[:, None], axis=2), axis=1) if len(verts) else np.zeros(0)
    return np.linalg.norm(cen - X.center, axis=1) < X.radius + diam


def _divergence_integral(verts, frames, dens, g: MetricField, X: TestVectorField) -> float:
    keep = _support_filter(verts, X)
    verts, frames, dens = verts[keep], frames[keep], dens[keep]

    def integrand(pts, fr):
        return tangential_divergence_arrays(g(pts), g.derivative(pts), fr, X.value(pts), X.jacobian(pts))

    return stable_sum(_face_integral(verts, frames, dens, integrand, g))


def first_variation(V: DiscreteVarifold, g: MetricField | None, X: TestVectorField) -> float:
    """delta_g V(X): integral of the tangential g-divergence of X against mu_V (both parts)."""
    g = V.metric if g is None else g
    verts, dens, frames = V.faces("all")
    return _divergence_integral(verts, frames, dens, g, X)


def capillary_first_variation(V: DiscreteVarifold, g: MetricField | None, beta: AngleField,
                              X: TestVectorField) -> float:
    """Interior divergence term plus the wall divergence of X cos(beta) over the wet faces.

    The wet faces enter with unit weight; cos(beta) is taken from the angle
    field at the quadrature points rather than from the stored densities.
    """
    if not X.tangential:
        raise ValueError("capillary first variation is only defined for tangential fields")
    g = V.metric if g is None else g
    interior = _divergence_integral(V.interior, V.interior_frames, V.interior_density, g, X)

    def cosb(x):
        return np.cos(beta(x))

    def grad_cosb(x):
        return -np.sin(beta(x))[..., None] * beta.gradient(x)

    weighted = X.scaled_by(cosb, grad_cosb)
    ones = np.ones(len(V.boundary))
    wall = _divergence_integral(V.boundary, V.boundary_frames, ones, g, weighted)
    return math.fsum([interior, wall])


def wall_gradient_term(V: DiscreteVarifold, g: MetricField | None, beta: AngleField, X: TestVectorField,
                       level: int = 4) -> float:
    """Integral over the wet faces of g(X, grad^g cos(beta)) restricted to the wall.

    For tangential X this equals X . grad(cos beta), the correction between
    the capillary and the plain first variation.
    """
    g = V.metric if g is None else g
    if len(V.boundary) == 0:
        return 0.0
    sub, parent = simplex.subdivide(V.boundary, level)
    sub = sub.reshape(-1, V.dim, V.dim)
    pts = sub.mean(axis=1)
    fr = V.boundary_frames[parent]
    grad = -np.sin(beta(pts))[:, None] * beta.gradient(pts)
    vals = np.sum(X.value(pts) * grad, axis=1)
    return stable_sum(vals * simplex.measures(sub) * metric_area_factor(g, pts, fr))


# ----------------------------------------------------------------------
# boundary measure


@dataclass
class BoundaryMeasureEstimate:
    value: float
    slope: float
    residual: float
    taus: Array
    values: Array
    warnings: list[str] = field(default_factory=list)


def boundary_weight(g: MetricField, points: Array, frames: Array) -> Array:
    """|pi_{T,g}(e_g)|_g^2 with e_g = g^{-1} e_1 the g-gradient of x_1.

    Since g(tau, e_g) = tau_1, the squared length is t^T A t with t the first
    components of the frame and A the inverse Gram matrix.
    """
    t = frames[..., 0]
    if g.is_euclidean:
        gram = np.einsum("fia,fja->fij", frames, frames)
    else:
        gram = np.einsum("fia,fab,fjb->fij", frames, g(points), frames)
    inv = np.linalg.inv(gram)
    return np.einsum("fi,fij,fj->f", t, inv, t)


def slab_functional(V: DiscreteVarifold, g: MetricField, window: ScalarField, tau: float, level: int = 2) -> float:
    """F_tau(h) = tau^{-1} int_{-tau < x_1 < 0} h |pi_{V,g} e_g|_g^2 dmu_V over the interior part."""
    if len(V.interior) == 0:
        return 0.0
    e1 = np.zeros(V.dim)
    e1[0] = 1.0
    pieces, parent = simplex.clip_halfspace(V.interior, e1, -tau)
    if len(pieces) == 0:
        return 0.0
    sub, sp = simplex.subdivide(pieces, level)
    sub = sub.reshape(-1, V.dim, V.dim)
    owner = parent[sp]
    pts = sub.mean(axis=1)
    fr = V.interior_frames[owner]
    vals = (
        window(pts)
        * boundary_weight(g, pts, fr)
        * metric_area_factor(g, pts, fr)
        * simplex.measures(sub)
        * V.interior_density[owner]
    )
    return stable_sum(vals) / tau


def boundary_measure_estimate(V: DiscreteVarifold, g: MetricField | None, window: ScalarField,
                              taus: Iterable[float] | None = None) -> BoundaryMeasureEstimate:
    """Extrapolate the slab functional F_tau(h) to tau -> 0 by a linear fit in tau."""
    g = V.metric if g is None else g
    h = V.mesh_size or 1.0 / 64
    if taus is None:
        taus = [8 * h, 4 * h, 2 * h, h]
    taus = np.asarray(sorted(taus, reverse=True), dtype=float)
    if np.any(taus <= 0) or len(taus) < 2:
        raise ValueError("need at least two positive slab widths")
    vals = np.array([slab_functional(V, g, window, t) for t in taus])
    design = np.stack([np.ones_like(taus), taus], axis=1)
    coef, *_ = np.linalg.lstsq(design, vals, rcond=None)
    fit = design @ coef
    notes = []
    if V.resolution is not None and taus.min() < V.resolution - 1e-15:
        notes.append(f"slab width {taus.min():.3g} is below the mesh resolution {V.resolution:.3g}")
    return BoundaryMeasureEstimate(float(coef[0]), float(coef[1]), float(np.sqrt(np.mean((fit - vals) ** 2))),
                                   taus, vals, notes)


# ----------------------------------------------------------------------
# model varifolds


def _segments(a, b, count: int) -> Array:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    s = np.linspace(0.0, 1.0, count + 1)
    pts = a + s[:, None] * (b - a)
    return np.stack([pts[:-1], pts[1:]], axis=1)


def _grid_triangles(origin, u, v, nu: int, nv: int) -> Array:
    """Triangulate the parallelogram origin + [0,1]u + [0,1]v into 2 nu nv triangles."""
    origin, u, v = (np.asarray(w, dtype=float) for w in (origin, u, v))
    s = np.linspace(0.0, 1.0, nu + 1)
    t = np.linspace(0.0, 1.0, nv + 1)
    p = origin + s[:, None, None] * u + t[None, :, None] * v
    a, b = p[:-1, :-1], p[1:, :-1]
    c, d = p[1:, 1:], p[:-1, 1:]
    lower = np.stack([a, b, c], axis=2).reshape(-1, 3, 3)
    upper = np.stack([a, c, d], axis=2).reshape(-1, 3, 3)
    return np.concatenate([lower, upper])


def _count(length: float, h: float) -> int:
    return max(1, int(math.ceil(length / h - 1e-9)))


def model_cone_extent(theta: float) -> float:
    """Length of the down-slope ray of the slanted half-plane inside the domain box."""
    s, c = np.sin(theta), abs(np.cos(theta))
    return min(1.0 / s, 1.0 / c if c > 1e-15 else np.inf)


def make_model_cone(theta: float, n: int, h: float, rotation=None) -> DiscreteVarifold:
    """Half-plane at angle theta plus the cos(theta)-weighted lower wall, clipped to the box."""
    theta = _check_angle(theta)
    if n not in (1, 2):
        raise ValueError("n must be 1 or 2")
    length = model_cone_extent(theta)
    c = np.cos(theta)
    if n == 1:
        down = np.array([-np.sin(theta), c])
        interior = _segments([0.0, 0.0], length * down, _count(length, h))
        wet = _segments([0.0, 0.0], [0.0, -1.0], _count(1.0, h))
        dry = _segments([0.0, 0.0], [0.0, 1.0], _count(1.0, h))
    else:
        down = np.array([-np.sin(theta), 0.0, c])
        interior = _grid_triangles([0.0, -1.0, 0.0], length * down, [0.0, 2.0, 0.0], _count(length, h), _count(2.0, h))
        wet = _grid_triangles([0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [0.0, 2.0, 0.0], _count(1.0, h), _count(2.0, h))
        dry = _grid_triangles([0.0, -1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 2.0, 0.0], _count(1.0, h), _count(2.0, h))
    V = DiscreteVarifold(n, interior, np.ones(len(interior)), wet, np.full(len(wet), c), dry=dry,
                         resolution=h, label=f"model_cone({theta:.6g})")
    if rotation is not None:
        V = V.rotated(rotation)
    return V


def make_triple_junction(s: float, h: float = 1.0 / 128) -> DiscreteVarifold:
    """Three unit-density rays meeting at 120 degrees, shifted by -s e_1, with wall density -1/2.

    At s = 0 the vertical ray lands in the wall where it merges with the
    -1/2 sheet into the cos(pi/3)-weighted lower wall, i.e. the model cone.
    """
    if s < 0:
        raise ValueError("shift must be non-negative")
    if s == 0:
        V = make_model_cone(np.pi / 3, 1, h)
        return V.replace(label="triple_junction(0)")
    r3 = np.sqrt(3.0)
    junction = np.array([-s, 0.0])
    vertical = _segments(junction, [-s, -1.0], _count(1.0, h))
    contact = np.array([0.0, s / r3])
    short = _segments(junction, contact, _count(2 * s / r3, h))
    direction = np.array([-r3 / 2, 0.5])
    tmax = min(2 * (1 - s) / r3, 2.0)
    ray = _segments(junction, junction + tmax * direction, _count(tmax, h))
    interior = np.concatenate([vertical, short, ray])
    wet = _segments([0.0, -1.0], contact, _count(1.0 + s / r3, h))
    dry = _segments(contact, [0.0, 1.0], _count(1.0 - s / r3, h))
    return DiscreteVarifold(1, interior, np.ones(len(interior)), wet, np.full(len(wet), -0.5), dry=dry,
                            resolution=h, label=f"triple_junction({s:g})")


def make_doubled_half_plane(beta: float, h: float) -> DiscreteVarifold:
    """Two half-planes {x_2 = +-cot(beta) x_1} in R^3 meeting along the x_3 axis; density 1 at 0."""
    beta = _check_angle(beta)
    faces = []
    for sign in (1.0, -1.0):
        down = np.array([-np.sin(beta), sign * np.cos(beta), 0.0])
        faces.append(_grid_triangles([0.0, 0.0, -1.0], down, [0.0, 0.0, 2.0], _count(1.0, h), _count(2.0, h)))
    interior = np.concatenate(faces)
    return DiscreteVarifold(2, interior, np.ones(len(interior)), _empty(2), np.zeros(0),
                            resolution=h, label=f"doubled_half_plane({beta:.6g})")


def make_crossed_planes(angle: float, h: float) -> DiscreteVarifold:
    """Two half-planes containing the e_1 direction, crossing along the e_1 axis (no wet region)."""
    faces = []
    for sign in (1.0, -1.0):
        w = np.array([0.0, np.cos(angle), sign * np.sin(angle)])
        faces.append(_grid_triangles(-w, [-1.0, 0.0, 0.0], 2 * w, _count(1.0, h), _count(2.0, h)))
    interior = np.concatenate(faces)
    return DiscreteVarifold(2, interior, np.ones(len(interior)), _empty(2), np.zeros(0),
                            resolution=h, label=f"crossed_planes({angle:.6g})")


def product_sphere_cone_density(k: int) -> float:
    """Density at the vertex of the cone over S^k(1/sqrt 2) x S^k(1/sqrt 2) in R^{2k+2}."""

    def sphere_area(m: int) -> float:
        return 2.0 * np.pi ** ((m + 1) / 2) / gamma_fn((m + 1) / 2)

    link = (sphere_area(k) * 2.0 ** (-k / 2)) ** 2
    return float(link / sphere_area(2 * k))


def half_product_sphere_cone_density(k: int) -> float:
    """Half of the product-sphere cone cut by a hyperplane through the vertex (k = 3: Simons' cone)."""
    return 0.5 * product_sphere_cone_density(k)


def swap_wet_region(V: DiscreteVarifold, beta: AngleField) -> tuple[DiscreteVarifold, AngleField]:
    """Exchange wet and dry wall tiles; the new sheet carries cos(pi - beta)."""
    dry = V.dry
    if dry is None:
        if V.n != 1:
            raise ValueError("the wet region is not tiled by known wall faces; cannot form its complement")
        dry = _interval_complement(V.boundary, V.mesh_size or 1.0 / 64)
    new_beta = beta.complement()
    bary = dry.mean(axis=1) if len(dry) else np.zeros((0, V.dim))
    dens = np.cos(new_beta(bary)) if len(dry) else np.zeros(0)
    return V.replace(boundary=dry, boundary_density=dens, dry=V.boundary), new_beta


def _interval_complement(wet: Array, h: float) -> Array:
    """Wall segments of [-1, 1] (in x_2) not covered by the wet segments."""
    spans = sorted((min(f[0, 1], f[1, 1]), max(f[0, 1], f[1, 1])) for f in wet)
    gaps = []
    cursor = -1.0
    for lo, hi in spans:
        if lo > cursor + 1e-12:
            gaps.append((cursor, lo))
        cursor = max(cursor, hi)
    if cursor < 1.0 - 1e-12:
        gaps.append((cursor, 1.0))
    segs = [_segments([0.0, a], [0.0, b], _count(b - a, h)) for a, b in gaps]
    return np.concatenate(segs) if segs else _empty(1)


# ----------------------------------------------------------------------
# varifold distance

BUMP_SLOPE = 96.0 / (25.0 * np.sqrt(5.0))  # max |psi'| for psi(t) = (1 - t^2)^3


@dataclass(frozen=True)
class ProbeFamily:
    """Frozen countable family of test functions phi(x, T) = bump(x) * probe(T).

    Level k uses bumps of radius rho_k = 2^{-(k+1)} centred on the lattice
    rho_k Z^d, restricted to x_1 <= 0 and |c| + rho_k < 1, sorted by |c|
    and then lexicographically.  Each bump is scaled by rho_k / max|psi'| so
    its Lipschitz constant is 1.  Probes are 1 followed by the
    upper-triangular entries of the tangent projector.  The alpha-th member
    receives weight 2^{-alpha} (alpha starting at 1).
    """

    dim: int
    max_terms: int = 64

    @cached_property
    def members(self) -> list[tuple[Array, float, tuple[int, int] | None]]:
        out = []
        probes: list[tuple[int, int] | None] = [None]
        probes += [(i, j) for i in range(self.dim) for j in range(i, self.dim)]
        level = 0
        while len(out) < self.max_terms:
            rho = 2.0 ** (-(level + 1))
            m = int(round(1.0 / rho))
            axes = [np.arange(-m, 1)] + [np.arange(-m, m + 1)] * (self.dim - 1)
            grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
            cand = [tuple(int(v) for v in p) for p in grid if np.linalg.norm(p * rho) + rho < 1.0 - 1e-12]
            cand.sort(key=lambda p: (sum(v * v for v in p), p))
            for p in cand:
                for probe in probes:
                    out.append((np.array(p, dtype=float) * rho, rho, probe))
            level += 1
        return out[: self.max_terms]

    @property
    def tail_bound(self) -> float:
        return 2.0 ** (-self.max_terms)

    def evaluate(self, V: DiscreteVarifold, level: int = 2) -> Array:
        """V(phi_alpha) for every member, via midpoint quadrature on subdivided faces."""
        verts, dens, frames = V.faces("all")
        if len(verts) == 0:
            return np.zeros(len(self.members))
        cen = verts.mean(axis=1)
        diam = np.max(np.linalg.norm(verts - cen[:, None], axis=2), axis=1)
        near = np.linalg.norm(cen, axis=1) < 1.0 + diam
        verts, dens, frames = verts[near], dens[near], frames[near]
        sub, parent = simplex.subdivide(verts, level)
        sub = sub.reshape(-1, V.dim, V.dim)
        pts = sub.mean(axis=1)
        fr = frames[parent]
        w = simplex.measures(sub) * dens[parent] * metric_area_factor(V.metric, pts, fr)
        proj = simplex.projectors(fr)
        out = np.empty(len(self.members))
        for a, (c, rho, probe) in enumerate(self.members):
            bump, _ = _smooth_bump(np.linalg.norm(pts - c, axis=1) / rho)
            vals = w * bump * (rho / BUMP_SLOPE)
            if probe is not None:
                vals = vals * proj[:, probe[0], probe[1]]
            out[a] = stable_sum(vals)
        return out


def distance_from_values(a: Array, b: Array) -> float:
    diff = np.abs(a - b)
    weights = 2.0 ** (-np.arange(1, len(diff) + 1, dtype=float))
    return stable_sum(weights * diff / (1.0 + diff))


def varifold_distance(V: DiscreteVarifold, W: DiscreteVarifold, family: ProbeFamily | None = None) -> float:
    """Weighted sum over the probe family of |V(phi) - W(phi)| / (1 + |V(phi) - W(phi)|)."""
    if V.dim != W.dim:
        raise ValueError("dimension mismatch")
    family = family or ProbeFamily(V.dim)
    return distance_from_values(family.evaluate(V), family.evaluate(W))


# ----------------------------------------------------------------------
# mesh files


def _fmt(x: float) -> str:
    return repr(float(x))


def write_varifold(V: DiscreteVarifold, path) -> None:
    """Write the line-based mesh format: header n=<1|2>, then I/B records."""
    lines = [f"n={V.n}"]
    if V.resolution is not None:
        lines.append(f"# resolution {_fmt(V.resolution)}")
    for tag, verts, dens in (("I", V.interior, V.interior_density), ("B", V.boundary, V.boundary_density)):
        for face, d in zip(verts, dens):
            coords = " ".join(_fmt(c) for c in face.ravel())
            lines.append(f"{tag} {coords} {_fmt(d)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_varifold(path) -> DiscreteVarifold:
    text = Path(path).read_text(encoding="utf-8")
    n = None
    resolution = None
    rec = {"I": ([], []), "B": ([], [])}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "resolution":
                resolution = float(parts[1])
            continue
        if n is None:
            if not line.startswith("n="):
                raise ValueError(f"line {lineno}: expected header n=<1|2>")
            n = int(line[2:])
            if n not in (1, 2):
                raise ValueError(f"line {lineno}: n must be 1 or 2")
            continue
        tok = line.split()
        d = n + 1
        if tok[0] not in rec:
            raise ValueError(f"line {lineno}: unknown record type {tok[0]!r}")
        nums = [float(t) for t in tok[1:]]
        if len(nums) == (n + 1) * d + 1:
            verts = np.array(nums[:-1]).reshape(n + 1, d)
        elif n == 1 and len(nums) == (n + 1) * 3 + 1:
            padded = np.array(nums[:-1]).reshape(n + 1, 3)
            if np.any(padded[:, 2] != 0):
                raise ValueError(f"line {lineno}: planar mesh with nonzero third coordinate")
            verts = padded[:, :2]
        else:
            raise ValueError(f"line {lineno}: wrong number of fields")
        rec[tok[0]][0].append(verts)
        rec[tok[0]][1].append(nums[-1])
    if n is None:
        raise ValueError("missing header")
    d = n + 1

    def stack(items):
        return np.array(items).reshape(-1, d, d)

    return DiscreteVarifold(n, stack(rec["I"][0]), np.array(rec["I"][1]), stack(rec["B"][0]),
                            np.array(rec["B"][1]), resolution=resolution, label=Path(path).stem)

