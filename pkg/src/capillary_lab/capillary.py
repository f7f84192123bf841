"""Discrete Gauss free energy of slanted graphs, its minimization and contact-angle / decay measurements."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .geometry import AngleField, MetricField, Plane, oscillation
from .slanted_graph import GraphFunction, GraphMesh, SliceGrid, normal_e1_component, slanted_graph_surface
from .varifold import DiscreteVarifold, stable_sum

Array = np.ndarray

TOL_EL = 1e-6
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


@dataclass(eq=False)
class EnergyConfig:
    """Data of the discrete free energy.

    ``h`` is the prescribed mean curvature (a number or a callable of
    ambient points).  Wet-region and volume terms are measured from the
    reference height ``z_ref``.  ``wet_side="above"`` wets the wall above
    the contact line instead, the configuration obtained by exchanging the
    set with its complement.
    """

    grid: SliceGrid
    beta: AngleField
    h: float | Callable[[Array], Array] = 0.0
    g: MetricField | None = None
    volume_target: float | None = None
    volume_penalty: float = 10.0
    wet_side: str = "below"
    z_ref: float = 0.0

    def __post_init__(self):
        if self.wet_side not in ("below", "above"):
            raise ValueError("wet_side must be 'below' or 'above'")
        if self.g is None:
            self.g = MetricField.euclidean(self.grid.n + 1)
        if self.g.dim != self.grid.n + 1:
            raise ValueError("metric dimension does not match the grid")

    @property
    def constant_h(self) -> float | None:
        return None if callable(self.h) else float(self.h)

    @property
    def wet_sign(self) -> float:
        return 1.0 if self.wet_side == "below" else -1.0

    def wall_points(self, z: Array, x2: Array | None = None) -> Array:
        z = np.asarray(z, dtype=float)
        if self.grid.n == 1:
            return np.stack([np.zeros_like(z), z], axis=-1)
        return np.stack([np.zeros_like(z), np.broadcast_to(x2, z.shape), z], axis=-1)


@dataclass
class EnergyTerms:
    area: float
    wet: float
    volume: float
    constraint: float = 0.0

    @property
    def total(self) -> float:
        return stable_sum([self.area, self.wet, self.volume, self.constraint])


@dataclass
class SolveReport:
    iterations: int
    energy: EnergyTerms
    residual: float
    status: str
    log: list[tuple[int, float, float, float]] = field(default_factory=list)
    contact_angles: Array | None = None
    angle_deviation: float | None = None
    oscillation_table: list[tuple[float, float]] = field(default_factory=list)
    multiplier: float = 0.0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "energy", "residual", "step"])
            for row in self.log:
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])

    def summary(self) -> str:
        lines = [
            f"status = {self.status}",
            f"iterations = {self.iterations}",
            f"energy = {self.energy.total!r}",
            f"area = {self.energy.area!r}",
            f"wet = {self.energy.wet!r}",
            f"volume = {self.energy.volume!r}",
            f"residual = {self.residual!r}",
        ]
        if self.angle_deviation is not None:
            lines.append(f"max_angle_deviation = {self.angle_deviation!r}")
        return "\n".join(lines) + "\n"


class StepCollapse(RuntimeError):
    pass


# ----------------------------------------------------------------------
# energy


class _Problem:
    """Energy, gradient and preconditioner on the node heights of a fixed mesh."""

    def __init__(self, cfg: EnergyConfig):
        self.cfg = cfg
        self.mesh = GraphMesh(cfg.grid)
        self.wall = self.mesh.wall_nodes
        self.wall_w = self.mesh.wall_weights
        self.wall_x2 = self.mesh.xy[self.wall, 1] if cfg.grid.n == 2 else None
        self.simple_wet = cfg.beta.constant_value is not None and cfg.g.is_euclidean
        self.simple_vol = cfg.constant_h is not None and cfg.g.is_euclidean

    # column integrals -------------------------------------------------
    def _wet_density(self, z: Array) -> Array:
        cfg = self.cfg
        pts = cfg.wall_points(z, None if self.wall_x2 is None else self.wall_x2[:, None])
        val = np.cos(cfg.beta(pts))
        if not cfg.g.is_euclidean:
            gm = cfg.g(pts)
            val = val * np.sqrt(np.linalg.det(gm[..., 1:, 1:]))
        return val

    def _vol_density(self, z: Array) -> Array:
        cfg = self.cfg
        xy = self.mesh.xy[:, None, :]
        pts = np.concatenate([np.broadcast_to(xy, z.shape + (xy.shape[-1],)), z[..., None]], axis=-1)
        val = np.full(z.shape, cfg.h) if cfg.constant_h is not None else np.asarray(cfg.h(pts), dtype=float)
        if not cfg.g.is_euclidean:
            val = val * np.sqrt(np.linalg.det(cfg.g(pts)))
        return val

    @staticmethod
    def _column(density, a: Array, b: Array) -> Array:
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        z = mid[:, None] + half[:, None] * _GL_NODES[None, :]
        return half * (density(z) @ _GL_WEIGHTS)

    # terms --------------------------------------------------------------
    def wet(self, f: Array) -> float:
        cfg = self.cfg
        fw = f[self.wall]
        if self.simple_wet:
            vals = np.cos(cfg.beta.constant_value) * (fw - cfg.z_ref)
        else:
            vals = self._column(self._wet_density, np.full(len(fw), cfg.z_ref), fw)
        return cfg.wet_sign * stable_sum(self.wall_w * vals)

    def volume(self, f: Array) -> float:
        cfg = self.cfg
        if self.simple_vol:
            if cfg.constant_h == 0.0:
                return 0.0
            return stable_sum(self.mesh.dual * cfg.constant_h * (f - cfg.z_ref))
        return stable_sum(self.mesh.dual * self._column(self._vol_density, np.full(len(f), cfg.z_ref), f))

    def enclosed(self, f: Array) -> float:
        return stable_sum(self.mesh.dual * (f - self.cfg.z_ref))

    def terms(self, f: Array, lam: float = 0.0) -> EnergyTerms:
        cfg = self.cfg
        t = EnergyTerms(self.mesh.area(f, cfg.g), self.wet(f), self.volume(f))
        if cfg.volume_target is not None:
            dv = self.enclosed(f) - cfg.volume_target
            t.constraint = lam * dv + 0.5 * cfg.volume_penalty * dv * dv
        return t

    def difference(self, f: Array, step: Array, lam: float) -> float:
        """E(f + step) - E(f), evaluated without subtracting two large totals where possible."""
        cfg = self.cfg
        if cfg.g.is_euclidean:
            parts = [self.mesh.area_difference(f, step)]
        else:
            parts = [stable_sum(self.mesh.cell_areas(f + step, cfg.g) - self.mesh.cell_areas(f, cfg.g))]
        fw, sw = f[self.wall], step[self.wall]
        if self.simple_wet:
            parts.append(cfg.wet_sign * stable_sum(self.wall_w * np.cos(cfg.beta.constant_value) * sw))
        else:
            parts.append(cfg.wet_sign * stable_sum(self.wall_w * self._column(self._wet_density, fw, fw + sw)))
        if self.simple_vol:
            parts.append(stable_sum(self.mesh.dual * cfg.constant_h * step))
        else:
            parts.append(stable_sum(self.mesh.dual * self._column(self._vol_density, f, f + step)))
        if cfg.volume_target is not None:
            a = self.enclosed(f) - cfg.volume_target
            b = self.enclosed(f + step) - cfg.volume_target
            parts.append(lam * (b - a) + 0.5 * cfg.volume_penalty * (b - a) * (b + a))
        return stable_sum(parts)

    def gradient(self, f: Array, lam: float = 0.0) -> Array:
        cfg = self.cfg
        grad = self.mesh.area_gradient(f, cfg.g)
        fw = f[self.wall]
        if self.simple_wet:
            wet = np.full(len(fw), np.cos(cfg.beta.constant_value))
        else:
            wet = self._wet_density(fw[:, None])[:, 0]
        grad[self.wall] += cfg.wet_sign * self.wall_w * wet
        if self.simple_vol:
            grad += self.mesh.dual * cfg.constant_h
        else:
            grad += self.mesh.dual * self._vol_density(f[:, None])[:, 0]
        if cfg.volume_target is not None:
            dv = self.enclosed(f) - cfg.volume_target
            grad += (lam + cfg.volume_penalty * dv) * self.mesh.dual
        return grad

    def preconditioner(self, f: Array) -> sp.csr_matrix:
        """Euclidean area Hessian plus the nonnegative parts of the diagonal column terms."""
        H = self.mesh.area_hessian(f).tolil()
        cfg = self.cfg
        diag = np.zeros(len(f))
        eps = 1e-6
        if not self.simple_wet:
            fw = f[self.wall]
            d = (self._wet_density(fw[:, None] + eps) - self._wet_density(fw[:, None] - eps))[:, 0] / (2 * eps)
            diag[self.wall] += np.maximum(cfg.wet_sign * self.wall_w * d, 0.0)
        if not self.simple_vol:
            d = (self._vol_density(f[:, None] + eps) - self._vol_density(f[:, None] - eps))[:, 0] / (2 * eps)
            diag += np.maximum(self.mesh.dual * d, 0.0)
        H = H.tocsr() + sp.diags(diag)
        return H

    def residual(self, grad: Array) -> float:
        free = self.mesh.free
        return float(np.max(np.abs(grad[free]) / self.mesh.dual[free])) if np.any(free) else 0.0


def gauss_free_energy(u: GraphFunction, cfg: EnergyConfig) -> EnergyTerms:
    """Area of the graph, cos(beta)-weighted wet area and h-weighted enclosed volume, each measured in g."""
    if not u.grid.same_lattice(cfg.grid):
        raise ValueError("graph function lives on a different grid")
    prob = _Problem(cfg)
    return prob.terms(u.heights()[cfg.grid.active])


def energy_gradient(u: GraphFunction, cfg: EnergyConfig) -> GraphFunction:
    """Gradient of the discrete energy with respect to the node heights."""
    prob = _Problem(cfg)
    grad = prob.gradient(u.heights()[cfg.grid.active])
    vals = np.full(cfg.grid.shape, np.nan)
    vals[cfg.grid.active] = grad
    return GraphFunction(cfg.grid, vals, label="gradient")


# ----------------------------------------------------------------------
# minimization


@dataclass
class Schedule:
    max_iter: int = 200
    tol_el: float = TOL_EL
    armijo: float = 1e-4
    min_step: float = 1e-10
    outer_rounds: int = 20  # multiplier updates for the volume constraint


def minimize(cfg: EnergyConfig, init: GraphFunction | None = None, schedule: Schedule | None = None
             ) -> tuple[GraphFunction, SolveReport]:
    """Newton-preconditioned descent with Armijo backtracking on the free (inside) node heights.

    Ring nodes keep the values of ``init`` (Dirichlet data).  The search
    direction solves ``P d = -grad`` with ``P`` the exact Euclidean area
    Hessian, so the iteration is a damped Newton method for the area term.
    Every accepted iterate lowers the energy; when the predicted decrease
    drops below round-off, a full step is accepted only if it lowers the
    Euler-Lagrange residual.
    """
    schedule = schedule or Schedule()
    init = GraphFunction.zeros(cfg.grid) if init is None else init
    if not init.grid.same_lattice(cfg.grid):
        raise ValueError("initial graph lives on a different grid")
    prob = _Problem(cfg)
    act = cfg.grid.active
    cot_x1 = -cfg.grid.cot * cfg.grid.coords[act][:, 0]
    f = init.heights()[act].copy()
    free = prob.mesh.free
    lam = 0.0
    log: list[tuple[int, float, float, float]] = []
    it = 0
    status = "converged"
    rounds = schedule.outer_rounds if cfg.volume_target is not None else 1
    for _ in range(rounds):
        grad = prob.gradient(f, lam)
        res = prob.residual(grad)
        energy = prob.terms(f, lam).total
        if not log:
            log.append((0, energy, res, 0.0))
        while res > schedule.tol_el and it < schedule.max_iter:
            P = prob.preconditioner(f)[free][:, free]
            d = np.zeros_like(f)
            d[free] = -spsolve(P.tocsc(), grad[free])
            slope = float(grad[free] @ d[free])
            if slope >= 0:
                d[free] = -grad[free]
                slope = float(grad[free] @ d[free])
            step = 1.0
            accepted = False
            while step >= schedule.min_step:
                diff = prob.difference(f, step * d, lam)
                if diff <= schedule.armijo * step * slope:
                    accepted = True
                    break
                if abs(slope) * step < 1e-15 * max(1.0, abs(energy)):
                    # predicted decrease below round-off: accept if the residual improves
                    g_new = prob.gradient(f + step * d, lam)
                    if prob.residual(g_new) < res:
                        accepted = True
                        break
                step *= 0.5
            if not accepted:
                raise StepCollapse(f"line search failed at iteration {it} (residual {res:.3e}, slope {slope:.3e})")
            f = f + step * d
            it += 1
            energy = energy + diff
            grad = prob.gradient(f, lam)
            res = prob.residual(grad)
            log.append((it, energy, res, step))
        if it >= schedule.max_iter and res > schedule.tol_el:
            status = "iteration_cap"
            break
        if cfg.volume_target is None:
            break
        dv = prob.enclosed(f) - cfg.volume_target
        if abs(dv) <= schedule.tol_el:
            break
        lam += cfg.volume_penalty * dv
    else:
        if cfg.volume_target is not None:
            status = "constraint_not_met"
    vals = np.full(cfg.grid.shape, np.nan)
    vals[act] = f - cot_x1
    u = GraphFunction(cfg.grid, vals, {"solver": "newton-armijo"}, "minimizer")
    terms = prob.terms(f, lam)
    report = SolveReport(it, terms, float(res), status, log, multiplier=lam)
    ca = contact_angle(u, cfg)
    report.contact_angles = ca.angles
    report.angle_deviation = ca.max_deviation
    return u, report


# ----------------------------------------------------------------------
# measurements


@dataclass
class ContactAngles:
    coords: Array
    angles: Array
    beta: Array
    max_deviation: float
    central_deviation: float


def contact_angle(u: GraphFunction, cfg: EnergyConfig, central_fraction: float = 0.5) -> ContactAngles:
    """arccos of g(nu, nu_wall) at each wall node, with nu the outward normal of the wetting set.

    ``central_deviation`` restricts the maximum to the wall nodes whose
    x_2 distance from the grid centre is at most ``central_fraction`` of the
    wall half-length.
    """
    orientation = 1 if cfg.wet_side == "below" else -1
    wf = normal_e1_component(u, cfg.g, orientation)
    angles = np.arccos(np.clip(wf.values, -1.0, 1.0))
    grid = u.grid
    hts = u.heights()[0][grid.inside[0]] if grid.n == 2 else u.heights()[:1]
    pts = np.concatenate([wf.coords, hts[:, None]], axis=1)
    beta = cfg.beta(pts)
    dev = np.abs(angles - beta)
    if grid.n == 2 and len(dev):
        x2 = wf.coords[:, 1] - grid.center[1]
        half = np.max(np.abs(x2))
        central = np.abs(x2) <= central_fraction * half + 1e-12
        cdev = float(np.max(dev[central]))
    else:
        cdev = float(np.max(dev)) if len(dev) else 0.0
    return ContactAngles(wf.coords, angles, beta, float(np.max(dev)) if len(dev) else 0.0, cdev)


def contact_point(u: GraphFunction) -> Array:
    """Ambient point of the graph over the wall node closest to the grid centre."""
    grid = u.grid
    if grid.n == 1:
        return np.array([0.0, u.heights()[0]])
    row = np.nonzero(grid.inside[0])[0]
    j = row[np.argmin(np.abs(grid.coords[0, row, 1] - grid.center[1]))]
    return np.array([0.0, grid.coords[0, j, 1], u.heights()[0, j]])


def solution_varifold(u: GraphFunction, cfg: EnergyConfig, depth: float | None = None) -> DiscreteVarifold:
    """Graph surface plus the cos(beta)-weighted wet sheet below the contact line."""
    V = slanted_graph_surface(u, check=False)
    grid = u.grid
    depth = grid.radius if depth is None else float(depth)
    if grid.n == 1:
        top = float(u.heights()[0])
        bottom = top - depth if cfg.wet_side == "below" else top + depth
        seg = np.array([[[0.0, min(top, bottom)], [0.0, max(top, bottom)]]])
        dens = np.cos(cfg.beta(seg.mean(axis=1)))
    else:
        row = np.nonzero(grid.active[0])[0]
        x2 = grid.coords[0, row, 1]
        z = u.heights()[0, row]
        base = (z.min() - depth) if cfg.wet_side == "below" else (z.max() + depth)
        tris = []
        for k in range(len(row) - 1):
            if row[k + 1] != row[k] + 1:
                continue
            a = np.array([0.0, x2[k], base])
            b = np.array([0.0, x2[k + 1], base])
            c = np.array([0.0, x2[k + 1], z[k + 1]])
            d = np.array([0.0, x2[k], z[k]])
            tris.append([a, b, c])
            tris.append([a, c, d])
        seg = np.array(tris)
        dens = np.cos(cfg.beta(seg.mean(axis=1)))
    dens = np.clip(dens, -1.0, 1.0)
    return DiscreteVarifold(grid.n, V.interior, V.interior_density, seg, dens, metric=cfg.g,
                            resolution=grid.h, label="capillary_solution")


@dataclass
class DecayResult:
    radii: Array
    oscillations: Array
    counts: Array
    exponent: float | None
    band: float | None
    exact: bool
    normal: Array

    def rows(self) -> list[tuple[float, float, int]]:
        return list(zip(self.radii.tolist(), self.oscillations.tolist(), self.counts.tolist()))


def fitted_plane_normal(points: Array, center: Array, radius: float, theta: float) -> Array:
    """Unit normal of the tangent plane of a quadratic least-squares fit of heights over the reference plane."""
    P = Plane(theta, points.shape[1])
    T = P.tangent_basis()
    nu = P.normal
    rel = points - center
    sel = np.sum(rel * rel, axis=1) <= radius * radius
    rel = rel[sel]
    s = rel @ T.T
    z = rel @ nu
    cols = [np.ones(len(s))] + [s[:, k] for k in range(s.shape[1])]
    cols += [s[:, a] * s[:, b] for a in range(s.shape[1]) for b in range(a, s.shape[1])]
    A = np.stack(cols, axis=1)
    if len(s) < A.shape[1]:
        raise ValueError("too few points to fit a tangent plane")
    coef, *_ = np.linalg.lstsq(A, z, rcond=None)
    slope = coef[1: 1 + s.shape[1]]
    normal = nu - slope @ T
    return normal / np.linalg.norm(normal)


def _support_points(source) -> Array:
    if isinstance(source, GraphFunction):
        return source.points()
    if isinstance(source, DiscreteVarifold):
        return source.vertices("interior")
    return np.asarray(source, dtype=float)


def oscillation_decay_experiment(source, theta: float, center, radii) -> DecayResult:
    """Oscillation of the interior support about its fitted tangent plane over decreasing radii.

    The log-log slope of oscillation against radius is reported with a
    two-standard-error band.
    """
    pts = _support_points(source)
    center = np.asarray(center, dtype=float)
    radii = np.sort(np.asarray(radii, dtype=float))
    normal = fitted_plane_normal(pts, center, float(radii[-1]), theta)
    osc = np.array([oscillation(normal, pts, center, r) for r in radii])
    counts = np.array([int(np.sum(np.sum((pts - center) ** 2, axis=1) <= r * r)) for r in radii])
    if np.max(osc) <= 1e-12:
        return DecayResult(radii, osc, counts, None, None, True, normal)
    usable = (osc > 1e-14) & (counts >= pts.shape[1] + 1)
    if np.count_nonzero(usable) < 3:
        raise ValueError("fewer than 3 usable radii")
    x, y = np.log(radii[usable]), np.log(osc[usable])
    (slope, icpt), cov = np.polyfit(x, y, 1, cov=True) if len(x) > 3 else (np.polyfit(x, y, 1), None)
    band = 2.0 * float(np.sqrt(cov[0, 0])) if cov is not None else float("nan")
    return DecayResult(radii, osc, counts, float(slope), band, False, normal)


@dataclass
class HarnackRow:
    gamma: float
    osc_inner: float
    osc_outer: float
    hypotheses: bool
    contraction: bool

    @property
    def passes(self) -> bool:
        return self.hypotheses and self.contraction


@dataclass
class HarnackResult:
    rows: list[HarnackRow]
    best_gamma: float | None
    data_terms: dict[str, float]
    failures: dict[float, list[str]]


def harnack_contraction_experiment(u: GraphFunction, cfg: EnergyConfig, gammas, center=None,
                                   outer: float = 1.0) -> HarnackResult:
    """For each gamma: check the smallness hypotheses and whether osc(B_gamma) <= (1 - gamma) osc(B_outer).

    Oscillations are taken about the plane meeting the wall at the contact
    angle of the centre.  Hypotheses per gamma: outer oscillation and
    sup |beta - theta| at most gamma; |D beta|, |h| and the metric C^1
    distance at most gamma times the outer oscillation.
    """
    center = contact_point(u) if center is None else np.asarray(center, dtype=float)
    pts = u.points()
    b0 = float(cfg.beta(center))
    P = Plane(b0, u.grid.n + 1)
    osc_out = oscillation(P, pts, center, outer)
    wall_pts = pts[np.abs(pts[:, 0]) <= 1e-12]
    beta_gap = float(np.max(np.abs(cfg.beta(wall_pts) - u.grid.theta))) if len(wall_pts) else 0.0
    hmax = abs(cfg.constant_h) if cfg.constant_h is not None else float(np.max(np.abs(cfg.h(pts))))
    data = {
        "osc_outer": osc_out,
        "beta_gap": beta_gap,
        "dbeta": float(cfg.beta.derivative_bound),
        "h": hmax,
        "metric": float(max(cfg.g.c1_bounds())),
    }
    rows, failures = [], {}
    for gam in sorted(float(x) for x in gammas):
        fails = []
        if osc_out > gam:
            fails.append("oscillation")
        if beta_gap > gam:
            fails.append("angle")
        for key in ("dbeta", "h", "metric"):
            if data[key] > gam * osc_out:
                fails.append(key)
        inner = oscillation(P, pts, center, gam * outer)
        rows.append(HarnackRow(gam, inner, osc_out, not fails, inner <= (1.0 - gam) * osc_out))
        if fails:
            failures[gam] = fails
    passing = [r.gamma for r in rows if r.passes]
    return HarnackResult(rows, max(passing) if passing else None, data, failures)
