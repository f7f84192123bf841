"""Monotone quantities, excess functionals and numeric probes on discrete varifolds."""
from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import minimize_scalar

from . import simplex
from .fields import ScalarField
from .geometry import AngleField, MetricField, Plane, operator_norm_sym, wall_rotation_2d
from .varifold import (
    OMEGA,
    DiscreteVarifold,
    ProbeFamily,
    boundary_measure_estimate,
    density_ratio,
    distance_from_values,
    integrate_in_ball,
    make_model_cone,
    mass_in_ball,
)

Array = np.ndarray


@lru_cache(maxsize=1)
def constants() -> dict:
    """Calibrated constants shipped with the package."""
    text = resources.files("capillary_lab").joinpath("data/constants.json").read_text(encoding="utf-8")
    return json.loads(text)


def monotonicity_constant(n: int) -> float:
    return float(constants()["monotonicity_c"][str(n)])


# ----------------------------------------------------------------------
# profiles


@dataclass
class MonotoneProfile:
    radii: Array
    values: Array
    allowance: Array
    c: float
    Lambda: float
    tolerance: float
    violations: list[tuple[float, float, float]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def totals(self) -> Array:
        return self.values + self.allowance

    @property
    def deficits(self) -> Array:
        """Drop of the monotone quantity from the previous radius (0 when it grows)."""
        tot = self.totals
        out = np.zeros_like(tot)
        out[1:] = np.maximum(tot[:-1] - tot[1:], 0.0)
        return out

    @property
    def is_monotone(self) -> bool:
        return not self.violations

    def rows(self) -> list[tuple[float, float, float, float]]:
        return list(zip(self.radii.tolist(), self.values.tolist(), self.allowance.tolist(), self.deficits.tolist()))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["r", "value", "allowance", "deficit"])
            for row in self.rows():
                w.writerow([repr(float(v)) for v in row])


def _finish_profile(radii, values, allowance, c, lam, tol, notes) -> MonotoneProfile:
    prof = MonotoneProfile(np.asarray(radii, float), np.asarray(values, float), np.asarray(allowance, float),
                           c, lam, tol, [], notes)
    tot = prof.totals
    for i in range(len(tot) - 1):
        drop = tot[i] - tot[i + 1]
        if drop > tol:
            prof.violations.append((float(radii[i]), float(radii[i + 1]), float(drop)))
    return prof


def _check_radii(radii) -> Array:
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or len(radii) == 0 or np.any(radii <= 0) or np.any(np.diff(radii) <= 0):
        raise ValueError("radii must be positive and strictly increasing")
    return radii


def boundary_monotone_profile(V: DiscreteVarifold, g: MetricField | None, xi, radii, Lambda: float = 0.0,
                              c: float | None = None, tol: float | None = None) -> MonotoneProfile:
    """(1 + c L r)^{n+1} Theta_V(xi, r) with allowance c L r / omega_n, for xi on the wall."""
    g = V.metric if g is None else g
    xi = np.asarray(xi, dtype=float)
    if xi[0] != 0.0:
        raise ValueError("the centre must lie on the wall")
    if np.max(np.abs(g(xi) - np.eye(V.dim))) > 1e-10:
        raise ValueError("normalize the metric to the identity at the centre first")
    radii = _check_radii(radii)
    c = monotonicity_constant(V.n) if c is None else float(c)
    tol = 5.0 * V.mesh_size if tol is None else float(tol)
    reach = min(1.0, 1.0 - float(np.max(np.abs(xi[1:])))) if V.dim > 1 else 1.0
    notes = []
    keep = radii <= reach + 1e-12
    if not np.all(keep):
        notes.append(f"radii beyond {reach:.4g} leave the domain box and were dropped")
        radii = radii[keep]
    n = V.n
    vals = np.array([(1.0 + c * Lambda * r) ** (n + 1) * density_ratio(V, xi, r) for r in radii])
    allow = c * Lambda * radii / OMEGA[n]
    return _finish_profile(radii, vals, allow, c, Lambda, tol, notes)


def calibrate_monotonicity_constant(cases, candidates=None, tol: float = 0.0) -> float | None:
    """Smallest candidate c for which every case gives a violation-free boundary profile.

    ``cases`` holds tuples (V, xi, radii, Lambda).  Returns None when no
    candidate works.
    """
    candidates = np.round(np.arange(0.0, 2.0 + 1e-9, 0.01), 10) if candidates is None else np.sort(candidates)
    for c in candidates:
        if all(not boundary_monotone_profile(V, None, xi, radii, lam, c=float(c), tol=tol).violations
               for V, xi, radii, lam in cases):
            return float(c)
    return None


def _weight_vanishes_on_wall(weight: ScalarField, dim: int) -> bool:
    axes = [np.linspace(-1.0, 1.0, 21)] * (dim - 1)
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim - 1)
    pts = np.concatenate([np.zeros((len(pts), 1)), pts], axis=1)
    return bool(np.max(np.abs(weight(pts))) == 0.0)


def interior_weighted_profile(V: DiscreteVarifold, g: MetricField | None, xi, weight: ScalarField, radii,
                              Lambda: float = 0.0, c: float | None = None, tol: float | None = None,
                              substeps: int = 8, level: int = 2) -> MonotoneProfile:
    """(1 + c L r)^{n+1} r^{-n} int_{B_r} h dmu with the accumulated |grad_V h| allowance.

    The allowance at r is the integral from the first radius to r of
    (1 + c L rho)^{n+1} rho^{-n} int_{B_rho} |grad_V h| dmu d rho, so that
    value + allowance is nondecreasing for stationary interior varifolds.
    """
    g = V.metric if g is None else g
    xi = np.asarray(xi, dtype=float)
    if xi[0] >= 0.0:
        raise ValueError("the centre must lie in the open half-space")
    radii = _check_radii(radii)
    limit = 1.0 - float(np.linalg.norm(xi))
    if not _weight_vanishes_on_wall(weight, V.dim):
        limit = min(limit, abs(float(xi[0])))
    if radii[-1] >= limit:
        raise ValueError(f"radius {radii[-1]:.4g} breaches the admissible bound {limit:.4g}")
    c = monotonicity_constant(V.n) if c is None else float(c)
    tol = 5.0 * V.mesh_size if tol is None else float(tol)
    n = V.n

    def factor(r):
        return (1.0 + c * Lambda * r) ** (n + 1) * r ** (-n)

    def h_int(r):
        return integrate_in_ball(V, xi, r, lambda p, f: weight(p), "interior", level=level, g=g)

    def grad_int(r):
        def integrand(p, f):
            grad = weight.gradient(p)
            tang = np.einsum("fia,fa->fi", f, grad)
            return np.linalg.norm(tang, axis=1)

        return integrate_in_ball(V, xi, r, integrand, "interior", level=level, g=g)

    vals = np.array([factor(r) * h_int(r) for r in radii])
    allow = np.zeros(len(radii))
    for i in range(1, len(radii)):
        rho = np.linspace(radii[i - 1], radii[i], substeps + 1)
        f = np.array([factor(r) * grad_int(r) for r in rho])
        allow[i] = allow[i - 1] + float(trapezoid(f, rho))
    return _finish_profile(radii, vals, allow, c, Lambda, tol, [])


# ----------------------------------------------------------------------
# excess


def _projector_gap_sq(frames: Array, plane_projector: Array) -> Array:
    proj = simplex.projectors(frames)
    return operator_norm_sym(proj - plane_projector) ** 2


def tilt_excess(V: DiscreteVarifold, P: Plane, x, r: float, part: str = "interior") -> float:
    """Integral over B_r(x) of the squared operator norm of pi_V - pi_P."""
    pp = P.projector
    return integrate_in_ball(V, x, r, lambda pts, fr: _projector_gap_sq(fr, pp), part, signed=False)


def l2_height_excess(V: DiscreteVarifold, P: Plane, x, r: float, part: str = "interior", level: int = 4) -> float:
    """Integral over B_r(x) of the squared distance to P (through the origin)."""
    nu = P.normal
    return integrate_in_ball(V, x, r, lambda pts, fr: (pts @ nu) ** 2, part, signed=False, level=level)


@dataclass
class TiltHeightComparison:
    tilt_inner: float
    height_annulus: float
    curvature_term: float
    ratio: float


def tilt_height_comparison(V: DiscreteVarifold, inner: float, curvature_bound: float = 0.0) -> TiltHeightComparison:
    """Measured constant in tilt(B_inner) <= c (height(B_1 minus B_inner) + L Theta)."""
    e1 = np.zeros(V.dim)
    e1[0] = 1.0
    proj_wall = np.eye(V.dim) - np.outer(e1, e1)
    origin = np.zeros(V.dim)
    tilt = integrate_in_ball(V, origin, inner, lambda p, f: _projector_gap_sq(f, proj_wall), "interior", signed=False)
    h_out = integrate_in_ball(V, origin, 1.0, lambda p, f: p[:, 0] ** 2, "interior", signed=False, level=4)
    h_in = integrate_in_ball(V, origin, inner, lambda p, f: p[:, 0] ** 2, "interior", signed=False, level=4)
    theta = mass_in_ball(V.interior_part(), origin, 1.0, signed=False) / OMEGA[V.n]
    rhs = max(h_out - h_in, 0.0) + curvature_bound * theta
    ratio = tilt / rhs if rhs > 0 else (0.0 if tilt == 0 else np.inf)
    return TiltHeightComparison(tilt, h_out - h_in, curvature_bound * theta, ratio)


# ----------------------------------------------------------------------
# rigidity and dichotomy probes


@dataclass
class RigidityReport:
    max_density: float
    density_ok: bool
    tilt: float
    tilt_ok: bool
    data_bound: float
    data_ok: bool
    interior_in_ball: bool
    gamma: float

    @property
    def hypotheses_hold(self) -> bool:
        return self.density_ok and self.tilt_ok and self.data_ok

    @property
    def conclusion_holds(self) -> bool:
        return not self.interior_in_ball

    @property
    def consistent(self) -> bool:
        return (not self.hypotheses_hold) or self.conclusion_holds

    @property
    def failing(self) -> list[str]:
        out = []
        if not self.density_ok:
            out.append("density")
        if not self.tilt_ok:
            out.append("tilt")
        if not self.data_ok:
            out.append("data")
        return out


def _interior_meets_ball(V: DiscreteVarifold, center, r: float) -> bool:
    if len(V.interior) == 0:
        return False
    return mass_in_ball(V.interior_part(), center, r, signed=False) > 0.0


def rigidity_probe(V: DiscreteVarifold, g: MetricField | None, eta: float, gamma: float, alpha: float = 0.1,
                   curvature_bound: float = 0.0, samples: int = 5) -> RigidityReport:
    """Evaluate the rigidity hypotheses on V_I and whether V_I meets B_gamma."""
    g = V.metric if g is None else g
    W = V.interior_part()
    if np.any(W.interior_density < 1.0):
        raise ValueError("interior densities must be at least 1")
    axes = [np.linspace(-0.5, 0.5, samples)] * (V.dim - 1)
    wall = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, V.dim - 1)
    wall = wall[np.linalg.norm(wall, axis=1) < 0.5]
    radii = np.linspace(0.05, 0.5, 10)[:-1] + 0.025
    max_den = 0.0
    for p in wall:
        x = np.concatenate([[0.0], p])
        for r in radii:
            max_den = max(max_den, density_ratio(W, x, r))
    e1 = np.zeros(V.dim)
    e1[0] = 1.0
    wall_proj = np.eye(V.dim) - np.outer(e1, e1)
    tilt = integrate_in_ball(W, np.zeros(V.dim), 1.0, lambda pts, fr: _projector_gap_sq(fr, wall_proj),
                             "interior", signed=False)
    data = max(curvature_bound, max(g.c1_bounds()))
    return RigidityReport(max_den, max_den <= 1.0 - alpha, tilt, tilt <= eta, data, data <= eta,
                          _interior_meets_ball(W, np.zeros(V.dim), gamma), gamma)


class DichotomyOutcome(enum.Enum):
    BOUNDARY_MASS_LOWER = "BoundaryMassLower"
    INTERIOR_VANISHES = "InteriorVanishes"
    BOTH = "Both"
    VIOLATION = "Violation"
    HYPOTHESES_FAIL = "HypothesesFail"


@dataclass
class DichotomyReport:
    outcome: DichotomyOutcome
    sigma: float
    lower_bound: float
    interior_vanishes: bool
    hypotheses_hold: bool
    density: float


def dichotomy_probe(V: DiscreteVarifold, g: MetricField | None, beta: AngleField, xi, r: float, eta: float,
                    alpha: float = 0.1, c: float | None = None) -> DichotomyReport:
    """Classify the boundary-mass / interior-vanishing alternative at a wall point."""
    g = V.metric if g is None else g
    xi = np.asarray(xi, dtype=float)
    if xi[0] != 0.0:
        raise ValueError("the centre must lie on the wall")
    c = float(constants()["dichotomy_c"]) if c is None else float(c)
    origin = np.zeros(V.dim)
    theta0 = density_ratio(V, origin, 1.0)
    axes = [np.linspace(-1.0, 1.0, 9)] * (V.dim - 1)
    wall = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, V.dim - 1)
    wall = np.concatenate([np.zeros((len(wall), 1)), wall], axis=1)
    wall = wall[np.linalg.norm(wall, axis=1) < 1.0]
    neg_part = max(0.0, -float(np.min(np.cos(beta(wall)))))
    hyp = theta0 + neg_part <= 1.0 - alpha
    # the boundary measure of the ball, via the slab functional with a window close to its indicator
    sigma = _sigma_of_ball(V, g, xi, r)
    lower = r ** (V.n - 1) / c
    mass_ok = sigma >= lower
    vanish = not _interior_meets_ball(V, xi, eta * r)
    if mass_ok and vanish:
        out = DichotomyOutcome.BOTH
    elif mass_ok:
        out = DichotomyOutcome.BOUNDARY_MASS_LOWER
    elif vanish:
        out = DichotomyOutcome.INTERIOR_VANISHES
    else:
        out = DichotomyOutcome.VIOLATION if hyp else DichotomyOutcome.HYPOTHESES_FAIL
    return DichotomyReport(out, sigma, lower, vanish, hyp, theta0)


def _sigma_of_ball(V: DiscreteVarifold, g: MetricField, xi: Array, r: float) -> float:
    """sigma(B_r(xi)) approximated with a window equal to 1 on B_r and vanishing outside B_{r(1+delta)}."""
    delta = max(V.mesh_size, 1e-3)
    outer = r * (1.0 + delta)
    half = r

    def profile(s):
        s = np.clip(s, 0.0, 1.0)
        return 1.0 - s * s * (3.0 - 2.0 * s), -6.0 * s * (1.0 - s)

    def val(x):
        rad = np.linalg.norm(x - xi, axis=-1)
        return profile((rad - half) / (outer - half))[0]

    def grad(x):
        diff = x - xi
        rad = np.linalg.norm(diff, axis=-1)
        _, dp = profile((rad - half) / (outer - half))
        safe = np.where(rad > 0, rad, 1.0)
        return (dp / ((outer - half) * safe))[..., None] * diff

    est = boundary_measure_estimate(V, g, ScalarField(val, grad, "ball"))
    return max(est.value, 0.0)


# ----------------------------------------------------------------------
# cone classification


@dataclass
class ConeClassification:
    classified: bool
    rotation: Array | None
    residual: float
    density: float
    wet_mass: float
    hypotheses: dict[str, bool]
    reason: str = ""


def _is_conical(V: DiscreteVarifold, tol: float = 1e-9) -> bool:
    verts, _, _ = V.faces("all")
    if len(verts) == 0:
        return True
    if V.n == 1:
        a, b = verts[:, 0], verts[:, 1]
        d = b - a
        dist = np.abs(a[:, 0] * d[:, 1] - a[:, 1] * d[:, 0]) / np.linalg.norm(d, axis=1)
    else:
        nrm = np.cross(verts[:, 1] - verts[:, 0], verts[:, 2] - verts[:, 0])
        nrm /= np.linalg.norm(nrm, axis=1)[:, None]
        dist = np.abs(np.sum(nrm * verts[:, 0], axis=1))
    return bool(np.max(dist) <= tol)


def _wall_map(n: int, phi: float) -> Array:
    return wall_rotation_2d(phi) if n == 2 else np.array([[np.cos(phi)]])  # phi in {0, pi} for n = 1


def cone_classifier(V: DiscreteVarifold, theta: float, tol: float | None = None, grid: int = 72,
                    family: ProbeFamily | None = None) -> ConeClassification:
    """Check the tangent-cone hypotheses, then fit the wall rotation of the model cone."""
    if not _is_conical(V):
        raise ValueError("input is not conical: some face does not span a subspace through 0")
    tol = float(constants()["tol_cone"]) if tol is None else float(tol)
    origin = np.zeros(V.dim)
    dens = density_ratio(V, origin, 0.5)
    wet = mass_in_ball(V.boundary_part(), origin, 1.0, signed=True)
    bound = (1.0 + np.cos(theta)) / 2.0
    hyp = {
        "density": dens <= bound + 1e-9,
        "wet_mass": 0.0 < wet < np.cos(theta) * OMEGA[V.n],
    }
    if not all(hyp.values()):
        failed = ", ".join(k for k, v in hyp.items() if not v)
        return ConeClassification(False, None, np.inf, dens, wet, hyp, f"hypothesis fails: {failed}")
    family = family or ProbeFamily(V.dim)
    target = family.evaluate(V, level=1)
    template = make_model_cone(theta, V.n, V.mesh_size)

    def resid(phi: float) -> float:
        return distance_from_values(target, family.evaluate(template.rotated(_wall_map(V.n, phi)), level=1))

    if V.n == 1:
        cands = [0.0, np.pi]
        scores = [resid(p) for p in cands]
        k = int(np.argmin(scores))
        best, score = cands[k], scores[k]
    else:
        phis = 2 * np.pi * np.arange(grid) / grid
        scores = np.array([resid(p) for p in phis])
        k = int(np.argmin(scores))
        step = 2 * np.pi / grid
        opt = minimize_scalar(resid, bounds=(phis[k] - step, phis[k] + step), method="bounded",
                              options={"xatol": 1e-12, "maxiter": 200})
        best, score = float(opt.x), float(opt.fun)
        if scores[k] < score:
            best, score = float(phis[k]), float(scores[k])
        best = float(np.mod(best, 2 * np.pi))
    q = _wall_map(V.n, best)
    ok = score <= tol
    return ConeClassification(ok, q if ok else None, score, dens, wet, hyp,
                              "" if ok else f"rotation fit residual {score:.3g} above {tol:.3g}")


# ----------------------------------------------------------------------
# affine normalization at a wall point


def wall_frame(gm: Array) -> Array:
    """Columns b_1..b_d with B^T g B = I, built by Gram-Schmidt in the order e_2, ..., e_d, e_1.

    The wall vectors b_2..b_d stay inside {x_1 = 0}; b_1 is the g-unit
    normal of the wall, so the map y -> B y preserves the wall and the
    half-space.
    """
    d = gm.shape[0]
    order = list(range(1, d)) + [0]
    basis: list[Array] = []
    for k in order:
        v = np.zeros(d)
        v[k] = 1.0
        for b in basis:
            v = v - (b @ gm @ v) * b
        v = v / np.sqrt(v @ gm @ v)
        basis.append(v)
    cols = [basis[-1]] + basis[:-1]
    out = np.stack(cols, axis=1)
    out[0, 1:] = 0.0
    return out


def normalize_at_wall_point(V: DiscreteVarifold, xi) -> tuple[DiscreteVarifold, MetricField, Array]:
    """Affine change of variables fixing xi and the wall that makes the metric the identity at xi."""
    xi = np.asarray(xi, dtype=float)
    if xi[0] != 0.0:
        raise ValueError("the centre must lie on the wall")
    g = V.metric
    B = wall_frame(g(xi))
    Binv = np.zeros_like(B)
    Binv[0, 0] = 1.0 / B[0, 0]
    inner = np.linalg.inv(B[1:, 1:])
    Binv[1:, 1:] = inner
    Binv[1:, 0] = -inner @ B[1:, 0] / B[0, 0]

    def ev(y):
        x = xi + (np.asarray(y) - xi) @ B.T
        return np.einsum("ai,...ab,bj->...ij", B, g(x), B)

    def dev(y):
        x = xi + (np.asarray(y) - xi) @ B.T
        dg = g.derivative(x)
        return np.einsum("ai,bj,...abc,ck->...ijk", B, B, dg, B)

    gp = MetricField(V.dim, ev, dev, name=f"normalized({g.name})")
    W = V.transformed(Binv, xi - Binv @ xi, metric=gp)
    return W, gp, B
