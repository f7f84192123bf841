"""Scenario dispatch: build inputs from a config, run one experiment, write CSV / SVG / summary."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import capillary as cap
from . import monotonicity as mono
from . import slanted_graph as sg
from .config import ScenarioConfig
from .fields import TestVectorField
from .geometry import AngleField, MetricField, Plane, boundary_rotation, wall_rotation_2d
from .plotting import line_plot
from .varifold import (
    OMEGA,
    DiscreteVarifold,
    capillary_first_variation,
    density_ratio,
    first_variation,
    make_crossed_planes,
    make_doubled_half_plane,
    make_model_cone,
    make_triple_junction,
    mass_in_ball,
    varifold_distance,
    write_varifold,
)

EXIT_OK, EXIT_ERROR, EXIT_CHECK = 0, 1, 2


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


@dataclass
class ScenarioResult:
    name: str
    kind: str
    checks: list[Check] = field(default_factory=list)
    files: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    error: str | None = None

    @property
    def exit_code(self) -> int:
        if self.error is not None:
            return EXIT_ERROR
        return EXIT_OK if all(c.passed for c in self.checks) else EXIT_CHECK

    def summary(self) -> str:
        lines = [f"scenario = {self.name}", f"kind = {self.kind}"]
        lines += [f"note: {n}" for n in self.notes]
        lines += [f"check {c.name}: {'PASS' if c.passed else 'FAIL'} ({c.detail})" for c in self.checks]
        if self.error:
            lines.append(f"error: {self.error}")
        lines.append(f"exit = {self.exit_code}")
        return "\n".join(lines) + "\n"


class _Ctx:
    """Per-run helpers: output directory, tolerance scale and file bookkeeping."""

    def __init__(self, cfg: ScenarioConfig, out: Path, scale: float):
        self.cfg = cfg
        self.out = out
        self.scale = scale
        self.result = ScenarioResult(cfg.name, cfg.kind)

    def tol(self, key: str) -> float:
        return self.cfg.tolerance(key, self.scale)

    def check(self, name: str, passed: bool, detail: str) -> None:
        self.result.checks.append(Check(name, bool(passed), detail))

    def write_csv(self, filename: str, header: list[str], rows) -> None:
        if not self.cfg["output.csv"]:
            return
        path = self.out / filename
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])
        self.result.files.append(filename)

    def plot(self, filename: str, *args, **kw) -> None:
        if not self.cfg["output.svg"]:
            return
        line_plot(self.out / filename, *args, **kw)
        self.result.files.append(filename)

    def record(self, filename: str) -> None:
        self.result.files.append(filename)


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


# ----------------------------------------------------------------------
# builders


def build_metric(cfg: ScenarioConfig, dim: int) -> MetricField:
    kind = cfg["fields.metric"]
    amp = cfg["fields.metric_amplitude"]
    if kind == "euclidean":
        return MetricField.euclidean(dim)
    if kind == "conformal_bump":
        return MetricField.conformal_bump(dim, amp)
    return MetricField.linear_shear(dim, amp)


def build_beta(cfg: ScenarioConfig) -> AngleField:
    beta = cfg["fields.beta"]
    if cfg["fields.beta_kind"] == "constant":
        return AngleField.constant(beta)
    return AngleField.oscillating(beta, cfg["fields.beta_amplitude"], cfg["fields.beta_frequency"])


def solver_setup(cfg: ScenarioConfig, h: float | None = None) -> tuple[cap.EnergyConfig, sg.GraphFunction]:
    """Energy data and Dirichlet/initial graph from the solver block.

    The Dirichlet data is the plane meeting the wall at the contact angle,
    plus a perturbation that vanishes near the wall corners (``bump``) or a
    smooth cosine mode (``cosine``).
    """
    n = cfg["geometry.n"]
    theta = cfg["geometry.theta"]
    R = cfg["geometry.radius"]
    grid = sg.SliceGrid(theta, n, cfg["geometry.h"] if h is None else h, R)
    beta = build_beta(cfg)
    b0 = cfg["fields.beta"]
    ecfg = cap.EnergyConfig(grid, beta, h=cfg["fields.h"], g=build_metric(cfg, n + 1))
    eps = cfg["solver.eps"]
    tilt = np.cos(theta) / np.sin(theta) - np.cos(b0) / np.sin(b0)
    kind = cfg["solver.data"]
    sin = np.sin(theta)

    def data(x):
        base = tilt * x[:, 0]
        if kind == "flat":
            return base
        if kind == "bump":
            if n == 1:
                return base + eps
            return base + eps * np.clip(1.0 - (x[:, 1] / R) ** 2, 0.0, None) ** 2
        wave = np.cos(1.5 * x[:, 0] / sin)
        if n == 2:
            wave = wave * np.cos(2.0 * x[:, 1])
        return base + eps * wave

    return ecfg, sg.GraphFunction.from_function(grid, data, "dirichlet")


def run_solver(cfg: ScenarioConfig, h: float | None = None):
    ecfg, init = solver_setup(cfg, h)
    u, report = cap.minimize(ecfg, init, cap.Schedule(max_iter=cfg["solver.max_iter"], tol_el=cfg["tolerances.el"]))
    return ecfg, u, report


def mass_deleted_cone(theta: float, n: int, h: float) -> DiscreteVarifold:
    """Model cone with the interior faces of an annulus removed; not stationary."""
    V = make_model_cone(theta, n, h)
    cen = np.linalg.norm(V.interior.mean(axis=1), axis=1)
    keep = (cen < 0.3) | (cen > 0.5)
    return V.replace(interior=V.interior[keep], interior_density=V.interior_density[keep], dry=None,
                     label="mass_deleted_cone")


def build_varifold(cfg: ScenarioConfig) -> tuple[DiscreteVarifold, np.ndarray]:
    """Varifold of the geometry block and the wall point used as centre."""
    kind = cfg["geometry.varifold"]
    n, theta, h = cfg["geometry.n"], cfg["geometry.theta"], cfg["geometry.h"]
    origin = np.zeros(n + 1)
    if kind == "model_cone":
        return make_model_cone(theta, n, h), origin
    if kind == "triple_junction":
        return make_triple_junction(cfg["geometry.s_values"][0], h), origin
    if kind == "doubled_half_plane":
        return make_doubled_half_plane(theta, h), origin
    if kind == "crossed_planes":
        return make_crossed_planes(theta, h), origin
    if kind == "mass_deleted_cone":
        return mass_deleted_cone(theta, n, h), origin
    ecfg, u, _ = run_solver(cfg)
    return cap.solution_varifold(u, ecfg), cap.contact_point(u)


# ----------------------------------------------------------------------
# experiments


def _density(ctx: _Ctx) -> None:
    cfg = ctx.cfg
    if cfg["geometry.varifold"] == "triple_junction":
        base = make_model_cone(np.pi / 3, 1, cfg["geometry.h"])
        dists = [varifold_distance(make_triple_junction(s, cfg["geometry.h"]), base) for s in cfg["geometry.s_values"]]
        svals = cfg["geometry.s_values"]
        ctx.write_csv("results.csv", ["s", "distance"], zip(svals, dists))
        ctx.plot("plot.svg", [("distance", svals, dists)], "s", "varifold distance", "triple junction", logx=True)
        dec = all(b < a for a, b in zip(dists, dists[1:]))
        ctx.check("distance_decreasing", dec, "distances " + ", ".join(f"{d:.4g}" for d in dists))
        ctx.check("distance_small", dists[-1] < ctx.tol("distance"), f"{dists[-1]:.4g} < {ctx.tol('distance'):.3g}")
        return
    n, h = cfg["geometry.n"], cfg["geometry.h"]
    rows, series, worst = [], [], 0.0
    for th in cfg["geometry.thetas"]:
        V = make_model_cone(th, n, h)
        exp = (1.0 + np.cos(th)) / 2.0
        vals = []
        for r in cfg["experiment.radii"]:
            d = density_ratio(V, np.zeros(n + 1), r)
            rel = abs(d - exp) / abs(exp)
            worst = max(worst, rel)
            rows.append((th, r, d, exp, rel))
            vals.append(d)
        series.append((f"theta={th:.4f}", cfg["experiment.radii"], vals))
    ctx.write_csv("results.csv", ["theta", "r", "density", "expected", "rel_error"], rows)
    ctx.plot("plot.svg", series, "r", "density ratio", "model cone density")
    ctx.check("density", worst <= ctx.tol("density"), f"max relative error {worst:.3g}")


def tangential_bumps(count: int, seed: int, n: int) -> list[TestVectorField]:
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        c = np.zeros(n + 1)
        c[0] = -rng.uniform(0.0, 0.3)
        c[1:] = rng.uniform(-0.3, 0.3, size=n)
        v = np.zeros(n + 1)
        v[1:] = rng.normal(size=n)
        v /= np.linalg.norm(v)
        out.append(TestVectorField.bump(c, rng.uniform(0.2, 0.4), v, name=f"bump{k}"))
    return out


def _first_variation(ctx: _Ctx) -> None:
    cfg = ctx.cfg
    n, th, h = cfg["geometry.n"], cfg["geometry.theta"], cfg["geometry.h"]
    V = make_model_cone(th, n, h)
    g = build_metric(cfg, n + 1)
    beta = AngleField.constant(th)
    rows = []
    worst_fv, worst_gap = 0.0, 0.0
    for X in tangential_bumps(cfg["experiment.fields"], cfg["scenario.seed"], n):
        fv = first_variation(V, g, X)
        cv = capillary_first_variation(V, g, beta, X)
        worst_fv = max(worst_fv, abs(fv))
        worst_gap = max(worst_gap, abs(cv - fv))
        rows.append((X.name, *X.center, X.radius, fv, cv, cv - fv))
    names = ["x1", "x2"] + (["x3"] if n == 2 else [])
    ctx.write_csv("results.csv", ["field", *names, "radius", "first_variation", "capillary", "difference"], rows)
    ctx.plot("plot.svg", [("|first variation|", range(len(rows)), [abs(r[-3]) for r in rows])],
             "field index", "|delta V(X)|", "stationarity against tangential fields")
    bound = ctx.tol("first_variation") * h
    ctx.check("stationarity", worst_fv <= bound, f"max |dV(X)| {worst_fv:.3g} <= {bound:.3g}")
    ctx.check("capillary_identity", worst_gap <= bound, f"max gap {worst_gap:.3g} <= {bound:.3g}")


def _monotone(ctx: _Ctx) -> None:
    cfg = ctx.cfg
    V, xi = build_varifold(cfg)
    h = V.mesh_size
    prof = mono.boundary_monotone_profile(V, None, xi, cfg["experiment.radii"], cfg["fields.lambda"],
                                          tol=ctx.tol("monotone") * h)
    ctx.result.notes.extend(prof.warnings)
    ctx.write_csv("results.csv", ["r", "value", "allowance", "deficit"], prof.rows())
    ctx.plot("plot.svg", [("value + allowance", prof.radii, prof.totals)], "r", "monotone quantity",
             f"boundary monotonicity ({V.label})")
    expect = cfg["experiment.expect"]
    negative = expect == "rejected" or (expect == "auto" and cfg["geometry.varifold"] == "mass_deleted_cone")
    detail = f"{len(prof.violations)} violations at tol {prof.tolerance:.3g}"
    ctx.check("negative_control" if negative else "monotone", bool(prof.violations) == negative, detail)


def _excess(ctx: _Ctx) -> None:
    cfg = ctx.cfg
    n, th, h = cfg["geometry.n"], cfg["geometry.theta"], cfg["geometry.h"]
    P = Plane(th, n + 1)
    rows, worst = [], 0.0
    r = cfg["experiment.radii"][-1]
    for phi in cfg["geometry.tilts"]:
        V = make_model_cone(th + phi, n, h).interior_part()
        tilt = mono.tilt_excess(V, P, np.zeros(n + 1), r)
        mass = mass_in_ball(V, np.zeros(n + 1), r)
        exp = np.sin(phi) ** 2 * mass
        height = mono.l2_height_excess(V, P, np.zeros(n + 1), r)
        worst = max(worst, abs(tilt - exp) / max(exp, 1e-300))
        rows.append((phi, tilt, exp, height))
    ctx.write_csv("results.csv", ["phi", "tilt_excess", "expected", "height_excess"], rows)
    ctx.plot("plot.svg", [("tilt", [x[0] for x in rows], [x[1] for x in rows]),
                          ("sin^2(phi) mass", [x[0] for x in rows], [x[2] for x in rows])],
             "tilt angle", "excess", "tilt excess of tilted half-planes")
    ctx.check("tilt_oracle", worst <= 1e-9, f"max relative error {worst:.3g}")


def _cone_classify(ctx: _Ctx) -> None:
    cfg = ctx.cfg
    n, th, h = cfg["geometry.n"], cfg["geometry.theta"], cfg["geometry.h"]
    kind = cfg["geometry.varifold"]
    expect = cfg["experiment.expect"]
    if expect == "auto":
        expect = "classified" if kind == "model_cone" else "rejected"
    rng = np.random.default_rng(cfg["scenario.seed"])
    rows, ok = [], True
    if kind == "model_cone":
        base = make_model_cone(th, n, h)
        cases = []
        for _ in range(cfg["experiment.rotations"]):
            if n == 2:
                phi = float(rng.uniform(0, 2 * np.pi))
                cases.append((phi, base.rotated(wall_rotation_2d(phi))))
            else:
                phi = float(rng.choice([0.0, np.pi]))
                cases.append((phi, base.rotated(np.array([[np.cos(phi)]]))))
    else:
        V, _ = build_varifold(cfg)
        cases = [(float("nan"), V)]
    for phi, V in cases:
        res = mono.cone_classifier(V, th, tol=ctx.tol("cone"))
        fit = float("nan")
        if res.rotation is not None:
            q = res.rotation
            fit = float(np.mod(np.arctan2(q[1, 0], q[0, 0]), 2 * np.pi)) if n == 2 else float(np.arccos(q[0, 0]))
        good = res.classified == (expect == "classified")
        if good and expect == "classified" and np.isfinite(phi):
            diff = abs((fit - phi + np.pi) % (2 * np.pi) - np.pi)
            good = diff <= 1e-6
        ok &= good
        rows.append((phi, fit, res.residual, res.classified, res.density, res.wet_mass, res.reason))
    ctx.write_csv("results.csv", ["rotation", "fitted", "residual", "classified", "density", "wet_mass", "reason"], rows)
    ctx.plot("plot.svg", [("residual", range(len(rows)), [max(r[2], 1e-300) if np.isfinite(r[2]) else 1.0
                                                           for r in rows])],
             "case", "fit residual", "cone classification", logy=True)
    ctx.check("classification", ok, f"expected {expect} for {len(rows)} case(s)")


def _smooth_solution(n: int, theta: float):
    k = 1.3
    sin = np.sin(theta)
    if n == 2:
        return (lambda x: np.cosh(k * x[:, 0] / sin) * np.cos(k * x[:, 1])), None
    # 1-d: u = cos(k y), L u = -k^2 u
    return (lambda x: np.cos(k * x[:, 0] / sin)), (lambda x: -k * k * np.cos(k * x[:, 0] / sin))


def _neumann(ctx: _Ctx) -> None:
    cfg = ctx.cfg
    n, th = cfg["geometry.n"], cfg["geometry.theta"]
    sin = np.sin(th)

    def quad(x):
        return x[:, 0] ** 2 / sin**2 - (x[:, 1] ** 2 if n == 2 else 0.0)

    def quad_rhs(x):
        return np.full(len(x), 0.0 if n == 2 else 2.0)

    smooth, smooth_rhs = _smooth_solution(n, th)
    rows = []
    for h in cfg["geometry.h_values"]:
        grid = sg.SliceGrid(th, n, h, 1.0)
        act = grid.active
        errs = []
        for fn, rhs in ((quad, quad_rhs), (smooth, smooth_rhs)):
            f = None if rhs is None else (lambda x, r=rhs: r(x))
            u = sg.solve_neumann(f, fn, th, grid)
            errs.append(float(np.max(np.abs(u.values[act] - fn(grid.coords[act])))))
            res, its = u.params["residual"], u.params["iterations"]
        rows.append((h, errs[0], errs[1], res, its))
    hs = np.array([r[0] for r in rows])
    es = np.array([r[2] for r in rows])
    slope = float(np.polyfit(np.log(hs), np.log(es), 1)[0])
    ratios = es[:-1] / es[1:]
    ctx.write_csv("results.csv", ["h", "error_quadratic", "error_smooth", "residual", "iterations"], rows)
    ctx.plot("plot.svg", [("smooth solution", hs, es)], "h", "max error", "Neumann solve convergence",
             logx=True, logy=True)
    ctx.result.notes.append(f"fitted order {slope:.4f}; ratios " + ", ".join(f"{r:.3f}" for r in ratios))
    qmax = max(r[1] for r in rows)
    ctx.check("quadratic_exact", qmax <= 1e-8, f"max error {qmax:.3g}")
    ctx.check("order", abs(slope - 2.0) <= ctx.tol("slope"), f"order {slope:.4f}")


def _minimize(ctx: _Ctx) -> None:
    cfg = ctx.cfg
    ecfg, u, rep = run_solver(cfg)
    ca = cap.contact_angle(u, ecfg)
    u.to_csv(ctx.out / "solution.csv")
    ctx.record("solution.csv")
    ctx.record("solution.csv.meta")
    rep.to_csv(ctx.out / "iterations.csv")
    ctx.record("iterations.csv")
    coords = ca.coords[:, -1]
    ctx.write_csv("results.csv", ["x_wall", "angle", "beta", "deviation_deg"],
                  zip(coords, ca.angles, ca.beta, np.degrees(np.abs(ca.angles - ca.beta))))
    ctx.plot("plot.svg", [("measured", coords, np.degrees(ca.angles)), ("beta", coords, np.degrees(ca.beta))],
             "wall coordinate", "contact angle (deg)", "contact angle along the wall")
    if cfg["output.mesh"]:
        write_varifold(cap.solution_varifold(u, ecfg), ctx.out / "solution.mesh")
        ctx.record("solution.mesh")
    ctx.result.notes.append(rep.summary().strip().replace("\n", "; "))
    ctx.check("euler_lagrange", rep.residual <= ctx.tol("el"), f"residual {rep.residual:.3g} ({rep.status})")
    dev = float(np.degrees(ca.max_deviation))
    ctx.check("contact_angle", dev <= ctx.tol("angle_deg"), f"max deviation {dev:.4f} deg")


def _barrier(ctx: _Ctx) -> None:
    cfg = ctx.cfg
    ecfg, u, rep = run_solver(cfg)
    V = cap.solution_varifold(u, ecfg)
    slant = cfg["fields.beta"]
    margin = ctx.tol("principle") * u.grid.h
    rows, ok, touches = [], True, 0
    for c in cfg["barrier.centers"]:
        for eta in cfg["barrier.eta"]:
            s = sg.slide_barrier(V, slant, (-5.0, 5.0), eta, cfg["barrier.r0"], np.array(c, dtype=float),
                                 tol=u.grid.h, beta=ecfg.beta, graph=u, g=ecfg.g, margin=margin)
            if s.side == "boundary":
                touches += 1
                ok &= bool(s.principle_ok)
            pt = s.point if s.point is not None else [None] * (u.grid.n + 1)
            rows.append((":".join(repr(float(v)) for v in c), eta, s.contact, s.t_star, s.side, *pt,
                         s.normal_e1, s.cos_beta, s.principle_ok))
    names = ["x1", "x2"] + (["x3"] if u.grid.n == 2 else [])
    ctx.write_csv("results.csv", ["center", "eta", "contact", "t_star", "side", *names, "normal_e1", "cos_beta",
                                  "principle_ok"], rows)
    ctx.plot("plot.svg", [("t*", range(len(rows)), [r[3] if r[3] is not None else np.nan for r in rows])],
             "case", "first touching level", "sliding barriers")
    ctx.result.notes.append(f"{touches} wall touches")
    ctx.check("maximum_principle", ok, f"{touches} wall touches, margin {margin:.3g}")


def _decay(ctx: _Ctx) -> None:
    cfg = ctx.cfg
    ecfg, u, rep = run_solver(cfg)
    res = cap.oscillation_decay_experiment(u, cfg["geometry.theta"], cap.contact_point(u), cfg["experiment.radii"])
    ctx.write_csv("results.csv", ["r", "oscillation", "points"], res.rows())
    ctx.plot("plot.svg", [("oscillation", res.radii, np.maximum(res.oscillations, 1e-300))], "r", "osc",
             "oscillation decay", logx=True, logy=True)
    if res.exact:
        ctx.check("decay_exponent", True, "exact plane")
        return
    ctx.result.notes.append(f"exponent {res.exponent:.4f} +- {res.band:.3g}")
    ctx.check("decay_exponent", res.exponent >= cfg["tolerances.decay_exponent"], f"exponent {res.exponent:.4f}")


def _harnack(ctx: _Ctx) -> None:
    cfg = ctx.cfg
    ecfg, u, rep = run_solver(cfg)
    res = cap.harnack_contraction_experiment(u, ecfg, cfg["experiment.gammas"])
    rows = [(r.gamma, r.osc_inner, r.osc_outer, r.hypotheses, r.contraction,
             " ".join(res.failures.get(r.gamma, []))) for r in res.rows]
    ctx.write_csv("results.csv", ["gamma", "osc_inner", "osc_outer", "hypotheses", "contraction", "failed"], rows)
    ctx.plot("plot.svg", [("osc(B_gamma)/osc(B_1)", [r[0] for r in rows],
                           [r[1] / r[2] if r[2] > 0 else 0.0 for r in rows]),
                          ("1 - gamma", [r[0] for r in rows], [1 - r[0] for r in rows])],
             "gamma", "ratio", "oscillation contraction", logx=True)
    expect = cfg["experiment.expect"]
    negative = expect == "rejected" or (expect == "auto" and cfg["fields.beta_kind"] == "oscillating")
    for k, v in res.data_terms.items():
        ctx.result.notes.append(f"{k} = {v!r}")
    if negative:
        ctx.check("hypothesis_failure", res.best_gamma is None, "no contraction claimed" if res.best_gamma is None
                  else f"unexpected pass at {res.best_gamma}")
    else:
        best = res.best_gamma
        ctx.check("contraction", best is not None and best >= cfg["tolerances.gamma"], f"best gamma {best}")


RUNNERS = {
    "density": _density,
    "first_variation": _first_variation,
    "monotone_profile": _monotone,
    "excess": _excess,
    "cone_classify": _cone_classify,
    "neumann_solve": _neumann,
    "minimize": _minimize,
    "barrier_slide": _barrier,
    "decay": _decay,
    "harnack": _harnack,
}


def run_scenario(cfg: ScenarioConfig, out_root, tolerance_scale: float = 1.0) -> ScenarioResult:
    """Run one scenario into ``out_root/<name>``; module errors are reported with scenario context."""
    out = Path(out_root) / cfg.name
    out.mkdir(parents=True, exist_ok=True)
    ctx = _Ctx(cfg, out, tolerance_scale)
    try:
        RUNNERS[cfg.kind](ctx)
    except Exception as exc:  # reported through the exit status
        ctx.result.error = f"{type(exc).__name__} in scenario {cfg.name!r} ({cfg.kind}): {exc}"
    with open(out / "summary.txt", "w", encoding="utf-8") as fh:
        fh.write(ctx.result.summary())
    ctx.result.files.append("summary.txt")
    return ctx.result


__all__ = ["run_scenario", "ScenarioResult", "Check", "build_varifold", "solver_setup", "run_solver",
           "mass_deleted_cone", "tangential_bumps", "OMEGA", "boundary_rotation"]
