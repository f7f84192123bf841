from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse.linalg import spsolve

from capillary_lab import slanted_graph as sg
from capillary_lab.geometry import MetricField, Plane, oscillation, squashed_norm
from capillary_lab.varifold import make_model_cone


def _grid(theta=np.pi / 3, n=2, h=1 / 16, radius=1.0):
    return sg.SliceGrid(theta, n, h, radius)


def test_grid_ring_surrounds_inside():
    g = _grid()
    assert not np.any(g.inside & g.ring)
    assert np.all(g.squashed[g.inside] < 1.0)
    assert np.all(g.squashed[g.ring] >= 1.0)
    assert np.array_equal(g.coords[0, :, 0], np.zeros(g.shape[1]))


@pytest.mark.parametrize("kw", [dict(theta=0.0), dict(n=3), dict(h=-1.0)])
def test_grid_validation(kw):
    args = dict(theta=1.0, n=2, h=0.1)
    args.update(kw)
    with pytest.raises(ValueError):
        sg.SliceGrid(args["theta"], args["n"], args["h"])


def test_graph_function_rejects_nonfinite():
    g = _grid(h=1 / 8)
    with pytest.raises(ValueError):
        sg.GraphFunction.from_function(g, lambda x: np.full(len(x), np.nan))


@pytest.mark.parametrize("n", [1, 2])
def test_surface_of_zero_is_plane(n):
    theta = np.pi / 3
    u = sg.GraphFunction.zeros(_grid(theta, n))
    V = sg.slanted_graph_surface(u)
    assert np.max(np.abs(V.interior @ Plane(theta, n + 1).normal)) <= 1e-14
    assert np.all(V.interior[..., 0] <= 0)


def test_surface_of_constant_is_translated():
    theta, c = np.pi / 4, 0.3
    grid = _grid(theta)
    V0 = sg.slanted_graph_surface(sg.GraphFunction.zeros(grid))
    Vc = sg.slanted_graph_surface(sg.GraphFunction.from_function(grid, lambda x: np.full(len(x), c)))
    assert np.allclose(Vc.interior - V0.interior, [0.0, 0.0, c], atol=1e-15)


def test_surface_rejects_large_graphs():
    grid = _grid()
    with pytest.raises(ValueError):
        sg.slanted_graph_surface(sg.GraphFunction.from_function(grid, lambda x: 2.0 + 0 * x[:, 0]))


@pytest.mark.parametrize("theta", [np.pi / 6, np.pi / 3, np.pi / 2])
def test_surface_oscillation_bound(theta):
    grid = _grid(theta)
    # normal height of (x', -cot x_1 + u) over P is sin(theta) u
    sym = sg.GraphFunction.from_function(grid, lambda x: 0.2 * np.sin(3 * x[:, 1]))
    skew = sg.GraphFunction.from_function(grid, lambda x: 0.1 + 0.05 * np.cos(x[:, 1]))
    P = Plane(theta, 3)
    for u, equal in ((sym, True), (skew, False)):
        pts = sg.slanted_graph_surface(u).vertices()
        osc = oscillation(P, pts, np.zeros(3), 10.0)
        bound = np.sin(theta) * u.sup_norm()
        assert osc <= bound + 1e-14
        assert (abs(osc - bound) <= 1e-12) == equal


@pytest.mark.parametrize("theta", [np.pi / 6, np.pi / 3, 2 * np.pi / 3])
def test_linear_operator_kills_quadratic(theta):
    grid = _grid(theta)
    u = sg.GraphFunction.from_function(grid, lambda x: x[:, 0] ** 2 / np.sin(theta) ** 2 - x[:, 1] ** 2)
    vals = sg.linear_operator(u)
    assert np.nanmax(np.abs(vals)) <= 1e-10


def test_linear_operator_kills_linear():
    u = sg.GraphFunction.from_function(_grid(), lambda x: 0.3 * x[:, 0] - 0.7 * x[:, 1] + 2.0)
    assert np.nanmax(np.abs(sg.linear_operator(u))) <= 1e-11


def _barrier_identity_error(n, h, theta=np.pi / 3):
    x0 = np.array([-np.sin(theta) / 4, 0.0])[:n]
    grid = sg.SliceGrid(theta, n, h, 1.0)

    def f(x):
        return np.maximum(squashed_norm(x - x0, theta), 0.05) ** (-n)

    u = sg.GraphFunction.from_function(grid, f)
    lu = sg.linear_operator(u)
    s = squashed_norm(grid.coords - x0, theta)
    ann = grid.inside & (s >= 0.125) & (s <= 0.5) & np.isfinite(lu)
    return np.max(np.abs(lu[ann] - 2 * n * s[ann] ** (-n - 2)))


@pytest.mark.parametrize("n", [1, 2])
def test_barrier_identity_second_order(n):
    ratio = _barrier_identity_error(n, 1 / 64) / _barrier_identity_error(n, 1 / 128)
    assert 3.5 <= ratio <= 4.5


@pytest.mark.parametrize("n", [1, 2])
def test_mean_curvature_of_zero(n):
    u = sg.GraphFunction.zeros(_grid(n=n))
    for mode in ("exact_euclidean", "linear_expansion", "quadrature_metric"):
        assert np.nanmax(np.abs(sg.mean_curvature(u, None, mode))) <= 1e-12


def _expansion_slopes(n):
    theta, grid = np.pi / 3, sg.SliceGrid(np.pi / 3, n, 1 / 32, 0.8)

    def phi(x):
        r2 = np.sum(x * x, axis=1)
        return np.exp(-2 * r2) * np.cos(3 * x[:, 0])

    eps = np.array([1e-1, 1e-2, 1e-3])
    curv, normal = [], []
    for e in eps:
        u = sg.GraphFunction.from_function(grid, lambda x: e * phi(x))
        diff = sg.mean_curvature(u, None, "exact_euclidean") - sg.linear_operator(u)
        curv.append(np.nanmax(np.abs(diff)))
        normal.append(np.max(np.abs(sg.normal_e1_component(u).residual)))
    return np.polyfit(np.log(eps), np.log(curv), 1)[0], np.polyfit(np.log(eps), np.log(normal), 1)[0]


@pytest.mark.parametrize("n", [1, 2])
def test_expansion_remainders_are_quadratic(n):
    s_curv, s_norm = _expansion_slopes(n)
    assert abs(s_curv - 2) <= 0.1
    assert abs(s_norm - 2) <= 0.1


def test_exact_and_quadrature_curvature_agree():
    rng = np.random.default_rng(0)
    a = rng.normal(size=4) * 0.05
    errs = []
    for h in (1 / 16, 1 / 32):
        grid = sg.SliceGrid(np.pi / 3, 2, h, 0.8)
        u = sg.GraphFunction.from_function(
            grid, lambda x: a[0] * np.sin(2 * x[:, 0]) + a[1] * np.cos(3 * x[:, 1]) + a[2] * x[:, 0] * x[:, 1] + a[3])
        ex = sg.mean_curvature(u, None, "exact_euclidean")
        qm = sg.mean_curvature(u, MetricField.euclidean(3), "quadrature_metric")
        ok = np.isfinite(ex) & np.isfinite(qm)
        errs.append(np.max(np.abs(ex[ok] - qm[ok])))
    assert errs[1] <= 0.6 * errs[0]


def test_mean_curvature_mode_checks():
    u = sg.GraphFunction.zeros(_grid(h=1 / 8))
    with pytest.raises(ValueError):
        sg.mean_curvature(u, MetricField.conformal_bump(3, 0.1), "exact_euclidean")
    with pytest.raises(ValueError):
        sg.mean_curvature(u, None, "spectral")


def test_area_gradient_matches_finite_differences():
    grid = sg.SliceGrid(np.pi / 3, 2, 1 / 8, 0.8)
    mesh = sg.GraphMesh(grid)
    g = MetricField.linear_shear(3, 0.2)
    rng = np.random.default_rng(1)
    z = sg.GraphFunction.zeros(grid).heights()[grid.active] + 0.05 * rng.normal(size=len(mesh.xy))
    grad = mesh.area_gradient(z, g)
    for k in rng.choice(len(z), 5, replace=False):
        dz = np.zeros_like(z)
        dz[k] = 1e-6
        fd = (mesh.area(z + dz, g) - mesh.area(z - dz, g)) / 2e-6
        assert grad[k] == pytest.approx(fd, abs=1e-7)


def test_area_hessian_matches_gradient_differences():
    grid = sg.SliceGrid(np.pi / 3, 2, 1 / 8, 0.8)
    mesh = sg.GraphMesh(grid)
    z = sg.GraphFunction.zeros(grid).heights()[grid.active] + 0.03
    H = mesh.area_hessian(z).toarray()
    k = len(z) // 2
    dz = np.zeros_like(z)
    dz[k] = 1e-6
    fd = (mesh.area_gradient(z + dz, None) - mesh.area_gradient(z - dz, None)) / 2e-6
    assert np.allclose(H[:, k], fd, atol=1e-7)


@pytest.mark.parametrize("theta", [np.pi / 6, np.pi / 3, 2 * np.pi / 3])
def test_normal_component_of_plane(theta):
    for c in (0.0, 0.4):
        u = sg.GraphFunction.from_function(_grid(theta), lambda x: np.full(len(x), c))
        assert np.allclose(sg.normal_e1_component(u).values, np.cos(theta), atol=1e-14)


def test_normal_component_orientation_flips_sign():
    u = sg.GraphFunction.from_function(_grid(), lambda x: 0.1 * x[:, 0])
    up = sg.normal_e1_component(u).values
    down = sg.normal_e1_component(u, orientation=-1).values
    assert np.allclose(up, -down)


def test_barrier_values():
    theta, r0, eta, t = np.pi / 3, 0.125, 0.2, 0.7
    x0 = np.zeros(2)
    pts = np.array([[-0.5 * np.sin(theta), 0.0], [0.0, 0.5], [0.0, 0.05], [-0.9, 0.9]])
    vals = sg.barrier_values(pts, t, theta, r0, eta, x0)
    assert vals[0] == pytest.approx(t) and vals[1] == pytest.approx(t) and vals[3] == t
    assert vals[2] == pytest.approx(t - eta / (4 * np.sin(theta)))


def test_barrier_is_continuous_at_both_radii():
    theta, r0, eta = np.pi / 4, 0.125, 0.3
    s = np.array([r0 - 1e-12, r0 + 1e-12, 0.5 - 1e-12, 0.5 + 1e-12])
    pts = np.stack([np.zeros(4), s], axis=1)
    v = sg.barrier_values(pts, 0.0, theta, r0, eta, np.zeros(2))
    assert v[0] == pytest.approx(v[1], abs=1e-9) and v[2] == pytest.approx(v[3], abs=1e-9)


@pytest.mark.parametrize("n", [1, 2])
def test_barrier_mean_curvature_negative_on_annulus(n):
    theta, r0, eta = np.pi / 3, 0.125, 1e-3
    grid = sg.SliceGrid(theta, n, 1 / 128, 1.0)
    x0 = sg.default_barrier_center(theta, n)
    u = sg.barrier_function(0.0, theta, r0, eta, x0, grid)
    H = sg.mean_curvature(u, None, "exact_euclidean")
    s = squashed_norm(grid.coords - x0, theta)
    ann = (s > r0 + 2 / 128) & (s < 0.5 - 2 / 128) & np.isfinite(H)
    assert np.max(H[ann]) < 0
    assert np.max(H[ann]) <= -0.5 * eta * 2 * n * sg.barrier_constant(theta, r0, n) * 0.5 ** (-n - 2)


def test_barrier_rejects_bad_radius():
    with pytest.raises(ValueError):
        sg.barrier_values(np.zeros((1, 2)), 0.0, 1.0, 0.6, 0.1, np.zeros(2))


@pytest.mark.parametrize("n", [1, 2])
def test_neumann_constant_data(n):
    grid = sg.SliceGrid(np.pi / 3, n, 1 / 32, 1.0)
    u = sg.solve_neumann(None, 2.5, np.pi / 3, grid)
    assert np.allclose(u.values[grid.active], 2.5, atol=1e-10)


@pytest.mark.parametrize("theta", [np.pi / 6, np.pi / 3, np.pi / 2])
def test_neumann_recovers_quadratic(theta):
    grid = sg.SliceGrid(theta, 2, 1 / 32, 1.0)

    def exact(x):
        return x[:, 0] ** 2 / np.sin(theta) ** 2 - x[:, 1] ** 2

    u = sg.solve_neumann(None, exact, theta, grid)
    assert np.max(np.abs(u.values[grid.active] - exact(grid.coords[grid.active]))) <= 1e-9
    assert u.params["residual"] <= sg.TOL_SOLVE


def _stretched_reference(grid, dirichlet):
    # five-point Laplacian in y_1 = x_1 / sin(theta) with a reflected ghost row at the wall
    ins = grid.inside
    idx = -np.ones(grid.shape, dtype=int)
    idx[ins] = np.arange(ins.sum())
    d = np.where(grid.active, dirichlet(grid.coords), 0.0)
    rows, cols, vals = [], [], []
    b = np.zeros(ins.sum())
    for (i, j), k in np.ndenumerate(idx):
        if k < 0:
            continue
        rows.append(k), cols.append(k), vals.append(4.0)
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            a, c = i + di, j + dj
            if a < 0:
                a = 1
            m = idx[a, c]
            if m >= 0:
                rows.append(k), cols.append(m), vals.append(-1.0)
            else:
                b[k] += d[a, c]
    A = sp.csr_matrix((vals, (rows, cols)), shape=(len(b), len(b)))
    out = np.full(grid.shape, np.nan)
    out[ins] = spsolve(A.tocsc(), b)
    return out


def test_neumann_matches_stretched_laplace_solve():
    theta = np.pi / 4
    grid = sg.SliceGrid(theta, 2, 1 / 16, 1.0)

    def data(x):
        return np.cos(2 * x[..., 1]) + x[..., 0]

    u = sg.solve_neumann(None, data, theta, grid)
    ref = _stretched_reference(grid, data)
    assert np.max(np.abs(u.values[grid.inside] - ref[grid.inside])) <= 1e-9


def test_neumann_theta_mismatch():
    grid = sg.SliceGrid(np.pi / 3, 2, 1 / 8, 1.0)
    with pytest.raises(ValueError):
        sg.solve_neumann(None, 0.0, np.pi / 4, grid)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_neumann_discrete_maximum_principle(seed):
    rng = np.random.default_rng(seed)
    grid = sg.SliceGrid(np.pi / 3, 2, 1 / 16, 1.0)
    data = np.where(grid.active, rng.uniform(-1, 1, size=grid.shape), np.nan)
    u = sg.solve_neumann(None, data, np.pi / 3, grid)
    ring = data[grid.ring]
    inner = u.values[grid.inside]
    assert inner.max() <= ring.max() + sg.TOL_SOLVE and inner.min() >= ring.min() - sg.TOL_SOLVE


def test_slide_barrier_touches_plane_at_wet_edge():
    theta, eta = np.pi / 3, 0.2
    grid = sg.SliceGrid(theta, 2, 1 / 32, 1.0)
    V = sg.slanted_graph_surface(sg.GraphFunction.zeros(grid))
    res = sg.slide_barrier(V, theta, (-2.0, 2.0), eta, 0.125, np.zeros(2), tol=1e-9)
    # the plane sits at u = 0, the barrier minimum is t - eta / (4 sin theta)
    assert res.contact
    assert res.t_star == pytest.approx(eta / (4 * np.sin(theta)), abs=1e-8)
    assert np.any(np.abs(res.touching[:, 0]) <= 1e-12)


def test_slide_barrier_no_contact():
    theta = np.pi / 3
    grid = sg.SliceGrid(theta, 2, 1 / 32, 1.0)
    V = sg.slanted_graph_surface(sg.GraphFunction.zeros(grid))
    assert not sg.slide_barrier(V, theta, (1.0, 2.0), 0.1).contact


def test_slide_barrier_range_check():
    theta = np.pi / 3
    grid = sg.SliceGrid(theta, 2, 1 / 32, 1.0)
    V = sg.slanted_graph_surface(sg.GraphFunction.zeros(grid))
    with pytest.raises(ValueError):
        sg.slide_barrier(V, theta, (-2.0, -1.0), 0.1)


def test_graph_csv_export(tmp_path):
    u = sg.GraphFunction.from_function(_grid(h=1 / 4), lambda x: x[:, 1])
    u.to_csv(tmp_path / "u.csv")
    lines = (tmp_path / "u.csv").read_text().splitlines()
    assert lines[0] == "x1,x2,value" and len(lines) == 1 + int(u.grid.active.sum())
    assert "theta = " in (tmp_path / "u.csv.meta").read_text()


def test_model_cone_interior_matches_zero_graph_plane():
    theta = np.pi / 3
    V = make_model_cone(theta, 2, 1 / 16)
    assert np.max(np.abs(V.interior @ Plane(theta, 3).normal)) <= 1e-14
