from __future__ import annotations

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import gamma

from capillary_lab import simplex
from capillary_lab.fields import ScalarField, TestVectorField
from capillary_lab.geometry import AngleField, MetricField
from capillary_lab.varifold import (
    DiscreteVarifold,
    ProbeFamily,
    _empty,
    boundary_measure_estimate,
    capillary_first_variation,
    density_ratio,
    first_variation,
    half_product_sphere_cone_density,
    make_crossed_planes,
    make_doubled_half_plane,
    make_model_cone,
    make_triple_junction,
    mass_in_ball,
    product_sphere_cone_density,
    read_varifold,
    stable_sum,
    swap_wet_region,
    varifold_distance,
    wall_gradient_term,
    write_varifold,
)

THETAS = [np.pi / 6, np.pi / 4, np.pi / 3, np.pi / 2]


def _half_line(h=1 / 64):
    n = 64
    t = np.linspace(0.0, 1.0, n + 1)
    pts = np.stack([-t, np.zeros_like(t)], axis=1)
    segs = np.stack([pts[:-1], pts[1:]], axis=1)
    return DiscreteVarifold(1, segs, np.ones(n), _empty(1), np.zeros(0), resolution=h)


def _plane_half_disc(h=1 / 32):
    # the horizontal plane {x_3 = 0} restricted to x_1 <= 0, tiled over [-1, 0] x [-1, 1]
    from capillary_lab.varifold import _count, _grid_triangles

    tris = _grid_triangles([0.0, -1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 2.0, 0.0], _count(1.0, h), _count(2.0, h))
    return DiscreteVarifold(2, tris, np.ones(len(tris)), _empty(2), np.zeros(0), resolution=h)


def test_mass_of_half_line():
    assert mass_in_ball(_half_line(), np.zeros(2), 1.0) == pytest.approx(1.0, rel=1e-14)


def test_mass_of_model_cone_n1():
    # interior ray of length 1 inside B_1 plus the wet segment weighted cos(pi/3)
    V = make_model_cone(np.pi / 3, 1, 1 / 64)
    assert mass_in_ball(V, np.zeros(2), 1.0) == pytest.approx(1.5, rel=1e-13)


def test_mass_matches_monte_carlo():
    rng = np.random.default_rng(0)
    ang = np.linspace(0, 2 * np.pi, 41)
    center = np.array([-0.5, 0.0, 0.0])
    ring = center + 0.45 * np.stack([np.cos(ang), np.sin(ang), 0.2 * np.cos(ang)], axis=1)
    tris = np.stack([np.broadcast_to(center, (40, 3)), ring[:-1], ring[1:]], axis=1)
    V = DiscreteVarifold(2, tris, np.ones(40), _empty(2), np.zeros(0))
    ball_c, r = np.array([-0.3, 0.1, 0.0]), 0.3
    areas = simplex.measures(tris)
    m = 200_000
    pick = rng.choice(40, size=m, p=areas / areas.sum())
    a, b = rng.uniform(size=(2, m))
    flip = a + b > 1
    a[flip], b[flip] = 1 - a[flip], 1 - b[flip]
    t = tris[pick]
    pts = t[:, 0] + a[:, None] * (t[:, 1] - t[:, 0]) + b[:, None] * (t[:, 2] - t[:, 0])
    hit = np.linalg.norm(pts - ball_c, axis=1) <= r
    p = hit.mean()
    est, sigma = areas.sum() * p, areas.sum() * np.sqrt(p * (1 - p) / m)
    assert abs(mass_in_ball(V, ball_c, r) - est) <= 3 * sigma


@pytest.mark.parametrize("theta", THETAS)
@pytest.mark.parametrize("n", [1, 2])
@pytest.mark.parametrize("r", [0.25, 0.5, 1.0])
def test_model_cone_density(theta, n, r):
    V = make_model_cone(theta, n, 1 / 32)
    assert density_ratio(V, np.zeros(n + 1), r) == pytest.approx((1 + np.cos(theta)) / 2, rel=1e-12)


def test_model_cone_density_value_pi_over_3():
    assert density_ratio(make_model_cone(np.pi / 3, 2, 1 / 32), np.zeros(3), 0.5) == pytest.approx(0.75, rel=1e-12)


def test_half_plane_density_is_half():
    assert density_ratio(_plane_half_disc(), np.zeros(3), 0.7) == pytest.approx(0.5, rel=1e-12)


def test_empty_density_is_zero():
    V = DiscreteVarifold(2, _empty(2), np.zeros(0), _empty(2), np.zeros(0))
    assert density_ratio(V, np.zeros(3), 0.5) == 0.0


def _tangential_bumps(n, count=6, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        c = np.concatenate([[-rng.uniform(0, 0.3)], rng.uniform(-0.3, 0.3, size=n)])
        v = np.concatenate([[0.0], rng.normal(size=n)])
        out.append(TestVectorField.bump(c, rng.uniform(0.2, 0.4), v))
    return out


@pytest.mark.parametrize("theta", [np.pi / 6, np.pi / 3, 2 * np.pi / 3])
@pytest.mark.parametrize("n", [1, 2])
def test_model_cone_is_stationary(theta, n):
    h = 1 / 32
    V = make_model_cone(theta, n, h)
    for X in _tangential_bumps(n):
        assert abs(first_variation(V, None, X)) <= 5 * h


@pytest.mark.parametrize("h", [1 / 64, 1 / 128])
def test_conormal_balance_n1(h):
    # delta V(phi e_1) = sin(theta) phi(0): the interior conormal at the edge is (sin, -cos)
    theta = np.pi / 3
    V = make_model_cone(theta, 1, h)
    X = TestVectorField.bump(np.zeros(2), 0.5, np.array([1.0, 0.0]))
    assert first_variation(V, None, X) == pytest.approx(np.sin(theta), abs=2 * h * h)


@pytest.mark.parametrize("s", [0.2, 0.1])
def test_triple_junction_is_stationary(s):
    h = 1 / 128
    V = make_triple_junction(s, h)
    for X in _tangential_bumps(1, seed=3):
        assert abs(first_variation(V, None, X)) <= 5 * h


@pytest.mark.parametrize("theta", [np.pi / 4, np.pi / 2])
def test_capillary_variation_constant_beta(theta):
    V = make_model_cone(theta, 2, 1 / 32)
    beta = AngleField.constant(theta)
    for X in _tangential_bumps(2, seed=1):
        assert capillary_first_variation(V, None, beta, X) == pytest.approx(first_variation(V, None, X), abs=1e-12)


def test_capillary_variation_rejects_normal_fields():
    V = make_model_cone(1.0, 1, 1 / 16)
    X = TestVectorField.bump(np.zeros(2), 0.5, np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        capillary_first_variation(V, None, AngleField.constant(1.0), X)


def test_wall_gradient_term_matches_line_integral():
    beta = AngleField.oscillating(np.pi / 3, 0.2, 3.0)
    wet = np.stack([np.stack([np.zeros(128), np.linspace(-1, 1, 129)[:-1]], 1),
                    np.stack([np.zeros(128), np.linspace(-1, 1, 129)[1:]], 1)], axis=1)
    V = DiscreteVarifold(1, _empty(1), np.zeros(0), wet, np.cos(beta(wet.mean(axis=1))))
    X = TestVectorField.bump(np.zeros(2), 0.5, np.array([0.0, 1.0]))

    def integrand(y):
        p = np.array([[0.0, y]])
        dcos = -np.sin(beta(p)[0]) * beta.gradient(p)[0, 1]
        return X.value(p)[0, 1] * dcos

    oracle, _ = quad(integrand, -0.5, 0.5, limit=200)
    assert wall_gradient_term(V, None, beta, X) == pytest.approx(oracle, abs=1e-8)
    # integrating by parts, the wall divergence of X cos(beta) integrates to zero (midpoint rule, h = 1/64)
    assert abs(capillary_first_variation(V, None, beta, X)) <= (1 / 64) ** 2


@pytest.mark.parametrize("theta", [np.pi / 6, np.pi / 3, np.pi / 2])
@pytest.mark.parametrize("n", [1, 2])
def test_boundary_measure_of_model_cone(theta, n):
    V = make_model_cone(theta, n, 1 / 32)
    est = boundary_measure_estimate(V, None, ScalarField.constant(1.0))
    edge = 1.0 if n == 1 else 2.0
    assert est.value == pytest.approx(np.sin(theta) * edge, rel=1e-10)


def test_boundary_measure_without_interior_is_zero():
    V = make_model_cone(np.pi / 3, 2, 1 / 16).boundary_part()
    assert boundary_measure_estimate(V, None, ScalarField.constant(1.0)).value == 0.0


def test_boundary_measure_needs_two_widths():
    with pytest.raises(ValueError):
        boundary_measure_estimate(make_model_cone(1.0, 1, 1 / 16), None, ScalarField.constant(1.0), taus=[0.1])


@pytest.mark.parametrize("theta", [np.pi / 6, np.pi / 3])
def test_swap_wet_region_stays_stationary(theta):
    V = make_model_cone(theta, 2, 1 / 32)
    W, beta = swap_wet_region(V, AngleField.constant(theta))
    assert beta(np.zeros((1, 3)))[0] == pytest.approx(np.pi - theta)
    for X in _tangential_bumps(2, seed=2):
        assert abs(capillary_first_variation(W, None, beta, X)) <= 5 / 32


def test_swap_is_an_involution():
    V = make_model_cone(np.pi / 3, 2, 1 / 16)
    W, b = swap_wet_region(*swap_wet_region(V, AngleField.constant(np.pi / 3)))
    assert np.array_equal(W.boundary, V.boundary)
    assert np.allclose(W.boundary_density, V.boundary_density, atol=1e-15)
    assert b(np.zeros((1, 3)))[0] == pytest.approx(np.pi / 3)


def test_swap_at_right_angle_gives_zero_densities():
    V = make_model_cone(np.pi / 2, 1, 1 / 16)
    W, _ = swap_wet_region(V, AngleField.constant(np.pi / 2))
    assert np.allclose(V.boundary_density, 0.0, atol=1e-15)
    assert np.allclose(W.boundary_density, 0.0, atol=1e-15)


def test_triple_junction_zero_shift_is_model_cone():
    V = make_triple_junction(0.0, 1 / 64)
    W = make_model_cone(np.pi / 3, 1, 1 / 64)
    assert np.array_equal(V.interior, W.interior) and np.array_equal(V.boundary, W.boundary)


def test_triple_junction_distance_decreases():
    base = make_model_cone(np.pi / 3, 1, 1 / 128)
    d = [varifold_distance(make_triple_junction(s), base) for s in (0.2, 0.1, 0.05)]
    assert d[0] > d[1] > d[2]


def test_distance_axioms():
    Vs = [make_model_cone(np.pi / 3, 1, 1 / 32), make_triple_junction(0.1, 1 / 32), make_model_cone(np.pi / 4, 1, 1 / 32)]
    fam = ProbeFamily(2)
    assert varifold_distance(Vs[0], Vs[0], fam) == 0.0
    d = {(i, j): varifold_distance(Vs[i], Vs[j], fam) for i in range(3) for j in range(3)}
    for i in range(3):
        for j in range(3):
            assert d[i, j] == pytest.approx(d[j, i], abs=1e-15)
            for k in range(3):
                assert d[i, k] <= d[i, j] + d[j, k] + 1e-15


def test_distance_rejects_dimension_mismatch():
    with pytest.raises(ValueError):
        varifold_distance(make_model_cone(1.0, 1, 1 / 8), make_model_cone(1.0, 2, 1 / 8))


def test_doubled_half_plane_density_one():
    assert density_ratio(make_doubled_half_plane(np.pi / 3, 1 / 16), np.zeros(3), 1.0) == pytest.approx(1.0, rel=1e-12)


def test_crossed_planes_have_no_wet_mass():
    V = make_crossed_planes(np.pi / 5, 1 / 16)
    assert mass_in_ball(V.boundary_part(), np.zeros(3), 1.0) == 0.0


def test_model_cone_validates_arguments():
    with pytest.raises(ValueError):
        make_model_cone(np.pi, 2, 1 / 16)
    with pytest.raises(ValueError):
        make_model_cone(1.0, 3, 1 / 16)


def test_faces_outside_half_space_rejected():
    seg = np.array([[[0.5, 0.0], [0.0, 0.0]]])
    with pytest.raises(ValueError):
        DiscreteVarifold(1, seg, np.ones(1), _empty(1), np.zeros(0))


def test_rotation_preserves_density():
    V = make_model_cone(np.pi / 3, 2, 1 / 16)
    from capillary_lab.geometry import wall_rotation_2d

    W = V.rotated(wall_rotation_2d(0.7))
    assert density_ratio(W, np.zeros(3), 0.5) == pytest.approx(density_ratio(V, np.zeros(3), 0.5), rel=1e-12)


def test_mesh_round_trip(tmp_path):
    V = make_model_cone(np.pi / 3, 2, 1 / 8)
    write_varifold(V, tmp_path / "cone.mesh")
    W = read_varifold(tmp_path / "cone.mesh")
    assert np.array_equal(V.interior, W.interior)
    assert np.array_equal(V.boundary_density, W.boundary_density)


def test_stable_sum_is_order_independent():
    rng = np.random.default_rng(7)
    vals = rng.normal(size=1000) * 10.0 ** rng.integers(-8, 8, size=1000)
    assert stable_sum(vals) == stable_sum(vals[::-1]) == stable_sum(rng.permutation(vals))


def _sphere_area(m, r=1.0):
    return 2 * np.pi ** ((m + 1) / 2) / gamma((m + 1) / 2) * r**m


@pytest.mark.parametrize("k", [1, 2, 3])
def test_product_sphere_cone_density(k):
    # cone over S^k(1/sqrt 2) x S^k(1/sqrt 2): link area over the area of the unit S^{2k}
    link = _sphere_area(k, 1 / np.sqrt(2)) ** 2
    assert product_sphere_cone_density(k) == pytest.approx(link / _sphere_area(2 * k), rel=1e-12)
    assert half_product_sphere_cone_density(k) == pytest.approx(link / _sphere_area(2 * k) / 2, rel=1e-12)


def test_half_simons_density_closed_form():
    # k = 3: (pi^4 / 2) / (16 pi^3 / 15) / 2
    assert half_product_sphere_cone_density(3) == pytest.approx(15 * np.pi / 64, rel=1e-12)
