import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wbary import geometry as geo
from wbary.errors import CutLocus, InvalidPoint

SPHERE = geo.ManifoldSpec.sphere(2, 1.0)
TORUS = geo.ManifoldSpec.torus([1.0, 2.0])
NORTH = np.array([0.0, 0.0, 1.0])

angles = st.tuples(st.floats(0.05, math.pi - 0.05), st.floats(0, 2 * math.pi))


def unit(theta, phi):
    return np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)])


@given(angles, angles)
def test_sphere_distance_is_arccos(a, b):
    p, q = unit(*a), unit(*b)
    expected = math.acos(np.clip(p @ q, -1, 1))
    assert geo.distance(SPHERE, p, q) == pytest.approx(expected, abs=1e-7)


@given(st.lists(st.floats(0, 0.999), min_size=4, max_size=4))
def test_torus_distance_minimum_image(c):
    p, q = np.array(c[:2]) * [1, 2], np.array(c[2:]) * [1, 2]
    diff = np.abs(p - q)
    diff = np.minimum(diff, np.array([1.0, 2.0]) - diff)
    assert geo.distance(TORUS, p, q) == pytest.approx(float(np.linalg.norm(diff)), abs=1e-12)


@given(angles, angles)
def test_sphere_exp_inverts_log(a, b):
    p, q = unit(*a), unit(*b)
    if geo.distance(SPHERE, p, q) > math.pi - 1e-3:
        return
    back = geo.exp_map(SPHERE, geo.log_map(SPHERE, p, q))
    np.testing.assert_allclose(back, q, atol=1e-10)


@given(st.floats(-0.45, 0.45), st.floats(-0.95, 0.95))
def test_torus_log_inverts_exp(u, v):
    p = np.array([0.9, 1.9])
    t = geo.Tangent(p, np.array([u, v]))
    q = geo.exp_map(TORUS, t)
    np.testing.assert_allclose(geo.log_map(TORUS, p, q).vec, [u, v], atol=1e-12)


def test_log_map_raises_on_cut_locus():
    with pytest.raises(CutLocus):
        geo.log_map(SPHERE, NORTH, -NORTH)
    with pytest.raises(CutLocus):
        geo.log_map(TORUS, [0.0, 0.0], [0.5, 0.3])


def test_validate_point_rejects_outside_and_off_sphere():
    box = geo.ManifoldSpec.box([(0, 1), (0, 1)])
    with pytest.raises(InvalidPoint):
        geo.validate_point(box, [1.5, 0.5])
    with pytest.raises(InvalidPoint):
        geo.validate_point(SPHERE, [0.0, 0.0, 2.0])
    with pytest.raises(InvalidPoint):
        geo.validate_point(box, [np.nan, 0.5])


def test_cost_is_half_squared_distance(rng):
    P = geo.random_points(SPHERE, 20, rng)
    Q = geo.random_points(SPHERE, 30, rng)
    C = geo.cost_matrix(SPHERE, P, Q)
    D = np.arccos(np.clip(P @ Q.T, -1, 1))
    np.testing.assert_allclose(C, 0.5 * D**2, atol=1e-12)


@pytest.mark.parametrize("d", [0.1, 0.7, 1.3, 2.0])
def test_sphere_cost_hessians_match_jacobi_fields(d):
    # along the geodesic: 1 and d cot d; across: 1 and d / sin d
    q = np.array([math.sin(d), 0.0, math.cos(d)])
    H = geo.cost_hessians(SPHERE, NORTH, q)
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(H.dxx)), np.sort([1.0, d / math.tan(d)]), atol=1e-10)
    assert abs(np.linalg.det(H.dxy_neg)) == pytest.approx(d / math.sin(d), rel=1e-10)


def test_closed_hessians_match_finite_differences(rng):
    for _ in range(10):
        p, q = geo.random_points(SPHERE, 2, rng, center=NORTH, radius=1.2)
        a = geo.cost_hessians(SPHERE, p, q)
        b = geo.cost_hessians_fd(SPHERE, p, q)
        np.testing.assert_allclose(a.dxx, b.dxx, atol=1e-6)
        np.testing.assert_allclose(a.dxy_neg, b.dxy_neg, atol=1e-6)


def test_flat_hessians_are_identity(torus):
    H = geo.cost_hessians(torus, [0.1, 0.2], [0.4, 0.3])
    np.testing.assert_allclose(H.dxx, np.eye(2), atol=1e-15)
    np.testing.assert_allclose(H.dxy_neg, np.eye(2), atol=1e-15)


def test_s_coeff_values():
    assert geo.s_coeff(0.0, 0.7) == 1.0
    assert geo.s_coeff(4.0, 0.5) == pytest.approx(math.sin(1.0) / 1.0)
    assert geo.s_coeff(-1.0, 2.0) == pytest.approx(math.sinh(2.0) / 2.0)


def test_expcon_bound_is_tight_on_round_sphere():
    for d in (0.2, 1.0, 2.5):
        q = np.array([math.sin(d), 0.0, math.cos(d)])
        det = np.linalg.det(geo.cost_hessians(SPHERE, NORTH, q).dxy_neg)
        assert det == pytest.approx(geo.expcon_lower_bound(SPHERE, d), rel=1e-10)


def test_manifold_json_round_trip():
    for spec in (SPHERE, TORUS, geo.ManifoldSpec.box([(0, 2), (-1, 1)])):
        again = geo.ManifoldSpec.from_json(spec.to_json())
        assert again.to_json() == spec.to_json()


def test_manifold_constants():
    assert SPHERE.diameter == pytest.approx(math.pi)
    assert SPHERE.ricci_lower_bound == 1.0
    assert TORUS.diameter == pytest.approx(math.hypot(0.5, 1.0))
    assert TORUS.is_flat and not SPHERE.is_flat
    assert geo.ManifoldSpec.sphere(2, 2.0).ricci_lower_bound == pytest.approx(0.25)


def test_random_points_stay_in_ball(rng):
    pts = geo.random_points(SPHERE, 200, rng, center=NORTH, radius=0.3)
    assert np.all(geo._dist(SPHERE, pts, NORTH[None, :]) <= 0.3 + 1e-12)
