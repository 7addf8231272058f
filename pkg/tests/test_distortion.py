import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wbary import distortion as dist
from wbary import geometry as geo
from wbary.barycenter import OmegaSpec, solve_fixed_point
from wbary.errors import SingularDenominator
from wbary.measures import MeshDensity, build_mesh, to_discrete

TORUS = geo.ManifoldSpec.torus([1.0, 1.0])
SPHERE = geo.ManifoldSpec.sphere(2, 1.0)
NORTH = np.array([0.0, 0.0, 1.0])


@given(st.integers(0, 10_000), st.integers(1, 5))
def test_flat_distortion_is_one(seed, m):
    rng = np.random.default_rng(seed)
    pts = geo.random_points(TORUS, m, rng, center=np.array([0.5, 0.5]), radius=0.2)
    w = rng.dirichlet(np.ones(m))
    assert abs(dist.alpha(TORUS, (pts, w), pts[0]).alpha - 1.0) <= 1e-12


@pytest.mark.parametrize("d,t", [(0.3, 0.5), (1.0, 0.25), (1.8, 0.7), (2.6, 0.4)])
def test_two_point_distortion_matches_jacobi_formula(d, t):
    # contracting toward y by the factor t scales the transverse direction by
    # sin(t d) / sin(d) and the radial one by t
    x = NORTH
    y = np.array([math.sin(d), 0.0, math.cos(d)])
    expected = math.sin(t * d) / (t * math.sin(d))
    got = dist.alpha(SPHERE, (np.stack([x, y]), np.array([t, 1 - t])), x).alpha
    assert got == pytest.approx(expected, rel=1e-10)
    assert dist.two_point_distortion_oracle(SPHERE, x, y, t) == pytest.approx(expected, rel=1e-6)


def test_closed_and_finite_difference_methods_agree(rng):
    for _ in range(10):
        pts = geo.random_points(SPHERE, 3, rng, center=NORTH, radius=1.0)
        w = rng.dirichlet(np.ones(3))
        a = dist.alpha(SPHERE, (pts, w), pts[1])
        b = dist.alpha(SPHERE, (pts, w), pts[1], method="fd")
        assert a.alpha == pytest.approx(b.alpha, rel=1e-5)


def test_sphere_distortion_is_at_least_one(rng):
    for _ in range(200):
        m = int(rng.integers(1, 5))
        pts = geo.random_points(SPHERE, m, rng, center=NORTH, radius=1.2)
        w = rng.dirichlet(np.ones(m))
        assert dist.alpha(SPHERE, (pts, w), pts[-1]).alpha >= 1 - 1e-9


def test_nonpositive_hessian_average_raises():
    far = np.array([math.sin(2.0), 0.0, math.cos(2.0)])
    with pytest.raises(SingularDenominator):
        dist.alpha(SPHERE, (far[None, :], np.array([1.0])), far, xbar=NORTH)


def test_alpha_lower_bound():
    assert dist.alpha_lower_bound(TORUS) == 1.0
    assert dist.alpha_lower_bound(SPHERE) == 1.0
    k, D, n = 1.0, 1.5, 2
    expected = (math.sinh(D) / D) ** (-(n - 1)) * (D / math.tanh(D)) ** (-n)
    assert dist.alpha_lower_bound(ricci=-k, diameter=D, dim=n) == pytest.approx(expected)
    assert 0 < dist.alpha_lower_bound(ricci=-k, diameter=D, dim=n) < 1


def test_jacobian_check_on_uniform_identity():
    md = MeshDensity(build_mesh(TORUS, 4), np.ones(16))
    om = OmegaSpec(TORUS, [(0.5, md), (0.5, md)])
    res = solve_fixed_point(om, 16, init=to_discrete(md).points)
    rep = dist.jacobian_inequality_check(res, om, slack=0.0)
    np.testing.assert_allclose(rep.lhs, 1.0, atol=1e-12)
    assert rep.checked == 16 and rep.fraction_ok == 1.0
