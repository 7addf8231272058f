import math

import numpy as np
import pytest

from wbary import geometry as geo
from wbary import harness as hn
from wbary.barycenter import OmegaSpec, solve_fixed_point
from wbary.errors import CDViolated, NotApplicable
from wbary.functionals import EntropySpec
from wbary.instances import smooth_omega
from wbary.measures import MeshDensity, ReferenceMeasure, build_mesh, to_discrete, uniform_on_set

TORUS = geo.ManifoldSpec.torus([1.0, 1.0])
SPHERE = geo.ManifoldSpec.sphere(2, 1.0)


def disc(mesh, center, radius):
    return geo._dist(mesh.spec, mesh.centers, np.asarray(center, float)[None, :]) < radius


def test_refinement_slack_is_one_sided():
    assert hn.refinement_slack([-0.1, -0.2], [-0.15, -0.3]) == 0.0
    assert hn.refinement_slack([-0.1, -0.2], [-0.08, -0.3]) == pytest.approx(0.04)
    assert hn.refinement_slack([], []) == 0.0


@pytest.fixture(scope="module")
def small_torus():
    om = smooth_omega(TORUS, 6, 3, seed=0, quantum=720)
    return om, solve_fixed_point(om, 720, seed=0)


def test_single_entry_jensen_is_equality():
    md = uniform_on_set(build_mesh(TORUS, 4), np.arange(16) % 3 == 0)
    om = OmegaSpec(TORUS, [(1.0, md)])
    res = solve_fixed_point(om, 6, init=to_discrete(md).points)
    rep = hn.jensen_check(om, EntropySpec(), slack=0.0, result=res)
    assert rep.passed and rep.lhs == rep.rhs


def test_flat_distorted_rhs_collapses_to_plain(small_torus):
    om, res = small_torus
    plain = hn.jensen_check(om, EntropySpec(), result=res)
    dist = hn.distorted_jensen_check(om, EntropySpec(), result=res)
    assert abs(dist.rhs - plain.rhs) <= 1e-12
    assert dist.metadata["map_like_fraction"] == 1.0


def test_coarse_check_mesh_distorted_equals_plain_on_flat(small_torus):
    om, res = small_torus
    plain = hn.jensen_check(om, EntropySpec(), result=res, mesh_res=3)
    dist = hn.distorted_jensen_check(om, EntropySpec(), result=res, mesh_res=3)
    assert abs(dist.rhs - plain.rhs) <= 1e-12
    with pytest.raises(ValueError):
        hn.distorted_jensen_check(om, EntropySpec(), result=res, mesh_res=12)


def test_jensen_rejects_non_convex_functional(small_torus):
    om, res = small_torus
    with pytest.raises(NotApplicable):
        hn.jensen_check(om, EntropySpec("custom", expr="-r**2"), result=res)


def test_jensen_rejects_negative_curvature_dimension():
    box = geo.ManifoldSpec.box([(-2, 2), (-2, 2)])
    ref = ReferenceMeasure.gaussian([0, 0], 1.0)
    md = MeshDensity.from_masses(build_mesh(box, 4, ref), np.ones(16))
    om = OmegaSpec(box, [(1.0, md)])
    with pytest.raises(CDViolated):
        hn.jensen_check(om, EntropySpec("UN", 3, ref), support_size=16)


def test_custom_functionals_are_accepted(small_torus):
    om, res = small_torus
    V = hn.PotentialFunctional(lambda x: np.cos(2 * np.pi * x[:, 0]))
    rep = hn.jensen_check(om, V, result=res, slack=0.0)
    assert rep.status in ("pass", "fail") and np.isfinite(rep.lhs)


def test_density_bound_for_identical_entries():
    md = smooth_omega(TORUS, 6, 1, seed=3, quantum=720).measures[0]
    om = OmegaSpec(TORUS, [(0.5, md), (0.5, md)])
    res = solve_fixed_point(om, 720, init=np.repeat(to_discrete(md).points, np.round(to_discrete(md).masses * 720)
                                                     .astype(int), axis=0))
    rep = hn.density_bound_check(om, result=res)
    # the barycenter is the entry itself, so the bound is attained up to roundoff
    assert rep.lhs == pytest.approx(rep.metadata["bound"], rel=1e-9)
    assert rep.passed


def test_single_set_brunn_minkowski_is_exact():
    mesh = build_mesh(TORUS, 16)
    A = disc(mesh, [0.4, 0.4], 0.2)
    rep = hn.random_bm(hn.RandomSetSpec(mesh, [(1.0, A)]))
    assert rep.passed and rep.lhs == rep.rhs


def test_brunn_minkowski_sphere_pair():
    mesh = build_mesh(SPHERE, 12)
    pole = lambda lat: [math.cos(lat), 0.0, math.sin(lat)]  # noqa: E731
    rep = hn.multiset_bm([disc(mesh, pole(0.0), 0.5), disc(mesh, pole(0.6), 0.4)], [0.5, 0.5], mesh)
    assert rep.passed and rep.metadata["cover"] == "one-ring"


def test_outer_measure_grows_with_budget():
    mesh = build_mesh(TORUS, 24)
    sets = [disc(mesh, [0.3, 0.3], 0.15), disc(mesh, [0.6, 0.6], 0.15), disc(mesh, [0.4, 0.7], 0.1)]
    w = [0.3, 0.3, 0.4]
    small, info_s = hn.barycenter_set(mesh, sets, w, budget=2_000, seed=7)
    big, info_b = hn.barycenter_set(mesh, sets, w, budget=20_000, seed=7)
    assert info_s["sampled"] and info_b["sampled"]
    assert np.all(big[small])
    assert big.sum() >= small.sum()


def test_barycenter_set_independent_of_threads():
    mesh = build_mesh(TORUS, 24)
    sets = [disc(mesh, [0.3, 0.3], 0.15), disc(mesh, [0.6, 0.6], 0.15), disc(mesh, [0.4, 0.7], 0.1)]
    a, _ = hn.barycenter_set(mesh, sets, [0.3, 0.3, 0.4], budget=200_000, seed=1, threads=1)
    b, _ = hn.barycenter_set(mesh, sets, [0.3, 0.3, 0.4], budget=200_000, seed=1, threads=3)
    np.testing.assert_array_equal(a, b)


def test_brunn_minkowski_finite_dimension_needs_curvature():
    box = geo.ManifoldSpec.box([(-2, 2), (-2, 2)])
    mesh = build_mesh(box, 8, ReferenceMeasure.gaussian([0, 0], 1.0))
    A = disc(mesh, [0.0, 0.0], 1.0)
    with pytest.raises(CDViolated):
        hn.multiset_bm([A, A], [0.5, 0.5], mesh, N=3)


def test_random_set_validation():
    mesh = build_mesh(TORUS, 4)
    with pytest.raises(ValueError):
        hn.RandomSetSpec(mesh, [(0.0, np.ones(16, bool))])
    with pytest.raises(ValueError):
        hn.RandomSetSpec(mesh, [(1.0, np.zeros(16, bool))])


def test_report_serialization(small_torus):
    om, res = small_torus
    rep = hn.jensen_check(om, EntropySpec("UN", 3), result=res)
    out = rep.to_json()
    assert set(out) == {"name", "status", "lhs", "rhs", "slack", "metadata"}
    assert out["metadata"]["mesh_resolution"] == [6, 6]
    assert rep.margin == pytest.approx(rep.rhs + rep.slack - rep.lhs)
