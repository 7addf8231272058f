import math

import numpy as np
import pytest
import sympy as sp

from wbary import functionals as fn
from wbary import geometry as geo
from wbary.errors import Unsupported
from wbary.measures import DiscreteMeasure, MeshDensity, ReferenceMeasure, build_mesh

TORUS = geo.ManifoldSpec.torus([1.0, 1.0])
SPHERE = geo.ManifoldSpec.sphere(2, 1.0)


def test_entropy_matches_direct_sum(rng):
    mesh = build_mesh(SPHERE, 6)
    md = MeshDensity.from_masses(mesh, rng.random(len(mesh)) + 0.1)
    # densities are taken against the reference normalized to a probability
    total = mesh.volumes.sum()
    f, v = md.values * total, mesh.volumes / total
    assert fn.entropy(fn.EntropySpec(), md) == pytest.approx(float(np.sum(f * np.log(f) * v)), rel=1e-12)
    N = 3.0
    expected = float(np.sum(-N * (f ** (1 - 1 / N) - f) * v))
    assert fn.entropy(fn.EntropySpec("UN", N), md) == pytest.approx(expected, rel=1e-12)


def test_distorted_entropy_with_unit_alpha_is_plain(rng):
    md = MeshDensity.from_masses(build_mesh(TORUS, 5), rng.random(25))
    spec = fn.EntropySpec()
    assert fn.entropy(spec, md, alpha=np.ones(25)) == fn.entropy(spec, md)


def test_distorted_entropy_formula(rng):
    md = MeshDensity.from_masses(build_mesh(TORUS, 4), rng.random(16) + 0.5)
    a = rng.uniform(1.0, 1.5, 16)
    f, v = md.values, md.mesh.volumes  # unit-volume torus: already normalized
    expected = float(np.sum((f / a) * np.log(f / a) * a * v))
    assert fn.entropy(fn.EntropySpec(), md, alpha=a) == pytest.approx(expected, rel=1e-12)


def test_entropy_relative_to_gaussian_reference():
    box = geo.ManifoldSpec.box([(-2, 2), (-2, 2)])
    ref = ReferenceMeasure.gaussian([0, 0], 1.0)
    mesh = build_mesh(box, 8, ref)
    md = MeshDensity(mesh, np.full(len(mesh), 1.0 / mesh.volumes.sum()))
    # constant density w.r.t. the reference: zero relative entropy; a density
    # on half the cells (by reference mass) gives log 2
    assert fn.entropy(fn.EntropySpec(reference=ref), md) == pytest.approx(0.0, abs=1e-12)
    left = mesh.centers[:, 0] < 0
    half = MeshDensity.from_masses(mesh, np.where(left, mesh.volumes, 0.0))
    assert fn.entropy(fn.EntropySpec(reference=ref), half) == pytest.approx(math.log(2), rel=1e-12)


def test_p_of_r_closed_forms():
    r = np.array([0.5, 1.0, 4.0])
    np.testing.assert_allclose(fn.p_of_r(fn.EntropySpec(), r), r)
    np.testing.assert_allclose(fn.p_of_r(fn.EntropySpec("UN", 3), r), r ** (2 / 3))


def test_convexity_class():
    assert fn.convexity_class_check(fn.EntropySpec(), 2).passed
    assert fn.convexity_class_check(fn.EntropySpec("UN", 2.5), 2).passed
    assert fn.convexity_class_check(fn.EntropySpec("custom", expr="r**2"), 3).passed
    bad = fn.convexity_class_check(fn.EntropySpec("custom", expr="-r**2"), 2)
    assert not bad.passed and bad.witness is not None


def test_symbolic_forms():
    r = sp.Symbol("r", positive=True)
    assert sp.simplify(fn.EntropySpec().symbolic - r * sp.log(r)) == 0
    assert sp.simplify(fn.EntropySpec("custom", expr="r*log(r) + r**2").symbolic - (r * sp.log(r) + r**2)) == 0


def test_entropy_spec_validation():
    with pytest.raises(ValueError):
        fn.EntropySpec("UN", math.inf)
    with pytest.raises(ValueError):
        fn.EntropySpec("custom", expr="r + x")
    with pytest.raises(ValueError):
        fn.EntropySpec("custom", expr="sin(r)")
    with pytest.raises(ValueError):
        fn.EntropySpec("UN", 2).check_dimension(2)
    with pytest.raises(ValueError):
        fn.EntropySpec("nope")


def test_entropy_spec_json_round_trip():
    spec = fn.EntropySpec("UN", 4.0, ReferenceMeasure.gaussian([0, 0], 2.0))
    again = fn.EntropySpec.from_json(spec.to_json())
    assert again.to_json() == spec.to_json()


def test_curvature_dimension_constants():
    zero = ReferenceMeasure()
    assert fn.cd_condition(TORUS, zero) == 0.0
    assert fn.cd_condition(SPHERE, zero) == pytest.approx(1.0)
    assert fn.cd_condition(geo.ManifoldSpec.sphere(2, 2.0), zero, N=5) == pytest.approx(0.25)
    box = geo.ManifoldSpec.box([(-2, 2), (-2, 2)])
    assert fn.cd_condition(box, ReferenceMeasure.gaussian([0, 0], 0.5)) == pytest.approx(2.0)
    # a finite N penalizes the gradient: 1 - |x|^2 / (N - n) is negative near the corners
    assert fn.cd_condition(box, ReferenceMeasure.gaussian([0, 0], 1.0), N=3) < 0
    with pytest.raises(Unsupported):
        fn.cd_condition(box, ReferenceMeasure("tabulated", table=np.zeros(4)))


def test_potential_and_interaction_energies():
    plane = geo.ManifoldSpec.box([(-5, 5), (-5, 5)])
    dm = DiscreteMeasure(plane, [[0, 0], [2, 0]], [0.25, 0.75])
    V = lambda x: np.sum(np.asarray(x) ** 2, axis=1)  # noqa: E731
    assert fn.potential_energy(V, dm) == pytest.approx(0.75 * 4)
    W = lambda x, y: geo.cost_matrix(plane, x, y)  # noqa: E731
    # sum_jk m_j m_k c(x_j, x_k), off-diagonal pairs only
    assert fn.interaction_energy(W, dm) == pytest.approx(2 * 0.25 * 0.75 * 2.0)
