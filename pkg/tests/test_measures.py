import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wbary import geometry as geo
from wbary import measures as ms
from wbary.errors import EmptySet, InvalidPoint

TORUS = geo.ManifoldSpec.torus([1.0, 1.0])
SPHERE = geo.ManifoldSpec.sphere(2, 1.0)


def test_mesh_volumes_sum_to_manifold_volume():
    assert ms.build_mesh(SPHERE, 12).volumes.sum() == pytest.approx(4 * math.pi, rel=1e-12)
    assert ms.build_mesh(TORUS, 7).volumes.sum() == pytest.approx(1.0, rel=1e-12)
    box = geo.ManifoldSpec.box([(0, 2), (0, 3)])
    assert ms.build_mesh(box, 5).volumes.sum() == pytest.approx(6.0, rel=1e-12)


@pytest.mark.parametrize("spec", [TORUS, SPHERE])
def test_locate_finds_own_centers(spec):
    mesh = ms.build_mesh(spec, 8)
    np.testing.assert_array_equal(mesh.locate(mesh.centers), np.arange(len(mesh)))


def test_neighbors_wrap_on_torus():
    mesh = ms.build_mesh(TORUS, 4)
    nb = set(mesh.neighbors(0).tolist())
    assert len(nb) == 9 and 0 in nb and 15 in nb


def test_gaussian_reference_volumes():
    box = geo.ManifoldSpec.box([(-3, 3), (-3, 3)])
    ref = ms.ReferenceMeasure.gaussian([0.0, 0.0], 1.0)
    mesh = ms.build_mesh(box, 60, ref)
    # integral of exp(-|x|^2/2) over the square, up to midpoint-rule error
    exact = (math.sqrt(2 * math.pi) * math.erf(3 / math.sqrt(2))) ** 2
    assert mesh.volumes.sum() == pytest.approx(exact, rel=1e-3)


@given(st.lists(st.floats(0, 1, exclude_max=True), min_size=2, max_size=40))
def test_bin_to_mesh_preserves_mass(xs):
    pts = np.column_stack([xs, xs[::-1]])
    dm = ms.DiscreteMeasure.uniform(TORUS, pts)
    md = ms.bin_to_mesh(dm, ms.build_mesh(TORUS, 5))
    assert md.cell_masses.sum() == pytest.approx(1.0)


def test_resample_to_coarser_mesh_sums_cells(rng):
    fine = ms.build_mesh(TORUS, 8)
    coarse = ms.build_mesh(TORUS, 4)
    md = ms.MeshDensity.from_masses(fine, rng.random(64))
    out = ms.resample(md, coarse)
    m = md.cell_masses.reshape(8, 8)
    expected = m.reshape(4, 2, 4, 2).sum(axis=(1, 3)).ravel()
    np.testing.assert_allclose(out.cell_masses, expected, atol=1e-15)


def test_resample_to_finer_mesh_keeps_values():
    coarse = ms.build_mesh(TORUS, 2)
    fine = ms.build_mesh(TORUS, 4)
    md = ms.MeshDensity.from_masses(coarse, [0.1, 0.2, 0.3, 0.4])
    out = ms.resample(md, fine)
    np.testing.assert_allclose(out.values.reshape(4, 4)[::2, ::2].ravel(), md.values)


def test_to_discrete_drops_empty_cells():
    mesh = ms.build_mesh(TORUS, 3)
    md = ms.uniform_on_set(mesh, np.arange(9) < 2)
    dm = ms.to_discrete(md)
    assert len(dm) == 2
    np.testing.assert_allclose(dm.masses, [0.5, 0.5])
    assert ms.ess_sup(md) == pytest.approx(4.5)


def test_uniform_on_empty_set_raises():
    with pytest.raises(EmptySet):
        ms.uniform_on_set(ms.build_mesh(TORUS, 3), np.zeros(9, bool))


def test_discrete_measure_validation():
    with pytest.raises(ValueError):
        ms.DiscreteMeasure(TORUS, [[0.1, 0.1]], [0.5])
    with pytest.raises(InvalidPoint):
        ms.DiscreteMeasure.uniform(SPHERE, [[1.0, 1.0, 0.0]])
    dm = ms.DiscreteMeasure.normalized(TORUS, [[0.1, 0.1], [0.2, 0.2]], [1, 3])
    np.testing.assert_allclose(dm.masses, [0.25, 0.75])


def test_measure_json_round_trip():
    mesh = ms.build_mesh(TORUS, 3)
    md = ms.MeshDensity.from_masses(mesh, np.arange(1, 10))
    again = ms.measure_from_json(md.to_json(), TORUS)
    np.testing.assert_allclose(again.values, md.values)
    dm = ms.DiscreteMeasure(TORUS, [[0.1, 0.2], [0.3, 0.4]], [0.4, 0.6])
    again = ms.measure_from_json(dm.to_json(), TORUS)
    np.testing.assert_allclose(again.points, dm.points)
    np.testing.assert_allclose(again.masses, dm.masses)
