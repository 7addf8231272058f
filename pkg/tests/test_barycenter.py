import itertools
import json

import numpy as np
import pytest

from wbary import barycenter as bc
from wbary import geometry as geo
from wbary.errors import SizeLimit
from wbary.instances import quantized_discrete_omega, smooth_omega
from wbary.measures import DiscreteMeasure, build_mesh, to_discrete
from wbary.ot import solve_exact, w2

PLANE = geo.ManifoldSpec.box([(-5.0, 5.0), (-5.0, 5.0)])
TORUS = geo.ManifoldSpec.torus([1.0, 1.0])


def test_dirac_barycenter_is_weighted_average():
    om = bc.OmegaSpec(PLANE, [(0.2, DiscreteMeasure.dirac(PLANE, [0, 0])), (0.3, DiscreteMeasure.dirac(PLANE, [1, 3])),
                              (0.5, DiscreteMeasure.dirac(PLANE, [-2, 2]))])
    expected = 0.2 * np.array([0, 0]) + 0.3 * np.array([1, 3]) + 0.5 * np.array([-2, 2])
    for res in (bc.solve_fixed_point(om, 1), bc.solve_multimarginal(om)):
        np.testing.assert_allclose(res.measure.points[0], expected, atol=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_two_uniform_measures_against_permutation_search(seed):
    # in the plane the barycenter of two n-point uniform measures is the
    # displacement interpolation of the optimal assignment
    rng = np.random.default_rng(seed)
    n, t = 4, 0.3
    X, Y = rng.uniform(-2, 2, (n, 2)), rng.uniform(-2, 2, (n, 2))
    perm = min(itertools.permutations(range(n)), key=lambda p: sum(np.sum((X[i] - Y[p[i]]) ** 2) for i in range(n)))
    expected = DiscreteMeasure.uniform(PLANE, (1 - t) * X + t * Y[list(perm)])
    om = bc.OmegaSpec(PLANE, [(1 - t, DiscreteMeasure.uniform(PLANE, X)), (t, DiscreteMeasure.uniform(PLANE, Y))])
    assert w2(bc.solve_multimarginal(om).measure, expected) < 1e-9
    assert w2(bc.solve_fixed_point(om, n, init=X).measure, expected) < 1e-9


@pytest.mark.parametrize("seed", range(4))
def test_fixed_point_matches_multimarginal(seed):
    spec = TORUS if seed % 2 == 0 else geo.ManifoldSpec.box([(0, 1), (0, 1)])
    om = quantized_discrete_omega(spec, 3, seed)
    mm = bc.solve_multimarginal(om)
    fp = bc.solve_fixed_point(om, 12, restarts=16, seed=seed)
    assert fp.functional == pytest.approx(mm.functional, abs=1e-9)
    assert w2(mm.measure, fp.measure) < 1e-6


def test_multimarginal_size_guard():
    pts = np.column_stack([np.linspace(-4, 4, 101), np.zeros(101)])
    big = DiscreteMeasure.uniform(PLANE, pts)
    om = bc.OmegaSpec(PLANE, [(1 / 3, big)] * 3)
    with pytest.raises(SizeLimit):
        bc.solve_multimarginal(om)


def test_fixed_point_is_seeded_and_deterministic():
    om = smooth_omega(TORUS, 6, 2, seed=1)
    a = bc.solve_fixed_point(om, 50, seed=3)
    b = bc.solve_fixed_point(om, 50, seed=3)
    np.testing.assert_array_equal(a.measure.points, b.measure.points)
    assert a.convergence_log == b.convergence_log


def test_functional_decreases_and_balance_holds():
    om = smooth_omega(TORUS, 8, 3, seed=2)
    res = bc.solve_fixed_point(om, 200, seed=0)
    log = np.array(res.convergence_log)
    assert np.all(np.diff(log) <= 1e-12)
    assert res.converged
    cert = bc.balance_certificate(res, om)
    assert cert["max_first_order_residual"] <= 1e-6 * TORUS.diameter


def test_discretization_radius_bounds_transfer_error():
    om = smooth_omega(TORUS, 5, 1, seed=0)
    md = om.measures[0]
    fine = smooth_omega(TORUS, 40, 1, seed=0).measures[0]
    d = w2(to_discrete(md), to_discrete(fine))
    assert d <= bc.discretization_radius(md) + bc.discretization_radius(fine)


def test_warns_without_absolutely_continuous_entry():
    om = bc.OmegaSpec(PLANE, [(1.0, DiscreteMeasure.dirac(PLANE, [0, 0]))])
    assert bc.solve_fixed_point(om, 1).warnings


def test_omega_and_result_json_round_trip():
    om = quantized_discrete_omega(TORUS, 2, 5)
    again = bc.OmegaSpec.from_json(json.loads(json.dumps(om.to_json())))
    np.testing.assert_allclose(again.weights, om.weights)
    res = bc.solve_fixed_point(om, 12, seed=0)
    rebuilt = bc.result_from_json(json.loads(json.dumps(res.to_json())), om)
    np.testing.assert_allclose(rebuilt.measure.points, res.measure.points)
    assert rebuilt.functional == pytest.approx(res.functional, abs=1e-12)


def test_support_size_validation():
    om = bc.OmegaSpec(PLANE, [(1.0, DiscreteMeasure.dirac(PLANE, [0, 0]))])
    with pytest.raises(ValueError):
        bc.solve_fixed_point(om, 0)


def test_second_order_diagnostic_on_flat_instance():
    om = smooth_omega(TORUS, 8, 2, seed=4)
    res = bc.solve_fixed_point(om, 128, seed=0)
    cert = bc.balance_certificate(res, om)
    assert cert["second_order_ok"]
    assert np.isfinite(cert["max_hessian_eigenvalue"])
