"""Fast sanity suite over every module.

Functions are looked up through their modules at call time, so patching a
module attribute (see ``fault``) shows up as named failures.
"""
from __future__ import annotations

import contextlib
import math
import time

import numpy as np

from . import barycenter, distortion, functionals, harness, karcher, measures, ot
from . import geometry as geo
from .errors import CutLocus, EmptySet, SizeLimit

NORTH = np.array([0.0, 0.0, 1.0])
SOUTH = np.array([0.0, 0.0, -1.0])


def _close(a, b, tol=1e-12):
    return bool(np.all(np.abs(np.asarray(a, float) - np.asarray(b, float)) <= tol))


def _raises(exc, fn):
    try:
        fn()
    except exc:
        return True
    return False


def _checks():
    E2 = geo.ManifoldSpec.box([(-5, 5), (-5, 5)])
    T1 = geo.ManifoldSpec.torus([1.0])
    T2 = geo.ManifoldSpec.torus([1.0, 1.0])
    S2 = geo.ManifoldSpec.sphere(2, 1.0)
    B01 = geo.ManifoldSpec.box([(0, 1), (0, 1)])
    eq0 = np.array([1.0, 0.0, 0.0])

    def dm(spec, pts, w=None):
        pts = np.atleast_2d(np.asarray(pts, float))
        w = np.full(len(pts), 1 / len(pts)) if w is None else np.asarray(w, float)
        return measures.DiscreteMeasure(spec, pts, w)

    # geometry
    yield "geometry.distance euclidean 3-4-5", lambda: _close(geo.distance(E2, [0, 0], [3, 4]), 5.0)
    yield "geometry.distance torus wrap", lambda: _close(geo.distance(T2, [0.9, 0], [0.1, 0]), 0.2)
    yield "geometry.distance sphere antipodes", lambda: _close(geo.distance(S2, NORTH, SOUTH), math.pi)
    yield "geometry.log_map euclidean", lambda: _close(geo.log_map(E2, [0, 0], [1, 2]).vec, [1, 2])
    yield "geometry.log_map sphere quarter circle", lambda: _close(
        geo.log_map(S2, NORTH, eq0).vec, [math.pi / 2, 0, 0], 1e-12)
    yield "geometry.log_map torus cut locus", lambda: _raises(CutLocus, lambda: geo.log_map(T1, [0.1], [0.6]))
    yield "geometry.exp_map euclidean", lambda: _close(geo.exp_map(E2, geo.Tangent(np.zeros(2), np.ones(2))), [1, 1])
    yield "geometry.exp_map sphere antipodal", lambda: _close(
        geo.exp_map(S2, geo.Tangent(NORTH, np.array([math.pi, 0, 0]))), SOUTH, 1e-12)
    yield "geometry.exp_map torus wrap", lambda: _close(
        geo.exp_map(T1, geo.Tangent(np.array([0.9]), np.array([0.3]))), [0.2], 1e-12)
    yield "geometry.cost euclidean", lambda: _close(geo.cost(E2, [0, 0], [3, 4]), 12.5)
    yield "geometry.cost zero", lambda: _close(geo.cost(S2, NORTH, NORTH), 0.0)
    yield "geometry.cost sphere antipodes", lambda: _close(geo.cost(S2, NORTH, SOUTH), math.pi**2 / 2)
    yield "geometry.cost_hessians flat identity", lambda: (
        _close(geo.cost_hessians(E2, [0, 0], [1, 2]).dxx, np.eye(2))
        and _close(geo.cost_hessians(E2, [0, 0], [1, 2]).dxy_neg, np.eye(2)))
    yield "geometry.s_coeff K=1", lambda: _close(geo.s_coeff(1.0, math.pi / 2), 2 / math.pi)
    yield "geometry.s_coeff K=-1", lambda: _close(geo.s_coeff(-1.0, 1.0), math.sinh(1.0))

    # measures
    yield "measures.build_mesh torus volumes", lambda: _close(measures.build_mesh(T1, 4).volumes, [0.25] * 4)
    yield "measures.build_mesh sphere area", lambda: _close(
        measures.build_mesh(S2, (2, 4)).volumes.sum(), 4 * math.pi, 1e-12)
    yield "measures.build_mesh box volumes", lambda: _close(measures.build_mesh(B01, 3).volumes, [1 / 9] * 9)
    m4 = measures.build_mesh(T1, 4)
    yield "measures.uniform_on_set full", lambda: _close(measures.uniform_on_set(m4, [1, 1, 1, 1]).values, 1.0)
    yield "measures.uniform_on_set half", lambda: _close(
        measures.uniform_on_set(m4, [1, 1, 0, 0]).values, [2, 2, 0, 0])
    yield "measures.uniform_on_set empty", lambda: _raises(EmptySet, lambda: measures.uniform_on_set(m4, [0] * 4))
    yield "measures.to_discrete constant", lambda: _close(
        measures.to_discrete(measures.MeshDensity(m4, np.ones(4))).masses, [0.25] * 4)
    yield "measures.to_discrete single cell", lambda: len(
        measures.to_discrete(measures.MeshDensity(m4, [4.0, 0, 0, 0]))) == 1
    yield "measures.ess_sup half", lambda: _close(measures.ess_sup(measures.uniform_on_set(m4, [1, 1, 0, 0])), 2.0)
    yield "measures.bin_to_mesh dirac", lambda: _close(
        measures.bin_to_mesh(dm(T1, [[0.1]]), m4).values, [4, 0, 0, 0])
    yield "measures.bin_to_mesh round trip", lambda: _close(
        measures.bin_to_mesh(measures.to_discrete(measures.MeshDensity(m4, [1.5, 0.5, 1.0, 1.0])), m4).values,
        [1.5, 0.5, 1.0, 1.0], 1e-12)

    # ot
    yield "ot.solve_exact diracs", lambda: _close(
        ot.solve_exact(dm(E2, [[0, 0]]), dm(E2, [[3, 4]]))[0].transport_cost, 12.5)
    mu = dm(E2, [[0, 0], [1, 0], [0, 2]], [0.2, 0.3, 0.5])
    yield "ot.solve_exact identical", lambda: _close(ot.solve_exact(mu, mu)[0].transport_cost, 0.0)
    yield "ot.w2 diracs", lambda: _close(ot.w2(dm(E2, [[0, 0]]), dm(E2, [[3, 4]])), 5.0)
    yield "ot.w2 identical", lambda: ot.w2(mu, mu) == 0.0

    def cond():
        src = dm(E2, [[0, 0]])
        tgt = dm(E2, [[1, 0], [2, 0]], [0.3, 0.7])
        plan, _ = ot.solve_exact(src, tgt)
        return _close(ot.conditional_targets(plan, 0).masses, [0.3, 0.7], 1e-12)

    yield "ot.conditional_targets split row", cond

    # karcher
    yield "karcher.bc_map euclidean average", lambda: _close(
        karcher.bc_map(E2, [0.25, 0.75], [[0, 0], [4, 4]]), [3, 3], 1e-9)
    yield "karcher.bc_map single point", lambda: _close(karcher.bc_map(S2, [1.0], [NORTH]), NORTH)
    yield "karcher.bc_map torus midpoint", lambda: _close(karcher.bc_map(T1, [0.5, 0.5], [[0.1], [0.3]]), [0.2], 1e-9)
    yield "karcher.lipschitz_inverse flat", lambda: _close(
        karcher.lipschitz_inverse(E2, [0.5, 0.5], [[2, 2]], karcher.bc_map(E2, [0.5, 0.5], [[0, 0], [2, 2]])),
        [0, 0], 1e-9)

    # barycenter
    def single_entry():
        nu = dm(E2, mu.points)
        res = barycenter.solve_fixed_point(barycenter.OmegaSpec(E2, [(1.0, nu)]), 3, init=nu.points[::-1])
        return _close(np.sort(res.measure.points, axis=0), np.sort(nu.points, axis=0), 1e-9)

    yield "barycenter.solve_fixed_point single entry", single_entry

    def diracs():
        om = barycenter.OmegaSpec(E2, [(0.2, dm(E2, [[0, 0]])), (0.8, dm(E2, [[1, 3]]))])
        return _close(barycenter.solve_fixed_point(om, 1).measure.points[0], [0.8, 2.4], 1e-9)

    yield "barycenter.solve_fixed_point diracs", diracs

    def mm_diracs():
        om = barycenter.OmegaSpec(E2, [(0.5, dm(E2, [[0, 0]])), (0.5, dm(E2, [[2, 4]]))])
        return _close(barycenter.solve_multimarginal(om).measure.points[0], [1, 2], 1e-9)

    yield "barycenter.solve_multimarginal diracs", mm_diracs

    def mm_limit():
        big = dm(E2, np.stack([np.linspace(-4, 4, 101), np.zeros(101)], axis=1))
        om = barycenter.OmegaSpec(E2, [(1 / 3, big), (1 / 3, big), (1 / 3, big)])
        return _raises(SizeLimit, lambda: barycenter.solve_multimarginal(om))

    yield "barycenter.solve_multimarginal size guard", mm_limit

    # distortion
    yield "distortion.alpha flat", lambda: distortion.alpha(T2, ([[0.1, 0.2], [0.3, 0.1]], [0.5, 0.5]),
                                                            [0.1, 0.2]).alpha == 1.0
    yield "distortion.two_point_distortion_oracle flat", lambda: _close(
        distortion.two_point_distortion_oracle(E2, [0, 0], [1, 1], 0.5), 1.0, 1e-6)
    yield "distortion.two_point_distortion_oracle t=1", lambda: _close(
        distortion.two_point_distortion_oracle(S2, NORTH, eq0, 1.0), 1.0, 1e-6)
    yield "distortion.alpha_lower_bound nonnegative curvature", lambda: (
        distortion.alpha_lower_bound(T2) == 1.0 and distortion.alpha_lower_bound(S2) == 1.0)

    def jac_single():
        md = measures.MeshDensity(measures.build_mesh(T2, 4), np.ones(16))
        om = barycenter.OmegaSpec(T2, [(1.0, md)])
        d = measures.to_discrete(md)
        res = barycenter.solve_fixed_point(om, 16, init=d.points)
        rep = distortion.jacobian_inequality_check(res, om)
        return _close(rep.lhs, 1.0, 1e-12)

    yield "distortion.jacobian_inequality_check identity", jac_single

    # functionals
    half = measures.uniform_on_set(m4, [1, 1, 0, 0])
    ones = measures.MeshDensity(m4, np.ones(4))
    yield "functionals.entropy uniform", lambda: _close(functionals.entropy(functionals.EntropySpec(), ones), 0.0)
    yield "functionals.entropy half torus", lambda: _close(
        functionals.entropy(functionals.EntropySpec(), half), math.log(2), 1e-12)
    yield "functionals.entropy U_N constant", lambda: _close(
        functionals.entropy(functionals.EntropySpec("UN", 4), ones), 0.0)
    yield "functionals.p_of_r", lambda: (
        _close(functionals.p_of_r(functionals.EntropySpec(), 2.0), 2.0)
        and _close(functionals.p_of_r(functionals.EntropySpec("UN", 2), 4.0), 2.0)
        and _close(functionals.p_of_r(functionals.EntropySpec(), 0.0), 0.0))
    yield "functionals.potential_energy", lambda: _close(
        functionals.potential_energy(lambda x: geo.cost_matrix(E2, x, [[3, 4]])[:, 0], dm(E2, [[0, 0]])), 12.5)
    yield "functionals.interaction_energy constant", lambda: _close(
        functionals.interaction_energy(lambda x, y: np.full((len(x), len(y)), 2.0), mu), 2.0)
    yield "functionals.convexity_class_check", lambda: (
        functionals.convexity_class_check(functionals.EntropySpec(), 2).passed
        and functionals.convexity_class_check(functionals.EntropySpec("UN", 3), 2).passed
        and not functionals.convexity_class_check(functionals.EntropySpec("custom", expr="-r**2"), 2).passed)
    yield "functionals.cd_condition", lambda: (
        functionals.cd_condition(T2, measures.ReferenceMeasure()) == 0.0
        and _close(functionals.cd_condition(S2, measures.ReferenceMeasure()), 1.0)
        and _close(functionals.cd_condition(E2, measures.ReferenceMeasure.gaussian([0, 0], 0.5)), 2.0))

    # harness
    def jensen_single():
        md = measures.uniform_on_set(measures.build_mesh(T2, 4), np.arange(16) % 3 == 0)
        om = barycenter.OmegaSpec(T2, [(1.0, md)])
        res = barycenter.solve_fixed_point(om, 6, init=measures.to_discrete(md).points)
        rep = harness.jensen_check(om, functionals.EntropySpec(), slack=0.0, result=res)
        return rep.passed and rep.lhs == rep.rhs

    yield "harness.jensen_check single entry", jensen_single

    def bm_single():
        mesh = measures.build_mesh(T2, 8)
        a = np.zeros(64, bool)
        a[[9, 10, 17, 18]] = True
        rep = harness.random_bm(harness.RandomSetSpec(mesh, [(1.0, a)]))
        return rep.passed and rep.lhs == rep.rhs

    yield "harness.random_bm deterministic set", bm_single


def run() -> dict:
    start = time.perf_counter()
    results = []
    for name, fn in _checks():
        try:
            ok = bool(fn())
            detail = "" if ok else "value mismatch"
        except Exception as exc:  # a crash is a failure of that check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append({"name": name, "passed": ok, "detail": detail})
    elapsed = time.perf_counter() - start
    return {
        "passed": all(r["passed"] for r in results),
        "n_checks": len(results),
        "n_failed": sum(not r["passed"] for r in results),
        "checks": results,
        "runtime_under_30s": elapsed < 30.0,
    }


@contextlib.contextmanager
def fault(kind: str):
    """Temporarily corrupt a module; ``geometry`` stretches every distance by 1%."""
    if kind != "geometry":
        raise ValueError(f"unknown fault {kind!r}")
    original = geo._dist
    geo._dist = lambda spec, p, q: 1.01 * original(spec, p, q)
    try:
        yield
    finally:
        geo._dist = original
