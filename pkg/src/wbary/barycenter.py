"""Wasserstein barycenters of finitely supported Omega = sum_i w_i delta_{mu_i}.

Two routes are provided: a free-support fixed-point iteration (every atom is
moved to the Karcher mean of its transported images) and a brute-force
multi-marginal linear program whose optimal coupling is pushed forward by
the Karcher map. The second is the oracle for the first.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
from scipy.optimize import linprog

from . import geometry as geo
from . import karcher
from .errors import AmbiguousBarycenter, CutLocus, NoConvergence, SizeLimit
from .measures import DiscreteMeasure, MeshDensity, ReferenceMeasure, build_mesh, measure_from_json, resample, to_discrete
from .ot import DualPotentials, TransportPlan, solve_exact

log = logging.getLogger(__name__)

MULTIMARGINAL_LIMIT = 10**6


@dataclass(frozen=True, eq=False)
class OmegaSpec:
    manifold: geo.ManifoldSpec
    entries: tuple

    def __post_init__(self):
        entries = tuple((float(w), m) for w, m in self.entries)
        if not entries:
            raise ValueError("Omega needs at least one entry")
        w = np.array([e[0] for e in entries])
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("Omega weights must be positive and sum to 1")
        for _, m in entries:
            if m.spec != self.manifold:
                raise ValueError("every measure must live on the Omega manifold")
        object.__setattr__(self, "entries", entries)

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for w, _ in self.entries])

    @property
    def measures(self) -> list:
        return [m for _, m in self.entries]

    @property
    def ac_flags(self) -> np.ndarray:
        return np.array([isinstance(m, MeshDensity) for m in self.measures])

    def to_json(self) -> dict:
        return {
            "manifold": self.manifold.to_json(),
            "entries": [{"weight": w, "measure": m.to_json()} for w, m in self.entries],
        }

    @classmethod
    def from_json(cls, obj, reference: ReferenceMeasure | None = None) -> "OmegaSpec":
        spec = geo.ManifoldSpec.from_json(obj["manifold"])
        reference = reference or ReferenceMeasure.from_json(obj.get("reference"))
        entries = [(e["weight"], measure_from_json(e["measure"], spec, reference)) for e in obj["entries"]]
        return cls(spec, entries)


@dataclass(eq=False)
class BarycenterResult:
    measure: DiscreteMeasure
    plans: list
    duals: list
    first_order_residuals: np.ndarray
    convergence_log: list
    method: str
    converged: bool = True
    iterations: int = 0
    warnings: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def functional(self) -> float:
        return self.convergence_log[-1]

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "converged": self.converged,
            "iterations": self.iterations,
            "atoms": self.measure.points.tolist(),
            "weights": self.measure.masses.tolist(),
            "first_order_residuals": np.asarray(self.first_order_residuals).tolist(),
            "convergence_log": list(self.convergence_log),
            "warnings": list(self.warnings),
            "info": self.info,
        }


# ---------------------------------------------------------------------------
# discretization


def discretization_radius(md: MeshDensity) -> float:
    """Bound on W2(md, to_discrete(md)): no mass leaves its cell."""
    return md.mesh.cell_diameter


def approximate_omega(omega: OmegaSpec, resolution=None):
    """Replace mesh densities by cell-center atoms; returns ``(omega, radii)``."""
    entries, radii = [], []
    for w, m in omega.entries:
        if isinstance(m, MeshDensity):
            if resolution is not None and tuple(np.broadcast_to(resolution, np.shape(m.mesh.shape))) != m.mesh.shape:
                m = resample(m, build_mesh(omega.manifold, resolution, m.mesh.reference))
            entries.append((w, to_discrete(m)))
            radii.append(discretization_radius(m))
        else:
            entries.append((w, m))
            radii.append(0.0)
    return OmegaSpec(omega.manifold, entries), radii


def _product_support(omega: OmegaSpec, support_size, rng):
    """Karcher means of independent draws, one atom from every entry."""
    disc, _ = approximate_omega(omega)
    tuples = np.stack([m.points[rng.choice(len(m), size=support_size, p=m.masses)] for m in disc.measures], axis=1)
    z, _, _ = karcher.bc_map_batch(omega.manifold, disc.weights, tuples)
    return z


def _initial_support(omega: OmegaSpec, support_size, rng):
    flags = omega.ac_flags
    w = omega.weights
    if flags.any():
        k = int(np.flatnonzero(flags)[np.argmax(w[flags])])
        md = omega.measures[k]
        return md.mesh.sample(md.cell_masses, support_size, rng)
    k = int(np.argmax(w))
    dm = omega.measures[k]
    idx = rng.choice(len(dm), size=support_size, p=dm.masses)
    return dm.points[idx].copy()


# ---------------------------------------------------------------------------
# helpers shared by both solvers


def _solve_all(bary, measures, threads):
    if threads and threads > 1 and len(measures) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(lambda mu: solve_exact(bary, mu), measures))
    return [solve_exact(bary, mu) for mu in measures]


def conditional_configs(plans, weights, atoms):
    """Padded per-atom target configurations ``lambda_x = sum_i w_i cond_i(x)``.

    Returns ``(points (S, K, D), weights (S, K))``; padding repeats the atom
    itself with zero weight.
    """
    S, D = atoms.shape
    rows, pts, ws = [], [], []
    for w, plan in zip(weights, plans):
        C = plan.coupling
        rowsum = C.sum(axis=1)
        r, c = np.nonzero(C > 1e-12 * rowsum[:, None])
        rows.append(r)
        pts.append(plan.target.points[c])
        ws.append(w * C[r, c] / rowsum[r])
    rows = np.concatenate(rows)
    pts = np.concatenate(pts)
    ws = np.concatenate(ws)
    order = np.argsort(rows, kind="stable")
    rows, pts, ws = rows[order], pts[order], ws[order]
    counts = np.bincount(rows, minlength=S)
    K = int(counts.max())
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    pos = np.arange(rows.size) - starts[rows]
    P = np.repeat(atoms[:, None, :], K, axis=1)
    W = np.zeros((S, K))
    P[rows, pos] = pts
    W[rows, pos] = ws
    W /= W.sum(axis=1, keepdims=True)
    return P, W


def first_order_residuals(spec, plans, weights, atoms) -> np.ndarray:
    """|sum_i w_i int log_x d(cond_i(x))| for every barycenter atom x."""
    P, W = conditional_configs(plans, weights, atoms)
    logs = geo._log(spec, np.broadcast_to(atoms[:, None, :], P.shape), P, check=False)
    return np.linalg.norm(np.einsum("sk,skd->sd", W, logs), axis=1)


def _functional(plans, weights):
    return float(sum(w * 2.0 * p.transport_cost for w, p in zip(weights, plans)))


# ---------------------------------------------------------------------------
# fixed-point solver


def solve_fixed_point(omega: OmegaSpec, support_size: int = 64, init=None, seed: int = 0, tol=None,
                      max_iter: int = 200, threads: int = 1, restarts: int = 1, resolution=None) -> BarycenterResult:
    """Free-support fixed-point iteration on ``support_size`` equal-mass atoms.

    Each sweep solves exact transport from the current support to every
    entry, then moves each atom to the Karcher mean of its conditional
    target mixture (started at the atom itself). Stops when no atom moves
    more than ``tol`` (default 1e-6 * diameter) or the functional drops by
    less than 1e-12. With ``restarts > 1`` further seeded initializations
    are run (alternating draws from the heaviest entry with Karcher means of
    independent tuples) and the lowest functional is kept.
    """
    spec = omega.manifold
    disc, radii = approximate_omega(omega, resolution)
    tol = 1e-6 * spec.diameter if tol is None else tol
    if support_size < 1:
        raise ValueError("support_size must be at least 1")
    best = None
    for r in range(max(1, restarts)):
        rng = np.random.default_rng([seed, r])
        if init is not None and r == 0:
            X0 = np.array(init, dtype=float)
        elif r % 2 == 0:
            X0 = _initial_support(omega, support_size, rng)
        else:
            X0 = _product_support(omega, support_size, rng)
        res = _fixed_point_run(spec, disc, X0, tol, max_iter, threads)
        res.info.update({"seed": seed, "restart": r, "discretization_radii": radii, "support_size": len(X0)})
        if best is None or res.functional < best.functional - 1e-15:
            best = res
    if not omega.ac_flags.any():
        best.warnings.append("no absolutely continuous entry: the barycenter may not be unique")
    return best


def _fixed_point_run(spec, disc, X, tol, max_iter, threads):
    weights = disc.weights
    measures = disc.measures
    S = len(X)
    masses = np.full(S, 1.0 / S)
    X = geo.validate_point(spec, X)
    ktol = karcher.default_tol(spec)
    history = []
    converged = False
    disp = math.inf
    it = 0
    while True:
        bary = DiscreteMeasure(spec, X, masses)
        solved = _solve_all(bary, measures, threads)
        plans = [p for p, _ in solved]
        duals = [d for _, d in solved]
        F = _functional(plans, weights)
        decrease = history[-1] - F if history else math.inf
        history.append(F)
        if disp <= tol or decrease < 1e-12:
            converged = True
            break
        if it >= max_iter:
            break
        P, W = conditional_configs(plans, weights, X)
        Xn, _, _, st, _ = karcher.descend(spec, P, W, X, ktol, 200)
        if np.any(st == karcher.CUT_LOCUS):
            raise CutLocus("a transported image sits on the cut locus of its atom")
        disp = float(np.max(geo._dist(spec, X, Xn)))
        X = geo.validate_point(spec, Xn)
        it += 1
        log.debug("fixed point sweep %d: functional %.12g, displacement %.3e", it, F, disp)
    return BarycenterResult(
        measure=bary,
        plans=plans,
        duals=duals,
        first_order_residuals=first_order_residuals(spec, plans, weights, X),
        convergence_log=history,
        method="fixed-point",
        converged=converged,
        iterations=it,
    )


# ---------------------------------------------------------------------------
# multi-marginal oracle


def solve_multimarginal(omega: OmegaSpec, tol=None, max_iter: int = 200) -> BarycenterResult:
    """Barycenter from the m-marginal linear program with cost min_z sum_i w_i d^2(x_i, z)."""
    spec = omega.manifold
    disc, radii = approximate_omega(omega)
    measures = disc.measures
    weights = disc.weights
    sizes = [len(m) for m in measures]
    n_tuples = math.prod(sizes)
    if n_tuples > MULTIMARGINAL_LIMIT:
        raise SizeLimit(f"product of atom counts {n_tuples} exceeds {MULTIMARGINAL_LIMIT}")
    idx = np.indices(sizes).reshape(len(sizes), -1).T
    tuples = np.stack([measures[i].points[idx[:, i]] for i in range(len(sizes))], axis=1)
    Z, half_cost, status = karcher.bc_map_batch(spec, weights, tuples, tol, max_iter)
    if np.any(status == karcher.NO_CONVERGENCE) or np.any(status == karcher.CUT_LOCUS):
        raise NoConvergence("Karcher solve failed for some tuple")
    costs = 2.0 * half_cost
    m = len(sizes)
    rows, b_eq = [], []
    offset = 0
    for i in range(m):
        rows.append(idx[:, i] + offset)
        b_eq.append(measures[i].masses)
        offset += sizes[i]
    cols = np.tile(np.arange(n_tuples), m)
    A = sps.csr_matrix((np.ones(m * n_tuples), (np.concatenate(rows), cols)), shape=(offset, n_tuples))
    b = np.concatenate(b_eq)
    lp = linprog(costs, A_eq=A, b_eq=b, bounds=(0, None), method="highs-ds")
    if lp.status != 0:
        raise NoConvergence(f"multi-marginal LP failed: {lp.message}")
    gamma = np.where(lp.x > 0, lp.x, 0.0)
    primal = float(costs @ gamma)
    dual = float(b @ lp.eqlin.marginals)
    gap = abs(primal - dual)
    if gap > 1e-9 * (1 + abs(primal)):
        raise NoConvergence(f"multi-marginal LP gap {gap:.3e}", residual=gap)
    support = np.flatnonzero(gamma > 1e-14)
    if np.any(status[support] == karcher.AMBIGUOUS):
        raise AmbiguousBarycenter("a tuple carrying mass has a non-unique Karcher mean")
    mass = gamma[support] / gamma[support].sum()
    atoms = Z[support]
    bary = DiscreteMeasure(spec, atoms, mass)
    plans = []
    for i in range(m):
        C = np.zeros((support.size, sizes[i]))
        C[np.arange(support.size), idx[support, i]] = gamma[support] / gamma[support].sum()
        pcost = float(np.sum(C * geo.cost_matrix(spec, atoms, measures[i].points)))
        plans.append(TransportPlan(bary, measures[i], C, pcost))
    residuals = first_order_residuals(spec, plans, weights, atoms)
    res = BarycenterResult(
        measure=bary,
        plans=plans,
        duals=[None] * m,
        first_order_residuals=residuals,
        convergence_log=[primal],
        method="multimarginal",
        converged=True,
        iterations=1,
        info={"lp_gap": gap, "n_tuples": n_tuples, "discretization_radii": radii},
    )
    if not omega.ac_flags.any():
        res.warnings.append("no absolutely continuous entry: the barycenter may not be unique")
    return res


# ---------------------------------------------------------------------------
# balance certificates


def c_transform_potential(spec, points, target_points, uc) -> np.ndarray:
    """``u(x) = sup_y -c(x, y) - u^c(y)`` evaluated at ``points``.

    ``uc`` follows the convention ``u^c(y) = -v(y)`` for LP duals v with
    ``u + v <= c``.
    """
    C = geo.cost_matrix(spec, np.atleast_2d(points), target_points)
    return np.max(-C - uc[None, :], axis=1)


def second_order_hessians(spec, result: BarycenterResult, weights, step) -> np.ndarray:
    """Finite-difference Hessians of ``phi = sum_i w_i u_i`` at every barycenter atom."""
    if not spec.is_flat:
        raise NotImplementedError("second-order diagnostic is defined on flat meshes only")
    X = result.measure.points
    n = spec.dim
    E = np.eye(n)

    def phi(Y):
        total = np.zeros(len(Y))
        for w, plan, d in zip(weights, result.plans, result.duals):
            total += w * c_transform_potential(spec, Y, plan.target.points, -d.uc)
        return total

    def at(offset):
        Y = X + offset
        return phi(geo._wrap(spec, Y) if spec.kind == "torus" else Y)

    f0 = at(np.zeros(n))
    H = np.empty((len(X), n, n))
    h = step
    for a in range(n):
        H[:, a, a] = (at(h * E[a]) - 2 * f0 + at(-h * E[a])) / h**2
        for b in range(a + 1, n):
            val = (at(h * (E[a] + E[b])) - at(h * (E[a] - E[b])) - at(h * (E[b] - E[a])) + at(-h * (E[a] + E[b]))) / (4 * h**2)
            H[:, a, b] = H[:, b, a] = val
    return H


def balance_certificate(result: BarycenterResult, omega: OmegaSpec, spec=None, step=None, slack=None) -> dict:
    """First-order residuals everywhere; second-order Hessian bound on flat manifolds."""
    spec = spec or omega.manifold
    disc, _ = approximate_omega(omega)
    weights = disc.weights
    X = result.measure.points
    r1 = first_order_residuals(spec, result.plans, weights, X)
    report = {
        "max_first_order_residual": float(r1.max()),
        "first_order_residuals": r1.tolist(),
    }
    if spec.is_flat and all(d is not None for d in result.duals):
        meshes = [m.mesh for m in omega.measures if isinstance(m, MeshDensity)]
        if step is None:
            step = float(np.min(meshes[0].cell_sizes)) if meshes else 0.05 * spec.diameter
        if slack is None:
            # grad u_i(x) = T_i(x) - x and sum_i w_i T_i = id, so the weighted
            # Hessian vanishes in the continuum; rounding the targets to cell
            # centers moves a step-h second difference by at most diam / h.
            diam = max((m.cell_diameter for m in meshes), default=0.0)
            slack = diam / step if diam > 0 else 0.05 / step
        H = second_order_hessians(spec, result, weights, step)
        eig = np.linalg.eigvalsh(H).max(axis=1)
        report.update({
            "second_order_step": step,
            "second_order_slack": slack,
            "max_hessian_eigenvalue": float(eig.max()),
            "second_order_ok": bool(eig.max() <= slack),
        })
    return report


def result_from_json(obj, omega: OmegaSpec) -> BarycenterResult:
    """Rebuild a result from its saved atoms; plans are recomputed by exact transport."""
    spec = omega.manifold
    disc, _ = approximate_omega(omega)
    bary = DiscreteMeasure(spec, obj["atoms"], obj["weights"])
    solved = [solve_exact(bary, mu) for mu in disc.measures]
    plans = [p for p, _ in solved]
    return BarycenterResult(
        measure=bary,
        plans=plans,
        duals=[d for _, d in solved],
        first_order_residuals=first_order_residuals(spec, plans, disc.weights, bary.points),
        convergence_log=list(obj.get("convergence_log") or [_functional(plans, disc.weights)]),
        method=obj.get("method", "fixed-point"),
        converged=bool(obj.get("converged", True)),
        iterations=int(obj.get("iterations", 0)),
        warnings=list(obj.get("warnings", [])),
        info=dict(obj.get("info", {})),
    )
