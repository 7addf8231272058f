"""End-to-end inequality experiments on barycenters of measures and of sets."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from . import karcher
from .barycenter import OmegaSpec, conditional_configs, solve_fixed_point
from .distortion import alpha as distortion_alpha, alpha_lower_bound
from .errors import CDViolated, NotApplicable
from .functionals import EntropySpec, cd_condition, convexity_class_check, entropy, interaction_energy, potential_energy
from .measures import Mesh, MeshDensity, bin_to_mesh, build_mesh, ess_sup, resample

PASS, FAIL, INCONCLUSIVE, NOT_APPLICABLE = "pass", "fail", "inconclusive", "not-applicable"
DEFAULT_MAX_SUPPORT = 2000
AMBIGUOUS_LIMIT = 0.01
NON_MAP_LIMIT = 0.2
CHUNK = 1 << 16


@dataclass
class InequalityReport:
    name: str
    lhs: float
    rhs: float
    slack: float
    status: str
    metadata: dict = field(default_factory=dict)
    diagnostics: list = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return self.status == PASS

    @property
    def margin(self) -> float:
        return self.rhs + self.slack - self.lhs

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "status": self.status,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "slack": self.slack,
            "metadata": self.metadata,
        }


def _decide(lhs, rhs, slack) -> str:
    return PASS if lhs <= rhs + slack else FAIL


def refinement_slack(coarse_gaps, fine_gaps) -> float:
    """One-sided discretization slack from paired runs at resolutions R and 2R.

    Gaps are ``lhs - rhs``. Only increases under refinement can push a
    continuum value above the fine-grid one, so the slack is twice the
    largest increase (0 when every gap decreases).
    """
    diff = np.asarray(fine_gaps, dtype=float) - np.asarray(coarse_gaps, dtype=float)
    return float(2.0 * max(0.0, diff.max())) if diff.size else 0.0


@dataclass(frozen=True)
class PotentialFunctional:
    """``mu -> int V dmu`` for a vectorized ``V``."""

    V: object

    def __call__(self, md):
        return potential_energy(self.V, md)


@dataclass(frozen=True)
class InteractionFunctional:
    """``mu -> int int W dmu dmu`` for a kernel ``W(xs, ys)``."""

    W: object

    def __call__(self, md):
        return interaction_energy(self.W, md)


# ---------------------------------------------------------------------------
# barycenter plumbing


def _check_mesh(omega: OmegaSpec, mesh_res, reference):
    first = next(m for m in omega.measures if isinstance(m, MeshDensity))
    res = first.mesh.shape if mesh_res is None else mesh_res
    return build_mesh(omega.manifold, res, reference or first.mesh.reference)


def default_support_size(omega: OmegaSpec) -> int:
    cells = max(len(m.mesh) for m in omega.measures if isinstance(m, MeshDensity))
    return int(min(DEFAULT_MAX_SUPPORT, 8 * cells))


def _barycenter(omega, result, support_size, seed, threads):
    if result is not None:
        return result
    return solve_fixed_point(omega, support_size or default_support_size(omega), seed=seed, threads=threads)


def _result_meta(result) -> dict:
    return {
        "support_size": len(result.measure),
        "iterations": result.iterations,
        "converged": result.converged,
        "functional": result.functional,
        "max_first_order_residual": float(np.max(result.first_order_residuals)),
    }


# ---------------------------------------------------------------------------
# Jensen inequalities


def jensen_check(omega: OmegaSpec, fspec, mesh_res=None, slack: float = 0.05, support_size=None, seed: int = 0,
                 result=None, threads: int = 1) -> InequalityReport:
    """``F(bary) <= sum_i w_i F(mu_i) + slack`` for a displacement convex F (k = 0 regime)."""
    spec = omega.manifold
    if not all(isinstance(m, MeshDensity) for m in omega.measures):
        raise ValueError("Jensen checks need mesh-density entries")
    if isinstance(fspec, EntropySpec):
        fspec.check_dimension(spec.dim)
        K = cd_condition(spec, fspec.reference, fspec.N)
        if K < -1e-12:
            raise CDViolated(f"curvature-dimension bound K = {K:.3g} < 0; the k = 0 Jensen inequality does not apply")
        conv = convexity_class_check(fspec, spec.dim)
        if not conv.passed:
            raise NotApplicable(f"r^n U(r^-n) is not convex nonincreasing (witness r = {conv.witness})")
        reference = fspec.reference
        F = lambda md: entropy(fspec, md)  # noqa: E731
    else:
        K = None
        reference = None
        F = fspec
    mesh = _check_mesh(omega, mesh_res, reference)
    result = _barycenter(omega, result, support_size, seed, threads)
    bary = bin_to_mesh(result.measure, mesh)
    lhs = F(bary)
    values = [F(resample(m, mesh)) for m in omega.measures]
    rhs = float(np.dot(omega.weights, values))
    meta = {
        "mesh_resolution": list(mesh.shape),
        "seed": seed,
        "curvature_bound": K,
        "entry_values": values,
        "weighted_w2_squared": result.functional,
        **_result_meta(result),
    }
    return InequalityReport("jensen", lhs, rhs, slack, _decide(lhs, rhs, slack), meta)


def target_cell_alphas(spec, result, weights):
    """Per entry: coupling-weighted mean of ``alpha_{lam_x}(y)`` over plan entries landing on target atom y.

    Returns ``(alphas, map_like_fraction)``; ``alphas[i]`` has one value per
    target atom of plan i.
    """
    X = result.measure.points
    P, W = conditional_configs(result.plans, weights, X)
    maplike = np.all([p.map_like_rows() for p in result.plans], axis=0)
    out = []
    cache = {}
    for plan in result.plans:
        C = plan.coupling
        rows, cols = np.nonzero(C > 1e-12 * C.sum(axis=1, keepdims=True))
        num = np.zeros(C.shape[1])
        den = np.zeros(C.shape[1])
        for r, c in zip(rows, cols):
            y = plan.target.points[c]
            key = (int(r), y.tobytes())
            if key not in cache:
                keep = W[r] > 0
                cfg = karcher.WeightedConfig(P[r][keep], W[r][keep])
                cache[key] = distortion_alpha(spec, cfg, y, xbar=X[r]).alpha
            num[c] += C[r, c] * cache[key]
            den[c] += C[r, c]
        a = np.ones(C.shape[1])
        hit = den > 0
        a[hit] = num[hit] / den[hit]
        out.append(a)
    return out, float(np.mean(maplike))


def check_mesh_alphas(omega: OmegaSpec, result, alphas, mesh) -> list:
    """Per-entry distortion on the cells of ``mesh`` (1 where no plan lands).

    Values tabulated on a finer entry mesh are volume-averaged into the
    check cells, which coarse-grains ``alpha dvol`` as a reference measure.
    """
    out = []
    for md, plan, a in zip(omega.measures, result.plans, alphas):
        fine = md.mesh
        cell_alpha = np.ones(len(fine))
        cell_alpha[fine.locate(plan.target.points)] = a
        if fine.shape != mesh.shape:
            owner = mesh.locate(fine.centers)
            vol = np.bincount(owner, weights=fine.volumes, minlength=len(mesh))
            cell_alpha = np.bincount(owner, weights=cell_alpha * fine.volumes, minlength=len(mesh)) / vol
        out.append(cell_alpha)
    return out


def distorted_jensen_check(omega: OmegaSpec, fspec: EntropySpec, mesh_res=None, slack: float = 0.05,
                           support_size=None, seed: int = 0, result=None, threads: int = 1) -> InequalityReport:
    """``U(bary) <= sum_i w_i int U(f_i / alpha_i) alpha_i dvol + slack``.

    ``alpha_i`` is tabulated on the cells of entry i from the plan into it.
    On a check mesh coarser than the entry meshes both ``f_i`` and
    ``alpha_i`` are coarse-grained: the cell masses of ``f_i`` are summed and
    ``alpha_i`` is volume-averaged, which coarse-grains ``alpha_i dvol`` as a
    reference measure.
    """
    spec = omega.manifold
    if fspec.reference.kind != "zero":
        raise ValueError("the distorted inequality is stated against the volume measure")
    if not all(isinstance(m, MeshDensity) for m in omega.measures):
        raise ValueError("Jensen checks need mesh-density entries")
    fspec.check_dimension(spec.dim)
    conv = convexity_class_check(fspec, spec.dim)
    if not conv.passed:
        raise NotApplicable(f"r^n U(r^-n) is not convex nonincreasing (witness r = {conv.witness})")
    mesh = _check_mesh(omega, mesh_res, fspec.reference)
    if any(len(m.mesh) < len(mesh) for m in omega.measures):
        raise ValueError("the check mesh must not be finer than the entry meshes")
    result = _barycenter(omega, result, support_size, seed, threads)
    alphas, map_fraction = target_cell_alphas(spec, result, omega.weights)
    lhs = entropy(fspec, bin_to_mesh(result.measure, mesh))
    plain, distorted = [], []
    for md, cell_alpha in zip(omega.measures, check_mesh_alphas(omega, result, alphas, mesh)):
        coarse = resample(md, mesh)
        plain.append(entropy(fspec, coarse))
        distorted.append(entropy(fspec, coarse, alpha=cell_alpha))
    rhs = float(np.dot(omega.weights, distorted))
    status = _decide(lhs, rhs, slack)
    if 1.0 - map_fraction > NON_MAP_LIMIT:
        status = INCONCLUSIVE
    meta = {
        "mesh_resolution": list(mesh.shape),
        "seed": seed,
        "map_like_fraction": map_fraction,
        "plain_rhs": float(np.dot(omega.weights, plain)),
        "entry_values_distorted": distorted,
        "entry_values_plain": plain,
        "min_alpha": float(min(a.min() for a in alphas)),
        "max_alpha": float(max(a.max() for a in alphas)),
        **_result_meta(result),
    }
    return InequalityReport("jensen-distorted", lhs, rhs, slack, status, meta)


# ---------------------------------------------------------------------------
# density bounds


def density_bound_check(omega: OmegaSpec, result=None, mesh_res=None, L=None, factor: float = 1.1,
                        support_size=None, seed: int = 0, threads: int = 1) -> InequalityReport:
    """``ess sup fbar <= factor * L / (C * Omega(A_L)^n)`` with ``A_L`` the entries of sup density <= L."""
    spec = omega.manifold
    flags = omega.ac_flags
    if not flags.any():
        raise NotApplicable("no absolutely continuous entry")
    sups = np.array([ess_sup(m) if f else math.inf for m, f in zip(omega.measures, flags)])
    L = float(np.max(sups[flags])) if L is None else float(L)
    in_AL = sups <= L
    mass = float(omega.weights[in_AL].sum())
    if mass <= 0:
        raise NotApplicable(f"no entry has density bounded by L = {L}")
    C = alpha_lower_bound(spec)
    bound = mass ** (-spec.dim) * L / C
    mesh = _check_mesh(omega, mesh_res, None)
    result = _barycenter(omega, result, support_size, seed, threads)
    measured = ess_sup(bin_to_mesh(result.measure, mesh))
    rhs = bound * factor
    meta = {
        "mesh_resolution": list(mesh.shape),
        "seed": seed,
        "L": L,
        "omega_AL": mass,
        "alpha_lower_bound": C,
        "bound": bound,
        "binning_factor": factor,
        "entry_sups": [float(s) if math.isfinite(s) else None for s in sups],
        **_result_meta(result),
    }
    return InequalityReport("density-bound", measured, rhs, 0.0, _decide(measured, rhs, 0.0), meta)


# ---------------------------------------------------------------------------
# Brunn-Minkowski


@dataclass(frozen=True, eq=False)
class RandomSetSpec:
    """Finitely supported random set: ``X = A_i`` with probability ``p_i``."""

    mesh: Mesh
    entries: tuple

    def __post_init__(self):
        entries = tuple((float(p), np.asarray(a, dtype=bool)) for p, a in self.entries)
        p = np.array([e[0] for e in entries])
        if not entries or np.any(p <= 0):
            raise ValueError("probabilities must be positive")
        for _, a in entries:
            if a.shape != (len(self.mesh),):
                raise ValueError("indicator must have one entry per cell")
            if not a.any() or self.mesh.volumes[a].sum() <= 0:
                raise ValueError("every set must have positive reference measure")
        entries = tuple((pi / p.sum(), a) for pi, (_, a) in zip(p, entries))
        object.__setattr__(self, "entries", entries)

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([p for p, _ in self.entries])

    @property
    def sets(self) -> list:
        return [a for _, a in self.entries]


def _tuple_chunks(sizes, budget, seed):
    """Index tuples: the full product when it fits the budget, else seeded chunks.

    Sampled chunk k depends only on (seed, k), so a larger budget extends a
    smaller one.
    """
    total = math.prod(sizes)
    if total <= budget:
        for start in range(0, total, CHUNK):
            flat = np.arange(start, min(total, start + CHUNK))
            yield np.stack(np.unravel_index(flat, sizes), axis=1)
        return
    for k, start in enumerate(range(0, int(budget), CHUNK)):
        rng = np.random.default_rng([seed, k])
        n = min(CHUNK, int(budget) - start)
        yield np.stack([rng.integers(0, s, size=n) for s in sizes], axis=1)


def _flat_cover(mesh: Mesh, points) -> np.ndarray:
    """Cells meeting the open cell-sized boxes centered at ``points``."""
    h = mesh.cell_sizes
    lo = np.array([b[0] for b in (mesh.spec.bounds if mesh.spec.kind == "box" else [(0.0, p) for p in mesh.spec.periods])])
    shape = np.asarray(mesh.shape)
    rel = (points - lo) / h - 0.5          # position in units of cells, relative to center of cell 0
    base = np.floor(rel).astype(int)
    frac = rel - base
    covered = np.zeros(len(mesh), dtype=bool)
    eps = 1e-9
    for off in np.ndindex(*([2] * mesh.spec.dim)):
        off = np.asarray(off)
        # the box meets cell base+off unless the offset is a full cell away
        dist = np.where(off == 0, frac, 1.0 - frac)
        ok = np.all(dist < 1.0 - eps, axis=1)
        idx = base + off
        if mesh.spec.kind == "torus":
            idx = np.mod(idx, shape)
        else:
            ok &= np.all((idx >= 0) & (idx < shape), axis=1)
        flat = np.ravel_multi_index(tuple(np.clip(idx[ok], 0, shape - 1).T), mesh.shape)
        covered[flat] = True
    return covered


def _dilate(mesh: Mesh, cells: np.ndarray) -> np.ndarray:
    out = np.zeros(len(mesh), dtype=bool)
    for c in np.flatnonzero(cells):
        out[mesh.neighbors(c)] = True
    return out


def barycenter_set(mesh: Mesh, sets, weights, budget=10**6, seed=0, threads=1, tol=None):
    """Outer cover of ``Z = {bc_w(x_1..x_m) : x_i in A_i}`` as a cell indicator.

    Returns ``(cover, info)``. On flat meshes the cover is the union of the
    cells met by the exact image of each cell tuple (a cell-sized box around
    the barycenter of the centers); on the sphere it is the one-ring dilation
    of the cells containing computed barycenters.
    """
    spec = mesh.spec
    pts = [mesh.centers[np.flatnonzero(a)] for a in sets]
    sizes = [len(p) for p in pts]
    w = np.asarray(weights, dtype=float)
    if len(pts) == 1:
        return np.asarray(sets[0], dtype=bool).copy(), {"tuples": sizes[0], "sampled": False, "ambiguous": 0}
    chunks = list(_tuple_chunks(sizes, budget, seed))

    def work(idx):
        tuples = np.stack([pts[i][idx[:, i]] for i in range(len(pts))], axis=1)
        z, _, st = karcher.bc_map_batch(spec, w, tuples, tol)
        return z[st == karcher.OK], int(np.sum(st == karcher.AMBIGUOUS)), int(np.sum(st != karcher.OK))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            outs = list(ex.map(work, chunks))
    else:
        outs = [work(c) for c in chunks]
    Z = np.concatenate([o[0] for o in outs]) if outs else np.empty((0, spec.ambient_dim))
    n_tuples = int(sum(len(c) for c in chunks))
    ambiguous = sum(o[1] for o in outs)
    failed = sum(o[2] for o in outs)
    if spec.is_flat:
        cover = _flat_cover(mesh, Z)
        method = "cell-box"
    else:
        hit = np.zeros(len(mesh), dtype=bool)
        hit[mesh.locate(Z)] = True
        cover = _dilate(mesh, hit)
        method = "one-ring"
    info = {
        "tuples": n_tuples,
        "sampled": n_tuples < math.prod(sizes),
        "ambiguous": ambiguous,
        "skipped": failed,
        "cover": method,
    }
    return cover, info


def _bm_sides(nu_Z, nu_A, weights, N):
    if math.isinf(N):
        return math.log(nu_Z), float(np.dot(weights, np.log(nu_A)))
    return nu_Z ** (1 / N), float(np.dot(weights, np.asarray(nu_A) ** (1 / N)))


def multiset_bm(sets, weights, mesh: Mesh, N=math.inf, budget=10**6, seed=0, threads=1) -> InequalityReport:
    """``nu(Z)^(1/N) >= sum_i w_i nu(A_i)^(1/N)`` (log form for N = inf).

    The reference is normalized to a probability. In the report ``lhs`` is
    the weighted set side and ``rhs`` the barycenter-set side.
    """
    spec = mesh.spec
    w = np.asarray(weights, dtype=float)
    if np.any(w <= 0) or abs(w.sum() - 1) > 1e-12:
        raise ValueError("weights must be positive and sum to 1")
    sets = [np.asarray(a, dtype=bool) for a in sets]
    if any(not a.any() for a in sets):
        raise ValueError("sets must be nonempty")
    K = cd_condition(spec, mesh.reference, N)
    if K < -1e-12:
        raise CDViolated(f"curvature-dimension bound K = {K:.3g} < 0")
    cover, info = barycenter_set(mesh, sets, w, budget, seed, threads)
    vols = mesh.volumes / mesh.volumes.sum()
    nu_A = [float(vols[a].sum()) for a in sets]
    nu_Z = float(vols[cover].sum())
    zside, aside = _bm_sides(nu_Z, nu_A, w, N)
    # reported as lhs <= rhs with lhs the set-average side
    status = _decide(aside, zside, 0.0)
    if info["ambiguous"] > AMBIGUOUS_LIMIT * max(info["tuples"], 1):
        status = INCONCLUSIVE
    meta = {
        "N": "inf" if math.isinf(N) else N,
        "nu_Z": nu_Z,
        "nu_A": nu_A,
        "weights": w.tolist(),
        "mesh_resolution": list(mesh.shape),
        "seed": seed,
        "budget": budget,
        "curvature_bound": K,
        **info,
    }
    return InequalityReport("brunn-minkowski", aside, zside, 0.0, status, meta, diagnostics=cover.tolist())


def selection_alpha(rset: RandomSetSpec, samples: int = 256, seed: int = 0) -> float:
    """Upper estimate of ``inf_S min_z sum_i p_i d^2(z, S(i))`` over sampled selections."""
    mesh = rset.mesh
    spec = mesh.spec
    rng = np.random.default_rng(seed)
    p = rset.probabilities
    cells = [np.flatnonzero(a) for a in rset.sets]
    pts = np.stack([mesh.centers[rng.choice(c, size=samples)] for c in cells], axis=1)
    _, F, st = karcher.bc_map_batch(spec, p, pts)
    F = F[st == karcher.OK]
    return float(2 * F.min()) if F.size else math.nan


def random_bm(rset: RandomSetSpec, N=math.inf, budget=10**6, seed=0, threads=1, selections=256) -> InequalityReport:
    """Random-set Brunn-Minkowski with Z(X) the barycenter set of the realizations.

    N = inf: ``log nu(Z) >= E log nu(X)`` (k = 0 gate; the (k/2) alpha(X)
    enhancement is recorded, not gated). N < inf with K >= 0:
    ``nu(Z)^(1/N) >= E nu(X)^(1/N)``.
    """
    mesh = rset.mesh
    spec = mesh.spec
    K = cd_condition(spec, mesh.reference, N)
    if K < -1e-12:
        raise CDViolated(f"curvature-dimension bound K = {K:.3g} < 0")
    rep = multiset_bm(rset.sets, rset.probabilities, mesh, N, budget, seed, threads)
    rep.name = "random-brunn-minkowski"
    if math.isinf(N):
        a = selection_alpha(rset, selections, seed)
        rep.metadata["alpha_selection_estimate"] = a
        rep.metadata["k"] = K
        # k taken as the CD(K, inf) constant; informational only
        rep.metadata["enhanced_set_side"] = rep.lhs + 0.5 * K * a
        rep.metadata["enhanced_holds"] = bool(rep.lhs + 0.5 * K * a <= rep.rhs)
    return rep
