"""Riemannian (Karcher) barycenters of weighted point configurations.

The solver is damped Riemannian gradient descent,
``z <- exp_z(step * sum_i w_i log_z(x_i))`` with the step halved until the
functional decreases. It is vectorized over a batch of configurations so
the multi-marginal oracle and the Brunn-Minkowski enumeration can solve
millions of small problems at once.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .errors import AmbiguousBarycenter, CutLocus, NoConvergence

OK, AMBIGUOUS, NO_CONVERGENCE, CUT_LOCUS = 0, 1, 2, 3
_STATUS_NAMES = {OK: "ok", AMBIGUOUS: "ambiguous", NO_CONVERGENCE: "no-convergence", CUT_LOCUS: "cut-locus"}
CUT_RETRIES = 3


@dataclass(frozen=True, eq=False)
class WeightedConfig:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if pts.shape[0] != w.shape[0]:
            raise ValueError("one weight per point is required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_measure(cls, dm):
        return cls(dm.points, dm.masses)


def default_tol(spec) -> float:
    return 1e-9 * spec.diameter


def functional(spec, cfg: WeightedConfig, z) -> float:
    """Half the weighted sum of squared distances from z."""
    d = geo._dist(spec, np.asarray(z, dtype=float)[None, :], cfg.points)
    return 0.5 * float(cfg.weights @ d**2)


def gradient_direction(spec, cfg: WeightedConfig, z) -> np.ndarray:
    """``sum_i w_i log_z(x_i)``, the negative gradient of :func:`functional`."""
    z = np.asarray(z, dtype=float)
    logs = geo._log(spec, np.broadcast_to(z, cfg.points.shape), cfg.points)
    return cfg.weights @ logs


# ---------------------------------------------------------------------------
# batched core


def _values(spec, z, pts, w):
    d = geo._dist(spec, z[:, None, :], pts)
    return 0.5 * np.sum(w * d**2, axis=1)


def _cut_rows(spec, z, pts, w):
    if spec.kind == "sphere":
        d = geo._dist(spec, z[:, None, :], pts)
        bad = d > np.pi * spec.radius - geo.SPHERE_CUT_MARGIN
    elif spec.kind == "torus":
        per = np.asarray(spec.periods)
        diff = pts - z[:, None, :]
        diff = diff - per * np.round(diff / per)
        bad = np.any(np.abs(np.abs(diff) - per / 2) <= geo.TORUS_TIE_TOL, axis=-1)
    else:
        return np.zeros(len(z), dtype=bool)
    return np.any(bad & (w > 0), axis=1)


def _perturb(spec, z, rows, direction_index):
    """Nudge rows of z by a small deterministic tangent step (cut-locus escape)."""
    delta = 1e-6 * spec.diameter
    for r in np.flatnonzero(rows):
        basis = geo.tangent_basis(spec, z[r])
        e = basis[direction_index % spec.dim]
        z[r] = geo._exp(spec, z[r], delta * e)
        direction_index += 1
    return z


def descend(spec, pts, w, init, tol, max_iter=200, start_index=0, record=False):
    """Batched damped gradient descent from ``init``.

    ``pts`` has shape (B, m, D), ``w`` (B, m) or (m,), ``init`` (B, D).
    Returns ``(z, grad_norm, value, status, history)``; ``history`` lists the
    per-iteration functional values when ``record`` is set.
    """
    pts = np.asarray(pts, dtype=float)
    B, m, D = pts.shape
    w = np.broadcast_to(np.asarray(w, dtype=float), (B, m))
    z = np.array(init, dtype=float, copy=True).reshape(B, D)
    status = np.full(B, OK)
    for attempt in range(CUT_RETRIES + 1):
        cut = _cut_rows(spec, z, pts, w)
        if not cut.any():
            break
        if attempt == CUT_RETRIES:
            status[cut] = CUT_LOCUS
            break
        z = _perturb(spec, z, cut, start_index + attempt)
    active = status == OK
    F = _values(spec, z, pts, w)
    history = [F.copy()] if record else []
    gnorm = np.full(B, np.inf)
    for _ in range(max_iter + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        zi, pi, wi = z[idx], pts[idx], w[idx]
        logs = geo._log(spec, np.broadcast_to(zi[:, None, :], pi.shape), pi, check=False)
        V = np.einsum("bm,bmd->bd", wi, logs)
        g = np.linalg.norm(V, axis=1)
        gnorm[idx] = g
        done = g <= tol
        active[idx[done]] = False
        idx, V, zi, pi, wi = idx[~done], V[~done], zi[~done], pi[~done], wi[~done]
        if idx.size == 0:
            break
        step = np.ones(idx.size)
        Fold = F[idx]
        accepted = np.zeros(idx.size, dtype=bool)
        znew = zi.copy()
        Fnew = Fold.copy()
        for _ in range(60):
            todo = ~accepted
            if not todo.any():
                break
            cand = geo._exp(spec, zi[todo], step[todo, None] * V[todo])
            Fc = _values(spec, cand, pi[todo], wi[todo])
            ok = Fc <= Fold[todo] + 4 * np.finfo(float).eps * np.maximum(1.0, Fold[todo])
            t_idx = np.flatnonzero(todo)
            znew[t_idx[ok]] = cand[ok]
            Fnew[t_idx[ok]] = Fc[ok]
            accepted[t_idx[ok]] = True
            step[t_idx[~ok]] *= 0.5
        # rows that cannot descend at all are stationary to machine precision
        stuck = ~accepted
        z[idx] = znew
        F[idx] = Fnew
        if record:
            history.append(F.copy())
        if stuck.any():
            active[idx[stuck]] = False
    # final gradient norms for the rows that ran out of iterations
    unfinished = active | (gnorm > tol)
    if unfinished.any():
        idx = np.flatnonzero(unfinished & (status == OK))
        if idx.size:
            logs = geo._log(spec, np.broadcast_to(z[idx][:, None, :], pts[idx].shape), pts[idx], check=False)
            gnorm[idx] = np.linalg.norm(np.einsum("bm,bmd->bd", w[idx], logs), axis=1)
            status[idx[gnorm[idx] > tol]] = NO_CONVERGENCE
    return z, gnorm, F, status, history


def bc_map_batch(spec, weights, tuples, tol=None, max_iter=200, starts=None):
    """Global Karcher means of many configurations by multi-start descent.

    ``tuples`` has shape (B, m, D); ``weights`` (m,) or (B, m). Starts are the
    input points (and the heaviest point, which is one of them). Returns
    ``(z, value, status)`` with ``status`` using the module constants; an
    AMBIGUOUS row still carries the best candidate found.
    """
    tuples = np.asarray(tuples, dtype=float)
    B, m, D = tuples.shape
    w = np.broadcast_to(np.asarray(weights, dtype=float), (B, m))
    tol = default_tol(spec) if tol is None else tol
    inner_tol = 0.1 * tol
    start_ids = range(m) if starts is None else starts
    zs, Fs, sts = [], [], []
    for k in start_ids:
        z, g, F, st, _ = descend(spec, tuples, w, tuples[:, k, :], inner_tol, max_iter, start_index=k)
        # NO_CONVERGENCE against the internal tolerance is fine if the public tolerance holds
        st = np.where((st == NO_CONVERGENCE) & (g <= tol), OK, st)
        zs.append(z)
        Fs.append(np.where(st == OK, F, np.inf))
        sts.append(st)
    Z = np.stack(zs, 1)
    F = np.stack(Fs, 1)
    S = np.stack(sts, 1)
    best = np.argmin(F, axis=1)
    rows = np.arange(B)
    zbest = Z[rows, best]
    Fbest = F[rows, best]
    status = np.where(np.isfinite(Fbest), OK, np.max(S, axis=1))
    if Z.shape[1] > 1:
        dist = geo._dist(spec, Z, zbest[:, None, :])
        with np.errstate(invalid="ignore"):
            same_value = np.abs(F - Fbest[:, None]) <= tol * max(1.0, spec.diameter)
        amb = np.any(same_value & (dist > 10 * tol), axis=1)
        status = np.where((status == OK) & amb, AMBIGUOUS, status)
    return zbest, Fbest, status


# ---------------------------------------------------------------------------
# single-configuration API


def karcher_mean(cfg: WeightedConfig, spec, init, tol=None, max_iter=200):
    """Local Karcher mean from ``init``; returns ``(z, residual)``."""
    tol = default_tol(spec) if tol is None else tol
    init = geo.validate_point(spec, init)
    pts = geo.validate_point(spec, cfg.points)
    z, g, _, st, _ = descend(spec, pts[None], cfg.weights[None], init[None], tol, max_iter)
    if st[0] == CUT_LOCUS:
        raise CutLocus("an input point stays on the cut locus of the iterate")
    if st[0] == NO_CONVERGENCE:
        raise NoConvergence(f"Karcher iteration did not reach tol {tol:.2e}", max_iter, float(g[0]))
    return z[0], float(g[0])


def bc_map(spec, weights, points, tol=None, max_iter=200) -> np.ndarray:
    """Barycenter of ``sum_i w_i delta_{x_i}``; raises AmbiguousBarycenter on competing minima."""
    cfg = WeightedConfig(points, weights)
    pts = geo.validate_point(spec, cfg.points)
    if len(pts) == 1:
        return pts[0]
    z, _, st = bc_map_batch(spec, cfg.weights, pts[None], tol, max_iter)
    _raise_status(st[0], max_iter)
    return z[0]


def _raise_status(st, max_iter=None):
    if st == AMBIGUOUS:
        raise AmbiguousBarycenter("restarts reached distinct minimizers with equal functional value")
    if st == CUT_LOCUS:
        raise CutLocus("an input point stays on the cut locus of every start")
    if st == NO_CONVERGENCE:
        raise NoConvergence("Karcher iteration did not converge", max_iter)


def lipschitz_inverse(spec, weights, others, z) -> np.ndarray:
    """Recover x_1 from the barycenter z of (x_1, others): exp_z(-(1/w_1) sum_{i>=2} w_i log_z x_i)."""
    w = np.asarray(weights, dtype=float)
    if not w[0] > 0:
        raise ValueError("the first weight must be positive")
    others = np.atleast_2d(np.asarray(others, dtype=float))
    z = np.asarray(z, dtype=float)
    logs = geo._log(spec, np.broadcast_to(z, others.shape), others)
    return geo._exp(spec, z, -(w[1:] @ logs) / w[0])


def empirical_lipschitz(spec, weights, others, radius, trials=200, seed=0, center=None) -> float:
    """Largest observed ratio d(G z, G z') / d(z, z') for z, z' in a geodesic ball."""
    w = np.asarray(weights, dtype=float)
    others = np.atleast_2d(np.asarray(others, dtype=float))
    rng = np.random.default_rng(seed)
    if center is None:
        rest = w[1:] / w[1:].sum()
        center = bc_map(spec, rest, others) if len(others) > 1 else others[0]
    zs = geo.random_points(spec, 2 * trials, rng, center=center, radius=radius)
    best = 0.0
    for z1, z2 in zip(zs[:trials], zs[trials:]):
        d = float(geo._dist(spec, z1, z2))
        if d < 1e-12:
            continue
        g1 = lipschitz_inverse(spec, w, others, z1)
        g2 = lipschitz_inverse(spec, w, others, z2)
        best = max(best, float(geo._dist(spec, g1, g2)) / d)
    return best
