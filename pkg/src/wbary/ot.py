"""Discrete optimal transport for the cost c = d^2/2.

The exact solver is POT's network simplex; the entropic solver is a
log-domain Sinkhorn iteration. Both return a plan together with dual
potentials gauged so that ``u[0] == 0``.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import geometry as geo
from .errors import NoConvergence, SizeLimit
from .measures import DiscreteMeasure

for _backend in ("PYTORCH", "TENSORFLOW", "JAX", "CUPY"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_backend}", "1")
import ot as _pot  # noqa: E402

MAX_ATOMS = 2000
MAP_LIKE_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class TransportPlan:
    source: DiscreteMeasure
    target: DiscreteMeasure
    coupling: np.ndarray
    transport_cost: float

    def row_support(self, i, rtol=MAP_LIKE_RTOL) -> np.ndarray:
        row = self.coupling[i]
        return np.flatnonzero(row > rtol * row.sum())

    def is_map_like(self, i) -> bool:
        return self.row_support(i).size == 1

    def map_like_rows(self) -> np.ndarray:
        C = self.coupling
        big = C > MAP_LIKE_RTOL * C.sum(axis=1, keepdims=True)
        return big.sum(axis=1) == 1

    def image_index(self) -> np.ndarray:
        """Index of the heaviest target atom for each source atom."""
        return np.argmax(self.coupling, axis=1)

    def to_json(self, duals: "DualPotentials | None" = None) -> dict:
        rows, cols = np.nonzero(self.coupling)
        out = {
            "cost": self.transport_cost,
            "coupling": [[int(i), int(j), float(self.coupling[i, j])] for i, j in zip(rows, cols)],
        }
        if duals is not None:
            out["duals"] = {"u": duals.u.tolist(), "uc": duals.uc.tolist()}
        return out


@dataclass(frozen=True, eq=False)
class DualPotentials:
    u: np.ndarray
    uc: np.ndarray

    def objective(self, mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
        return float(self.u @ mu.masses + self.uc @ nu.masses)

    def max_violation(self, C: np.ndarray) -> float:
        """Largest amount by which ``u(x) + uc(y) <= c(x, y)`` fails."""
        return float(np.max(self.u[:, None] + self.uc[None, :] - C))


def _check_size(mu, nu):
    if len(mu) > MAX_ATOMS or len(nu) > MAX_ATOMS:
        raise SizeLimit(f"exact solver is limited to {MAX_ATOMS} atoms per side")


def _gauge(u, v):
    shift = u[0]
    return u - shift, v + shift


def solve_exact(mu: DiscreteMeasure, nu: DiscreteMeasure, spec: geo.ManifoldSpec | None = None,
                C: np.ndarray | None = None):
    """Exact transport plan and certified duals (primal-dual gap <= 1e-9 (1 + |cost|))."""
    spec = spec or mu.spec
    _check_size(mu, nu)
    if C is None:
        C = geo.cost_matrix(spec, mu.points, nu.points)
    a = np.asarray(mu.masses, dtype=np.float64)
    b = np.asarray(nu.masses, dtype=np.float64)
    b = b * (a.sum() / b.sum())
    G, log = _pot.emd(a, b, C, numItermax=10_000_000, log=True)
    if log["warning"] is not None:
        raise NoConvergence(f"network simplex: {log['warning']}")
    G = np.where(G > 0, G, 0.0)
    cost = float(np.sum(G * C))
    u, v = _gauge(np.asarray(log["u"], dtype=float), np.asarray(log["v"], dtype=float))
    duals = DualPotentials(u, v)
    gap = abs(cost - duals.objective(mu, nu))
    if gap > 1e-9 * (1 + abs(cost)):
        raise NoConvergence(f"primal-dual gap {gap:.3e} exceeds tolerance", residual=gap)
    return TransportPlan(mu, nu, G, cost), duals


def solve_entropic(mu: DiscreteMeasure, nu: DiscreteMeasure, spec: geo.ManifoldSpec | None = None,
                   epsilon: float = 1e-2, max_iter: int = 10_000, marginal_tol: float = 1e-9,
                   C: np.ndarray | None = None):
    """Log-domain Sinkhorn. ``transport_cost`` is <gamma, C> without the entropy term."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    spec = spec or mu.spec
    if C is None:
        C = geo.cost_matrix(spec, mu.points, nu.points)
    log_a = np.log(mu.masses)
    log_b = np.log(nu.masses)
    f = np.zeros(len(mu))
    g = np.zeros(len(nu))
    err = math.inf
    for it in range(1, max_iter + 1):
        f = -epsilon * logsumexp((g[None, :] - C) / epsilon + log_b[None, :], axis=1)
        g = -epsilon * logsumexp((f[:, None] - C) / epsilon + log_a[:, None], axis=0)
        if it % 10 == 0 or it == max_iter:
            log_P = (f[:, None] + g[None, :] - C) / epsilon + log_a[:, None] + log_b[None, :]
            err = float(np.abs(np.exp(logsumexp(log_P, axis=1)) - mu.masses).sum())
            if err <= marginal_tol:
                break
    else:
        raise NoConvergence(f"Sinkhorn stopped after {max_iter} iterations", max_iter, err)
    P = np.exp((f[:, None] + g[None, :] - C) / epsilon + log_a[:, None] + log_b[None, :])
    u, v = _gauge(f, g)
    return TransportPlan(mu, nu, P, float(np.sum(P * C))), DualPotentials(u, v)


def w2(mu: DiscreteMeasure, nu: DiscreteMeasure, spec: geo.ManifoldSpec | None = None,
       method: str = "exact", epsilon: float = 1e-2, **kw) -> float:
    if method == "exact":
        plan, _ = solve_exact(mu, nu, spec)
    elif method == "entropic":
        plan, _ = solve_entropic(mu, nu, spec, epsilon=epsilon, **kw)
    else:
        raise ValueError(f"unknown method {method!r}")
    return math.sqrt(max(2.0 * plan.transport_cost, 0.0))


def conditional_targets(plan: TransportPlan, i: int) -> DiscreteMeasure:
    row = plan.coupling[i]
    total = row.sum()
    if not total > 0:
        raise ValueError(f"row {i} carries no mass")
    keep = plan.row_support(i)
    return DiscreteMeasure.normalized(plan.target.spec, plan.target.points[keep], row[keep])


def marginal_errors(plan: TransportPlan):
    rows = np.abs(plan.coupling.sum(axis=1) - plan.source.masses).max()
    cols = np.abs(plan.coupling.sum(axis=0) - plan.target.masses).max()
    return float(rows), float(cols)
