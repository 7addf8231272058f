"""Internal-energy (entropy), potential and interaction functionals on measures.

Entropies act on mesh densities only. The reference measure is always
renormalized to a probability on the mesh, so a constant density has
``U_inf`` entropy exactly 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from . import geometry as geo
from .errors import Unsupported
from .measures import DiscreteMeasure, MeshDensity, ReferenceMeasure, build_mesh

FAMILIES = ("UN", "Uinf", "custom")
_R = sp.Symbol("r", positive=True)
_ALLOWED_FUNCS = {"log": sp.log, "exp": sp.exp, "sqrt": sp.sqrt}


def _parse_expression(text: str) -> sp.Expr:
    """Parse a closed-form U(r): numbers, r, + - * / **, log, exp, sqrt."""
    expr = sp.sympify(text, locals={"r": _R, **_ALLOWED_FUNCS}, rational=False)
    if expr.free_symbols - {_R}:
        raise ValueError(f"U may only depend on r, got {sorted(map(str, expr.free_symbols))}")
    for node in sp.preorder_traversal(expr):
        if isinstance(node, sp.Function) and node.func not in (sp.log, sp.exp):
            raise ValueError(f"function {node.func} is not allowed in U")
    return expr


@dataclass(frozen=True, eq=False)
class EntropySpec:
    family: str = "Uinf"
    N: float = math.inf
    reference: ReferenceMeasure = field(default_factory=ReferenceMeasure)
    expr: str | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown entropy family {self.family!r}")
        if self.family == "UN" and not (math.isfinite(self.N) and self.N > 1):
            raise ValueError("U_N needs a finite N > 1")
        if self.family == "custom":
            if not self.expr:
                raise ValueError("custom entropy needs an expression in r")
            _parse_expression(self.expr)

    def check_dimension(self, dim: int) -> None:
        if self.family == "UN" and not self.N > dim:
            raise ValueError(f"N = {self.N} must exceed the manifold dimension {dim}")

    @property
    def symbolic(self) -> sp.Expr:
        if self.family == "Uinf":
            return _R * sp.log(_R)
        if self.family == "UN":
            N = sp.nsimplify(self.N)
            return -N * (_R ** (1 - 1 / N) - _R)
        return _parse_expression(self.expr)

    def U(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if np.any(r < 0):
            raise ValueError("U is defined on [0, inf)")
        if self.family == "Uinf":
            safe = np.where(r > 0, r, 1.0)
            return np.where(r > 0, r * np.log(safe), 0.0)
        if self.family == "UN":
            N = self.N
            return -N * (r ** (1 - 1 / N) - r)
        return _custom_callable(self.expr)(r)

    def to_json(self) -> dict:
        out = {"family": self.family, "reference": self.reference.to_json()}
        if self.family == "UN":
            out["N"] = self.N
        if self.family == "custom":
            out["expr"] = self.expr
        return out

    @classmethod
    def from_json(cls, obj) -> "EntropySpec":
        N = obj.get("N")
        return cls(
            family=obj.get("family", "Uinf"),
            N=math.inf if N in (None, "inf", "infinity") else float(N),
            reference=ReferenceMeasure.from_json(obj.get("reference")),
            expr=obj.get("expr"),
        )


_CUSTOM_CACHE: dict = {}


def _custom_callable(text):
    if text not in _CUSTOM_CACHE:
        expr = _parse_expression(text)
        f = sp.lambdify(_R, expr, "numpy")
        at_zero = sp.limit(expr, _R, 0, "+")
        zero = float(at_zero) if at_zero.is_finite else math.nan

        def U(r):
            r = np.asarray(r, dtype=float)
            safe = np.where(r > 0, r, 1.0)
            with np.errstate(all="ignore"):
                vals = np.broadcast_to(np.asarray(f(safe), dtype=float), r.shape)
            return np.where(r > 0, vals, zero)

        _CUSTOM_CACHE[text] = U
    return _CUSTOM_CACHE[text]


# ---------------------------------------------------------------------------
# evaluation


def _probability_weights(md: MeshDensity):
    """Cell reference masses normalized to total 1, and the normalizing constant."""
    vols = md.mesh.volumes
    total = float(vols.sum())
    return vols / total, total


def entropy(spec: EntropySpec, md: MeshDensity, alpha=None) -> float:
    """``sum_cells U(f) nu(cell)`` with nu normalized to a probability.

    With per-cell ``alpha`` the distorted form ``sum U(f / alpha) alpha nu(cell)``
    is returned; ``alpha == 1`` reproduces the plain value bit for bit.
    """
    w, total = _probability_weights(md)
    f = md.values * total
    if alpha is None:
        vals = spec.U(f)
    else:
        a = np.asarray(alpha, dtype=float)
        if np.any(a <= 0):
            raise ValueError("distortion coefficients must be positive")
        vals = spec.U(f / a) * a
    return float(np.sum(vals * w))


def p_of_r(spec: EntropySpec, r) -> np.ndarray:
    """Pressure ``r U'(r) - U(r)``."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("pressure is defined on [0, inf)")
    if spec.family == "Uinf":
        return r.copy()
    if spec.family == "UN":
        return r ** (1 - 1 / spec.N)
    expr = spec.symbolic
    p = sp.lambdify(_R, sp.simplify(_R * sp.diff(expr, _R) - expr), "numpy")
    safe = np.where(r > 0, r, 1.0)
    return np.where(r > 0, np.broadcast_to(p(safe), r.shape), 0.0)


def potential_energy(Vtilde, measure) -> float:
    """``int V dmu`` for an atom cloud or a mesh density; ``Vtilde`` maps (k, D) points to k values."""
    if isinstance(measure, MeshDensity):
        pts, mass = measure.mesh.centers, measure.cell_masses
    else:
        pts, mass = measure.points, measure.masses
    return float(np.asarray(Vtilde(pts), dtype=float) @ mass)


def interaction_energy(Wtilde, measure) -> float:
    """``int int W(x, y) dmu dmu``; ``Wtilde(xs, ys)`` returns the (k, l) kernel matrix."""
    if isinstance(measure, MeshDensity):
        pts, mass = measure.mesh.centers, measure.cell_masses
    else:
        pts, mass = measure.points, measure.masses
    K = np.asarray(Wtilde(pts, pts), dtype=float)
    return float(mass @ K @ mass)


# ---------------------------------------------------------------------------
# predicates


@dataclass
class ConvexityReport:
    passed: bool
    witness: float | None
    min_second_derivative: float
    max_first_derivative: float

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "witness": self.witness,
            "min_second_derivative": self.min_second_derivative,
            "max_first_derivative": self.max_first_derivative,
        }


def convexity_class_check(spec: EntropySpec, dim: int, lo=1e-6, hi=1e6, points=2001, tol=1e-9) -> ConvexityReport:
    """Is ``h(r) = r^n U(r^-n)`` convex and nonincreasing on a log grid of [lo, hi]?

    Derivatives of h are taken symbolically, then evaluated on the grid.
    """
    n = sp.Integer(int(dim))
    h = sp.expand(_R**n * spec.symbolic.subs(_R, _R ** (-n)))
    h1 = sp.lambdify(_R, sp.diff(h, _R), "numpy")
    h2 = sp.lambdify(_R, sp.diff(h, _R, 2), "numpy")
    r = np.geomspace(lo, hi, points)
    d1 = np.broadcast_to(np.asarray(h1(r), dtype=float), r.shape)
    d2 = np.broadcast_to(np.asarray(h2(r), dtype=float), r.shape)
    bad = (d2 < -tol) | (d1 > tol) | ~np.isfinite(d1) | ~np.isfinite(d2)
    witness = float(r[np.argmax(bad)]) if bad.any() else None
    return ConvexityReport(not bad.any(), witness, float(np.min(d2)), float(np.max(d1)))


def ricci_tensor(spec: geo.ManifoldSpec) -> np.ndarray:
    return spec.ricci_lower_bound * np.eye(spec.dim)


def cd_condition(spec: geo.ManifoldSpec, reference: ReferenceMeasure, N=math.inf, mesh_res=16) -> float:
    """Smallest eigenvalue of ``Ric + Hess V - grad V (x) grad V / (N - n)`` over mesh centers."""
    if reference.kind == "tabulated":
        raise Unsupported("tabulated potentials have no derivatives")
    n = spec.dim
    if not N > n:
        raise ValueError("N must exceed the manifold dimension")
    if reference.kind == "zero":
        return float(np.linalg.eigvalsh(ricci_tensor(spec)).min())
    mesh = build_mesh(spec, mesh_res)
    pts = mesh.centers
    T = ricci_tensor(spec)[None] + reference.hessian(spec, pts)
    if math.isfinite(N):
        g = reference.gradient(spec, pts)
        T = T - np.einsum("ka,kb->kab", g, g) / (N - n)
    return float(np.linalg.eigvalsh(T).min())
