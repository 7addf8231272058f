"""Closed-form Riemannian geometry for the three supported compact manifolds.

Points are plain float arrays. Euclidean boxes and flat tori use chart
coordinates (``dim`` entries); spheres use embedding coordinates in
``R^(dim+1)``. Every helper prefixed with an underscore is vectorized over
leading axes; the public functions validate their inputs first.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import CutLocus, InvalidPoint

KINDS = ("box", "torus", "sphere")
_KIND_ALIASES = {
    "euclidean-box": "box",
    "euclidean": "box",
    "flat-torus": "torus",
}

SPHERE_CUT_MARGIN = 1e-8
TORUS_TIE_TOL = 1e-12
SPHERE_NORM_TOL = 1e-10
SMALL_ANGLE = 1e-6


@dataclass(frozen=True)
class ManifoldSpec:
    kind: str
    dim: int
    radius: float = 1.0
    periods: tuple = ()
    bounds: tuple = ()

    def __post_init__(self):
        kind = _KIND_ALIASES.get(self.kind, self.kind)
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise ValueError(f"unknown manifold kind {self.kind!r}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError("dim must be a positive integer")
        object.__setattr__(self, "dim", int(self.dim))
        if kind == "sphere":
            if not self.radius > 0:
                raise ValueError("sphere radius must be positive")
            object.__setattr__(self, "radius", float(self.radius))
        elif kind == "torus":
            periods = tuple(float(p) for p in self.periods)
            if len(periods) == 1 and self.dim > 1:
                periods = periods * self.dim
            if len(periods) != self.dim or min(periods) <= 0:
                raise ValueError("torus needs one positive period per axis")
            object.__setattr__(self, "periods", periods)
        else:
            bounds = []
            for b in self.bounds:
                if np.ndim(b) == 0:
                    bounds.append((0.0, float(b)))
                else:
                    lo, hi = b
                    bounds.append((float(lo), float(hi)))
            if len(bounds) == 1 and self.dim > 1:
                bounds = bounds * self.dim
            if len(bounds) != self.dim or any(hi <= lo for lo, hi in bounds):
                raise ValueError("box needs one (lo, hi) pair with hi > lo per axis")
            object.__setattr__(self, "bounds", tuple(bounds))

    # -- constructors -----------------------------------------------------
    @classmethod
    def sphere(cls, dim=2, radius=1.0):
        return cls("sphere", dim, radius=radius)

    @classmethod
    def torus(cls, periods, dim=None):
        periods = tuple(np.atleast_1d(periods).tolist())
        return cls("torus", dim or len(periods), periods=periods)

    @classmethod
    def box(cls, bounds, dim=None):
        bounds = [b if np.ndim(b) else (0.0, b) for b in bounds]
        return cls("box", dim or len(bounds), bounds=tuple(bounds))

    # -- derived data -----------------------------------------------------
    @property
    def ambient_dim(self) -> int:
        return self.dim + 1 if self.kind == "sphere" else self.dim

    @property
    def is_flat(self) -> bool:
        return self.kind != "sphere"

    @property
    def ricci_lower_bound(self) -> float:
        if self.kind == "sphere":
            return (self.dim - 1) / self.radius**2
        return 0.0

    @property
    def sectional_lower_bound(self) -> float:
        return 1.0 / self.radius**2 if self.kind == "sphere" else 0.0

    @property
    def diameter(self) -> float:
        if self.kind == "sphere":
            return math.pi * self.radius
        if self.kind == "torus":
            return 0.5 * math.sqrt(sum(p * p for p in self.periods))
        return math.sqrt(sum((hi - lo) ** 2 for lo, hi in self.bounds))

    @property
    def volume(self) -> float:
        if self.kind == "sphere":
            n = self.dim
            return 2 * math.pi ** ((n + 1) / 2) / math.gamma((n + 1) / 2) * self.radius**n
        if self.kind == "torus":
            return float(np.prod(self.periods))
        return float(np.prod([hi - lo for lo, hi in self.bounds]))

    @property
    def injectivity_radius(self) -> float:
        if self.kind == "sphere":
            return math.pi * self.radius
        if self.kind == "torus":
            return 0.5 * min(self.periods)
        return math.inf

    # -- serialization ----------------------------------------------------
    def to_json(self) -> dict:
        out = {"kind": self.kind, "dim": self.dim}
        if self.kind == "sphere":
            out["radius"] = self.radius
        elif self.kind == "torus":
            out["periods"] = list(self.periods)
        else:
            out["bounds"] = [list(b) for b in self.bounds]
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ManifoldSpec":
        kind = _KIND_ALIASES.get(obj["kind"], obj["kind"])
        if kind == "sphere":
            return cls("sphere", obj.get("dim", 2), radius=obj.get("radius", 1.0))
        if kind == "torus":
            periods = obj["periods"]
            periods = [periods] if np.ndim(periods) == 0 else periods
            return cls("torus", obj.get("dim", len(periods)), periods=tuple(periods))
        bounds = obj["bounds"]
        bounds = tuple(tuple(b) if np.ndim(b) else b for b in bounds)
        return cls("box", obj.get("dim", len(bounds)), bounds=bounds)


class Tangent(NamedTuple):
    base: np.ndarray
    vec: np.ndarray


class CostHessians(NamedTuple):
    dxx: np.ndarray
    dxy_neg: np.ndarray


# ---------------------------------------------------------------------------
# validation


def validate_point(spec: ManifoldSpec, p) -> np.ndarray:
    """Return a canonical float copy of ``p`` or raise InvalidPoint."""
    p = np.array(p, dtype=float)
    if p.shape[-1:] != (spec.ambient_dim,):
        raise InvalidPoint(f"expected {spec.ambient_dim} coordinates, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise InvalidPoint("non-finite coordinates")
    if spec.kind == "sphere":
        norms = np.linalg.norm(p, axis=-1, keepdims=True)
        if np.any(np.abs(norms - spec.radius) > SPHERE_NORM_TOL * max(1.0, spec.radius)):
            raise InvalidPoint("point is off the sphere")
        return p * (spec.radius / norms)
    if spec.kind == "torus":
        return _wrap(spec, p)
    lo = np.array([b[0] for b in spec.bounds])
    hi = np.array([b[1] for b in spec.bounds])
    slack = 1e-12 * (hi - lo)
    if np.any(p < lo - slack) or np.any(p > hi + slack):
        raise InvalidPoint("point lies outside the box")
    return p


def in_box(spec: ManifoldSpec, p) -> np.ndarray:
    lo = np.array([b[0] for b in spec.bounds])
    hi = np.array([b[1] for b in spec.bounds])
    slack = 1e-12 * (hi - lo)
    p = np.asarray(p, dtype=float)
    return np.all((p >= lo - slack) & (p <= hi + slack), axis=-1)


def _wrap(spec, p):
    per = np.asarray(spec.periods)
    out = np.mod(p, per)
    # mod can return exactly `per` for tiny negative inputs
    return np.where(out >= per, out - per, out)


# ---------------------------------------------------------------------------
# vectorized kernels


def _sphere_parts(spec, p, q):
    r = spec.radius
    dot = np.sum(p * q, axis=-1, keepdims=True)
    q_perp = q - (dot / r**2) * p
    # identical points: remove the roundoff left in q_perp so d(p, p) == 0 exactly
    q_perp = np.where(np.all(p == q, axis=-1, keepdims=True), 0.0, q_perp)
    s = np.linalg.norm(q_perp, axis=-1, keepdims=True)
    theta = np.arctan2(s / r, dot / r**2)
    return theta, q_perp, s


def _dist(spec, p, q):
    if spec.kind == "sphere":
        theta, _, _ = _sphere_parts(spec, p, q)
        return spec.radius * theta[..., 0]
    return np.linalg.norm(_log(spec, p, q, check=False), axis=-1)


def _log(spec, p, q, check=True):
    if spec.kind == "sphere":
        r = spec.radius
        theta, q_perp, s = _sphere_parts(spec, p, q)
        if check and np.any(r * theta > math.pi * r - SPHERE_CUT_MARGIN):
            raise CutLocus("antipodal pair: log map undefined")
        safe = np.where(s > 1e-300, s, 1.0)
        scale = np.where(s > 1e-300, r * theta / safe, 1.0)
        return q_perp * scale
    diff = q - p
    if spec.kind == "torus":
        per = np.asarray(spec.periods)
        diff = diff - per * np.round(diff / per)
        if check and np.any(np.abs(np.abs(diff) - per / 2) <= TORUS_TIE_TOL):
            raise CutLocus("torus tie: two shortest wraps of equal length")
    return diff


def _exp(spec, p, v):
    if spec.kind == "sphere":
        r = spec.radius
        s = np.linalg.norm(v, axis=-1, keepdims=True)
        theta = s / r
        safe = np.where(s > 0, s, 1.0)
        out = np.cos(theta) * p + np.where(s > 0, r * np.sin(theta) / safe, 0.0) * v
        return out * (r / np.linalg.norm(out, axis=-1, keepdims=True))
    if spec.kind == "torus":
        return _wrap(spec, p + v)
    return p + v


def _project_tangent(spec, p, v):
    if spec.kind != "sphere":
        return v
    return v - np.sum(v * p, axis=-1, keepdims=True) / spec.radius**2 * p


# ---------------------------------------------------------------------------
# public operations


def distance(spec: ManifoldSpec, p, q) -> float:
    p, q = validate_point(spec, p), validate_point(spec, q)
    return float(_dist(spec, p, q))


def log_map(spec: ManifoldSpec, p, q) -> Tangent:
    p, q = validate_point(spec, p), validate_point(spec, q)
    return Tangent(p, _log(spec, p, q))


def exp_map(spec: ManifoldSpec, t: Tangent) -> np.ndarray:
    base = validate_point(spec, t.base)
    vec = np.asarray(t.vec, dtype=float)
    if spec.kind == "sphere" and abs(float(vec @ base)) > 1e-12 * max(1.0, spec.radius) * max(1.0, float(np.linalg.norm(vec))):
        raise InvalidPoint("tangent vector is not orthogonal to its base point")
    return _exp(spec, base, vec)


def cost(spec: ManifoldSpec, p, q) -> float:
    return 0.5 * distance(spec, p, q) ** 2


def cost_matrix(spec: ManifoldSpec, xs, ys) -> np.ndarray:
    """Pairwise ``c = d^2/2`` between rows of ``xs`` and ``ys``."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    return 0.5 * _dist(spec, xs[:, None, :], ys[None, :, :]) ** 2


def s_coeff(K: float, d: float) -> float:
    if d == 0:
        return 1.0
    if K > 0:
        a = math.sqrt(K) * d
        return math.sin(a) / a
    if K < 0:
        a = math.sqrt(-K) * d
        return math.sinh(a) / a
    return 1.0


def expcon_lower_bound(spec: ManifoldSpec, d: float) -> float:
    """Lower bound on ``det(-D^2_xy c)`` at distance ``d``.

    The comparison coefficient uses the per-direction curvature K/(n-1)
    (identical to K on surfaces); with the raw Ricci bound the bound would
    fail on spheres of dimension >= 3.
    """
    n = spec.dim
    if n == 1:
        return 1.0
    return s_coeff(spec.ricci_lower_bound / (n - 1), d) ** (-(n - 1))


def tangent_basis(spec: ManifoldSpec, p, first=None) -> np.ndarray:
    """Orthonormal basis of T_p as rows (n x ambient); ``first`` is placed first if nonzero."""
    p = np.asarray(p, dtype=float)
    n, D = spec.dim, spec.ambient_dim
    seeds = []
    if first is not None and np.linalg.norm(first) > 0:
        seeds.append(np.asarray(first, dtype=float))
    seeds.extend(np.eye(D))
    basis = []
    against = [p / np.linalg.norm(p)] if spec.kind == "sphere" else []
    for v in seeds:
        w = v.copy()
        for _ in range(2):
            for b in against + basis:
                w = w - (w @ b) * b
        nrm = np.linalg.norm(w)
        if nrm > 1e-8:
            basis.append(w / nrm)
        if len(basis) == n:
            break
    return np.array(basis)


def geodesic_frames(spec: ManifoldSpec, p, q):
    """Orthonormal frames at p and q related by parallel transport along the geodesic.

    The first row of each frame is the unit velocity of the geodesic from p to q
    (when p != q).
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    v = _log(spec, p, q)
    if spec.is_flat:
        E = tangent_basis(spec, p, v)
        return E, E.copy()
    Ep = tangent_basis(spec, p, v)
    if np.linalg.norm(v) == 0:
        return Ep, Ep.copy()
    eq = -_log(spec, q, p)
    eq = eq / np.linalg.norm(eq)
    Eq = Ep.copy()
    Eq[0] = eq
    return Ep, Eq


def cost_hessians(spec: ManifoldSpec, p, q, frame_p=None, frame_q=None) -> CostHessians:
    """Hessians of the cost ``c = d^2/2`` in normal coordinates.

    ``dxx`` is the Hessian of ``c(., q)`` at p; ``dxy_neg`` is ``-D^2_xy c``.
    Frames default to the parallel pair of :func:`geodesic_frames`, in which
    both matrices are diagonal.
    """
    p, q = validate_point(spec, p), validate_point(spec, q)
    v = _log(spec, p, q)
    if frame_p is None or frame_q is None:
        fp, fq = geodesic_frames(spec, p, q)
        frame_p = fp if frame_p is None else frame_p
        frame_q = fq if frame_q is None else frame_q
    frame_p = np.asarray(frame_p, dtype=float)
    frame_q = np.asarray(frame_q, dtype=float)
    if spec.is_flat:
        return CostHessians(frame_p @ frame_p.T, frame_p @ frame_q.T)
    r = spec.radius
    d = float(np.linalg.norm(v))
    theta = d / r
    if theta < SMALL_ANGLE:
        # the geodesic direction is numerically meaningless here; every
        # Hessian factor is 1 + O(theta^2), so use parallel transport of the q-frame
        transported = frame_q - np.outer(frame_q @ p, p + q) / (r**2 + float(p @ q))
        return CostHessians(frame_p @ frame_p.T, frame_p @ transported.T)
    trans_xx = theta / math.tan(theta)
    trans_xy = theta / math.sin(theta)
    ep = v / d
    eq = -_log(spec, q, p)
    eq = eq / np.linalg.norm(eq)
    a = frame_p @ ep
    dxx = trans_xx * np.eye(spec.dim) + (1.0 - trans_xx) * np.outer(a, a)
    # transverse directions: orthogonal complement of span(p, q) in the ambient space
    P_perp = np.eye(spec.ambient_dim) - np.outer(p, p) / r**2 - np.outer(ep, ep)
    dxy = np.outer(frame_p @ ep, frame_q @ eq) + trans_xy * frame_p @ P_perp @ frame_q.T
    return CostHessians(dxx, dxy)


def cost_hessians_fd(spec: ManifoldSpec, p, q, h=1e-4, frame_p=None, frame_q=None) -> CostHessians:
    """Central finite-difference Hessians of the cost through exponential coordinates."""
    p, q = validate_point(spec, p), validate_point(spec, q)
    if frame_p is None or frame_q is None:
        fp, fq = geodesic_frames(spec, p, q)
        frame_p = fp if frame_p is None else frame_p
        frame_q = fq if frame_q is None else frame_q
    n = spec.dim

    def c(u, w):
        x = _exp(spec, p, u @ frame_p)
        y = _exp(spec, q, w @ frame_q)
        return 0.5 * _dist(spec, x, y) ** 2

    z = np.zeros(n)
    I = np.eye(n)
    c0 = c(z, z)
    dxx = np.empty((n, n))
    for a in range(n):
        dxx[a, a] = (c(h * I[a], z) - 2 * c0 + c(-h * I[a], z)) / h**2
        for b in range(a + 1, n):
            val = (c(h * (I[a] + I[b]), z) - c(h * (I[a] - I[b]), z)
                   - c(h * (I[b] - I[a]), z) + c(-h * (I[a] + I[b]), z)) / (4 * h**2)
            dxx[a, b] = dxx[b, a] = val
    dxy = np.empty((n, n))
    for a in range(n):
        for b in range(n):
            val = (c(h * I[a], h * I[b]) - c(h * I[a], -h * I[b])
                   - c(-h * I[a], h * I[b]) + c(-h * I[a], -h * I[b])) / (4 * h**2)
            dxy[a, b] = -val
    return CostHessians(dxx, dxy)


def geodesic_point(spec: ManifoldSpec, p, q, s):
    """Point at fraction ``s`` along the minimizing geodesic from p to q."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return _exp(spec, p, s * _log(spec, p, q))


def random_points(spec: ManifoldSpec, size, rng, center=None, radius=None) -> np.ndarray:
    """Sample points uniformly (or uniformly in a geodesic ball when ``radius`` is given)."""
    rng = np.random.default_rng(rng)
    D = spec.ambient_dim
    if radius is None:
        if spec.kind == "sphere":
            x = rng.standard_normal((size, D))
            return spec.radius * x / np.linalg.norm(x, axis=1, keepdims=True)
        if spec.kind == "torus":
            return rng.random((size, D)) * np.asarray(spec.periods)
        lo = np.array([b[0] for b in spec.bounds])
        hi = np.array([b[1] for b in spec.bounds])
        return lo + rng.random((size, D)) * (hi - lo)
    center = np.asarray(center, dtype=float)
    n = spec.dim
    basis = tangent_basis(spec, center)
    dirs = rng.standard_normal((size, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    rad = radius * rng.random(size) ** (1.0 / n)
    vecs = (dirs * rad[:, None]) @ basis
    return _exp(spec, np.broadcast_to(center, vecs.shape), vecs)
