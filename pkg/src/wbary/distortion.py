"""Barycentric volume-distortion coefficients and the Jacobian inequality check.

For a weighted configuration lam with Karcher mean xbar,

    alpha_lam(y) = det[-D^2_yz c(y, xbar)] / det[sum_i w_i D^2_zz c(x_i, xbar)],

with every Hessian written in orthonormal frames; the frame at xbar is shared
between numerator and denominator so the ratio is frame independent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from . import karcher
from .errors import SingularDenominator
from .measures import DiscreteMeasure, MeshDensity, bin_to_mesh

SINGULAR_TOL = 1e-14


@dataclass(frozen=True)
class DistortionReport:
    alpha: float
    xbar: np.ndarray
    numerator: float
    denominator: float


def _config(lam):
    if isinstance(lam, DiscreteMeasure):
        return karcher.WeightedConfig(lam.points, lam.masses)
    if isinstance(lam, karcher.WeightedConfig):
        return lam
    pts, w = lam
    return karcher.WeightedConfig(pts, w)


def _hessians(spec, p, q, frame_p, method):
    if method == "closed":
        return geo.cost_hessians(spec, p, q, frame_p=frame_p, frame_q=geo.tangent_basis(spec, q))
    if method == "fd":
        return geo.cost_hessians_fd(spec, p, q, frame_p=frame_p, frame_q=geo.tangent_basis(spec, q))
    raise ValueError(f"unknown method {method!r}")


def alpha(spec, lam, y, xbar=None, method: str = "closed") -> DistortionReport:
    """Distortion coefficient of ``lam`` at ``y``.

    ``xbar`` defaults to the (unique) Karcher mean of ``lam``. ``method`` picks
    closed-form or finite-difference cost Hessians.
    """
    cfg = _config(lam)
    pts = geo.validate_point(spec, cfg.points)
    y = geo.validate_point(spec, y)
    if xbar is None:
        xbar = karcher.bc_map(spec, cfg.weights, pts)
    xbar = geo.validate_point(spec, xbar)
    E = geo.tangent_basis(spec, xbar)
    den_mat = np.zeros((spec.dim, spec.dim))
    for w, x in zip(cfg.weights, pts):
        if w > 0:
            den_mat += w * _hessians(spec, xbar, x, E, method).dxx
    den = float(np.linalg.det(den_mat))
    if den <= SINGULAR_TOL:
        raise SingularDenominator(f"averaged Hessian determinant {den:.3e} is not positive")
    Fy = geo.tangent_basis(spec, y)
    if method == "closed":
        mixed = geo.cost_hessians(spec, y, xbar, frame_p=Fy, frame_q=E).dxy_neg
    else:
        mixed = geo.cost_hessians_fd(spec, y, xbar, frame_p=Fy, frame_q=E).dxy_neg
    num = abs(float(np.linalg.det(mixed)))
    return DistortionReport(num / den, xbar, num, den)


def two_point_distortion_oracle(spec, x, y, t, h: float = 1e-4) -> float:
    """Volume distortion of ``x' -> geodesic point at fraction 1-t from x' toward y``.

    This is alpha at x for ``t delta_x + (1-t) delta_y``, computed from a
    central-difference Jacobian of the interpolation map (step ``h``) divided
    by t^n. It never touches the cost Hessians.
    """
    x = geo.validate_point(spec, x)
    y = geo.validate_point(spec, y)
    geo._log(spec, x, y)  # raises CutLocus
    s = 1.0 - t
    xbar = geo.geodesic_point(spec, x, y, s)
    Ex = geo.tangent_basis(spec, x)
    Eb = geo.tangent_basis(spec, xbar)
    n = spec.dim
    J = np.empty((n, n))
    for a in range(n):
        plus = geo.geodesic_point(spec, geo._exp(spec, x, h * Ex[a]), y, s)
        minus = geo.geodesic_point(spec, geo._exp(spec, x, -h * Ex[a]), y, s)
        J[:, a] = Eb @ (geo._log(spec, xbar, plus) - geo._log(spec, xbar, minus)) / (2 * h)
    return abs(float(np.linalg.det(J))) / t**n


def alpha_lower_bound(spec=None, *, ricci=None, diameter=None, dim=None) -> float:
    """Curvature lower bound for alpha.

    1 when Ric >= 0. For Ric >= -k (k > 0) on a manifold of diameter D the
    numerator is at least S_{-k}(D)^{-(n-1)} and the averaged Hessian has
    trace at most n sqrt(k) D / tanh(sqrt(k) D), so

        alpha >= S_{-k}(D)^{-(n-1)} * (sqrt(k) D / tanh(sqrt(k) D))^{-n}.
    """
    K = spec.ricci_lower_bound if ricci is None else ricci
    D = spec.diameter if diameter is None else diameter
    n = spec.dim if dim is None else dim
    if K >= 0:
        return 1.0
    k = -K
    a = math.sqrt(k) * D
    return geo.s_coeff(K, D) ** (-(n - 1)) * (a / math.tanh(a)) ** (-n)


# ---------------------------------------------------------------------------
# Jacobian inequality


@dataclass
class JacobianReport:
    lhs: np.ndarray                 # nan where the atom was skipped
    density_ratio: np.ndarray       # fbar / pointwise density bound, nan where skipped
    slack: float
    checked: int
    skipped_non_map: int
    skipped_zero_density: int
    fraction_ok: float
    density_fraction_ok: float
    alphas: np.ndarray = field(repr=False, default=None)

    @property
    def violation_fraction(self) -> float:
        return 1.0 - self.fraction_ok

    def to_json(self) -> dict:
        def clean(a):
            return [None if not np.isfinite(v) else float(v) for v in a]

        return {
            "slack": self.slack,
            "checked": self.checked,
            "skipped_non_map": self.skipped_non_map,
            "skipped_zero_density": self.skipped_zero_density,
            "fraction_ok": self.fraction_ok,
            "density_fraction_ok": self.density_fraction_ok,
            "max_lhs": float(np.nanmax(self.lhs)) if self.checked else None,
            "lhs": clean(self.lhs),
        }


def jacobian_inequality_check(result, omega, mesh=None, slack: float = 0.05) -> JacobianReport:
    """Pointwise check of ``sum_i w_i alpha^(1/n)(T_i x) (fbar(x) / g_i(T_i x))^(1/n) <= 1``.

    ``fbar`` is the barycenter binned to ``mesh`` (default: the first entry's
    mesh); ``g_i`` are the entry densities. Atoms where some plan row is not
    map-like, or where a target density vanishes, are skipped and counted.
    """
    spec = omega.manifold
    measures = omega.measures
    weights = omega.weights
    if not all(isinstance(m, MeshDensity) for m in measures):
        raise ValueError("every entry must be a MeshDensity")
    mesh = mesh or measures[0].mesh
    X = result.measure.points
    fbar = bin_to_mesh(result.measure, mesh).value_at(X)
    n = spec.dim
    S = len(X)
    maplike = np.all([p.map_like_rows() for p in result.plans], axis=0)
    images = np.stack([p.target.points[p.image_index()] for p in result.plans], axis=1)  # (S, m, D)
    g = np.stack([m.value_at(images[:, i]) for i, m in enumerate(measures)], axis=1)
    positive = np.all(g > 0, axis=1)
    lhs = np.full(S, np.nan)
    ratio = np.full(S, np.nan)
    alphas = np.full((S, len(measures)), np.nan)
    for j in np.flatnonzero(maplike & positive):
        cfg = karcher.WeightedConfig(images[j], weights)
        a = np.array([alpha(spec, cfg, images[j, i], xbar=X[j]).alpha for i in range(len(measures))])
        alphas[j] = a
        s = float(np.sum(weights * a ** (1 / n) * g[j] ** (-1 / n)))
        lhs[j] = fbar[j] ** (1 / n) * s
        ratio[j] = fbar[j] * s**n
    checked = int(np.sum(np.isfinite(lhs)))
    ok = float(np.mean(lhs[np.isfinite(lhs)] <= 1 + slack)) if checked else float("nan")
    ok_density = float(np.mean(ratio[np.isfinite(ratio)] <= 1 + slack)) if checked else float("nan")
    return JacobianReport(
        lhs=lhs,
        density_ratio=ratio,
        slack=slack,
        checked=checked,
        skipped_non_map=int(np.sum(~maplike)),
        skipped_zero_density=int(np.sum(maplike & ~positive)),
        fraction_ok=ok,
        density_fraction_ok=ok_density,
        alphas=alphas,
    )
