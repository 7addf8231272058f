"""Seeded generators for the experiment and test instances."""
from __future__ import annotations

import numpy as np

from . import geometry as geo
from .barycenter import OmegaSpec
from .measures import DiscreteMeasure, MeshDensity, ReferenceMeasure, build_mesh


def bump_density(mesh, centers, widths, amplitudes, floor=0.1) -> MeshDensity:
    """``floor + sum_k a_k exp(-d(x, c_k)^2 / (2 s_k^2))`` normalized on the mesh."""
    spec = mesh.spec
    X = mesh.centers

    def f(x):
        out = np.full(len(x), float(floor))
        for c, s, a in zip(centers, widths, amplitudes):
            d = geo._dist(spec, x, np.asarray(c, dtype=float)[None, :])
            out += a * np.exp(-(d**2) / (2 * s**2))
        return out

    return MeshDensity.from_function(mesh, f)


def random_bumps(mesh, rng, n_bumps=2, width=(0.08, 0.2), floor=0.1, band=None, around=None) -> MeshDensity:
    """Random smooth density.

    On the sphere ``band`` limits bump latitudes (radians); ``around=(point,
    radius)`` instead draws bump centers uniformly from that geodesic ball.
    """
    spec = mesh.spec
    if around is not None:
        centers = geo.random_points(spec, n_bumps, rng, center=around[0], radius=around[1])
        scale = spec.radius if spec.kind == "sphere" else float(np.min(mesh.cell_sizes * np.asarray(mesh.shape)))
    elif spec.kind == "sphere":
        lim = np.pi / 6 if band is None else band
        lat = rng.uniform(-lim, lim, n_bumps)
        lon = rng.uniform(0, 2 * np.pi, n_bumps)
        centers = spec.radius * np.column_stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)])
        scale = spec.radius
    else:
        centers = geo.random_points(spec, n_bumps, rng)
        scale = float(np.min(mesh.cell_sizes * np.asarray(mesh.shape)))
    widths = rng.uniform(*width, n_bumps) * scale
    amps = rng.uniform(0.5, 1.5, n_bumps)
    return bump_density(mesh, centers, widths, amps, floor)


def quantize_density(md: MeshDensity, quantum: int) -> MeshDensity:
    """Round cell masses to multiples of 1/quantum (largest remainder), keeping total mass 1.

    Transport from ``quantum`` (or any multiple) equal atoms into the result
    then has an integral optimal vertex, so every plan row is map-like.
    """
    scaled = md.cell_masses / md.cell_masses.sum() * quantum
    counts = np.floor(scaled)
    short = int(quantum - counts.sum())
    order = np.argsort(-(scaled - counts), kind="stable")
    counts[order[:short]] += 1
    return MeshDensity.from_masses(md.mesh, counts / quantum)


def _maybe_quantize(md, quantum):
    return md if quantum is None else quantize_density(md, quantum)


def smooth_omega(spec, resolution, m, seed, reference=None, quantum=None, **kw) -> OmegaSpec:
    """m random bump densities with Dirichlet(2) weights; ``kw`` goes to :func:`random_bumps`."""
    rng = np.random.default_rng(seed)
    mesh = build_mesh(spec, resolution, reference or ReferenceMeasure())
    weights = rng.dirichlet(np.full(m, 2.0))
    return OmegaSpec(spec, [(w, _maybe_quantize(random_bumps(mesh, rng, **kw), quantum)) for w in weights])


def quantized_discrete_omega(spec, m, seed, max_atoms=5, quantum=12, spread=None) -> OmegaSpec:
    """m discrete measures with at most ``max_atoms`` atoms whose masses are multiples of 1/quantum."""
    rng = np.random.default_rng(seed)
    measures = []
    for _ in range(m):
        n = int(rng.integers(2, max_atoms + 1))
        counts = 1 + rng.multinomial(quantum - n, np.full(n, 1.0 / n))
        if spec.kind == "torus":
            # keep atoms in a half-period window so no pair is tied across the cut locus
            lo = np.asarray(spec.periods) * 0.25
            pts = lo + rng.random((n, spec.dim)) * np.asarray(spec.periods) * 0.5
        else:
            pts = geo.random_points(spec, n, rng)
        measures.append(DiscreteMeasure(spec, pts, counts / quantum))
    weights = rng.dirichlet(np.ones(m))
    return OmegaSpec(spec, list(zip(weights, measures)))


def random_wave(mesh, rng, amplitude=0.15, max_frequency=1, terms=2) -> MeshDensity:
    """Low-frequency smooth density ``1 + sum a_k cos(<k, x> + phase)``.

    On the sphere the waves are replaced by ``1 + sum a_k <u_k, x> / R`` with
    random unit vectors u_k, the degree-one harmonics.
    """
    spec = mesh.spec
    X = mesh.centers
    a = rng.uniform(0.5, 1.0, terms) * amplitude / terms

    if spec.kind == "sphere":
        U = rng.standard_normal((terms, 3))
        U /= np.linalg.norm(U, axis=1, keepdims=True)

        def f(x):
            return 1.0 + (x / spec.radius) @ U.T @ a
    else:
        lengths = mesh.cell_sizes * np.asarray(mesh.shape)
        ks = rng.integers(-max_frequency, max_frequency + 1, size=(terms, spec.dim))
        ks[np.all(ks == 0, axis=1), 0] = 1
        phases = rng.uniform(0, 2 * np.pi, terms)

        def f(x):
            ang = 2 * np.pi * (x / lengths) @ ks.T + phases
            return 1.0 + np.cos(ang) @ a

    return MeshDensity.from_function(mesh, f)


def wave_omega(spec, resolution, m, seed, reference=None, quantum=None, **kw) -> OmegaSpec:
    rng = np.random.default_rng(seed)
    mesh = build_mesh(spec, resolution, reference or ReferenceMeasure())
    weights = rng.dirichlet(np.full(m, 2.0))
    return OmegaSpec(spec, [(w, _maybe_quantize(random_wave(mesh, rng, **kw), quantum)) for w in weights])
