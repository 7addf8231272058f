"""Atom clouds, meshes, mesh densities and reference measures."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .errors import EmptySet, InvalidPoint, Unsupported

MASS_TOL = 1e-12
DENSITY_TOL = 1e-6


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# discrete measures


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    spec: geo.ManifoldSpec
    points: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        masses = np.atleast_1d(np.asarray(self.masses, dtype=float))
        if pts.shape[0] != masses.shape[0]:
            raise ValueError("points and masses differ in length")
        if masses.size == 0:
            raise ValueError("a measure needs at least one atom")
        if np.any(masses <= 0) or not np.all(np.isfinite(masses)):
            raise ValueError("atom masses must be positive")
        if abs(masses.sum() - 1.0) > MASS_TOL * max(1, masses.size):
            raise ValueError(f"masses sum to {masses.sum()!r}, not 1")
        object.__setattr__(self, "points", _frozen(geo.validate_point(self.spec, pts)))
        object.__setattr__(self, "masses", _frozen(masses))

    def __len__(self):
        return self.masses.size

    @classmethod
    def dirac(cls, spec, point):
        return cls(spec, np.atleast_2d(point), [1.0])

    @classmethod
    def uniform(cls, spec, points):
        pts = np.atleast_2d(points)
        return cls(spec, pts, np.full(len(pts), 1.0 / len(pts)))

    @classmethod
    def normalized(cls, spec, points, masses):
        """Build a measure from nonnegative weights, dropping zeros and renormalizing."""
        masses = np.asarray(masses, dtype=float)
        if np.any(masses < 0):
            raise ValueError("negative mass")
        keep = masses > 0
        if not keep.any():
            raise ValueError("all masses are zero")
        m = masses[keep]
        return cls(spec, np.atleast_2d(points)[keep], m / m.sum())

    def to_json(self) -> dict:
        return {"atoms": [{"coords": p.tolist(), "mass": float(m)} for p, m in zip(self.points, self.masses)]}


# ---------------------------------------------------------------------------
# reference measures


@dataclass(frozen=True, eq=False)
class ReferenceMeasure:
    """``dnu = exp(-V) dvol`` with V zero, Gaussian, or tabulated on a mesh."""

    kind: str = "zero"
    center: tuple = ()
    variance: float = 1.0
    table: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("zero", "gaussian", "tabulated"):
            raise ValueError(f"unknown reference kind {self.kind!r}")
        if self.kind == "gaussian" and not self.variance > 0:
            raise ValueError("gaussian variance must be positive")
        if self.kind == "tabulated":
            if self.table is None or not np.all(np.isfinite(self.table)):
                raise ValueError("tabulated potential must be finite on every cell")
            object.__setattr__(self, "table", _frozen(self.table))

    @classmethod
    def gaussian(cls, center, variance):
        return cls("gaussian", tuple(np.atleast_1d(center).astype(float).tolist()), float(variance))

    def potential(self, spec, points) -> np.ndarray:
        points = np.atleast_2d(points)
        if self.kind == "zero":
            return np.zeros(len(points))
        if self.kind == "gaussian":
            if spec.kind == "sphere":
                raise Unsupported("non-uniform reference measures are only supported on flat manifolds")
            diff = geo._log(spec, np.asarray(self.center), points, check=False)
            return np.sum(diff**2, axis=-1) / (2 * self.variance)
        raise Unsupported("tabulated potentials are only defined on their mesh cells")

    def gradient(self, spec, points) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros((len(points), spec.dim))
        if self.kind == "gaussian":
            return geo._log(spec, np.asarray(self.center), np.atleast_2d(points), check=False) / self.variance
        raise Unsupported("tabulated potential has no derivatives")

    def hessian(self, spec, points) -> np.ndarray:
        points = np.atleast_2d(points)
        if self.kind == "zero":
            return np.zeros((len(points), spec.dim, spec.dim))
        if self.kind == "gaussian":
            return np.broadcast_to(np.eye(spec.dim) / self.variance, (len(points), spec.dim, spec.dim)).copy()
        raise Unsupported("tabulated potential has no derivatives")

    def to_json(self) -> dict:
        if self.kind == "zero":
            return {"V": "zero"}
        if self.kind == "gaussian":
            return {"V": "gaussian", "center": list(self.center), "variance": self.variance}
        return {"V": "tabulated", "values": self.table.tolist()}

    @classmethod
    def from_json(cls, obj) -> "ReferenceMeasure":
        if obj is None:
            return cls()
        kind = obj.get("V", "zero")
        if kind == "gaussian":
            return cls.gaussian(obj["center"], obj["variance"])
        if kind == "tabulated":
            return cls("tabulated", table=np.asarray(obj["values"], dtype=float))
        return cls()


# ---------------------------------------------------------------------------
# meshes


@dataclass(frozen=True, eq=False)
class Mesh:
    """Cell decomposition of a manifold.

    ``volumes`` holds reference-measure masses of the cells; ``geo_volumes``
    the Riemannian volumes. They coincide when the reference is ``vol``.
    """

    spec: geo.ManifoldSpec
    shape: tuple
    centers: np.ndarray
    geo_volumes: np.ndarray
    volumes: np.ndarray
    reference: ReferenceMeasure = field(default_factory=ReferenceMeasure)

    def __len__(self):
        return self.volumes.size

    @property
    def resolution(self):
        return self.shape

    @property
    def cell_sizes(self) -> np.ndarray:
        """Edge lengths per axis for flat meshes."""
        if self.spec.kind == "sphere":
            raise Unsupported("sphere meshes have no uniform edge lengths")
        return np.asarray(_axis_lengths(self.spec)) / np.asarray(self.shape)

    @property
    def cell_diameter(self) -> float:
        """Upper bound on the diameter of any cell."""
        if self.spec.kind == "sphere":
            r = self.spec.radius
            n_lat, n_lon = self.shape
            dlat = math.pi / n_lat
            dlon = 2 * math.pi / n_lon
            # meridian side plus the longest parallel side
            return r * (dlat + dlon)
        return float(np.linalg.norm(self.cell_sizes))

    def locate(self, points) -> np.ndarray:
        """Cell index of every point; -1 for points outside the mesh."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        spec = self.spec
        if spec.kind == "sphere":
            n_lat, n_lon = self.shape
            r = spec.radius
            z = np.clip(pts[:, 2] / r, -1.0, 1.0)
            lat = np.arcsin(z)
            lon = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2 * math.pi)
            i = np.clip(np.floor((lat + math.pi / 2) / (math.pi / n_lat)).astype(int), 0, n_lat - 1)
            j = np.floor(lon / (2 * math.pi / n_lon)).astype(int) % n_lon
            return i * n_lon + j
        lo = np.array([b[0] for b in _axis_bounds(spec)])
        sizes = self.cell_sizes
        rel = (pts - lo) / sizes
        if spec.kind == "torus":
            rel = np.mod(rel, self.shape)
        idx = np.floor(rel).astype(int)
        shape = np.asarray(self.shape)
        if spec.kind == "box":
            # points exactly on the upper boundary belong to the last cell
            on_edge = np.isclose(rel, shape, rtol=0, atol=1e-9)
            idx = np.where(on_edge, shape - 1, idx)
        idx = np.minimum(idx, shape - 1) if spec.kind == "torus" else idx
        outside = np.any((idx < 0) | (idx >= shape), axis=1)
        flat = np.ravel_multi_index(tuple(np.clip(idx, 0, shape - 1).T), self.shape)
        return np.where(outside, -1, flat)

    def neighbors(self, index: int) -> np.ndarray:
        """Indices of the one-ring of cells around ``index`` (including itself)."""
        if self.spec.kind == "sphere":
            n_lat, n_lon = self.shape
            i, j = divmod(int(index), n_lon)
            out = set()
            for ii in range(max(i - 1, 0), min(i + 2, n_lat)):
                if ii in (0, n_lat - 1):
                    # polar bands all meet at the pole
                    out.update(ii * n_lon + jj for jj in range(n_lon))
                else:
                    out.update(ii * n_lon + (j + dj) % n_lon for dj in (-1, 0, 1))
            return np.array(sorted(out))
        idx = np.array(np.unravel_index(int(index), self.shape))
        shape = np.asarray(self.shape)
        out = set()
        for off in np.ndindex(*([3] * len(self.shape))):
            k = idx + np.asarray(off) - 1
            if self.spec.kind == "torus":
                k = np.mod(k, shape)
            elif np.any((k < 0) | (k >= shape)):
                continue
            out.add(int(np.ravel_multi_index(tuple(k), self.shape)))
        return np.array(sorted(out))

    def sample(self, masses, size, rng) -> np.ndarray:
        """Draw points from the piecewise-constant density with the given cell masses."""
        rng = np.random.default_rng(rng)
        masses = np.asarray(masses, dtype=float)
        cells = rng.choice(len(self), size=size, p=masses / masses.sum())
        spec = self.spec
        if spec.kind == "sphere":
            n_lat, n_lon = self.shape
            i, j = np.divmod(cells, n_lon)
            lat0 = -math.pi / 2 + i * math.pi / n_lat
            lat1 = lat0 + math.pi / n_lat
            # uniform in area: sin(latitude) is uniform within a band
            zs = np.sin(lat0) + rng.random(size) * (np.sin(lat1) - np.sin(lat0))
            lon = (j + rng.random(size)) * 2 * math.pi / n_lon
            rho = np.sqrt(np.clip(1 - zs**2, 0, None))
            return spec.radius * np.column_stack([rho * np.cos(lon), rho * np.sin(lon), zs])
        lo = np.array([b[0] for b in _axis_bounds(spec)])
        idx = np.array(np.unravel_index(cells, self.shape)).T
        pts = lo + (idx + rng.random(idx.shape)) * self.cell_sizes
        return geo.validate_point(spec, pts) if spec.kind == "torus" else pts


def _axis_bounds(spec):
    if spec.kind == "torus":
        return [(0.0, p) for p in spec.periods]
    return list(spec.bounds)


def _axis_lengths(spec):
    return [hi - lo for lo, hi in _axis_bounds(spec)]


def build_mesh(spec: geo.ManifoldSpec, resolution, reference: ReferenceMeasure | None = None) -> Mesh:
    """Uniform grid (box/torus) or latitude-longitude grid with exact band areas (2-sphere).

    An integer sphere resolution R means R latitude bands by 2R longitude sectors.
    """
    reference = reference or ReferenceMeasure()
    if spec.kind == "sphere":
        if spec.dim != 2:
            raise Unsupported("sphere meshes are only available in dimension 2")
        if reference.kind == "gaussian":
            raise Unsupported("non-uniform reference measures are only supported on flat manifolds")
        shape = tuple(resolution) if np.ndim(resolution) else (int(resolution), 2 * int(resolution))
        n_lat, n_lon = shape
        if min(shape) < 2:
            raise ValueError("resolution must be at least 2")
        r = spec.radius
        edges = -math.pi / 2 + np.arange(n_lat + 1) * math.pi / n_lat
        band = r**2 * (2 * math.pi / n_lon) * (np.sin(edges[1:]) - np.sin(edges[:-1]))
        mid_lat = 0.5 * (edges[1:] + edges[:-1])
        mid_lon = (np.arange(n_lon) + 0.5) * 2 * math.pi / n_lon
        LAT, LON = np.meshgrid(mid_lat, mid_lon, indexing="ij")
        centers = r * np.stack([np.cos(LAT) * np.cos(LON), np.cos(LAT) * np.sin(LON), np.sin(LAT)], -1).reshape(-1, 3)
        geo_vol = np.repeat(band, n_lon)
    else:
        shape = tuple(int(x) for x in np.broadcast_to(resolution, (spec.dim,)))
        if min(shape) < 2:
            raise ValueError("resolution must be at least 2")
        bounds = _axis_bounds(spec)
        axes = [lo + (np.arange(k) + 0.5) * (hi - lo) / k for (lo, hi), k in zip(bounds, shape)]
        centers = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, spec.dim)
        cell = float(np.prod([(hi - lo) / k for (lo, hi), k in zip(bounds, shape)]))
        geo_vol = np.full(len(centers), cell)
    if reference.kind == "zero":
        vols = geo_vol.copy()
    elif reference.kind == "tabulated":
        if reference.table.shape != (len(centers),):
            raise ValueError("tabulated potential does not match the mesh")
        vols = geo_vol * np.exp(-reference.table)
    else:
        vols = geo_vol * np.exp(-reference.potential(spec, centers))
    return Mesh(spec, shape, _frozen(centers), _frozen(geo_vol), _frozen(vols), reference)


# ---------------------------------------------------------------------------
# mesh densities


@dataclass(frozen=True, eq=False)
class MeshDensity:
    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (len(self.mesh),):
            raise ValueError("one density value per cell is required")
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise ValueError("densities must be finite and nonnegative")
        total = float(vals @ self.mesh.volumes)
        if abs(total - 1.0) > DENSITY_TOL:
            raise ValueError(f"density integrates to {total!r}, not 1")
        object.__setattr__(self, "values", _frozen(vals))

    @property
    def spec(self):
        return self.mesh.spec

    @property
    def cell_masses(self) -> np.ndarray:
        return self.values * self.mesh.volumes

    def value_at(self, points) -> np.ndarray:
        idx = self.mesh.locate(points)
        if np.any(idx < 0):
            raise InvalidPoint("point outside the mesh")
        return self.values[idx]

    @classmethod
    def from_masses(cls, mesh, masses):
        masses = np.asarray(masses, dtype=float)
        return cls(mesh, masses / masses.sum() / mesh.volumes)

    @classmethod
    def from_function(cls, mesh, func):
        """Tabulate a nonnegative function at cell centers and normalize it against the mesh."""
        vals = np.asarray(func(mesh.centers), dtype=float)
        if np.any(vals < 0):
            raise ValueError("density function is negative somewhere")
        return cls(mesh, vals / float(vals @ mesh.volumes))

    def to_json(self) -> dict:
        res = list(self.mesh.shape)
        return {"mesh_density": {"resolution": res if len(res) > 1 else res[0], "values": self.values.tolist()}}


def uniform_on_set(mesh: Mesh, indicator) -> MeshDensity:
    ind = np.asarray(indicator, dtype=bool)
    if ind.shape != (len(mesh),):
        raise ValueError("indicator must have one entry per cell")
    nu_x = float(mesh.volumes[ind].sum())
    if not ind.any() or nu_x <= 0:
        raise EmptySet("selected set has zero reference measure")
    return MeshDensity(mesh, np.where(ind, 1.0 / nu_x, 0.0))


def to_discrete(md: MeshDensity) -> DiscreteMeasure:
    """Atom at each cell center carrying that cell's mass; empty cells are dropped."""
    return DiscreteMeasure.normalized(md.spec, md.mesh.centers, md.cell_masses)


def ess_sup(md: MeshDensity) -> float:
    return float(md.values.max())


def bin_to_mesh(dm: DiscreteMeasure, mesh: Mesh) -> MeshDensity:
    idx = mesh.locate(dm.points)
    if np.any(idx < 0):
        raise InvalidPoint("atom lies outside every mesh cell")
    cell_mass = np.bincount(idx, weights=dm.masses, minlength=len(mesh))
    return MeshDensity(mesh, cell_mass / mesh.volumes)


def resample(md: MeshDensity, mesh: Mesh) -> MeshDensity:
    """Piecewise-constant transfer of a density onto another mesh, renormalized.

    Onto a coarser mesh the cell masses are summed by the target cell holding
    each source center; otherwise values are looked up at target centers.
    """
    if mesh is md.mesh:
        return md
    if len(mesh) < len(md.mesh):
        masses = np.bincount(mesh.locate(md.mesh.centers), weights=md.cell_masses, minlength=len(mesh))
        return MeshDensity.from_masses(mesh, masses)
    vals = md.values[md.mesh.locate(mesh.centers)]
    masses = vals * mesh.volumes
    if masses.sum() <= 0:
        raise EmptySet("density vanishes on the target mesh")
    return MeshDensity.from_masses(mesh, masses)


def write_density_csv(md: MeshDensity, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        D = md.spec.ambient_dim
        w.writerow(["cell_index"] + [f"x{k}" for k in range(D)] + ["volume", "value"])
        for k, (c, v, f) in enumerate(zip(md.mesh.centers, md.mesh.volumes, md.values)):
            w.writerow([k, *(repr(float(x)) for x in c), repr(float(v)), repr(float(f))])


def measure_from_json(obj: dict, spec: geo.ManifoldSpec, reference: ReferenceMeasure | None = None):
    if "atoms" in obj:
        pts = [a["coords"] for a in obj["atoms"]]
        masses = [a["mass"] for a in obj["atoms"]]
        return DiscreteMeasure(spec, pts, masses)
    if "mesh_density" in obj:
        body = obj["mesh_density"]
        mesh = build_mesh(spec, body["resolution"], reference)
        return MeshDensity(mesh, body["values"])
    raise ValueError("measure JSON needs an 'atoms' or 'mesh_density' key")
