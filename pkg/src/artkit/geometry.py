"""Analytic SDFs, marching cubes, meshes, voxel grids and chamfer distance.

Fields are callables mapping an (n, 3) array of points to n signed values,
negative inside.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from skimage import measure

Field = Callable[[np.ndarray], np.ndarray]


# -- analytic primitives ----------------------------------------------------

def sphere(radius: float, center=(0.0, 0.0, 0.0)) -> Field:
    c = np.asarray(center, dtype=np.float64)
    return lambda p: np.linalg.norm(p - c, axis=-1) - radius


def rounded_box(half, radius: float = 0.0, center=(0.0, 0.0, 0.0)) -> Field:
    """Exact SDF of a box with half-extents ``half`` and edge rounding ``radius``."""
    h = np.asarray(half, dtype=np.float64) - radius
    c = np.asarray(center, dtype=np.float64)

    def f(p):
        q = np.abs(p - c) - h
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside - radius
    return f


def box(half, center=(0.0, 0.0, 0.0)) -> Field:
    return rounded_box(half, 0.0, center)


def cylinder(radius: float, half_height: float, center=(0.0, 0.0, 0.0)) -> Field:
    """Exact SDF of a z-aligned capped cylinder."""
    c = np.asarray(center, dtype=np.float64)

    def f(p):
        q = p - c
        d = np.stack([np.hypot(q[..., 0], q[..., 1]) - radius, np.abs(q[..., 2]) - half_height], axis=-1)
        return np.minimum(d.max(axis=-1), 0.0) + np.linalg.norm(np.maximum(d, 0.0), axis=-1)
    return f


def union(*fields: Field) -> Field:
    return lambda p: np.min([f(p) for f in fields], axis=0)


def intersection(*fields: Field) -> Field:
    return lambda p: np.max([f(p) for f in fields], axis=0)


def difference(a: Field, b: Field) -> Field:
    """a minus b; a distance bound (exact outside the carved region)."""
    return lambda p: np.maximum(a(p), -b(p))


def transformed(field: Field, T: np.ndarray) -> Field:
    """Field of the shape moved by rigid transform ``T``."""
    Tinv = np.linalg.inv(T)
    return lambda p: field(p @ Tinv[:3, :3].T + Tinv[:3, 3])


def recipe_field(recipe: Mapping[str, Any]) -> Field:
    """Build a field from a JSON-able CSG recipe.

    Kinds: ``box`` (half, round, center), ``cylinder`` (radius, half_height,
    center), ``sphere`` (radius, center), ``union`` (parts), ``difference``
    (a, b).
    """
    kind = recipe["kind"]
    center = recipe.get("center", (0.0, 0.0, 0.0))
    if kind == "box":
        return rounded_box(recipe["half"], recipe.get("round", 0.0), center)
    if kind == "cylinder":
        return cylinder(recipe["radius"], recipe["half_height"], center)
    if kind == "sphere":
        return sphere(recipe["radius"], center)
    if kind == "union":
        return union(*[recipe_field(r) for r in recipe["parts"]])
    if kind == "difference":
        return difference(recipe_field(recipe["a"]), recipe_field(recipe["b"]))
    raise ValueError(f"unknown recipe kind {kind!r}")


class GridField:
    """Trilinear lookup into samples on a regular lattice spanning [lo, hi]."""

    def __init__(self, values: np.ndarray, lo, hi, outside: float = 1.0) -> None:
        self.values = np.asarray(values, dtype=np.float64)
        self.lo = np.asarray(lo, dtype=np.float64) * np.ones(3)
        self.hi = np.asarray(hi, dtype=np.float64) * np.ones(3)
        self.outside = outside

    def __call__(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        n = np.array(self.values.shape, dtype=np.float64)
        idx = (p - self.lo) / (self.hi - self.lo) * (n - 1)
        return ndimage.map_coordinates(self.values, idx.T.reshape(3, -1), order=1,
                                       mode="constant", cval=self.outside).reshape(p.shape[:-1])


# -- meshes -----------------------------------------------------------------

@dataclass
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self) -> None:
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)

    @classmethod
    def empty(cls) -> "Mesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=-1)

    def area(self) -> float:
        return float(self.triangle_areas().sum())

    def signed_volume(self) -> float:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    def transformed(self, T: np.ndarray) -> "Mesh":
        return Mesh(self.vertices @ T[:3, :3].T + T[:3, 3], self.triangles.copy())

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def merge_meshes(meshes: Sequence[Mesh]) -> Mesh:
    verts, tris, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        offset += len(m.vertices)
    if not verts:
        return Mesh.empty()
    return Mesh(np.concatenate(verts), np.concatenate(tris))


def cleanup(mesh: Mesh, tol: float = 1e-9) -> Mesh:
    """Merge vertices closer than ``tol`` (grid snap) and drop zero-area triangles."""
    if mesh.is_empty:
        return Mesh.empty()
    keys = np.round(mesh.vertices / tol).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    tris = inverse[mesh.triangles]
    verts = mesh.vertices[first]
    distinct = (tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2]) & (tris[:, 0] != tris[:, 2])
    tris = tris[distinct]
    out = Mesh(verts, tris)
    out = Mesh(verts, tris[out.triangle_areas() > 0.0])
    used = np.unique(out.triangles)
    remap = np.full(len(verts), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return Mesh(verts[used], remap[out.triangles])


def grid_points(lo, hi, res: int) -> tuple[np.ndarray, np.ndarray]:
    lo = np.asarray(lo, dtype=np.float64) * np.ones(3)
    hi = np.asarray(hi, dtype=np.float64) * np.ones(3)
    axes = [np.linspace(lo[k], hi[k], res) for k in range(3)]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    return np.stack([X, Y, Z], axis=-1).reshape(-1, 3), (hi - lo) / (res - 1)


def marching_cubes_grid(values: np.ndarray, lo, spacing, iso: float = 0.0) -> Mesh:
    """Extract the iso-surface of sampled values; empty mesh if no crossing."""
    values = np.asarray(values, dtype=np.float64)
    if not values.min() < iso < values.max():
        return Mesh.empty()
    verts, faces, _, _ = measure.marching_cubes(values, level=iso, spacing=tuple(float(s) for s in spacing),
                                                gradient_direction="descent")
    return cleanup(Mesh(verts + np.asarray(lo, dtype=np.float64), faces))


def marching_cubes(field: Field, lo, hi, res: int, iso: float = 0.0) -> Mesh:
    """Sample ``field`` on a res^3 lattice over [lo, hi] and extract the iso-surface."""
    if res < 8:
        raise ValueError("marching cubes needs res >= 8")
    pts, spacing = grid_points(lo, hi, res)
    values = np.asarray(field(pts), dtype=np.float64).reshape(res, res, res)
    return marching_cubes_grid(values, np.asarray(lo, dtype=np.float64) * np.ones(3), spacing, iso)


def sample_surface(mesh: Mesh, n: int, rng: np.random.Generator) -> np.ndarray:
    """Area-weighted triangle choice, uniform barycentric point within it."""
    if mesh.is_empty:
        raise ValueError("cannot sample an empty mesh")
    areas = mesh.triangle_areas()
    cdf = np.cumsum(areas)
    tri = np.searchsorted(cdf, rng.uniform(0.0, cdf[-1], n), side="right")
    tri = np.minimum(tri, len(areas) - 1)
    u = rng.uniform(0.0, 1.0, n)
    v = rng.uniform(0.0, 1.0, n)
    flip = u + v > 1.0
    u[flip], v[flip] = 1.0 - u[flip], 1.0 - v[flip]
    a, b, c = (mesh.vertices[mesh.triangles[tri, k]] for k in range(3))
    return a + u[:, None] * (b - a) + v[:, None] * (c - a)


def write_obj(mesh: Mesh, path: str | Path) -> None:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path: str | Path) -> Mesh:
    verts, tris = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            tris.append([int(x.split("/")[0]) - 1 for x in parts[1:4]])
    return Mesh(np.array(verts).reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3))


def write_points(points: np.ndarray, path: str | Path) -> None:
    Path(path).write_bytes(np.ascontiguousarray(points, dtype="<f4").tobytes())


# -- voxels -----------------------------------------------------------------

@dataclass
class VoxelGrid:
    origin: np.ndarray
    cell: float
    occupancy: np.ndarray  # bool (res, res, res), index order x, y, z

    @property
    def res(self) -> int:
        return self.occupancy.shape[0]

    def same_lattice(self, other: "VoxelGrid") -> bool:
        return (self.occupancy.shape == other.occupancy.shape and self.cell == other.cell
                and np.array_equal(self.origin, other.origin))

    def volume(self) -> float:
        return float(self.occupancy.sum()) * self.cell ** 3


def lattice(lo, hi, res: int) -> tuple[np.ndarray, float]:
    """Cubic-cell lattice anchored at ``lo`` covering [lo, hi]."""
    if res < 8:
        raise ValueError("voxel grids need res >= 8")
    lo = np.asarray(lo, dtype=np.float64) * np.ones(3)
    hi = np.asarray(hi, dtype=np.float64) * np.ones(3)
    cell = float((hi - lo).max()) / res
    if cell <= 0:
        raise ValueError("degenerate voxel bounds")
    return lo, cell


def cell_centers(origin: np.ndarray, cell: float, res: int, ranges=None) -> np.ndarray:
    ranges = ranges or [(0, res)] * 3
    axes = [origin[k] + (np.arange(*ranges[k]) + 0.5) * cell for k in range(3)]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    return np.stack([X, Y, Z], axis=-1).reshape(-1, 3)


def voxelize(shape: Field | Mesh, lo, hi, res: int) -> VoxelGrid:
    """Occupy a cell iff its center is inside (SDF <= 0, or odd ray parity for meshes)."""
    origin, cell = lattice(lo, hi, res)
    centers = cell_centers(origin, cell, res)
    if isinstance(shape, Mesh):
        inside = mesh_contains(shape, centers)
    else:
        inside = np.asarray(shape(centers)) <= 0.0
    return VoxelGrid(origin, cell, inside.reshape(res, res, res))


def mesh_contains(mesh: Mesh, points: np.ndarray) -> np.ndarray:
    """Parity of +x ray crossings; rays are nudged off-axis to avoid edge hits."""
    points = np.asarray(points, dtype=np.float64)
    out = np.zeros(len(points), dtype=bool)
    if mesh.is_empty or len(points) == 0:
        return out
    nudge = np.array([0.0, 1.234567e-7, 7.654321e-8])
    q = points + nudge
    a, b, c = (mesh.vertices[mesh.triangles[:, k]] for k in range(3))
    order = np.lexsort((q[:, 2], q[:, 1]))
    ys, zs = q[order, 1], q[order, 2]
    crossings = np.zeros(len(points), dtype=np.int64)
    for t in range(len(a)):
        p0, p1, p2 = a[t], b[t], c[t]
        ylo, yhi = min(p0[1], p1[1], p2[1]), max(p0[1], p1[1], p2[1])
        lo_i = np.searchsorted(ys, ylo, side="left")
        hi_i = np.searchsorted(ys, yhi, side="right")
        if lo_i >= hi_i:
            continue
        cand = order[lo_i:hi_i]
        py, pz = q[cand, 1], q[cand, 2]
        # barycentric coordinates in the yz projection
        d = (p1[1] - p0[1]) * (p2[2] - p0[2]) - (p2[1] - p0[1]) * (p1[2] - p0[2])
        if d == 0.0:
            continue
        w1 = ((py - p0[1]) * (p2[2] - p0[2]) - (p2[1] - p0[1]) * (pz - p0[2])) / d
        w2 = ((p1[1] - p0[1]) * (pz - p0[2]) - (py - p0[1]) * (p1[2] - p0[2])) / d
        w0 = 1.0 - w1 - w2
        hit = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not hit.any():
            continue
        xs = w0 * p0[0] + w1 * p1[0] + w2 * p2[0]
        sel = hit & (xs > q[cand, 0])
        crossings[cand[sel]] += 1
    out[:] = crossings % 2 == 1
    return out


# -- point-set distances ----------------------------------------------------

def nearest_sq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared distance from each point of ``a`` to its nearest neighbour in ``b``."""
    _, idx = cKDTree(b).query(a, k=1)
    diff = a - b[idx]
    return np.einsum("ij,ij->i", diff, diff)


def chamfer(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric mean of squared nearest-neighbour distances:
    0.5 * (mean_a min_b |a-b|^2 + mean_b min_a |a-b|^2)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer distance of an empty point set")
    return 0.5 * (float(nearest_sq(a, b).mean()) + float(nearest_sq(b, a).mean()))
