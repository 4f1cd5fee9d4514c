"""Evaluation: volume IoU, part overlapping ratio, instantiation distance and set metrics."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import Field, Mesh, VoxelGrid, cell_centers, chamfer, lattice, merge_meshes, sample_surface, voxelize
from .tree import ArticTree, apply_transform, global_transforms, pose_at_openness, sample_joint_states


@dataclass(frozen=True)
class EvalConfig:
    n_joint_states: int = 10
    voxel_res: int = 96
    openness: tuple[float, ...] = (0.0, 0.5, 1.0)
    surface_samples: int = 2048
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_joint_states < 1:
            raise ValueError("need at least one joint state")
        if self.voxel_res < 32:
            raise ValueError("voxel_res must be >= 32")


# -- volume IoU ---------------------------------------------------------------

def viou(g1: VoxelGrid, g2: VoxelGrid) -> float:
    """|G1 & G2| / |G1 | G2| on a shared lattice; 0 when the union is empty."""
    if not g1.same_lattice(g2):
        raise ValueError("voxel grids must share origin, cell size and resolution; use viou_shapes")
    inter = np.logical_and(g1.occupancy, g2.occupancy).sum()
    union = np.logical_or(g1.occupancy, g2.occupancy).sum()
    return float(inter / union) if union else 0.0


def viou_shapes(a: Field | Mesh, b: Field | Mesh, lo, hi, res: int) -> float:
    """Voxelize two shapes over the same bounds and compare."""
    return viou(voxelize(a, lo, hi, res), voxelize(b, lo, hi, res))


# -- part overlapping ratio ---------------------------------------------------

@dataclass(frozen=True)
class PartShape:
    """A part's inside test in rest-pose world coordinates with a box containing its support."""

    field: Field
    lo: np.ndarray
    hi: np.ndarray


def _posed_box(shape: PartShape, T: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    corners = np.array(list(itertools.product(*zip(shape.lo, shape.hi))), dtype=np.float64)
    moved = apply_transform(T, corners)
    return moved.min(axis=0), moved.max(axis=0)


def _occupancy(shape: PartShape, T: np.ndarray, origin: np.ndarray, cell: float, res: int):
    """Occupied cells of the posed part restricted to its posed box: (index lo, bool block)."""
    lo, hi = _posed_box(shape, T)
    i0 = np.clip(np.floor((lo - origin) / cell).astype(int), 0, res)
    i1 = np.clip(np.ceil((hi - origin) / cell).astype(int), 0, res)
    if np.any(i1 <= i0):
        return i0, np.zeros((0, 0, 0), dtype=bool)
    centers = cell_centers(origin, cell, res, ranges=[(int(i0[k]), int(i1[k])) for k in range(3)])
    rest = apply_transform(np.linalg.inv(T), centers)
    inside = np.asarray(shape.field(rest)) <= 0.0
    return i0, inside.reshape(tuple(int(v) for v in (i1 - i0)))


def _pair_iou(a, b) -> float:
    (ia, A), (ib, B) = a, b
    na, nb = int(A.sum()), int(B.sum())
    if na + nb == 0:
        return 0.0
    lo = np.maximum(ia, ib)
    hi = np.minimum(ia + np.array(A.shape), ib + np.array(B.shape))
    inter = 0
    if np.all(hi > lo):
        sa = tuple(slice(int(lo[k] - ia[k]), int(hi[k] - ia[k])) for k in range(3))
        sb = tuple(slice(int(lo[k] - ib[k]), int(hi[k] - ib[k])) for k in range(3))
        inter = int(np.logical_and(A[sa], B[sb]).sum())
    return inter / (na + nb - inter)


def mean_interpenetration(tree: ArticTree, shapes: Sequence[PartShape], states, res: int) -> float:
    """Mean pairwise vIoU of the posed parts on one cubic lattice over their posed boxes."""
    if len(shapes) < 2:
        return 0.0
    Ts = global_transforms(tree, states)
    boxes = [_posed_box(s, T) for s, T in zip(shapes, Ts)]
    lo = np.min([b[0] for b in boxes], axis=0)
    hi = np.max([b[1] for b in boxes], axis=0)
    origin, cell = lattice(lo, hi, res)
    occ = [_occupancy(s, T, origin, cell, res) for s, T in zip(shapes, Ts)]
    pairs = list(itertools.combinations(range(len(shapes)), 2))
    return float(np.mean([_pair_iou(occ[i], occ[j]) for i, j in pairs]))


def por(tree: ArticTree, shapes: Sequence[PartShape], cfg: EvalConfig = EvalConfig(),
        rng: np.random.Generator | None = None) -> float:
    """Mean over N_j independent uniform joint states of the mean pairwise part vIoU."""
    if len(shapes) != len(tree.nodes):
        raise ValueError(f"{len(shapes)} part shapes for {len(tree.nodes)} nodes")
    if len(shapes) < 2:
        return 0.0
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    return float(np.mean([mean_interpenetration(tree, shapes, sample_joint_states(tree, rng), cfg.voxel_res)
                          for _ in range(cfg.n_joint_states)]))


def por_at_openness(tree: ArticTree, shapes: Sequence[PartShape], rho: float, res: int = 96) -> float:
    lo = [n.l[0] + rho * (n.l[1] - n.l[0]) for n in tree.nodes]
    rot = [n.l[2] + rho * (n.l[3] - n.l[2]) for n in tree.nodes]
    return mean_interpenetration(tree, shapes, list(zip(lo, rot)), res)


# -- instantiation distance -------------------------------------------------

@dataclass
class ObjectGeometry:
    """An articulated object with one rest-pose world mesh per part."""

    tree: ArticTree
    meshes: list[Mesh]
    name: str = ""

    def posed(self, rho: float) -> Mesh:
        Ts = pose_at_openness(self.tree, rho)
        return merge_meshes([m.transformed(T) for m, T in zip(self.meshes, Ts) if not m.is_empty])


def _normaliser(obj: ObjectGeometry) -> tuple[np.ndarray, float]:
    rest = obj.posed(0.0)
    if rest.is_empty:
        raise ValueError(f"object {obj.name or '?'} has no geometry")
    lo, hi = rest.bounds()
    return 0.5 * (lo + hi), float((hi - lo).max())


def _posed_samples(obj: ObjectGeometry, rho: float, n: int, seed: int) -> np.ndarray:
    center, scale = _normaliser(obj)
    mesh = obj.posed(rho)
    if mesh.is_empty:
        raise ValueError(f"object {obj.name or '?'} has no geometry")
    pts = sample_surface(mesh, n, np.random.default_rng([seed, int(round(rho * 1e6))]))
    return (pts - center) / scale


def instantiation_distance(a: ObjectGeometry, b: ObjectGeometry, cfg: EvalConfig = EvalConfig()) -> float:
    """Mean over openness ratios of the chamfer distance between unit-normalised posed surfaces."""
    return float(np.mean([chamfer(_posed_samples(a, r, cfg.surface_samples, cfg.seed),
                                  _posed_samples(b, r, cfg.surface_samples, cfg.seed)) for r in cfg.openness]))


class IDCache:
    """Memoises per-object posed samples so a distance matrix samples each object once."""

    def __init__(self, cfg: EvalConfig = EvalConfig()) -> None:
        self.cfg = cfg
        self._samples: dict[int, list[np.ndarray]] = {}

    def samples(self, obj: ObjectGeometry) -> list[np.ndarray]:
        key = id(obj)
        if key not in self._samples:
            self._samples[key] = [_posed_samples(obj, r, self.cfg.surface_samples, self.cfg.seed)
                                  for r in self.cfg.openness]
        return self._samples[key]

    def distance(self, a: ObjectGeometry, b: ObjectGeometry) -> float:
        return float(np.mean([chamfer(x, y) for x, y in zip(self.samples(a), self.samples(b))]))

    def matrix(self, rows: Sequence[ObjectGeometry], cols: Sequence[ObjectGeometry]) -> np.ndarray:
        return np.array([[self.distance(r, c) for c in cols] for r in rows]).reshape(len(rows), len(cols))


# -- distribution metrics ---------------------------------------------------

def set_metrics_from_distances(d_gr: np.ndarray, d_gg: np.ndarray, d_rr: np.ndarray) -> dict[str, float]:
    """MMD, COV and 1-NNA from gen x ref, gen x gen and ref x ref distance matrices.

    1-NNA counts a tie between same-set and opposite-set nearest neighbours
    as a misclassification.
    """
    d_gr = np.asarray(d_gr, dtype=np.float64)
    G, R = d_gr.shape
    if G == 0 or R == 0:
        raise ValueError("set metrics need nonempty generated and reference sets")
    mmd = float(d_gr.min(axis=0).mean())
    matched = set(int(k) for k in d_gr.argmin(axis=1))
    cov = len(matched) / R
    full = np.block([[np.asarray(d_gg, dtype=np.float64), d_gr], [d_gr.T, np.asarray(d_rr, dtype=np.float64)]])
    labels = np.array([0] * G + [1] * R)
    correct = 0
    for i in range(G + R):
        d = full[i].copy()
        d[i] = np.inf
        same = d[labels == labels[i]].min(initial=np.inf)
        other = d[labels != labels[i]].min(initial=np.inf)
        correct += int(same < other)
    return {"MMD": mmd, "COV": cov, "1-NNA": correct / (G + R)}


def set_metrics(gen: Sequence, ref: Sequence, distance: Callable[[object, object], float]) -> dict[str, float]:
    def mat(a, b):
        return np.array([[distance(x, y) for y in b] for x in a]).reshape(len(a), len(b))

    return set_metrics_from_distances(mat(gen, ref), mat(gen, gen), mat(ref, ref))
