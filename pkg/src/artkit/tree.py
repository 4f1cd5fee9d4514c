"""Articulation trees: part nodes, token packing and kinematics.

All coordinates are global rest-pose coordinates. A node's joint moves it
relative to its parent; global transforms compose parent-first.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

import numpy as np

DIRECTION_TOL = 1e-6
ATTR_DIM = 6 + 6 + 4  # b, j, l (z is configurable)


def _floats(values: Sequence[float], n: int | None = None, name: str = "") -> tuple[float, ...]:
    out = tuple(float(v) for v in values)
    if n is not None and len(out) != n:
        raise ValueError(f"{name} must have {n} entries, got {len(out)}")
    return out


@dataclass(frozen=True)
class PartNode:
    """One rigid part.

    ``b`` is [xmin, ymin, zmin, xmax, ymax, zmax], ``j`` is (origin, direction),
    ``l`` is [t_min, t_max, r_min, r_max]. ``fa`` is None for the root.
    ``shape`` optionally carries an analytic geometry recipe (synthetic data).
    """

    fa: int | None
    b: tuple[float, ...]
    z: tuple[float, ...]
    j: tuple[float, ...]
    l: tuple[float, ...]
    label: str = ""
    shape: Mapping[str, Any] | None = field(default=None, compare=True, hash=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "b", _floats(self.b, 6, "b"))
        object.__setattr__(self, "z", _floats(self.z))
        object.__setattr__(self, "j", _floats(self.j, 6, "j"))
        object.__setattr__(self, "l", _floats(self.l, 4, "l"))
        if self.fa is not None:
            object.__setattr__(self, "fa", int(self.fa))

    @property
    def origin(self) -> np.ndarray:
        return np.asarray(self.j[:3])

    @property
    def direction(self) -> np.ndarray:
        return np.asarray(self.j[3:])

    @property
    def bbox_min(self) -> np.ndarray:
        return np.asarray(self.b[:3])

    @property
    def bbox_max(self) -> np.ndarray:
        return np.asarray(self.b[3:])

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.bbox_min + self.bbox_max)

    def attributes(self) -> np.ndarray:
        """The concatenated attribute vector [b, z, j, l] fed to the model."""
        return np.concatenate([self.b, self.z, self.j, self.l]).astype(np.float64)


@dataclass(frozen=True)
class ArticTree:
    nodes: tuple[PartNode, ...]
    root: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))

    def __len__(self) -> int:
        return len(self.nodes)

    def children(self, i: int) -> list[int]:
        return [k for k, n in enumerate(self.nodes) if n.fa == i]

    def path_to_root(self, i: int) -> list[int]:
        """Indices from node ``i`` up to the root (nearest first)."""
        path = [i]
        seen = {i}
        while self.nodes[path[-1]].fa is not None:
            nxt = self.nodes[path[-1]].fa
            if nxt in seen:
                raise ValueError(f"cycle through node {nxt}")
            seen.add(nxt)
            path.append(nxt)
        return path

    def depth(self, i: int) -> int:
        """Number of nodes on the root->i path (the root has depth 1)."""
        return len(self.path_to_root(i))

    def with_nodes(self, nodes: Sequence[PartNode]) -> "ArticTree":
        return replace(self, nodes=tuple(nodes))


JointState = tuple[float, float]  # (translation t, rotation r) for one node


def validate_tree(tree: ArticTree) -> list[str]:
    """Return a list of human-readable invariant violations (empty when valid)."""
    problems: list[str] = []
    n = len(tree.nodes)
    roots = [i for i, node in enumerate(tree.nodes) if node.fa is None]
    if n and len(roots) != 1:
        problems.append(f"expected exactly one root, found {len(roots)} at {roots}")
    if n and roots and tree.root != roots[0]:
        problems.append(f"root index {tree.root} does not match parentless node {roots[0]}")
    for i, node in enumerate(tree.nodes):
        if node.fa is not None:
            if node.fa < 0 or node.fa >= n:
                problems.append(f"node {i}: parent index {node.fa} out of range")
            elif node.fa >= i:
                problems.append(f"node {i}: forward parent reference to {node.fa}")
        for k in range(3):
            if not node.b[k] <= node.b[k + 3]:
                problems.append(f"node {i}: bbox min > max on axis {k}")
        norm = float(np.linalg.norm(node.direction))
        if not abs(norm - 1.0) <= DIRECTION_TOL:
            problems.append(f"node {i}: non-unit direction (norm {norm:.6g})")
        t_lo, t_hi, r_lo, r_hi = node.l
        if not t_lo <= t_hi:
            problems.append(f"node {i}: translation limit min > max")
        if not r_lo <= r_hi:
            problems.append(f"node {i}: rotation limit min > max")
        values = np.concatenate([node.b, node.z, node.j, node.l])
        if not np.all(np.isfinite(values)):
            problems.append(f"node {i}: non-finite attribute")
    return problems


def joint_kind(l: Sequence[float]) -> str:
    """Classify a limit vector as fixed / prismatic / revolute / mixed."""
    t_lo, t_hi, r_lo, r_hi = l
    moves_t = not (t_lo == 0.0 and t_hi == 0.0)
    moves_r = not (r_lo == 0.0 and r_hi == 0.0)
    if moves_t and moves_r:
        return "mixed"
    if moves_t:
        return "prismatic"
    if moves_r:
        return "revolute"
    return "fixed"


# -- token packing ----------------------------------------------------------

def token_dim(d_z: int) -> int:
    return 1 + 6 + d_z + 6 + 4


def pack_token(node: PartNode, d_z: int) -> np.ndarray:
    """Pack a node as [fa, b, z, j, l]; the root's parent slot holds -1."""
    if len(node.z) != d_z:
        raise ValueError(f"latent has {len(node.z)} entries, expected d_z={d_z}")
    fa = -1.0 if node.fa is None else float(node.fa)
    return np.concatenate([[fa], node.b, node.z, node.j, node.l]).astype(np.float64)


def unpack_token(token: Sequence[float], d_z: int, label: str = "") -> PartNode:
    token = np.asarray(token, dtype=np.float64)
    if token.shape != (token_dim(d_z),):
        raise ValueError(f"token has shape {token.shape}, expected ({token_dim(d_z)},)")
    fa = None if token[0] < 0 else int(token[0])
    b = token[1:7]
    z = token[7:7 + d_z]
    j = token[7 + d_z:13 + d_z]
    l = token[13 + d_z:]
    return PartNode(fa=fa, b=b, z=z, j=j, l=l, label=label)


# -- kinematics -------------------------------------------------------------

def rotation_matrix(axis: Sequence[float], angle: float) -> np.ndarray:
    """Right-handed rotation about a unit axis (Rodrigues)."""
    x, y, z = axis
    c, s = math.cos(angle), math.sin(angle)
    C = 1.0 - c
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
    ])


def joint_transform(j: Sequence[float], state: JointState) -> np.ndarray:
    """4x4 transform T = Tr(o) . R(d, r) . Tr(-o) . Tr(d t)."""
    t, r = state
    o = np.asarray(j[:3], dtype=np.float64)
    d = np.asarray(j[3:], dtype=np.float64)
    T = np.eye(4)
    if t == 0.0 and r == 0.0:
        return T
    R = rotation_matrix(d, r)
    T[:3, :3] = R
    # R (p + d t - o) + o
    T[:3, 3] = R @ (d * t - o) + o
    return T


def state_at_openness(node: PartNode, rho: float) -> JointState:
    t_lo, t_hi, r_lo, r_hi = node.l
    return (t_lo + rho * (t_hi - t_lo), r_lo + rho * (r_hi - r_lo))


def global_transforms(tree: ArticTree, states: Sequence[JointState]) -> list[np.ndarray]:
    """Compose per-node joint transforms from the root down."""
    out: list[np.ndarray] = []
    for i, node in enumerate(tree.nodes):
        if node.fa is None:
            out.append(np.eye(4))
            continue
        local = joint_transform(node.j, states[i])
        out.append(out[node.fa] @ local)
    return out


def pose_at_openness(tree: ArticTree, rho: float) -> list[np.ndarray]:
    return global_transforms(tree, [state_at_openness(n, rho) for n in tree.nodes])


def sample_joint_states(tree: ArticTree, rng: np.random.Generator) -> list[JointState]:
    """Independent uniform state per joint within its limits."""
    states = []
    for node in tree.nodes:
        t_lo, t_hi, r_lo, r_hi = node.l
        states.append((float(rng.uniform(t_lo, t_hi)) if t_hi > t_lo else t_lo,
                       float(rng.uniform(r_lo, r_hi)) if r_hi > r_lo else r_lo))
    return states


def apply_transform(T: np.ndarray, points: np.ndarray) -> np.ndarray:
    return points @ T[:3, :3].T + T[:3, 3]
