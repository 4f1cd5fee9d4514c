"""Glue between trees, part geometry and the metrics: used by the CLI and the acceptance suite."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .dataset import from_unit, unit_mesh, world_field
from .geometry import Mesh
from .metrics import ObjectGeometry, PartShape
from .prior.model import PartGenerator, frame_extent, part_field
from .serialize import read_object
from .tree import ArticTree, PartNode, joint_kind


@dataclass
class ObjectParts:
    geometry: ObjectGeometry
    shapes: list[PartShape]


def node_geometry(node: PartNode, generator: PartGenerator | None, res: int) -> tuple[Mesh, PartShape]:
    """Rest-pose world mesh and inside test of one part.

    Parts with an analytic recipe use it directly; otherwise the latent z is
    decoded by the prior generator.
    """
    b = np.asarray(node.b)
    if node.shape is not None:
        m = unit_mesh(node.shape, max(res, 8))
        mesh = Mesh(from_unit(m.vertices, b), m.triangles) if not m.is_empty else m
        return mesh, PartShape(world_field(node.shape, b), b[:3], b[3:])
    if generator is None:
        raise ValueError("part has no analytic shape; a shape prior is needed to decode its latent")
    geom = generator.geometry(np.asarray(node.z), b, res)
    L = frame_extent(res)
    lo, hi = from_unit(np.full(3, -L), b), from_unit(np.full(3, L), b)
    return geom.mesh, PartShape(part_field(geom, b), lo, hi)


def object_parts(tree: ArticTree, generator: PartGenerator | None = None, res: int = 32,
                 name: str = "") -> ObjectParts:
    meshes, shapes = [], []
    for node in tree.nodes:
        mesh, shape = node_geometry(node, generator, res)
        meshes.append(mesh)
        shapes.append(shape)
    return ObjectParts(ObjectGeometry(tree, meshes, name), shapes)


def root_child_counts(tree: ArticTree) -> dict[str, int]:
    """Prismatic (drawer) and revolute (door) children of the root."""
    kinds = [joint_kind(tree.nodes[i].l) for i in tree.children(tree.root)] if tree.nodes else []
    return {"drawer": kinds.count("prismatic"), "door": kinds.count("revolute")}


def decode_prompt(model, generator: PartGenerator | None, text: str, rng):
    """Generate one object for a prompt with the decoding settings stored in the model config."""
    from .artformer import iterative_decode

    cfg = model.cfg
    return iterative_decode(model.round_fn(text), generator, rng, cfg.max_rounds, cfg.max_nodes, cfg.threshold,
                            cfg.d_z, t_snap=cfg.t_snap, r_snap=cfg.r_snap)


def load_objects(directory: str | Path) -> list[tuple[str, ArticTree, dict[str, Any]]]:
    """All ``*.json`` objects in a directory (or a dataset's ``objects/``), sorted by name."""
    d = Path(directory)
    if (d / "objects").is_dir():
        d = d / "objects"
    files = sorted(p for p in d.glob("*.json") if p.name != "manifest.json")
    if not files:
        raise FileNotFoundError(f"no object JSON files in {directory}")
    out = []
    for p in files:
        tree, meta = read_object(p.read_text())
        out.append((p.stem, tree, meta))
    return out
