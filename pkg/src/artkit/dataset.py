"""Procedural articulated objects with analytic part geometry and templated text.

World frame: z up, object fronts face +y, lengths in metres-ish units. Every
part's geometry is a CSG recipe in its normalised frame, where the part bbox
maps onto [-FRAME_FILL, FRAME_FILL]^3 axis by axis; the world shape is the
affine image of that recipe. Neighbouring parts keep a positive gap and all
joint motions carry parts away from their neighbours, so part interiors
never intersect at any joint state.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .checkpoint import write_atomic
from .geometry import Field, Mesh, marching_cubes, recipe_field, sample_surface
from .serialize import read_object, to_json
from .tensor import Rng
from .text import COUNT_WORDS, tokenize
from .tree import ArticTree, PartNode

GENERATOR_VERSION = "synth/1"
FRAME_FILL = 0.9
GAP = 0.01
CATEGORIES = ("cabinet", "safe", "bottle")
ROOT_JOINT = (0.0, 0.0, 0.0, 0.0, 0.0, 1.0)
FIXED = (0.0, 0.0, 0.0, 0.0)


# -- normalised part frame ----------------------------------------------------

def _center_half(b: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    b = np.asarray(b, dtype=np.float64)
    return 0.5 * (b[:3] + b[3:]), np.maximum(0.5 * (b[3:] - b[:3]), 1e-6)


def to_unit(points: np.ndarray, b: Sequence[float]) -> np.ndarray:
    """World rest-pose points -> normalised part frame."""
    c, h = _center_half(b)
    return (np.asarray(points) - c) / h * FRAME_FILL


def from_unit(points: np.ndarray, b: Sequence[float]) -> np.ndarray:
    c, h = _center_half(b)
    return c + np.asarray(points) / FRAME_FILL * h


def world_field(recipe: Mapping[str, Any], b: Sequence[float]) -> Field:
    """Sign-correct field of the part in world rest coordinates."""
    f = recipe_field(recipe)
    return lambda p: f(to_unit(p, b))


# -- recipes (normalised frame) ---------------------------------------------

def _box(half=(FRAME_FILL,) * 3, center=(0.0, 0.0, 0.0), rnd=0.0) -> dict:
    return {"kind": "box", "half": [float(h) for h in half], "center": [float(c) for c in center],
            "round": float(rnd)}


def _span(lo: float, hi: float, c: float, h: float) -> tuple[float, float]:
    """World interval [lo, hi] -> (center, half) in a frame with center c, half h."""
    a, b = (lo - c) / h * FRAME_FILL, (hi - c) / h * FRAME_FILL
    return 0.5 * (a + b), 0.5 * (b - a)


def shell_recipe(b, cavity_lo, cavity_hi, rnd: float) -> dict:
    """Solid box with an open-front cavity (world cavity bounds)."""
    c, h = _center_half(b)
    cen, half = zip(*(_span(cavity_lo[k], cavity_hi[k], c[k], h[k]) for k in range(3)))
    return {"kind": "difference", "a": _box(rnd=rnd), "b": _box(half, cen)}


def tray_recipe(wall: float, floor: float) -> dict:
    """Open-top drawer tray; wall/floor thickness given in the normalised frame."""
    inner_half = (FRAME_FILL - wall, FRAME_FILL - wall, FRAME_FILL)
    inner_center = (0.0, 0.0, floor)
    return {"kind": "difference", "a": _box(), "b": _box(inner_half, inner_center)}


def bottle_recipe(neck_frac: float, neck_height: float) -> dict:
    body_top = FRAME_FILL - 2 * neck_height
    body = {"kind": "cylinder", "radius": FRAME_FILL, "half_height": 0.5 * (body_top + FRAME_FILL),
            "center": [0.0, 0.0, 0.5 * (body_top - FRAME_FILL)]}
    neck = {"kind": "cylinder", "radius": FRAME_FILL * neck_frac, "half_height": neck_height,
            "center": [0.0, 0.0, FRAME_FILL - neck_height]}
    return {"kind": "union", "parts": [body, neck]}


def cylinder_recipe() -> dict:
    return {"kind": "cylinder", "radius": FRAME_FILL, "half_height": FRAME_FILL, "center": [0.0, 0.0, 0.0]}


# -- object generation --------------------------------------------------------

@dataclass
class SynthSpec:
    """Part plan for one object; ``None`` fields are drawn from the rng."""

    category: str
    drawers: int | None = None
    doors: int | None = None
    handles: bool | None = None
    cap_joint: str | None = None  # "prismatic" | "revolute"
    seed: int = 0

    def resolved(self, rng: Rng) -> "SynthSpec":
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        drawers, doors, handles, cap = self.drawers, self.doors, self.handles, self.cap_joint
        if self.category == "cabinet":
            while drawers is None or doors is None or drawers + doors == 0:
                d = int(rng.integers(0, 5)) if self.drawers is None else self.drawers
                m = int(rng.integers(0, 3)) if self.doors is None else self.doors
                drawers, doors = d, m
                if self.drawers is not None and self.doors is not None:
                    break
            if not (0 <= drawers <= 4 and 0 <= doors <= 2 and drawers + doors >= 1):
                raise ValueError(f"cabinet needs 0-4 drawers, 0-2 doors, at least one part ({drawers}, {doors})")
        elif self.category == "safe":
            drawers, doors = 0, 1
        else:
            drawers, doors = 0, 0
            if cap is None:
                cap = "prismatic" if rng.uniform() < 0.5 else "revolute"
        if handles is None:
            handles = bool(rng.uniform() < 0.5) if doors else False
        return SynthSpec(self.category, drawers, doors, handles and doors > 0, cap, self.seed)


def _node(fa, b, j, l, label, shape) -> PartNode:
    return PartNode(fa=fa, b=b, z=(), j=j, l=l, label=label, shape=shape)


def _add_doors(nodes: list[PartNode], parent: int, x0: float, x1: float, z0: float, z1: float,
               y_front: float, count: int, handles: bool, rng: Rng) -> None:
    th = float(rng.uniform(0.02, 0.04))
    y0, y1 = y_front + GAP, y_front + GAP + th
    if count == 1:
        spans = [(x0, x1, x0, 1.0)]
    else:
        mid = 0.5 * (x0 + x1)
        spans = [(x0, mid - GAP / 2, x0, 1.0), (mid + GAP / 2, x1, x1, -1.0)]
    for a, bb, hinge_x, sign in spans:
        b = (a, y0, z0, bb, y1, z1)
        j = (hinge_x, y0, 0.5 * (z0 + z1), 0.0, 0.0, sign)
        shape = _box(rnd=float(rng.uniform(0.0, 0.06)))
        nodes.append(_node(parent, b, j, (0.0, 0.0, 0.0, math.pi / 2), "door", shape))
        door = len(nodes) - 1
        if handles:
            hw, hd = 0.025, 0.03
            hh = min(0.15, 0.6 * (z1 - z0))
            free = bb - 0.04 if sign > 0 else a + 0.04
            hx0, hx1 = (free - hw, free) if sign > 0 else (free, free + hw)
            zc = 0.5 * (z0 + z1)
            hb = (hx0, y1 + GAP, zc - hh / 2, hx1, y1 + GAP + hd, zc + hh / 2)
            hj = (0.5 * (hx0 + hx1), y1 + GAP, zc, 0.0, 0.0, 1.0)
            nodes.append(_node(door, hb, hj, FIXED, "handle", _box(rnd=float(rng.uniform(0.1, 0.3)))))


def _cabinet(spec: SynthSpec, rng: Rng) -> list[PartNode]:
    k, m = spec.drawers, spec.doors
    W = float(rng.uniform(0.6, 1.1))
    D = float(rng.uniform(0.4, 0.6))
    H = float(rng.uniform(0.5, 0.7) + 0.1 * k)
    w = float(rng.uniform(0.025, 0.04))
    b = (-W / 2, -D / 2, 0.0, W / 2, D / 2, H)
    cav_lo = (-W / 2 + w, -D / 2 + w, w)
    cav_hi = (W / 2 - w, D / 2 + 1.0, H - w)
    nodes = [_node(None, b, ROOT_JOINT, FIXED, "cabinet frame", shell_recipe(b, cav_lo, cav_hi, float(rng.uniform(0, 0.06))))]
    inner_h = H - 2 * w
    door_h = inner_h * (0.5 if k else 1.0) if m else 0.0
    if m:
        _add_doors(nodes, 0, -W / 2, W / 2, w, w + door_h - GAP, D / 2, m, spec.handles, rng)
    if k:
        row = (inner_h - door_h) / k
        x0, x1 = -W / 2 + w + GAP, W / 2 - w - GAP
        y0, y1 = -D / 2 + w + GAP, D / 2 - GAP
        wall, floor = float(rng.uniform(0.12, 0.2)), float(rng.uniform(0.12, 0.2))
        for r in range(k):
            z0 = w + door_h + r * row + GAP
            z1 = z0 + row - 2 * GAP
            bb = (x0, y0, z0, x1, y1, z1)
            j = (0.5 * (x0 + x1), 0.5 * (y0 + y1), 0.5 * (z0 + z1), 0.0, 1.0, 0.0)
            nodes.append(_node(0, bb, j, (0.0, 0.8 * (y1 - y0), 0.0, 0.0), "drawer", tray_recipe(wall, floor)))
    return nodes


def _safe(spec: SynthSpec, rng: Rng) -> list[PartNode]:
    W = float(rng.uniform(0.4, 0.7))
    D = float(rng.uniform(0.4, 0.6))
    H = float(rng.uniform(0.4, 0.7))
    w = float(rng.uniform(0.04, 0.06))
    b = (-W / 2, -D / 2, 0.0, W / 2, D / 2, H)
    nodes = [_node(None, b, ROOT_JOINT, FIXED, "safe body",
                   shell_recipe(b, (-W / 2 + w, -D / 2 + w, w), (W / 2 - w, D / 2 + 1.0, H - w), float(rng.uniform(0, 0.06))))]
    _add_doors(nodes, 0, -W / 2, W / 2, 0.0, H, D / 2, 1, spec.handles, rng)
    return nodes


def _bottle(spec: SynthSpec, rng: Rng) -> list[PartNode]:
    R = float(rng.uniform(0.1, 0.2))
    Hb = float(rng.uniform(0.3, 0.6))
    neck_frac = float(rng.uniform(0.35, 0.6))
    neck_h = float(rng.uniform(0.1, 0.2))
    b = (-R, -R, 0.0, R, R, Hb)
    nodes = [_node(None, b, ROOT_JOINT, FIXED, "bottle body", bottle_recipe(neck_frac, neck_h))]
    rc = R * neck_frac * float(rng.uniform(1.1, 1.4))
    hc = float(rng.uniform(0.05, 0.1))
    cb = (-rc, -rc, Hb + GAP, rc, rc, Hb + GAP + hc)
    cj = (0.0, 0.0, Hb + GAP + hc / 2, 0.0, 0.0, 1.0)
    limit = (0.0, 1.5 * hc, 0.0, 0.0) if spec.cap_joint == "prismatic" else (0.0, 0.0, 0.0, 2 * math.pi)
    nodes.append(_node(0, cb, cj, limit, "cap", cylinder_recipe()))
    return nodes


def _counted(n: int, noun: str, adjective: str = "") -> str:
    word = COUNT_WORDS[n]
    adj = f"{adjective} " if adjective else ""
    return f"{word} {adj}{noun}{'s' if n != 1 else ''}"


def describe(spec: SynthSpec) -> list[str]:
    """Four templated descriptions of increasing length (tiers 0-3)."""
    handle_tail = (" with handles" if spec.doors > 1 else " with a handle") if spec.handles else ""
    if spec.category == "cabinet":
        short = [p for p in (spec.drawers and _counted(spec.drawers, "drawer"),
                             spec.doors and _counted(spec.doors, "door", "hinged")) if p]
        long = [p for p in (spec.drawers and _counted(spec.drawers, "drawer", "sliding"),
                            spec.doors and _counted(spec.doors, "door", "hinged") + handle_tail) if p]
        motion = []
        if spec.drawers:
            motion.append("the drawers slide out on tracks")
        if spec.doors:
            motion.append("the doors swing open on vertical hinges")
        return [
            " and ".join(short),
            "a cabinet with " + " and ".join(short),
            "a storage cabinet with " + " and ".join(long),
            "this storage furniture has a rectangular frame with " + " and ".join(long) + ". "
            + " and ".join(motion) + ".",
        ]
    if spec.category == "safe":
        return [
            "safe with one hinged door",
            "a small safe with one hinged door",
            "a metal safe box with one hinged door" + handle_tail,
            "this safe is a sturdy box whose front is closed by one hinged door" + handle_tail + " that swings open.",
        ]
    twist = spec.cap_joint == "revolute"
    kind = "screw" if twist else "push"
    return [
        f"bottle with a {kind} cap",
        f"a bottle with a {kind} cap",
        f"a round bottle with a narrow neck and a cap that {'twists' if twist else 'lifts'} off",
        f"this bottle has a cylindrical body and a narrow neck closed by a {kind} cap that "
        f"{'rotates around the neck' if twist else 'slides straight up'}.",
    ]


def template_vocabulary() -> list[str]:
    """Every word any template can emit."""
    words: set[str] = set()
    for d in range(5):
        for m in range(3):
            if d + m == 0:
                continue
            for h in (False, True):
                for text in describe(SynthSpec("cabinet", d, m, h and m > 0)):
                    words.update(tokenize(text))
    for h in (False, True):
        for text in describe(SynthSpec("safe", 0, 1, h)):
            words.update(tokenize(text))
    for cap in ("prismatic", "revolute"):
        for text in describe(SynthSpec("bottle", 0, 0, False, cap)):
            words.update(tokenize(text))
    return sorted(words)


@dataclass
class SynthObject:
    tree: ArticTree
    texts: list[str]
    spec: SynthSpec
    fields: list[Field] = field(repr=False, default_factory=list)


def generate_object(spec: SynthSpec, rng: Rng) -> SynthObject:
    """Build one object: tree, per-part world fields and 2-4 graded descriptions."""
    spec = spec.resolved(rng)
    builder = {"cabinet": _cabinet, "safe": _safe, "bottle": _bottle}[spec.category]
    tree = ArticTree(tuple(builder(spec, rng)))
    texts = describe(spec)
    n_texts = int(rng.integers(2, 5))
    tiers = sorted(int(t) for t in rng.choice(4, size=n_texts, replace=False))
    fields = [world_field(n.shape, n.b) for n in tree.nodes]
    return SynthObject(tree, [texts[t] for t in tiers], spec, fields)


def random_spec(rng: Rng) -> SynthSpec:
    u = rng.uniform()
    category = "cabinet" if u < 0.6 else ("safe" if u < 0.8 else "bottle")
    return SynthSpec(category)


# -- part samples -------------------------------------------------------------

def _recipe_key(recipe: Mapping[str, Any]) -> str:
    return json.dumps(recipe, sort_keys=True)


@lru_cache(maxsize=64)
def _unit_mesh(key: str, res: int) -> Mesh:
    return marching_cubes(recipe_field(json.loads(key)), -1.0, 1.0, res)


def unit_mesh(recipe: Mapping[str, Any], res: int = 48) -> Mesh:
    """Surface of a recipe in its normalised frame."""
    return _unit_mesh(_recipe_key(recipe), res)


def part_pointcloud(recipe: Mapping[str, Any], n: int, rng: Rng) -> np.ndarray:
    return sample_surface(unit_mesh(recipe), n, rng.gen)


def part_queries(recipe: Mapping[str, Any], n: int, rng: Rng, sigma: float = 0.04) -> tuple[np.ndarray, np.ndarray]:
    """Half near-surface, half uniform queries with exact SDF targets."""
    near = n // 2
    surf = sample_surface(unit_mesh(recipe), near, rng.gen) + rng.normal((near, 3), sigma)
    uni = rng.uniform(-1.0, 1.0, (n - near, 3))
    q = np.clip(np.concatenate([surf, uni]), -1.0, 1.0)
    return q, recipe_field(recipe)(q)


# -- corpus on disk -----------------------------------------------------------

def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def object_meta(obj_id: str, obj: SynthObject, split: str) -> dict[str, Any]:
    s = obj.spec
    return {"id": obj_id, "category": s.category, "split": split, "texts": obj.texts,
            "plan": {"drawers": s.drawers, "doors": s.doors, "handles": s.handles, "cap_joint": s.cap_joint}}


def build_dataset(out_dir: str | Path, count: int, seed: int,
                  splits: Sequence[float] = (0.8, 0.1, 0.1)) -> dict[str, Any]:
    """Write ``manifest.json`` and ``objects/<id>.json``; returns the manifest."""
    out = Path(out_dir)
    rng = Rng(seed, "dataset")
    ids = [f"obj_{i:04d}" for i in range(count)]
    order = rng.derive("split").permutation(count)
    n_train = int(round(splits[0] * count))
    n_val = int(round(splits[1] * count))
    split_of = {}
    for rank, i in enumerate(order):
        split_of[ids[i]] = "train" if rank < n_train else ("val" if rank < n_train + n_val else "test")
    hashes = {}
    for i, obj_id in enumerate(ids):
        orng = rng.derive("object", i)
        obj = generate_object(random_spec(orng), orng)
        text = to_json(obj.tree, object_meta(obj_id, obj, split_of[obj_id]))
        data = text.encode("utf-8")
        write_atomic(out / "objects" / f"{obj_id}.json", data)
        hashes[obj_id] = _sha(data)
    manifest = {
        "format": "artkit-dataset/1",
        "generator": GENERATOR_VERSION,
        "seed": seed,
        "count": count,
        "splits": {name: sorted(k for k, v in split_of.items() if v == name) for name in ("train", "val", "test")},
        "objects": hashes,
    }
    data = (json.dumps(manifest, indent=1, sort_keys=True) + "\n").encode("utf-8")
    write_atomic(out / "manifest.json", data)
    manifest["hash"] = _sha(data)
    return manifest


@dataclass
class Corpus:
    root: Path
    manifest: dict[str, Any]
    objects: dict[str, tuple[ArticTree, dict[str, Any]]]

    @property
    def hash(self) -> str:
        return _sha((self.root / "manifest.json").read_bytes())

    def split(self, name: str) -> list[str]:
        return list(self.manifest["splits"][name])


def load_dataset(root: str | Path) -> Corpus:
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"{manifest_path} not found; run `artkit dataset build` first")
    manifest = json.loads(manifest_path.read_text())
    objects = {}
    for obj_id in sorted(manifest["objects"]):
        objects[obj_id] = read_object((root / "objects" / f"{obj_id}.json").read_text())
    return Corpus(root, manifest, objects)


def part_records(corpus: Corpus, ids: Sequence[str] | None = None) -> list[tuple[str, int, PartNode]]:
    """(object id, node index, node) for every part of the selected objects."""
    ids = sorted(corpus.objects) if ids is None else ids
    return [(oid, i, node) for oid in ids for i, node in enumerate(corpus.objects[oid][0].nodes)]
