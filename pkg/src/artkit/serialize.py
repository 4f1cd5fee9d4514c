"""JSON interchange (``artic/1``) and URDF export for articulation trees."""
from __future__ import annotations

import json
import math
import xml.etree.ElementTree as ET
from typing import Any, Mapping

from .tree import ArticTree, PartNode, joint_kind

FORMAT = "artic/1"
URDF_JOINT_TYPES = {"revolute", "continuous", "prismatic", "fixed", "floating", "planar"}


class ArticFormatError(ValueError):
    """Malformed JSON object file."""


def node_to_dict(node: PartNode) -> dict[str, Any]:
    out: dict[str, Any] = {
        "fa": node.fa,
        "label": node.label,
        "b": list(node.b),
        "z": list(node.z),
        "j": list(node.j),
        "l": list(node.l),
    }
    if node.shape is not None:
        out["shape"] = node.shape
    return out


def to_dict(tree: ArticTree, meta: Mapping[str, Any] | None = None) -> dict[str, Any]:
    out: dict[str, Any] = {"format": FORMAT, "root": tree.root}
    if meta:
        out["meta"] = dict(meta)
    out["nodes"] = [node_to_dict(n) for n in tree.nodes]
    return out


def to_json(tree: ArticTree, meta: Mapping[str, Any] | None = None, indent: int | None = 1) -> str:
    # repr-based float formatting round-trips exactly
    return json.dumps(to_dict(tree, meta), indent=indent, allow_nan=False) + "\n"


def _numbers(value: Any, where: str, n: int | None = None) -> list[float]:
    if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        raise ArticFormatError(f"{where}: expected a list of numbers")
    if n is not None and len(value) != n:
        raise ArticFormatError(f"{where}: expected {n} numbers, got {len(value)}")
    return [float(v) for v in value]


def from_dict(data: Mapping[str, Any]) -> tuple[ArticTree, dict[str, Any]]:
    if not isinstance(data, Mapping):
        raise ArticFormatError("top level: expected an object")
    if data.get("format") != FORMAT:
        raise ArticFormatError(f"format: expected {FORMAT!r}, got {data.get('format')!r}")
    raw_nodes = data.get("nodes")
    if not isinstance(raw_nodes, list):
        raise ArticFormatError("nodes: expected a list")
    nodes = []
    for i, raw in enumerate(raw_nodes):
        where = f"nodes[{i}]"
        if not isinstance(raw, Mapping):
            raise ArticFormatError(f"{where}: expected an object")
        fa = raw.get("fa")
        if fa is not None and (not isinstance(fa, int) or isinstance(fa, bool)):
            raise ArticFormatError(f"{where}.fa: expected an integer or null")
        label = raw.get("label", "")
        if not isinstance(label, str):
            raise ArticFormatError(f"{where}.label: expected a string")
        shape = raw.get("shape")
        if shape is not None and not isinstance(shape, Mapping):
            raise ArticFormatError(f"{where}.shape: expected an object")
        nodes.append(PartNode(
            fa=fa,
            b=_numbers(raw.get("b"), f"{where}.b", 6),
            z=_numbers(raw.get("z", []), f"{where}.z"),
            j=_numbers(raw.get("j"), f"{where}.j", 6),
            l=_numbers(raw.get("l"), f"{where}.l", 4),
            label=label,
            shape=shape,
        ))
    root = data.get("root", 0)
    if not isinstance(root, int):
        raise ArticFormatError("root: expected an integer")
    meta = dict(data.get("meta") or {})
    return ArticTree(tuple(nodes), root=root), meta


def read_object(text: str) -> tuple[ArticTree, dict[str, Any]]:
    """Parse an object file, returning the tree and its metadata."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ArticFormatError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return from_dict(data)


def from_json(text: str) -> ArticTree:
    return read_object(text)[0]


# -- URDF --------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def _xyz(values) -> str:
    return " ".join(_fmt(v) for v in values)


def export_urdf(tree: ArticTree, mesh_files: Mapping[int, str] | None = None, name: str = "object") -> str:
    """Render a URDF 1.0 document.

    Each link frame sits at its joint origin (root at the world origin), so
    visuals are offset by minus that origin. Mixed joints become a revolute
    joint into a massless ``_slider`` link followed by a prismatic joint; both
    share the axis, so their order does not matter.
    """
    mesh_files = mesh_files or {}
    robot = ET.Element("robot", {"name": name})
    frame = {}
    for i, node in enumerate(tree.nodes):
        frame[i] = (0.0, 0.0, 0.0) if node.fa is None else tuple(node.j[:3])

    def link(lname: str, i: int | None) -> None:
        el = ET.SubElement(robot, "link", {"name": lname})
        if i is not None and i in mesh_files:
            visual = ET.SubElement(el, "visual")
            ET.SubElement(visual, "origin", {"xyz": _xyz(-v for v in frame[i]), "rpy": "0 0 0"})
            geom = ET.SubElement(visual, "geometry")
            ET.SubElement(geom, "mesh", {"filename": mesh_files[i]})

    def joint(jname: str, jtype: str, parent: str, child: str, xyz, axis=None, limit=None) -> None:
        el = ET.SubElement(robot, "joint", {"name": jname, "type": jtype})
        ET.SubElement(el, "parent", {"link": parent})
        ET.SubElement(el, "child", {"link": child})
        ET.SubElement(el, "origin", {"xyz": _xyz(xyz), "rpy": "0 0 0"})
        if axis is not None:
            ET.SubElement(el, "axis", {"xyz": _xyz(axis)})
        if limit is not None:
            ET.SubElement(el, "limit", {"lower": _fmt(limit[0]), "upper": _fmt(limit[1]),
                                        "effort": "10", "velocity": "1"})

    for i, node in enumerate(tree.nodes):
        link(f"part_{i}", i)
    for i, node in enumerate(tree.nodes):
        if node.fa is None:
            continue
        parent = f"part_{node.fa}"
        child = f"part_{i}"
        rel = [a - b for a, b in zip(frame[i], frame[node.fa])]
        axis = node.j[3:]
        t_lo, t_hi, r_lo, r_hi = node.l
        kind = joint_kind(node.l)
        if kind == "fixed":
            joint(f"joint_{i}", "fixed", parent, child, rel)
        elif kind == "revolute":
            joint(f"joint_{i}", "revolute", parent, child, rel, axis, (r_lo, r_hi))
        elif kind == "prismatic":
            joint(f"joint_{i}", "prismatic", parent, child, rel, axis, (t_lo, t_hi))
        else:
            slider = f"part_{i}_slider"
            link(slider, None)
            joint(f"joint_{i}_rot", "revolute", parent, slider, rel, axis, (r_lo, r_hi))
            joint(f"joint_{i}_slide", "prismatic", slider, child, (0.0, 0.0, 0.0), axis, (t_lo, t_hi))
    ET.indent(robot)
    return '<?xml version="1.0"?>\n' + ET.tostring(robot, encoding="unicode") + "\n"


def _triple(text: str | None, where: str, problems: list[str]) -> tuple[float, ...] | None:
    if text is None:
        return None
    parts = text.split()
    try:
        vals = tuple(float(p) for p in parts)
    except ValueError:
        problems.append(f"{where}: non-numeric value {text!r}")
        return None
    if len(vals) != 3 or not all(math.isfinite(v) for v in vals):
        problems.append(f"{where}: expected three finite numbers, got {text!r}")
        return None
    return vals


def validate_urdf(text: str) -> list[str]:
    """Structural URDF 1.0 checks: element/attribute schema plus tree topology."""
    problems: list[str] = []
    try:
        robot = ET.fromstring(text)
    except ET.ParseError as exc:
        return [f"xml: {exc}"]
    if robot.tag != "robot":
        return [f"root element is <{robot.tag}>, expected <robot>"]
    if not robot.get("name"):
        problems.append("robot: missing name")
    links: list[str] = []
    for el in robot.findall("link"):
        name = el.get("name")
        if not name:
            problems.append("link: missing name")
            continue
        if name in links:
            problems.append(f"link {name}: duplicate name")
        links.append(name)
        for visual in el.findall("visual"):
            _triple(visual.find("origin").get("xyz") if visual.find("origin") is not None else None,
                    f"link {name} visual origin", problems)
            geom = visual.find("geometry")
            if geom is None or len(geom) != 1:
                problems.append(f"link {name}: visual needs exactly one geometry")
            elif geom[0].tag == "mesh" and not geom[0].get("filename"):
                problems.append(f"link {name}: mesh without filename")
    if not links:
        problems.append("robot: no links")
    link_set = set(links)
    parent_of: dict[str, str] = {}
    joint_names: set[str] = set()
    for el in robot.findall("joint"):
        jname = el.get("name") or "?"
        if jname in joint_names:
            problems.append(f"joint {jname}: duplicate name")
        joint_names.add(jname)
        jtype = el.get("type")
        if jtype not in URDF_JOINT_TYPES:
            problems.append(f"joint {jname}: invalid type {jtype!r}")
        parents, childs = el.findall("parent"), el.findall("child")
        if len(parents) != 1 or len(childs) != 1:
            problems.append(f"joint {jname}: needs exactly one parent and one child")
            continue
        p, c = parents[0].get("link"), childs[0].get("link")
        for role, lk in (("parent", p), ("child", c)):
            if lk not in link_set:
                problems.append(f"joint {jname}: {role} link {lk!r} does not exist")
        if c in parent_of:
            problems.append(f"joint {jname}: link {c} already has a parent joint")
        parent_of[c] = p
        origin = el.find("origin")
        if origin is not None:
            _triple(origin.get("xyz", "0 0 0"), f"joint {jname} origin xyz", problems)
            _triple(origin.get("rpy", "0 0 0"), f"joint {jname} origin rpy", problems)
        axis = el.find("axis")
        if axis is not None:
            vals = _triple(axis.get("xyz"), f"joint {jname} axis", problems)
            if vals is not None and math.sqrt(sum(v * v for v in vals)) == 0.0:
                problems.append(f"joint {jname}: zero axis")
        if jtype in ("revolute", "prismatic"):
            limit = el.find("limit")
            if limit is None:
                problems.append(f"joint {jname}: {jtype} joint requires <limit>")
            else:
                try:
                    lo = float(limit.get("lower", "0"))
                    hi = float(limit.get("upper", "0"))
                    float(limit.get("effort"))
                    float(limit.get("velocity"))
                except (TypeError, ValueError):
                    problems.append(f"joint {jname}: limit needs numeric lower/upper/effort/velocity")
                else:
                    if lo > hi:
                        problems.append(f"joint {jname}: limit lower > upper")
    roots = [lk for lk in links if lk not in parent_of]
    if links and len(roots) != 1:
        problems.append(f"expected one root link, found {roots}")
    for lk in links:
        seen = set()
        cur = lk
        while cur in parent_of:
            if cur in seen:
                problems.append(f"link {lk}: kinematic loop")
                break
            seen.add(cur)
            cur = parent_of[cur]
    return problems
