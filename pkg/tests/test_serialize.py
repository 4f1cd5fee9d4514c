import json
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings

from artkit.serialize import (ArticFormatError, export_urdf, from_json, read_object, to_dict, to_json,
                              validate_urdf)
from artkit.tree import ArticTree, PartNode, pose_at_openness
from conftest import simple_node, trees_st


@given(trees_st())
def test_json_roundtrip_exact(tree):
    text = to_json(tree, {"k": 1})
    back, meta = read_object(text)
    assert back.nodes == tree.nodes and meta == {"k": 1}
    assert to_json(back, meta) == text


def test_json_layout():
    tree = ArticTree((simple_node(label="base"), simple_node(fa=0, label="door", l=(0, 0, 0, 1.5))))
    data = json.loads(to_json(tree))
    assert data["format"] == "artic/1"
    assert data["nodes"][1] == {"fa": 0, "label": "door", "b": [0, 0, 0, 1, 1, 1], "z": [],
                                "j": [0, 0, 0, 1, 0, 0], "l": [0, 0, 0, 1.5]}


@pytest.mark.parametrize("text, fragment", [
    ("{", "line 1"),
    ('{"format": "other", "nodes": []}', "format"),
    ('{"format": "artic/1", "nodes": [{"fa": null, "b": [0, 0], "j": [0,0,0,1,0,0], "l": [0,0,0,0]}]}',
     "nodes[0].b"),
    ('{"format": "artic/1", "nodes": [{"fa": "x", "b": [0,0,0,1,1,1], "j": [0,0,0,1,0,0], "l": [0,0,0,0]}]}',
     "nodes[0].fa"),
])
def test_malformed_json(text, fragment):
    with pytest.raises(ArticFormatError, match=fragment.replace("[", r"\[").replace("]", r"\]")):
        read_object(text)


def test_nan_refused():
    with pytest.raises(ValueError):
        to_json(ArticTree((simple_node(b=(0, 0, 0, float("nan"), 1, 1)),)))


def _axis_motion(axis, t, r):
    """Homogeneous motion along/about a unit axis through the local origin."""
    a = np.asarray(axis) / np.linalg.norm(axis)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    T = np.eye(4)
    T[:3, :3] = np.eye(3) + math.sin(r) * K + (1 - math.cos(r)) * K @ K
    T[:3, 3] = t * a
    return T


def _urdf_link_poses(text, q):
    """Forward kinematics straight from URDF XML; q maps joint name -> value."""
    robot = ET.fromstring(text)
    joints = {j.find("child").get("link"): j for j in robot.findall("joint")}
    poses = {}

    def pose(link):
        if link in poses:
            return poses[link]
        if link not in joints:
            poses[link] = np.eye(4)
            return poses[link]
        j = joints[link]
        origin = np.eye(4)
        origin[:3, 3] = [float(v) for v in j.find("origin").get("xyz").split()]
        axis = [float(v) for v in j.find("axis").get("xyz").split()] if j.find("axis") is not None else [1, 0, 0]
        v = q.get(j.get("name"), 0.0)
        motion = {"revolute": lambda: _axis_motion(axis, 0, v), "prismatic": lambda: _axis_motion(axis, v, 0),
                  "fixed": lambda: np.eye(4)}[j.get("type")]()
        poses[link] = pose(j.find("parent").get("link")) @ origin @ motion
        return poses[link]

    return {l.get("name"): pose(l.get("name")) for l in robot.findall("link")}


@settings(max_examples=40)
@given(trees_st())
def test_urdf_matches_forward_kinematics(tree):
    text = export_urdf(tree, {i: f"p{i}.obj" for i in range(len(tree.nodes))})
    assert validate_urdf(text) == []
    rho = 0.7
    q = {}
    for i, n in enumerate(tree.nodes):
        t = n.l[0] + rho * (n.l[1] - n.l[0])
        r = n.l[2] + rho * (n.l[3] - n.l[2])
        q.update({f"joint_{i}": r if n.l[2:] != (0, 0) else t, f"joint_{i}_rot": r, f"joint_{i}_slide": t})
    links = _urdf_link_poses(text, q)
    for i, (T, n) in enumerate(zip(pose_at_openness(tree, rho), tree.nodes)):
        o = np.zeros(3) if n.fa is None else np.asarray(n.j[:3])
        to_rest = np.eye(4)
        to_rest[:3, 3] = -o  # visual offset inside the link frame
        assert np.allclose(links[f"part_{i}"] @ to_rest, T, atol=1e-9)


def test_urdf_mixed_joint_has_slider():
    tree = ArticTree((simple_node(), simple_node(fa=0, j=(0, 0, 0, 0, 0, 1), l=(0, 0.2, 0, 1.0))))
    text = export_urdf(tree)
    assert validate_urdf(text) == []
    names = [j.get("name") for j in ET.fromstring(text).findall("joint")]
    assert names == ["joint_1_rot", "joint_1_slide"]


@pytest.mark.parametrize("mutate, fragment", [
    (lambda t: t.replace('type="revolute"', 'type="hinge"'), "invalid type"),
    (lambda t: t.replace('<child link="part_1"', '<child link="nowhere"'), "does not exist"),
    (lambda t: t.replace('<axis xyz="0.0 0.0 1.0"', '<axis xyz="0 0 0"'), "zero axis"),
    (lambda t: t.replace("<robot", "<robt").replace("</robot>", "</robt>"), "expected <robot>"),
    (lambda t: t[:-20], "xml"),
])
def test_urdf_validator_rejects(mutate, fragment):
    tree = ArticTree((simple_node(), simple_node(fa=0, j=(0, 0, 0, 0, 0, 1), l=(0, 0, 0, 1.0))))
    text = export_urdf(tree)
    assert validate_urdf(text) == []
    problems = validate_urdf(mutate(text))
    assert any(fragment in p for p in problems), problems


def test_urdf_validator_rejects_two_parents():
    tree = ArticTree((simple_node(), simple_node(fa=0), simple_node(fa=0)))
    text = export_urdf(tree).replace('<child link="part_2"', '<child link="part_1"')
    assert any("already has a parent" in p for p in validate_urdf(text))
