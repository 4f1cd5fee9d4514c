import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from artkit.geometry import (GridField, Mesh, box, chamfer, cleanup, cylinder, difference, grid_points,
                             intersection, marching_cubes, merge_meshes, mesh_contains, read_obj, recipe_field,
                             rounded_box, sample_surface, sphere, transformed, union, voxelize, write_obj)


def test_sdf_values():
    s = sphere(1.0, (1, 0, 0))
    assert np.allclose(s(np.array([[1, 0, 0], [3, 0, 0], [1, 0.5, 0]])), [-1, 1, -0.5])
    b = box((1, 2, 3))
    # outside a corner the distance is Euclidean to the corner
    assert np.allclose(b(np.array([[2, 3, 4], [0, 0, 0], [0, 0, 3.5], [0.5, 0, 0]])),
                       [math.sqrt(3), -1, 0.5, -0.5])
    c = cylinder(1.0, 2.0)
    assert np.allclose(c(np.array([[0, 0, 0], [2, 0, 0], [0, 0, 3], [2, 0, 3]])), [-1, 1, 1, math.sqrt(2)])
    rb = rounded_box((1, 1, 1), 0.2)
    assert np.isclose(rb(np.array([[1.0, 0, 0]]))[0], 0.0)


def test_csg():
    a, b = sphere(1.0), sphere(1.0, (1.5, 0, 0))
    p = np.array([[-0.9, 0, 0], [0.75, 0, 0], [2.4, 0, 0], [5, 0, 0]])
    assert list(union(a, b)(p) <= 0) == [True, True, True, False]
    assert list(intersection(a, b)(p) <= 0) == [False, True, False, False]
    assert list(difference(a, b)(p) <= 0) == [True, False, False, False]
    T = np.eye(4)
    T[:3, 3] = [5, 0, 0]
    assert transformed(a, T)(np.array([[5.0, 0, 0]]))[0] == -1


def test_recipe_field():
    r = {"kind": "difference", "a": {"kind": "box", "half": [1, 1, 1]},
         "b": {"kind": "union", "parts": [{"kind": "sphere", "radius": 0.5},
                                          {"kind": "cylinder", "radius": 0.1, "half_height": 2}]}}
    f = recipe_field(r)
    assert f(np.array([[0.0, 0, 0]]))[0] > 0 and f(np.array([[0.8, 0.8, 0]]))[0] < 0
    with pytest.raises(ValueError):
        recipe_field({"kind": "torus"})


def test_grid_field_exact_on_linear():
    pts, _ = grid_points(-1, 1, 5)
    lin = lambda p: 2 * p[:, 0] - p[:, 1] + 0.5 * p[:, 2]
    g = GridField(lin(pts).reshape(5, 5, 5), -1, 1, outside=7.0)
    q = np.random.default_rng(0).uniform(-1, 1, (50, 3))
    assert np.allclose(g(q), lin(q))
    assert g(np.array([[2.0, 0, 0]]))[0] == 7.0


def test_marching_cubes_sphere_area_and_volume():
    r = 0.8
    m = marching_cubes(sphere(r), -1, 1, 64)
    assert abs(m.area() / (4 * math.pi * r ** 2) - 1) < 0.02
    assert abs(m.signed_volume() / (4 / 3 * math.pi * r ** 3) - 1) < 0.02  # outward orientation
    assert np.abs(np.linalg.norm(m.vertices, axis=1) - r).max() < 0.01


def test_marching_cubes_no_crossing():
    assert marching_cubes(sphere(5.0), -1, 1, 16).is_empty
    assert marching_cubes(sphere(0.01, (3, 3, 3)), -1, 1, 16).is_empty
    with pytest.raises(ValueError):
        marching_cubes(sphere(0.5), -1, 1, 4)


def test_sample_surface_uniform():
    m = marching_cubes(sphere(1.0), -1.2, 1.2, 40)
    pts = sample_surface(m, 20000, np.random.default_rng(0))
    assert np.abs(np.linalg.norm(pts, axis=1) - 1).max() < 0.01
    for k in range(3):
        assert abs((pts[:, k] > 0).mean() - 0.5) < 0.02
    with pytest.raises(ValueError):
        sample_surface(Mesh.empty(), 3, np.random.default_rng(0))


def test_mesh_contains_agrees_with_sdf():
    f = union(box((0.5, 0.3, 0.4)), sphere(0.3, (0.5, 0, 0)))
    m = marching_cubes(f, -1, 1, 48)
    q = np.random.default_rng(1).uniform(-1, 1, (4000, 3))
    d = f(q)
    far = np.abs(d) > 0.05
    assert np.array_equal(mesh_contains(m, q[far]), d[far] <= 0)


def test_voxelize_field_and_mesh_agree():
    f = sphere(0.6)
    vf = voxelize(f, -1, 1, 32)
    vm = voxelize(marching_cubes(f, -1, 1, 48), -1, 1, 32)
    assert vf.same_lattice(vm)
    assert np.logical_xor(vf.occupancy, vm.occupancy).sum() / vf.occupancy.sum() < 0.03
    assert abs(vf.volume() / (4 / 3 * math.pi * 0.6 ** 3) - 1) < 0.05


def test_cleanup_and_merge():
    tri = Mesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 0, 0], [5, 5, 5]]), np.array([[0, 1, 2], [0, 3, 1]]))
    c = cleanup(tri)
    assert len(c.vertices) == 3 and len(c.triangles) == 1 and c.area() == 0.5
    both = merge_meshes([c, c.transformed(np.diag([2.0, 2, 2, 1]))])
    assert len(both.triangles) == 2 and both.area() == 0.5 + 2.0
    assert merge_meshes([]).is_empty


def test_obj_roundtrip(tmp_path):
    m = marching_cubes(sphere(0.5), -1, 1, 12)
    write_obj(m, tmp_path / "s.obj")
    back = read_obj(tmp_path / "s.obj")
    assert np.array_equal(back.vertices, m.vertices) and np.array_equal(back.triangles, m.triangles)


def _brute_chamfer(a, b):
    d = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    return 0.5 * (d.min(1).mean() + d.min(0).mean())


@settings(max_examples=20)
@given(st.integers(0, 10_000))
def test_chamfer_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(50, 3)), rng.normal(size=(70, 3))
    assert abs(chamfer(a, b) - _brute_chamfer(a, b)) < 1e-12
    assert chamfer(a, a) == 0.0
    assert chamfer(a, b) == chamfer(b, a)


def test_chamfer_hand_example():
    a = np.array([[0.0, 0, 0]])
    b = np.array([[1.0, 0, 0], [0, 2, 0]])
    assert chamfer(a, b) == 0.5 * (1 + (1 + 4) / 2)
    with pytest.raises(ValueError):
        chamfer(a, np.zeros((0, 3)))
