import math

import numpy as np
import pytest

from artkit.dataset import SynthSpec, generate_object
from artkit.geometry import box, transformed, voxelize
from artkit.metrics import (EvalConfig, IDCache, ObjectGeometry, PartShape, instantiation_distance, por,
                            por_at_openness, set_metrics, set_metrics_from_distances, viou, viou_shapes)
from artkit.pipeline import object_parts
from artkit.tensor import Rng
from artkit.tree import ArticTree, PartNode, rotation_matrix, sample_joint_states


def cube(lo, hi):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    return PartShape(box((hi - lo) / 2, (hi + lo) / 2), lo, hi)


def part(fa, lo, hi, j=(0, 0, 0, 0, 0, 1), l=(0, 0, 0, 0)):
    return PartNode(fa=fa, b=tuple(lo) + tuple(hi), z=(), j=j, l=l)


# -- vIoU -----------------------------------------------------------------------

def test_viou_basic():
    a = voxelize(box((0.5,) * 3), (-1, -1, -1), (1, 1, 1), 32)
    b = voxelize(box((0.2,) * 3, (0.7, 0.7, 0.7)), (-1, -1, -1), (1, 1, 1), 32)
    empty = voxelize(box((0.1,) * 3, (5, 5, 5)), (-1, -1, -1), (1, 1, 1), 32)
    assert viou(a, a) == 1.0
    assert viou(a, b) == 0.0
    assert viou(empty, empty) == 0.0


def test_viou_half_overlap_cubes():
    v = viou_shapes(box((0.5,) * 3, (0.5, 0.5, 0.5)), box((0.5,) * 3, (1.0, 0.5, 0.5)), (0, 0, 0), (1.5, 1.5, 1.5), 128)
    assert abs(v - 1 / 3) < 0.02 / 3


def test_viou_lattice_mismatch():
    a = voxelize(box((0.5,) * 3), (-1, -1, -1), (1, 1, 1), 32)
    b = voxelize(box((0.5,) * 3), (-1, -1, -1), (1, 1, 1), 33)
    c = voxelize(box((0.5,) * 3), (-1, -1, -0.9), (1, 1, 1.1), 32)
    for other in (b, c):
        with pytest.raises(ValueError, match="lattice|origin"):
            viou(a, other)


# -- POR ----------------------------------------------------------------------

def test_por_trivial_cases():
    single = ArticTree((part(None, (0, 0, 0), (1, 1, 1)),))
    assert por(single, [cube((0, 0, 0), (1, 1, 1))]) == 0.0
    same = ArticTree((part(None, (0, 0, 0), (1, 1, 1)), part(0, (0, 0, 0), (1, 1, 1))))
    shapes = [cube((0, 0, 0), (1, 1, 1))] * 2
    assert por(same, shapes) == pytest.approx(1.0)
    apart = ArticTree((part(None, (0, 0, 0), (1, 1, 1)), part(0, (2, 0, 0), (3, 1, 1))))
    assert por(apart, [cube((0, 0, 0), (1, 1, 1)), cube((2, 0, 0), (3, 1, 1))]) == 0.0
    with pytest.raises(ValueError):
        por(apart, shapes[:1])


def _sliding_pair():
    # a unit cube slides into its neighbour along -x: overlap t, IoU t / (2 - t)
    tree = ArticTree((part(None, (0, 0, 0), (1, 1, 1)),
                      part(0, (1, 0, 0), (2, 1, 1), j=(0, 0, 0, -1, 0, 0), l=(0, 1, 0, 0))))
    return tree, [cube((0, 0, 0), (1, 1, 1)), cube((1, 0, 0), (2, 1, 1))]


def test_por_sliding_cubes_against_analytic():
    tree, shapes = _sliding_pair()
    cfg = EvalConfig(n_joint_states=6, voxel_res=96, seed=3)
    rng = np.random.default_rng(cfg.seed)
    ts = [sample_joint_states(tree, rng)[1][0] for _ in range(cfg.n_joint_states)]
    want = np.mean([t / (2 - t) for t in ts])
    assert por(tree, shapes, cfg) == pytest.approx(want, abs=0.02)
    assert por_at_openness(tree, shapes, 0.5) == pytest.approx(0.5 / 1.5, abs=0.02)
    assert por_at_openness(tree, shapes, 0.0) == 0.0


def test_por_rigid_invariance():
    tree, shapes = _sliding_pair()
    R = rotation_matrix((1, 2, 3), 0.7)
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = (0.3, -2.0, 1.1)
    moved_shapes = []
    for s in shapes:
        corners = np.array(np.meshgrid(*zip(s.lo, s.hi), indexing="ij")).reshape(3, -1).T @ R.T + T[:3, 3]
        moved_shapes.append(PartShape(transformed(s.field, T), corners.min(0), corners.max(0)))
    nodes = []
    for n in tree.nodes:
        o = R @ np.asarray(n.j[:3]) + T[:3, 3]
        d = R @ np.asarray(n.j[3:])
        nodes.append(PartNode(fa=n.fa, b=n.b, z=(), j=tuple(o) + tuple(d), l=n.l))
    moved = ArticTree(tuple(nodes))
    for rho in (0.25, 0.75):
        a = por_at_openness(tree, shapes, rho)
        b = por_at_openness(moved, moved_shapes, rho)
        assert 0 <= b <= 1 and b == pytest.approx(a, abs=0.02)


def test_eval_config_validation():
    with pytest.raises(ValueError):
        EvalConfig(n_joint_states=0)
    with pytest.raises(ValueError):
        EvalConfig(voxel_res=16)


# -- instantiation distance ---------------------------------------------------

def _corpus_object(seed, spec=SynthSpec("cabinet", 2, 1)):
    tree = generate_object(spec, Rng(seed)).tree
    return object_parts(tree, res=24).geometry


def test_id_self_and_symmetry():
    cfg = EvalConfig(surface_samples=2048)
    a, b = _corpus_object(0), _corpus_object(1, SynthSpec("cabinet", 0, 2))
    assert instantiation_distance(a, a, cfg) < 1e-3
    ab, ba = instantiation_distance(a, b, cfg), instantiation_distance(b, a, cfg)
    assert ab > 1e-3 and abs(ab - ba) < 1e-12  # shared seed makes the estimate exactly symmetric


def test_id_scale_invariant():
    cfg = EvalConfig(surface_samples=1024)
    a = _corpus_object(2)
    big = ObjectGeometry(a.tree, [m.transformed(np.diag([3.0, 3.0, 3.0, 1.0])) for m in a.meshes])
    # posing a scaled object needs scaled joints too; the rest pose and openness ratios are scale-free here
    big.tree = ArticTree(tuple(PartNode(fa=n.fa, b=tuple(3 * np.asarray(n.b)), z=(), j=tuple(3 * np.asarray(n.j[:3])) + n.j[3:],
                                        l=(3 * n.l[0], 3 * n.l[1], n.l[2], n.l[3])) for n in a.tree.nodes))
    assert instantiation_distance(a, big, cfg) < 1e-3


def test_id_two_cubes_monotone():
    # one object is two unit cubes; the other shifts the second cube by t
    from artkit.dataset import from_unit, unit_mesh
    from artkit.geometry import Mesh

    m = unit_mesh({"kind": "box", "half": [0.9, 0.9, 0.9]}, 16)

    def two(t):
        b0, b1 = np.array([0, 0, 0, 1, 1, 1.0]), np.array([1.2 + t, 0, 0, 2.2 + t, 1, 1.0])
        tree = ArticTree((part(None, b0[:3], b0[3:]), part(0, b1[:3], b1[3:])))
        return ObjectGeometry(tree, [Mesh(from_unit(m.vertices, b), m.triangles) for b in (b0, b1)])

    cfg = EvalConfig(surface_samples=2048)
    d = [instantiation_distance(two(0.0), two(t), cfg) for t in (0.1, 0.2, 0.3)]
    assert d[0] < d[1] < d[2]


def test_id_empty_geometry_names_object():
    from artkit.geometry import Mesh

    empty = ObjectGeometry(ArticTree((part(None, (0, 0, 0), (1, 1, 1)),)), [Mesh.empty()], name="ghost")
    with pytest.raises(ValueError, match="ghost"):
        instantiation_distance(empty, _corpus_object(0))


def test_id_cache_matches_direct():
    cfg = EvalConfig(surface_samples=512)
    objs = [_corpus_object(s) for s in range(3)]
    M = IDCache(cfg).matrix(objs, objs)
    assert M.shape == (3, 3)
    assert M[0, 2] == pytest.approx(instantiation_distance(objs[0], objs[2], cfg), abs=1e-15)
    assert np.allclose(np.diag(M), 0)


# -- set metrics -----------------------------------------------------------------

def brute_force(gen, ref, dist):
    G, R = len(gen), len(ref)
    mmd = sum(min(dist(g, r) for g in gen) for r in ref) / R
    covered = set()
    for g in gen:
        best, arg = math.inf, None
        for k, r in enumerate(ref):
            if dist(g, r) < best:
                best, arg = dist(g, r), k
        covered.add(arg)
    items = [(x, 0) for x in gen] + [(x, 1) for x in ref]
    correct = 0
    for i, (x, lab) in enumerate(items):
        best_same = min((dist(x, y) for k, (y, m) in enumerate(items) if k != i and m == lab), default=math.inf)
        best_other = min(dist(x, y) for k, (y, m) in enumerate(items) if m != lab)
        correct += best_same < best_other
    return {"MMD": mmd, "COV": len(covered) / R, "1-NNA": correct / (G + R)}


def euclid(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)))


@pytest.mark.parametrize("seed", range(5))
def test_set_metrics_brute_force(seed):
    rng = np.random.default_rng(seed)
    gen = list(rng.normal(size=(20, 3)))
    ref = list(rng.normal(size=(20, 3)) + 0.3 * seed)
    got = set_metrics(gen, ref, euclid)
    want = brute_force(gen, ref, euclid)
    assert got["COV"] == want["COV"] and got["1-NNA"] == want["1-NNA"]
    assert got["MMD"] == pytest.approx(want["MMD"], rel=1e-12)


def test_set_metrics_identical_sets():
    pts = list(np.random.default_rng(0).normal(size=(10, 2)))
    m = set_metrics(pts, pts, euclid)
    assert m["MMD"] == 0.0 and m["COV"] == 1.0
    assert m["1-NNA"] == 0.0  # every tie counts against the query


def test_set_metrics_single_far_gen():
    ref = list(np.random.default_rng(1).normal(size=(8, 2)))
    m = set_metrics([np.array([100.0, 100.0])], ref, euclid)
    assert m["COV"] == 1 / 8


def test_one_nna_half_for_exchangeable_sets():
    # both sets are independent jittered copies of the same reference shapes
    rng = np.random.default_rng(0)
    base = rng.normal(size=(10, 4)) * 5
    ref = [base[k] + rng.normal(size=4) for k in range(10) for _ in range(20)]
    gen = [base[k] + rng.normal(size=4) for k in range(10) for _ in range(20)]
    assert abs(set_metrics(gen, ref, euclid)["1-NNA"] - 0.5) < 0.1


def test_set_metrics_empty_raises():
    with pytest.raises(ValueError):
        set_metrics_from_distances(np.zeros((0, 3)), np.zeros((0, 0)), np.zeros((3, 3)))
