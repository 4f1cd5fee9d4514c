import math

import numpy as np
import pytest
import torch
from hypothesis import strategies as st

from artkit.tree import ArticTree, PartNode

torch.set_num_threads(1)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


@st.composite
def nodes_st(draw, fa, d_z=3):
    lo = [draw(finite) for _ in range(3)]
    ext = [draw(st.floats(0, 5, allow_nan=False)) for _ in range(3)]
    v = np.array([draw(st.floats(-1, 1)) for _ in range(3)])
    if np.linalg.norm(v) < 1e-3:
        v = np.array([0.0, 0.0, 1.0])
    d = v / np.linalg.norm(v)
    kind = draw(st.sampled_from(["fixed", "prismatic", "revolute", "mixed"]))
    t = sorted([draw(st.floats(-2, 2)), draw(st.floats(-2, 2))]) if kind in ("prismatic", "mixed") else [0.0, 0.0]
    r = sorted([draw(st.floats(-math.pi, math.pi)), draw(st.floats(-math.pi, math.pi))]) \
        if kind in ("revolute", "mixed") else [0.0, 0.0]
    return PartNode(fa=fa, b=lo + [a + e for a, e in zip(lo, ext)], z=[draw(finite) for _ in range(d_z)],
                    j=[draw(finite) for _ in range(3)] + list(d), l=t + r,
                    label=draw(st.sampled_from(["drawer", "door", "handle", "base", ""])))


@st.composite
def trees_st(draw, max_nodes=8, d_z=3):
    n = draw(st.integers(1, max_nodes))
    nodes = [draw(nodes_st(None, d_z))]
    for i in range(1, n):
        nodes.append(draw(nodes_st(draw(st.integers(0, i - 1)), d_z)))
    return ArticTree(tuple(nodes))


def simple_node(fa=None, b=(0, 0, 0, 1, 1, 1), j=(0, 0, 0, 1, 0, 0), l=(0, 0, 0, 0), d_z=0, label=""):
    return PartNode(fa=fa, b=b, z=(0.0,) * d_z, j=j, l=l, label=label)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def tiny_prior_config(**kw):
    from artkit.prior import PriorConfig

    base = dict(d_z=8, plane_channels=4, plane_res=8, point_hidden=16, vae_channels=8, sdf_hidden=16,
                points=64, queries=128, codebook_rows=8, c_g=16, c_s=8, enc_hidden=16, steps=10,
                den_dim=16, den_blocks=1, den_heads=2, vae_steps=20, diffusion_steps=20, batch=4,
                mesh_res=24, point_pool=256, query_pool=512)
    base.update(kw)
    return PriorConfig(**base)


@pytest.fixture(scope="session")
def trained_pipeline(tmp_path_factory):
    """Desk-profile pipeline on a 200-object corpus with seed 0, run through the CLI single-threaded."""
    import time
    from types import SimpleNamespace

    from artkit.artformer import ArtFormer
    from artkit.cli import main
    from artkit.dataset import load_dataset
    from artkit.prior import ShapePrior

    root = tmp_path_factory.mktemp("pipeline")
    steps = [
        ["dataset", "build", "--out", root / "data", "--count", 200],
        ["prior", "train", "--data", root / "data", "--out", root / "prior.bin"],
        ["prior", "preprocess", "--data", root / "data", "--prior", root / "prior.bin", "--out", root / "caches"],
        ["artformer", "train", "--data", root / "data", "--prior", root / "prior.bin", "--caches", root / "caches",
         "--out", root / "artformer.bin"],
    ]
    t = time.perf_counter()
    for argv in steps:
        assert main(["--deterministic"] + [str(a) for a in argv] + ["--seed", "0"]) == 0, argv
    seconds = time.perf_counter() - t
    prior = ShapePrior.load(root / "prior.bin")
    return SimpleNamespace(root=root, seconds=seconds, corpus=load_dataset(root / "data"), prior=prior,
                           generator=prior.generator(), model=ArtFormer.load(root / "artformer.bin"))
