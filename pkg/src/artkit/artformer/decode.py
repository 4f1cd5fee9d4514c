"""Round-based iterative decoding and editing."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import torch

from ..tensor import Rng
from ..tree import ArticTree, PartNode

RoundFn = Callable[[Sequence[PartNode]], Mapping[str, np.ndarray]]
ROOT_JOINT = (0.0, 0.0, 0.0, 0.0, 0.0, 1.0)
START = "S"


class EmptyObjectError(RuntimeError):
    """The start token was terminal in round 1: nothing was generated."""


@dataclass
class DecodeResult:
    tree: ArticTree
    rounds: int
    truncated: bool = False
    trace: list[dict[str, Any]] = field(default_factory=list)


def project_attributes(b, j, l, t_snap: float = 0.05, r_snap: float = 0.15):
    """Map raw head outputs onto valid node attributes.

    Box corners are sorted per axis, the joint direction is normalised and
    limit endpoints with magnitude below the snap tolerance become exactly 0,
    as do whole ranges narrower than it, so near-fixed joints are fixed.
    """
    b = np.asarray(b, dtype=np.float64)
    lo, hi = np.minimum(b[:3], b[3:]), np.maximum(b[:3], b[3:])
    hi = np.maximum(hi, lo + 1e-3)
    j = np.asarray(j, dtype=np.float64)
    d = j[3:]
    norm = np.linalg.norm(d)
    d = d / norm if norm > 1e-8 else np.array([0.0, 0.0, 1.0])
    l = np.asarray(l, dtype=np.float64).copy()
    l[:2][np.abs(l[:2]) < t_snap] = 0.0
    l[2:][np.abs(l[2:]) < r_snap] = 0.0
    t = np.sort(l[:2])
    r = np.sort(l[2:])
    if t[1] - t[0] < t_snap:
        t[:] = 0.0
    if r[1] - r[0] < r_snap:
        r[:] = 0.0
    return (tuple(np.concatenate([lo, hi])), tuple(np.concatenate([j[:3], d])), tuple(np.concatenate([t, r])))


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x)) if x >= 0 else math.exp(x) / (1.0 + math.exp(x))


def _instantiate(requests, prior, rng: Rng, d_z: int, t_snap: float, r_snap: float) -> list[PartNode]:
    """Build nodes for (parent, head outputs) requests, sampling z from the prior in one batch."""
    if not requests:
        return []
    if prior is not None:
        P = torch.as_tensor(np.stack([r["P"] for _, r in requests]), dtype=torch.float32)
        c_s = torch.as_tensor(np.stack([r["c_s"] for _, r in requests]), dtype=torch.float32)
        zs = prior.sample_z(P, c_s, rng).double().numpy()
        labels = [prior.nearest_label(c) for c in c_s]
    else:
        zs = np.zeros((len(requests), d_z))
        labels = [""] * len(requests)
    out = []
    for (parent, r), z, label in zip(requests, zs, labels):
        b, j, l = project_attributes(r["b"], r["j"], r["l"], t_snap, r_snap)
        if parent is None:
            j, l = ROOT_JOINT, (0.0, 0.0, 0.0, 0.0)
        out.append(PartNode(fa=parent, b=b, z=tuple(float(v) for v in z), j=j, l=l, label=label))
    return out


def iterative_decode(round_fn: RoundFn, prior=None, rng: Rng | None = None, max_rounds: int = 24,
                     max_nodes: int = 16, threshold: float = 0.5, d_z: int = 0,
                     initial: Sequence[PartNode] = (), open_nodes: Sequence[int] = (),
                     t_snap: float = 0.05, r_snap: float = 0.15) -> DecodeResult:
    """Generate a tree one child per open token per round.

    Every round feeds [start] + all nodes so far. An open token whose
    terminal probability exceeds ``threshold`` closes; otherwise it emits a
    child, which joins the open set. The start token closes after emitting
    the root. With ``initial`` nodes the start token is closed and only
    ``open_nodes`` may grow (editing).
    """
    rng = rng or Rng(0, "decode")
    nodes = list(initial)
    start_open = not nodes
    open_set = [i for i in sorted(set(open_nodes)) if 0 <= i < len(nodes)]
    trace: list[dict[str, Any]] = []
    r = 0
    while start_open or open_set:
        if r >= max_rounds or len(nodes) >= max_nodes:
            return DecodeResult(ArticTree(tuple(nodes)), r, True, trace)
        r += 1
        out = round_fn(nodes)
        decisions = []
        requests = []
        if start_open:
            p = _sigmoid(float(out["o"][0]))
            if p > threshold:
                raise EmptyObjectError("start token was terminal in round 1")
            requests.append((None, {k: out[k][0] for k in ("b", "j", "l", "c_s", "P")}))
            decisions.append({"token": START, "p_terminal": p, "action": "child"})
            start_open = False
        still_open = []
        for i in open_set:
            p = _sigmoid(float(out["o"][i + 1]))
            if p > threshold:
                decisions.append({"token": i, "p_terminal": p, "action": "terminal"})
                continue
            if len(nodes) + len(requests) >= max_nodes:
                still_open.append(i)
                decisions.append({"token": i, "p_terminal": p, "action": "capped"})
                continue
            requests.append((i, {k: out[k][i + 1] for k in ("b", "j", "l", "c_s", "P")}))
            decisions.append({"token": i, "p_terminal": p, "action": "child"})
            still_open.append(i)
        new = _instantiate(requests, prior, rng.derive("round", r), d_z, t_snap, r_snap)
        first = len(nodes)
        nodes.extend(new)
        k = 0
        for dct in decisions:
            if dct["action"] == "child":
                dct["child"] = first + k
                k += 1
        open_set = still_open + list(range(first, len(nodes)))
        trace.append({"round": r, "context": len(nodes) - len(new) + 1, "decisions": decisions})
    return DecodeResult(ArticTree(tuple(nodes)), r, False, trace)


def remove_parts(tree: ArticTree, remove: Sequence[int]) -> tuple[list[PartNode], list[int]]:
    """Drop ``remove`` and their descendants; return kept nodes (reindexed) and reopened parents."""
    gone = set()
    for i in remove:
        if not 0 <= i < len(tree.nodes):
            raise IndexError(f"no part {i} in a {len(tree.nodes)}-part tree")
        gone.add(i)
    for i, n in enumerate(tree.nodes):
        if n.fa is not None and n.fa in gone:
            gone.add(i)
    keep = [i for i in range(len(tree.nodes)) if i not in gone]
    new_index = {old: k for k, old in enumerate(keep)}
    nodes = []
    for old in keep:
        n = tree.nodes[old]
        fa = None if n.fa is None else new_index[n.fa]
        nodes.append(PartNode(fa=fa, b=n.b, z=n.z, j=n.j, l=n.l, label=n.label, shape=n.shape))
    reopen = sorted({new_index[tree.nodes[i].fa] for i in gone
                     if tree.nodes[i].fa is not None and tree.nodes[i].fa in new_index})
    return nodes, reopen


def edit(tree: ArticTree, remove: Sequence[int], round_fn: RoundFn, prior=None, rng: Rng | None = None,
         **kw) -> DecodeResult:
    """Regenerate removed sub-parts: the kept tree is context, parents of removed parts reopen."""
    nodes, reopen = remove_parts(tree, remove)
    return iterative_decode(round_fn, prior, rng, initial=nodes, open_nodes=reopen, **kw)
