"""ArtFormer training on teacher-forced rounds, held-out evaluation and generation helpers."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import torch

from ..dataset import Corpus
from ..tensor import Rng
from ..tree import ArticTree, PartNode
from .config import ArtFormerConfig
from .model import ArtFormer
from .rounds import TERMINAL, Round, RoundTargets, loss_total, teacher_forcing_rounds

Log = Callable[[dict[str, Any]], None]


@dataclass
class ObjectExample:
    oid: str
    tree: ArticTree  # nodes carry cached z
    targets: np.ndarray  # (n, 16 + c_s): b, j, l, c_s
    D: np.ndarray  # (n, 4, N)
    rounds: list[Round]
    texts: list[str]


def with_latents(tree: ArticTree, z: np.ndarray) -> ArticTree:
    return tree.with_nodes([PartNode(fa=n.fa, b=n.b, z=tuple(float(v) for v in z[i]), j=n.j, l=n.l,
                                     label=n.label, shape=n.shape) for i, n in enumerate(tree.nodes)])


def make_examples(corpus: Corpus, caches: Mapping[str, Mapping[str, np.ndarray]],
                  ids: Sequence[str]) -> list[ObjectExample]:
    out = []
    for oid in ids:
        tree, meta = corpus.objects[oid]
        cache = caches[oid]
        tree = with_latents(tree, cache["z"])
        attrs = np.array([np.concatenate([n.b, n.j, n.l]) for n in tree.nodes])
        targets = np.concatenate([attrs, cache["c_s"]], axis=1)
        out.append(ObjectExample(oid, tree, targets, cache["D"], teacher_forcing_rounds(tree), list(meta["texts"])))
    return out


def batch_forward(model: ArtFormer, examples: Sequence[ObjectExample], texts: Sequence[str]):
    """Run every teacher-forced round of every example in one padded batch."""
    dtype = model.start.dtype
    attrs, parents, offsets = [], [], []
    base = 0
    for ex in examples:
        offsets.append(base)
        attrs.append(model.node_attributes(ex.tree.nodes))
        parents += [None if n.fa is None else n.fa + base for n in ex.tree.nodes]
        base += len(ex.tree.nodes)
    emb = model.embed_nodes(torch.cat(attrs), parents)
    cond, cond_mask = model.text(list(texts))
    rows, owners, tgt = [], [], []
    for e, (ex, off) in enumerate(zip(examples, offsets)):
        for rd in ex.rounds:
            idx = torch.as_tensor([off + c for c in rd.context], dtype=torch.long)
            rows.append(model.context(emb[idx]))
            owners.append(e)
            tgt.append((ex, rd))
    S = max(r.shape[0] for r in rows)
    R = len(rows)
    ctx = emb.new_zeros(R, S, model.cfg.d_model)
    valid = torch.zeros(R, S, dtype=torch.bool)
    terminal = torch.zeros(R, S, dtype=dtype)
    t_attrs = torch.zeros(R, S, examples[0].targets.shape[1], dtype=dtype)
    t_D = torch.zeros(R, S, *examples[0].D.shape[1:], dtype=dtype)
    for k, (row, (ex, rd)) in enumerate(zip(rows, tgt)):
        ctx[k, : row.shape[0]] = row
        valid[k, : row.shape[0]] = True
        for p, t in enumerate(rd.targets):
            if t == TERMINAL:
                terminal[k, p] = 1.0
            else:
                t_attrs[k, p] = torch.as_tensor(ex.targets[t], dtype=dtype)
                t_D[k, p] = torch.as_tensor(ex.D[t], dtype=dtype)
    own = torch.as_tensor(owners, dtype=torch.long)
    pred = model.forward_round(ctx, valid, cond[own], cond_mask[own])
    return pred, RoundTargets(terminal, valid, t_attrs, t_D)


def train_artformer(examples: Sequence[ObjectExample], cfg: ArtFormerConfig, seed: int,
                    log: Log | None = None, every: int = 100) -> tuple[ArtFormer, list[dict[str, float]]]:
    """AdamW (beta1 0.9, beta2 0.999) on the round objective; one random text variant per object per step."""
    rng = Rng(seed, "artformer")
    torch.manual_seed(int(rng.derive("init").integers(0, 2 ** 31)))
    model = ArtFormer(cfg)
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, betas=(0.9, 0.999), weight_decay=cfg.weight_decay)
    history = []
    B = min(cfg.batch, len(examples))
    for step in range(cfg.steps):
        srng = rng.derive("step", step)
        pick = srng.choice(len(examples), size=B, replace=False)
        batch = [examples[i] for i in pick]
        texts = [ex.texts[int(srng.integers(0, len(ex.texts)))] for ex in batch]
        lr = cfg.lr * min(1.0, (step + 1) / 100) * (0.1 + 0.9 * (1 - step / max(1, cfg.steps)))
        for g in opt.param_groups:
            g["lr"] = lr
        pred, targets = batch_forward(model, batch, texts)
        loss, parts = loss_total(pred, targets, cfg.beta_o, cfg.beta_p)
        if not torch.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at step {step}: "
                                     + ", ".join(f"{k}={v.item():.4g}" for k, v in parts.items()))
        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), 1.0)
        opt.step()
        record = {"step": step, "loss": loss.item(), **{k: v.item() for k, v in parts.items()}}
        history.append(record)
        if log is not None and (step % every == 0 or step == cfg.steps - 1):
            log({"stage": "artformer", **record})
    model.eval()
    return model, history


@torch.no_grad()
def terminal_accuracy(model: ArtFormer, examples: Sequence[ObjectExample], threshold: float = 0.5) -> dict[str, float]:
    """Teacher-forced terminal-decision accuracy over every text variant.

    ``all`` scores every context token; ``open`` only the tokens whose
    decision matters during decoding (the start token in round 1 and nodes
    that have not yet produced a terminal).
    """
    hit_all = n_all = hit_open = n_open = 0
    for ex in examples:
        for text in ex.texts:
            pred, targets = batch_forward(model, [ex], [text])
            guess = torch.sigmoid(pred.o) > threshold
            truth = targets.terminal > 0.5
            ok = (guess == truth) & targets.valid
            hit_all += int(ok.sum())
            n_all += int(targets.valid.sum())
            closed: set[int] = set()
            for k, rd in enumerate(ex.rounds):
                positions = [0] if k == 0 else []
                positions += [p + 1 for p, v in enumerate(rd.context) if v not in closed]
                for p in positions:
                    hit_open += int(ok[k, p])
                    n_open += 1
                for p, v in enumerate(rd.context):
                    if rd.targets[p + 1] == TERMINAL:
                        closed.add(v)
    return {"all": hit_all / max(1, n_all), "open": hit_open / max(1, n_open)}
