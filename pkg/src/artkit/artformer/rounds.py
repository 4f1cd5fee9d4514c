"""Teacher-forcing round construction and the training objective."""
from __future__ import annotations

from dataclasses import dataclass

import torch

from ..tensor import bce_with_logits, kl_categorical
from ..tree import ArticTree
from .model import RoundPrediction

TERMINAL = -1


def canonical_children(tree: ArticTree, i: int) -> list[int]:
    """Children of ``i`` ordered by bbox center, lexicographic in (z, y, x)."""
    kids = tree.children(i)
    return sorted(kids, key=lambda k: (tree.nodes[k].center[2], tree.nodes[k].center[1], tree.nodes[k].center[0], k))


@dataclass(frozen=True)
class Round:
    """One teacher-forced round.

    ``context`` lists tree indices in context order (the start token is the
    implicit position 0). ``targets[p]`` is the tree index of the child token
    ``p`` should emit, or TERMINAL.
    """

    context: tuple[int, ...]
    targets: tuple[int, ...]


def teacher_forcing_rounds(tree: ArticTree) -> list[Round]:
    """Replay decoding with ground-truth attributes until every token is terminal.

    Round 1 has context {start} and targets the root. Afterwards the start
    token is terminal; each node emits its canonical children one per round,
    then stays terminal.
    """
    order = {i: canonical_children(tree, i) for i in range(len(tree.nodes))}
    emitted: list[int] = []
    next_child = {}
    rounds = []
    while True:
        if not emitted:
            targets = [tree.root]
        else:
            targets = [TERMINAL]
            for v in emitted:
                k = next_child[v]
                targets.append(order[v][k] if k < len(order[v]) else TERMINAL)
        rounds.append(Round(tuple(emitted), tuple(targets)))
        new = [t for t in targets if t != TERMINAL]
        if not new:
            return rounds
        for pos, t in enumerate(targets):
            if t != TERMINAL and pos > 0:
                next_child[emitted[pos - 1]] += 1
        for t in new:
            emitted.append(t)
            next_child[t] = 0


@dataclass
class RoundTargets:
    """Padded targets aligned with a RoundPrediction batch (B, S)."""

    terminal: torch.Tensor  # float 0/1
    valid: torch.Tensor  # bool, real (non-padding) tokens
    attrs: torch.Tensor  # (B, S, 16 + c_s): b, j, l, c_s
    D: torch.Tensor  # (B, S, 4, N)

    @property
    def child(self) -> torch.Tensor:
        return self.valid & (self.terminal < 0.5)


def loss_total(pred: RoundPrediction, targets: RoundTargets, beta_o: float = 1.0,
               beta_p: float = 1.0) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """beta_o * BCE(o) + beta_P * mean_t KL(softmax(P_t) || softmax(D_t)) + MSE(b, j, l, c_s).

    BCE averages over all real tokens; the attribute and codebook terms
    average over tokens whose target is a child and vanish on terminal ones.
    """
    valid = targets.valid.to(pred.o.dtype)
    l_o = (bce_with_logits(pred.o, targets.terminal) * valid).sum() / valid.sum().clamp(min=1.0)
    child = targets.child.to(pred.o.dtype)
    n_child = child.sum().clamp(min=1.0)
    sq = ((pred.attributes() - targets.attrs.to(pred.o.dtype)) ** 2).mean(dim=-1)
    l_a = (sq * child).sum() / n_child
    kl = kl_categorical(pred.P, targets.D.to(pred.o.dtype)).mean(dim=-1)
    l_p = (kl * child).sum() / n_child
    total = beta_o * l_o + beta_p * l_p + l_a
    return total, {"L_o": l_o, "L_a": l_a, "L_P": l_p}
