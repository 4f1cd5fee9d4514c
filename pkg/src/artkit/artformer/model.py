"""Tree position embedding, token embedding, toy text encoder and the round transformer."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from ..checkpoint import file_hash, load_arrays, save_arrays
from ..tensor import AttentionBlock, BiGRU, mlp
from ..text import bucket_ids
from ..tree import PartNode
from .config import ArtFormerConfig

ATTR_TARGET = 6 + 6 + 4  # b, j, l regressed per token (c_s appended)


def ancestor_slots(parents: Sequence[int | None], slots: int) -> list[list[int]]:
    """For each node, its own index then its ancestors' (nearest first), cut to ``slots``."""
    out = []
    for v in range(len(parents)):
        path = [v]
        while parents[path[-1]] is not None and len(path) < slots:
            path.append(parents[path[-1]])
        out.append(path)
    return out


def root_paths(parents: Sequence[int | None]) -> list[list[int]]:
    """Root -> v index sequence for every node."""
    out = []
    for v in range(len(parents)):
        path = [v]
        while parents[path[-1]] is not None:
            path.append(parents[path[-1]])
            if len(path) > len(parents):
                raise ValueError("parent links contain a cycle")
        out.append(path[::-1])
    return out


class TreePositionEmbedding(nn.Module):
    """p_i: BiGRU summaries of root->ancestor attribute paths, nearest ancestor first.

    Slot k of p_i holds a_{p}, where p is the k-th node on the path from i
    towards the root (slot 0 is i itself); deeper paths are truncated to the
    nearest ``slots`` entries and shallower ones zero padded.
    """

    def __init__(self, attr_dim: int, a_dim: int, p_dim: int) -> None:
        super().__init__()
        self.a_dim = a_dim
        self.slots = p_dim // a_dim
        self.gru = BiGRU(attr_dim, a_dim // 2)

    def path_codes(self, attrs: torch.Tensor, parents: Sequence[int | None]) -> torch.Tensor:
        """a_v for every node v: the BiGRU over attributes along root -> v."""
        paths = root_paths(parents)
        if not paths:
            return attrs.new_zeros(0, self.a_dim)
        L = max(len(p) for p in paths)
        index = torch.tensor([p + [p[-1]] * (L - len(p)) for p in paths], dtype=torch.long)
        return self.gru(attrs[index], [len(p) for p in paths])

    def forward(self, attrs: torch.Tensor, parents: Sequence[int | None]) -> torch.Tensor:
        n = attrs.shape[0]
        a = self.path_codes(attrs, parents)
        padded = torch.cat([a, a.new_zeros(1, self.a_dim)])
        rows = [s + [n] * (self.slots - len(s)) for s in ancestor_slots(parents, self.slots)]
        index = torch.tensor(rows, dtype=torch.long).reshape(n, self.slots)
        return padded[index].reshape(n, self.slots * self.a_dim)


class TextEncoder(nn.Module):
    """Hashed word embeddings + learned positions + self-attention blocks."""

    def __init__(self, cfg: ArtFormerConfig) -> None:
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        self.embed = nn.Embedding(cfg.text_buckets, d, padding_idx=0)
        self.pos = nn.Embedding(cfg.max_tokens, d)
        self.blocks = nn.ModuleList([AttentionBlock(d, cfg.heads, cross=False) for _ in range(cfg.text_blocks)])
        self.norm = nn.LayerNorm(d)

    def ids(self, texts: Sequence[str]) -> tuple[torch.Tensor, torch.Tensor]:
        rows = [bucket_ids(t, self.cfg.text_buckets, self.cfg.text_salt)[: self.cfg.max_tokens] for t in texts]
        L = max([len(r) for r in rows] + [0])
        ids = torch.zeros(len(rows), L, dtype=torch.long)
        for i, r in enumerate(rows):
            ids[i, : len(r)] = torch.as_tensor(r, dtype=torch.long)
        return ids, ids > 0

    def forward(self, texts: Sequence[str]) -> tuple[torch.Tensor, torch.Tensor]:
        """Condition tokens (B, L, d) and validity mask (B, L); L = word count capped at max_tokens."""
        ids, mask = self.ids(texts)
        x = self.embed(ids) + self.pos(torch.arange(ids.shape[1]))[None]
        for blk in self.blocks:
            x = blk(x, mask)
        return self.norm(x) * mask[..., None], mask


@dataclass
class RoundPrediction:
    """Per context token outputs: o (B, S), b/j (B, S, 6), l (B, S, 4), c_s (B, S, c_s), P (B, S, 4, N)."""

    o: torch.Tensor
    b: torch.Tensor
    j: torch.Tensor
    l: torch.Tensor
    c_s: torch.Tensor
    P: torch.Tensor

    def attributes(self) -> torch.Tensor:
        return torch.cat([self.b, self.j, self.l, self.c_s], dim=-1)


class ArtFormer(nn.Module):
    def __init__(self, cfg: ArtFormerConfig) -> None:
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        self.text = TextEncoder(cfg)
        self.tpe = TreePositionEmbedding(cfg.attr_dim, cfg.a_dim, cfg.p_dim)
        self.mapper = mlp([cfg.attr_dim, d, d])
        self.p_proj = nn.Linear(cfg.p_dim, d)
        self.start = nn.Parameter(0.02 * torch.randn(d))
        self.blocks = nn.ModuleList([AttentionBlock(d, cfg.heads, cross=True) for _ in range(cfg.blocks)])
        self.norm = nn.LayerNorm(d)
        self.head = nn.Linear(d, 1 + ATTR_TARGET + cfg.c_s + 4 * cfg.codebook_rows)

    # -- tokens ------------------------------------------------------------------
    def node_attributes(self, nodes: Sequence[PartNode]) -> torch.Tensor:
        """[b, z * z_scale, j, l] per node; fa is carried by the position embedding only."""
        dz = self.cfg.d_z
        rows = []
        for n in nodes:
            z = np.asarray(n.z, dtype=np.float64)
            if len(z) != dz:
                raise ValueError(f"node latent has {len(z)} entries, model expects {dz}")
            rows.append(np.concatenate([n.b, z * self.cfg.z_scale, n.j, n.l]))
        dtype = self.start.dtype
        return torch.as_tensor(np.array(rows).reshape(len(rows), self.cfg.attr_dim), dtype=dtype)

    def embed_token(self, attrs: torch.Tensor, p: torch.Tensor) -> torch.Tensor:
        if attrs.shape[-1] != self.cfg.attr_dim or p.shape[-1] != self.cfg.p_dim:
            raise ValueError(f"expected attribute/TPE widths {self.cfg.attr_dim}/{self.cfg.p_dim}, "
                             f"got {attrs.shape[-1]}/{p.shape[-1]}")
        return self.mapper(attrs) + self.p_proj(p)

    def embed_nodes(self, attrs: torch.Tensor, parents: Sequence[int | None]) -> torch.Tensor:
        return self.embed_token(attrs, self.tpe(attrs, parents))

    def context(self, node_emb: torch.Tensor) -> torch.Tensor:
        """Start token followed by node embeddings: (1 + n, d)."""
        return torch.cat([self.start[None], node_emb])

    # -- transformer ---------------------------------------------------------------
    def forward_round(self, ctx: torch.Tensor, ctx_mask: torch.Tensor, cond: torch.Tensor,
                      cond_mask: torch.Tensor) -> RoundPrediction:
        x = ctx
        for blk in self.blocks:
            x = blk(x, ctx_mask, cond, cond_mask)
        h = self.head(self.norm(x))
        N, cs = self.cfg.codebook_rows, self.cfg.c_s
        o, b, j, l, c_s, P = torch.split(h, [1, 6, 6, 4, cs, 4 * N], dim=-1)
        return RoundPrediction(o[..., 0], b, j, l, c_s, P.reshape(*P.shape[:-1], 4, N))

    def round_fn(self, text: str):
        """Closure mapping a node list to numpy predictions for [start] + nodes."""
        with torch.no_grad():
            cond, cond_mask = self.text([text])

        @torch.no_grad()
        def run(nodes: Sequence[PartNode]) -> dict[str, np.ndarray]:
            if nodes:
                attrs = self.node_attributes(nodes)
                emb = self.embed_nodes(attrs, [n.fa for n in nodes])
            else:
                emb = self.start.new_zeros(0, self.cfg.d_model)
            ctx = self.context(emb)[None]
            pred = self.forward_round(ctx, torch.ones(1, ctx.shape[1], dtype=torch.bool), cond, cond_mask)
            return {k: getattr(pred, k)[0].double().numpy() for k in ("o", "b", "j", "l", "c_s", "P")}

        return run

    # -- persistence ---------------------------------------------------------------
    def save(self, path, extra=None) -> str:
        meta = {"kind": "artformer", "config": self.cfg.to_dict(), **(extra or {})}
        return save_arrays(path, self.state_dict(), meta)

    @classmethod
    def load(cls, path) -> "ArtFormer":
        arrays, meta = load_arrays(path)
        if meta.get("kind") != "artformer":
            raise ValueError(f"{path} is not an artformer checkpoint")
        model = cls(ArtFormerConfig.from_dict(meta["config"]))
        state = model.state_dict()
        model.load_state_dict({k: torch.from_numpy(arrays[k].copy()).to(state[k].dtype) for k in state})
        model.meta = meta
        model.hash = file_hash(path)
        model.eval()
        return model
