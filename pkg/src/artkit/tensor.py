"""Differentiable building blocks shared by the shape prior and the transformer.

Reverse-mode autodiff comes from torch; this module adds the pieces the
pipeline relies on with exact semantics: a portable counter-based RNG,
Gumbel-Softmax with injectable noise, categorical KL, a bidirectional GRU
summariser, an attention block with well-defined empty-context behaviour
and a central-difference gradient checker.
"""
from __future__ import annotations

import math
import os
import zlib
from typing import Callable, Iterable, Sequence

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F


def configure_threads(threads: int | None = None) -> int:
    """Pin torch to a thread count (``ARTKIT_THREADS`` overrides, default 1)."""
    if threads is None:
        threads = int(os.environ.get("ARTKIT_THREADS", "1"))
    torch.set_num_threads(max(1, threads))
    return torch.get_num_threads()


def _key(k) -> int:
    if isinstance(k, (int, np.integer)):
        return int(k) & 0xFFFFFFFF
    return zlib.crc32(str(k).encode("utf-8"))


class Rng:
    """Seedable Philox stream; ``derive`` gives independent named sub-streams.

    Philox is counter based, so identical seeds and call sequences give the
    same draws on every platform numpy supports.
    """

    def __init__(self, seed: int, *path) -> None:
        self.seed = int(seed)
        self.path = tuple(_key(p) for p in path)
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFF, *self.path])
        self.gen = np.random.Generator(np.random.Philox(ss))

    def derive(self, *keys) -> "Rng":
        return Rng(self.seed, *self.path, *keys)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def normal(self, size=None, scale=1.0):
        return self.gen.normal(0.0, scale, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def choice(self, a, size=None, replace=True, p=None):
        return self.gen.choice(a, size=size, replace=replace, p=p)

    def permutation(self, n):
        return self.gen.permutation(n)

    def gumbel(self, size) -> np.ndarray:
        u = self.gen.uniform(np.finfo(np.float64).tiny, 1.0, size)
        return -np.log(-np.log(u))

    def torch_normal(self, shape, dtype=torch.float32) -> torch.Tensor:
        return torch.from_numpy(self.gen.standard_normal(shape)).to(dtype)

    def torch_gumbel(self, shape, dtype=torch.float32) -> torch.Tensor:
        return torch.from_numpy(self.gumbel(shape)).to(dtype)


# -- elementwise / reduction ops ---------------------------------------------

def softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    return torch.softmax(x, dim=dim)


def kl_categorical(p_logits: torch.Tensor, q_logits: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """KL(softmax(p) || softmax(q)) along ``dim``."""
    log_p = torch.log_softmax(p_logits, dim=dim)
    log_q = torch.log_softmax(q_logits, dim=dim)
    return (log_p.exp() * (log_p - log_q)).sum(dim=dim)


def bce_with_logits(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    return F.binary_cross_entropy_with_logits(logits, labels.to(logits.dtype), reduction="none")


def mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return ((a - b) ** 2).mean()


def gumbel_softmax(logits: torch.Tensor, tau: float, rng: Rng | None = None,
                   noise: torch.Tensor | None = None) -> torch.Tensor:
    """Soft Gumbel-Softmax weights over the last axis.

    Pass ``noise`` to freeze the Gumbel samples (gradient checks, limit
    cases); otherwise they are drawn from ``rng``.
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    if noise is None:
        if rng is None:
            raise ValueError("need either rng or explicit noise")
        noise = rng.torch_gumbel(tuple(logits.shape), dtype=logits.dtype)
    return torch.softmax((logits + noise) / tau, dim=-1)


# -- layers -----------------------------------------------------------------

class BiGRU(nn.Module):
    """Bidirectional GRU returning concat(final forward, final backward) states."""

    def __init__(self, d_in: int, hidden: int) -> None:
        super().__init__()
        self.hidden = hidden
        self.gru = nn.GRU(d_in, hidden, batch_first=True, bidirectional=True)

    def forward(self, padded: torch.Tensor, lengths: Sequence[int]) -> torch.Tensor:
        if padded.shape[0] == 0:
            return padded.new_zeros(0, 2 * self.hidden)
        if min(lengths) < 1:
            raise ValueError("empty sequence")
        packed = nn.utils.rnn.pack_padded_sequence(
            padded, torch.as_tensor(list(lengths)), batch_first=True, enforce_sorted=False)
        _, h_n = self.gru(packed)
        return torch.cat([h_n[0], h_n[1]], dim=-1)


def bigru_sequence(inputs: Sequence[torch.Tensor], gru: BiGRU) -> torch.Tensor:
    """Summarise one sequence of vectors into a ``2h`` vector."""
    if len(inputs) == 0:
        raise ValueError("bigru_sequence needs a nonempty sequence")
    seq = torch.stack(list(inputs)).unsqueeze(0)
    return gru(seq, [len(inputs)])[0]


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, heads: int, d_kv: int | None = None) -> None:
        super().__init__()
        if d_model % heads:
            raise ValueError(f"d_model={d_model} is not divisible by heads={heads}")
        d_kv = d_kv or d_model
        self.heads = heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_kv, d_model)
        self.v = nn.Linear(d_kv, d_model)
        self.out = nn.Linear(d_model, d_model)
        self.last_weights: torch.Tensor | None = None

    def forward(self, x: torch.Tensor, ctx: torch.Tensor, ctx_mask: torch.Tensor | None = None) -> torch.Tensor:
        """x: (B, T, d), ctx: (B, S, d_kv), ctx_mask: (B, S) with True = valid.

        Queries whose context is entirely masked (or empty) receive zero.
        """
        B, T, d = x.shape
        S = ctx.shape[1]
        if S == 0:
            self.last_weights = None
            return x.new_zeros(B, T, d)
        h = self.heads
        q = self.q(x).view(B, T, h, d // h).transpose(1, 2)
        k = self.k(ctx).view(B, S, h, d // h).transpose(1, 2)
        v = self.v(ctx).view(B, S, h, d // h).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d // h)
        if ctx_mask is not None:
            valid = ctx_mask[:, None, None, :]
            scores = scores.masked_fill(~valid, float("-inf"))
            any_valid = ctx_mask.any(dim=1)[:, None, None, None]
            scores = torch.where(any_valid, scores, torch.zeros_like(scores))
        w = torch.softmax(scores, dim=-1)
        if ctx_mask is not None:
            w = w * any_valid
        self.last_weights = w
        y = (w @ v).transpose(1, 2).reshape(B, T, d)
        y = self.out(y)
        if ctx_mask is not None:
            y = y * any_valid[:, 0]
        return y


class AttentionBlock(nn.Module):
    """Pre-norm block: self-attention, optional cross-attention, MLP.

    No causal mask: every context token sees every other valid token.
    """

    def __init__(self, d_model: int, heads: int, cross: bool = True, mlp_ratio: int = 4) -> None:
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, heads)
        self.cross = cross
        if cross:
            self.norm2 = nn.LayerNorm(d_model)
            self.cross_attn = MultiHeadAttention(d_model, heads)
        self.norm3 = nn.LayerNorm(d_model)
        self.mlp = nn.Sequential(
            nn.Linear(d_model, mlp_ratio * d_model), nn.GELU(), nn.Linear(mlp_ratio * d_model, d_model))

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None,
                ctx: torch.Tensor | None = None, ctx_mask: torch.Tensor | None = None) -> torch.Tensor:
        if x.shape[-1] != self.norm1.normalized_shape[0]:
            raise ValueError(f"token width {x.shape[-1]} does not match block width {self.norm1.normalized_shape[0]}")
        h = self.norm1(x)
        x = x + self.attn(h, h, mask)
        if self.cross and ctx is not None:
            x = x + self.cross_attn(self.norm2(x), ctx, ctx_mask)
        return x + self.mlp(self.norm3(x))


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half, 1))
    args = t.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


def mlp(sizes: Sequence[int], act: type[nn.Module] = nn.SiLU, final_bias: bool = True) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i in range(len(sizes) - 1):
        last = i == len(sizes) - 2
        layers.append(nn.Linear(sizes[i], sizes[i + 1], bias=final_bias or not last))
        if not last:
            layers.append(act())
    return nn.Sequential(*layers)


# -- gradient verification -------------------------------------------------

def grad_check(f: Callable[[], torch.Tensor], params: Iterable[torch.Tensor], eps: float = 1e-5,
               max_per_param: int | None = None, rng: Rng | None = None, floor: float = 1e-6) -> float:
    """Max elementwise relative error between autodiff and central differences.

    ``f`` is re-evaluated with each parameter entry nudged in place; it must be
    deterministic (freeze any noise). Relative error per entry is
    |g_ad - g_fd| / max(floor, |g_ad| + |g_fd|); the floor keeps float64
    round-off on vanishing gradients from counting as error. ``max_per_param``
    limits the checked entries to a random subset drawn from ``rng``.
    """
    params = [p for p in params]
    for p in params:
        p.grad = None
    loss = f()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    rng = rng or Rng(0, "grad_check")
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(params, grads):
            g = torch.zeros_like(p) if g is None else g
            flat = p.view(-1)
            gflat = g.reshape(-1)
            idx = np.arange(flat.numel())
            if max_per_param is not None and flat.numel() > max_per_param:
                idx = np.sort(rng.choice(flat.numel(), size=max_per_param, replace=False))
            for k in idx:
                orig = flat[k].item()
                flat[k] = orig + eps
                up = f().item()
                flat[k] = orig - eps
                down = f().item()
                flat[k] = orig
                g_fd = (up - down) / (2 * eps)
                g_ad = gflat[k].item()
                err = abs(g_ad - g_fd) / max(floor, abs(g_ad) + abs(g_fd))
                worst = max(worst, err)
    return worst
