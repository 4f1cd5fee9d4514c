"""Four codebooks, distance logits and Gumbel-Softmax retrieval."""
from __future__ import annotations

import torch
from torch import nn

from ..tensor import Rng, gumbel_softmax

TABLES = 4


class Codebooks(nn.Module):
    """M: (4, N, D_cb) learnable rows."""

    def __init__(self, rows: int, chunk: int) -> None:
        super().__init__()
        self.M = nn.Parameter(0.5 * torch.randn(TABLES, rows, chunk))

    @property
    def rows(self) -> int:
        return self.M.shape[1]


def distance_logits(c_g: torch.Tensor, M: torch.Tensor) -> torch.Tensor:
    """D[..., t, l] = -|| m_l^t - c_g^t ||_2 with c_g split into 4 contiguous chunks."""
    T, N, Dc = M.shape
    if c_g.shape[-1] != T * Dc:
        raise ValueError(f"condition width {c_g.shape[-1]} != {T}x{Dc}")
    chunks = c_g.reshape(*c_g.shape[:-1], T, 1, Dc)
    return -torch.linalg.vector_norm(M - chunks, dim=-1)


def quantize(logits: torch.Tensor, M: torch.Tensor, tau: float, rng: Rng | None = None,
             noise: torch.Tensor | None = None, mode: str = "soft") -> torch.Tensor:
    """Mix codebook rows with Gumbel-Softmax weights drawn per table.

    logits: (..., 4, N) distance logits D or predicted logits P. ``hard`` picks
    the Gumbel-perturbed argmax row (diagnostics only). Returns (..., 4 * D_cb).
    """
    if noise is None:
        if rng is None:
            raise ValueError("need either rng or explicit noise")
        noise = rng.torch_gumbel(tuple(logits.shape), dtype=logits.dtype)
    if mode == "soft":
        w = gumbel_softmax(logits, tau, noise=noise)
    elif mode == "hard":
        idx = (logits + noise).argmax(dim=-1)
        w = torch.nn.functional.one_hot(idx, logits.shape[-1]).to(logits.dtype)
    else:
        raise ValueError(f"unknown quantize mode {mode!r}")
    out = torch.einsum("...tn,tnd->...td", w, M.to(logits.dtype))
    return out.reshape(*out.shape[:-2], -1)


def hard_codes(logits: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
    """Per-table selected row indices (..., 4) after Gumbel perturbation."""
    return (logits + noise).argmax(dim=-1)
