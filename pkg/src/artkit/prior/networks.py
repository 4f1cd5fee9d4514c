"""Networks of the SDF shape prior: point encoder, tri-plane VAE, SDF decoder,
condition encoders and the latent denoiser."""
from __future__ import annotations

import math
from typing import Sequence

import torch
from torch import nn
import torch.nn.functional as F

from ..tensor import AttentionBlock, mlp, sinusoidal_embedding
from .config import PriorConfig

PLANE_AXES = ((0, 1), (0, 2), (1, 2))  # XY, XZ, YZ


def plane_cells(points: torch.Tensor, res: int) -> torch.Tensor:
    """Flat cell index (B, P, 3) of each point's projection onto each plane."""
    idx = torch.clamp(((points + 1.0) * 0.5 * res).floor().long(), 0, res - 1)
    return torch.stack([idx[..., a] * res + idx[..., b] for a, b in PLANE_AXES], dim=-1)


def scatter_mean(feats: torch.Tensor, cells: torch.Tensor, res: int) -> torch.Tensor:
    """Average per-point features into plane cells.

    feats: (B, P, 3, C), cells: (B, P, 3) -> planes (B, 3, C, res, res); empty cells are 0.
    """
    B, P, _, C = feats.shape
    flat = feats.permute(0, 2, 3, 1)  # B, 3, C, P
    index = cells.permute(0, 2, 1)[:, :, None, :].expand(B, 3, C, P)
    sums = flat.new_zeros(B, 3, C, res * res).scatter_add(-1, index, flat)
    counts = flat.new_zeros(B, 3, 1, res * res).scatter_add(
        -1, cells.permute(0, 2, 1)[:, :, None, :], flat.new_ones(B, 3, 1, P))
    return (sums / counts.clamp(min=1.0)).view(B, 3, C, res, res)


class PointEncoder(nn.Module):
    """PointNet-style encoder: shared point MLP, mean-scatter onto three planes, conv refinement."""

    def __init__(self, cfg: PriorConfig) -> None:
        super().__init__()
        C = cfg.plane_channels
        self.res = cfg.plane_res
        self.channels = C
        self.point_mlp = mlp([3, cfg.point_hidden, cfg.point_hidden, 3 * C])
        self.refine = nn.Sequential(
            nn.Conv2d(3 * C, 3 * C, 3, padding=1, groups=3), nn.SiLU(),
            nn.Conv2d(3 * C, 3 * C, 3, padding=1, groups=3))

    def scatter(self, points: torch.Tensor) -> torch.Tensor:
        if points.shape[-2] == 0:
            raise ValueError("cannot encode an empty point cloud")
        B, P, _ = points.shape
        feats = self.point_mlp(points).view(B, P, 3, self.channels)
        return scatter_mean(feats, plane_cells(points, self.res), self.res)

    def forward(self, points: torch.Tensor) -> torch.Tensor:
        s = self.scatter(points)
        B = s.shape[0]
        flat = s.reshape(B, 3 * self.channels, self.res, self.res)
        return (flat + self.refine(flat)).view_as(s)


class TriplaneVAE(nn.Module):
    """Tri-plane <-> latent z with a diagonal Gaussian posterior."""

    def __init__(self, cfg: PriorConfig) -> None:
        super().__init__()
        C3 = 3 * cfg.plane_channels
        ch = cfg.vae_channels
        self.cfg = cfg
        stages = int(math.log2(cfg.plane_res // 4))
        down: list[nn.Module] = [nn.Conv2d(C3, ch, 3, padding=1), nn.SiLU()]
        for _ in range(stages):
            down += [nn.Conv2d(ch, ch, 4, stride=2, padding=1), nn.SiLU()]
        self.down = nn.Sequential(*down)
        self.to_stats = nn.Linear(ch * 16, 2 * cfg.d_z)
        self.from_z = nn.Linear(cfg.d_z, ch * 16)
        up: list[nn.Module] = []
        for _ in range(stages):
            up += [nn.SiLU(), nn.ConvTranspose2d(ch, ch, 4, stride=2, padding=1)]
        up += [nn.SiLU(), nn.Conv2d(ch, C3, 3, padding=1)]
        self.up = nn.Sequential(*up)

    def encode(self, planes: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        B = planes.shape[0]
        h = self.down(planes.reshape(B, -1, self.cfg.plane_res, self.cfg.plane_res))
        mu, logvar = self.to_stats(h.flatten(1)).chunk(2, dim=-1)
        return mu, logvar

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        B = z.shape[0]
        h = self.from_z(z).view(B, self.cfg.vae_channels, 4, 4)
        out = self.up(h)
        return out.view(B, 3, self.cfg.plane_channels, self.cfg.plane_res, self.cfg.plane_res)


def vae_sample(mu: torch.Tensor, logvar: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
    """Reparameterised draw; ``logvar = -inf`` gives ``mu`` exactly."""
    return mu + torch.exp(0.5 * logvar) * noise


def kl_normal(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, sigma^2) || N(0, I)) summed over the last axis."""
    return 0.5 * (mu ** 2 + logvar.exp() - 1.0 - logvar).sum(dim=-1)


class SDFDecoder(nn.Module):
    """Bilinear tri-plane lookup followed by an MLP to a signed distance."""

    def __init__(self, cfg: PriorConfig) -> None:
        super().__init__()
        self.net = mlp([3 * cfg.plane_channels, cfg.sdf_hidden, cfg.sdf_hidden, 1])

    @staticmethod
    def features(planes: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        """planes (B, 3, C, R, R), x (B, Q, 3) in [-1, 1] (clamped) -> (B, Q, 3C)."""
        x = x.clamp(-1.0, 1.0)
        out = []
        for k, (a, b) in enumerate(PLANE_AXES):
            # grid_sample reads (width, height) = (second, first) plane axis
            grid = torch.stack([x[..., b], x[..., a]], dim=-1)[:, :, None, :]
            f = F.grid_sample(planes[:, k], grid, mode="bilinear", padding_mode="border", align_corners=False)
            out.append(f[..., 0].transpose(1, 2))
        return torch.cat(out, dim=-1)

    def forward(self, planes: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        return self.net(self.features(planes, x))[..., 0]


class GeometryEncoder(nn.Module):
    """E_g: latent z -> geometry condition c_g (4-layer MLP)."""

    def __init__(self, cfg: PriorConfig) -> None:
        super().__init__()
        h = cfg.enc_hidden
        self.net = mlp([cfg.d_z, h, h, h, cfg.c_g])

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.net(z)


class SemanticEncoder(nn.Module):
    """E_s: bag of hashed label words -> semantic condition c_s (4-layer MLP)."""

    def __init__(self, cfg: PriorConfig) -> None:
        super().__init__()
        h = cfg.enc_hidden
        self.bag = nn.EmbeddingBag(cfg.label_buckets, h, mode="mean")
        self.net = mlp([h, h, h, h, cfg.c_s])

    def forward(self, ids: Sequence[Sequence[int]]) -> torch.Tensor:
        flat = torch.as_tensor([i for row in ids for i in row], dtype=torch.long)
        offsets = torch.as_tensor([0] + [len(r) for r in ids][:-1], dtype=torch.long).cumsum(0)
        return self.net(self.bag(flat, offsets))


class Denoiser(nn.Module):
    """Latent denoiser: three tokens (noisy z + time, quantised c_g, c_s) through self-attention blocks."""

    def __init__(self, cfg: PriorConfig) -> None:
        super().__init__()
        d = cfg.den_dim
        self.dim = d
        self.z_in = nn.Linear(cfg.d_z, d)
        self.t_in = mlp([d, d, d])
        self.g_in = nn.Linear(cfg.c_g, d)
        self.s_in = nn.Linear(cfg.c_s, d)
        self.kind = nn.Parameter(torch.zeros(3, d))
        self.blocks = nn.ModuleList([AttentionBlock(d, cfg.den_heads, cross=False) for _ in range(cfg.den_blocks)])
        self.norm = nn.LayerNorm(d)
        self.out = nn.Linear(d, cfg.d_z)

    def forward(self, z_t: torch.Tensor, t: torch.Tensor, c_g_hat: torch.Tensor, c_s: torch.Tensor) -> torch.Tensor:
        temb = self.t_in(sinusoidal_embedding(t, self.dim).to(z_t.dtype))
        x = torch.stack([self.z_in(z_t) + temb, self.g_in(c_g_hat), self.s_in(c_s)], dim=1) + self.kind
        for blk in self.blocks:
            x = blk(x)
        return self.out(self.norm(x[:, 0]))
