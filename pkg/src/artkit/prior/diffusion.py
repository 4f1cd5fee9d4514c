"""DDPM over geometry latents with a z0 (or epsilon) parameterised denoiser."""
from __future__ import annotations

from typing import Callable

import torch

from ..tensor import Rng

DenoiseFn = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]  # (z_t, t) -> prediction


class Schedule:
    """Linear beta schedule; timesteps are 1-based (t = 1 .. T)."""

    def __init__(self, T: int, beta_start: float, beta_end: float, dtype=torch.float64) -> None:
        if T < 1:
            raise ValueError("need at least one diffusion step")
        if not 0 < beta_start <= beta_end < 1:
            raise ValueError("betas must satisfy 0 < beta_start <= beta_end < 1")
        self.T = T
        self.betas = torch.linspace(beta_start, beta_end, T, dtype=dtype) if T > 1 else torch.tensor([beta_end], dtype=dtype)
        self.alphas = 1.0 - self.betas
        self.abar = torch.cumprod(self.alphas, dim=0)

    def abar_at(self, t: torch.Tensor) -> torch.Tensor:
        return self.abar[t.long() - 1]

    def abar_prev(self, t: int) -> float:
        return 1.0 if t == 1 else float(self.abar[t - 2])


def q_sample(schedule: Schedule, z0: torch.Tensor, t: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
    ab = schedule.abar_at(t).to(z0.dtype)[:, None]
    return ab.sqrt() * z0 + (1.0 - ab).sqrt() * noise


def to_z0(schedule: Schedule, z_t: torch.Tensor, t: torch.Tensor, pred: torch.Tensor, prediction: str) -> torch.Tensor:
    if prediction == "z0":
        return pred
    ab = schedule.abar_at(t).to(z_t.dtype)[:, None]
    return (z_t - (1.0 - ab).sqrt() * pred) / ab.sqrt()


def diffusion_loss(denoise: DenoiseFn, schedule: Schedule, z0: torch.Tensor, rng: Rng,
                   prediction: str = "z0") -> torch.Tensor:
    """Squared error of the denoiser target at uniformly drawn t in [1, T]."""
    B = z0.shape[0]
    t = torch.from_numpy(rng.integers(1, schedule.T + 1, size=B))
    noise = rng.torch_normal(tuple(z0.shape), dtype=z0.dtype)
    z_t = q_sample(schedule, z0, t, noise)
    target = z0 if prediction == "z0" else noise
    return ((denoise(z_t, t) - target) ** 2).sum(dim=-1).mean()


@torch.no_grad()
def diffusion_sample(denoise: DenoiseFn, schedule: Schedule, shape: tuple[int, ...], rng: Rng,
                     prediction: str = "z0", dtype=torch.float32) -> torch.Tensor:
    """Ancestral sampling from z_T ~ N(0, I) through the posterior q(z_{t-1} | z_t, z0_hat)."""
    z = rng.torch_normal(shape, dtype=dtype)
    for t in range(schedule.T, 0, -1):
        tt = torch.full((shape[0],), t, dtype=torch.long)
        z0 = to_z0(schedule, z, tt, denoise(z, tt), prediction)
        ab, ab_prev = float(schedule.abar[t - 1]), schedule.abar_prev(t)
        beta = float(schedule.betas[t - 1])
        if t == 1:
            z = z0
            break
        c0 = ab_prev ** 0.5 * beta / (1.0 - ab)
        ct = (1.0 - beta) ** 0.5 * (1.0 - ab_prev) / (1.0 - ab)
        var = (1.0 - ab_prev) / (1.0 - ab) * beta
        z = c0 * z0 + ct * z + var ** 0.5 * rng.torch_normal(shape, dtype=dtype)
    return z
