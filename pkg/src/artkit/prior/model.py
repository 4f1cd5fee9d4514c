"""Shape-prior facade: training-time model and the encoder-free generator."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import torch
from torch import nn

from ..checkpoint import file_hash, load_arrays, save_arrays
from ..dataset import FRAME_FILL, from_unit, to_unit
from ..geometry import GridField, Mesh, grid_points, marching_cubes_grid
from ..tensor import Rng
from ..text import bucket_ids
from .config import PriorConfig
from .diffusion import Schedule, diffusion_loss, diffusion_sample
from .networks import (Denoiser, GeometryEncoder, PointEncoder, SDFDecoder, SemanticEncoder, TriplaneVAE,
                       kl_normal, vae_sample)
from .quantize import Codebooks, distance_logits, quantize



def frame_extent(res: int) -> float:
    """Half-width of the decode lattice: the part frame plus one grid cell."""
    return FRAME_FILL + 2 * FRAME_FILL / (res - 3)


class ShapePrior(nn.Module):
    """All prior networks. ``generator()`` drops the two condition encoders."""

    def __init__(self, cfg: PriorConfig) -> None:
        super().__init__()
        self.cfg = cfg
        self.gamma = PointEncoder(cfg)
        self.vae = TriplaneVAE(cfg)
        self.omega = SDFDecoder(cfg)
        self.e_g = GeometryEncoder(cfg)
        self.e_s = SemanticEncoder(cfg)
        self.codebooks = Codebooks(cfg.codebook_rows, cfg.chunk)
        self.denoiser = Denoiser(cfg)
        self.register_buffer("z_scale", torch.ones(()))
        self.labels: list[str] = []
        self.register_buffer("label_table", torch.zeros(0, cfg.c_s))

    @property
    def schedule(self) -> Schedule:
        return Schedule(self.cfg.steps, self.cfg.beta_start, self.cfg.beta_end)

    # -- Eq. 1 pathway ---------------------------------------------------------
    def encode(self, points: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.vae.encode(self.gamma(points))

    def sdf_vae_loss(self, points: torch.Tensor, queries: torch.Tensor, sdf: torch.Tensor, beta: float,
                     noise: torch.Tensor) -> tuple[torch.Tensor, dict[str, float]]:
        """Mean L1 SDF error after one reparameterised draw plus beta * KL."""
        mu, logvar = self.encode(points)
        z = vae_sample(mu, logvar, noise)
        pred = self.omega(self.vae.decode(z), queries)
        l1 = (pred - sdf).abs().mean()
        kl = kl_normal(mu, logvar).mean()
        return l1 + beta * kl, {"l1": l1.item(), "kl": kl.item()}

    # -- conditions --------------------------------------------------------------
    def label_ids(self, labels: Sequence[str]) -> list[list[int]]:
        return [bucket_ids(s, self.cfg.label_buckets, self.cfg.label_salt) or [0] for s in labels]

    def semantic(self, labels: Sequence[str]) -> torch.Tensor:
        return self.e_s(self.label_ids(labels))

    def geometry_logits(self, z_scaled: torch.Tensor) -> torch.Tensor:
        """Distance matrix D (B, 4, N) of E_g(z) against the codebooks."""
        return distance_logits(self.e_g(z_scaled), self.codebooks.M)

    def diffusion_loss(self, z_scaled: torch.Tensor, c_s: torch.Tensor, rng: Rng,
                       gumbel: torch.Tensor | None = None) -> torch.Tensor:
        D = self.geometry_logits(z_scaled)
        c_hat = quantize(D, self.codebooks.M, self.cfg.tau, rng=rng.derive("gumbel"), noise=gumbel)
        den = lambda z_t, t: self.denoiser(z_t, t, c_hat, c_s)
        return diffusion_loss(den, self.schedule, z_scaled, rng.derive("noise"), self.cfg.prediction)

    def set_label_table(self, labels: Sequence[str]) -> None:
        self.labels = sorted(set(labels))
        with torch.no_grad():
            self.label_table = self.semantic(self.labels).detach() if self.labels else torch.zeros(0, self.cfg.c_s)

    def generator(self) -> "PartGenerator":
        return PartGenerator(self.cfg, self.codebooks, self.denoiser, self.vae, self.omega,
                             float(self.z_scale), list(self.labels), self.label_table.detach().clone())

    # -- persistence --------------------------------------------------------------
    def save(self, path: str | Path, extra: dict[str, Any] | None = None) -> str:
        meta = {"kind": "shape-prior", "config": self.cfg.to_dict(), "labels": self.labels, **(extra or {})}
        return save_arrays(path, self.state_dict(), meta)

    @classmethod
    def load(cls, path: str | Path) -> "ShapePrior":
        arrays, meta = load_arrays(path)
        if meta.get("kind") != "shape-prior":
            raise ValueError(f"{path} is not a shape-prior checkpoint")
        model = cls(PriorConfig.from_dict(meta["config"]))
        model.labels = list(meta.get("labels", []))
        model.label_table = torch.zeros(len(model.labels), model.cfg.c_s)
        state = model.state_dict()
        model.load_state_dict({k: torch.from_numpy(arrays[k].copy()).to(state[k].dtype) for k in state})
        model.meta = meta
        model.hash = file_hash(path)
        model.eval()
        return model


@dataclass
class PartGeometry:
    """A decoded part: SDF samples on the normalised-frame grid and its world mesh."""

    z: np.ndarray
    sdf: np.ndarray  # (res, res, res) on [-frame_extent, frame_extent]^3
    mesh: Mesh  # world coordinates (empty when the SDF has no zero crossing)

    @property
    def empty(self) -> bool:
        return self.mesh.is_empty


class PartGenerator(nn.Module):
    """Generation-time prior: codebooks, denoiser, tri-plane decoder and SDF head only."""

    def __init__(self, cfg, codebooks, denoiser, vae, omega, z_scale: float, labels, label_table) -> None:
        super().__init__()
        self.cfg = cfg
        self.codebooks = codebooks
        self.denoiser = denoiser
        self.vae = vae
        self.omega = omega
        self.z_scale = z_scale
        self.labels = labels
        self.label_table = label_table

    @torch.no_grad()
    def sample_z(self, P: torch.Tensor, c_s: torch.Tensor, rng: Rng, tau: float | None = None) -> torch.Tensor:
        """Raw (unscaled) latents (B, d_z) from codebook logits P (B, 4, N) and c_s (B, c_s)."""
        P = P.float()
        c_hat = quantize(P, self.codebooks.M, tau or self.cfg.tau, rng=rng.derive("gumbel"))
        den = lambda z_t, t: self.denoiser(z_t, t, c_hat, c_s.float())
        schedule = Schedule(self.cfg.steps, self.cfg.beta_start, self.cfg.beta_end)
        z = diffusion_sample(den, schedule, (P.shape[0], self.cfg.d_z), rng.derive("diffusion"), self.cfg.prediction)
        return z / self.z_scale

    @torch.no_grad()
    def sdf_grid(self, z: torch.Tensor, res: int, chunk: int = 65536) -> np.ndarray:
        """SDF of one raw latent on a res^3 lattice over [-frame_extent, frame_extent]^3."""
        planes = self.vae.decode(z.float().reshape(1, -1))
        L = frame_extent(res)
        pts, _ = grid_points(-L, L, res)
        flat = torch.from_numpy(pts.reshape(-1, 3)).float()
        vals = [self.omega(planes, flat[i:i + chunk][None])[0] for i in range(0, len(flat), chunk)]
        return torch.cat(vals).double().numpy().reshape(res, res, res)

    def geometry(self, z: torch.Tensor | np.ndarray, b: Sequence[float], res: int = 32) -> PartGeometry:
        """Marching cubes on the decoded SDF, vertices mapped from the part frame onto ``b``.

        The lattice reaches one cell past the frame, so vertices stay inside
        ``b`` inflated by one (world) cell.
        """
        if res < 8:
            raise ValueError("geometry grids need res >= 8")
        z = torch.as_tensor(np.asarray(z), dtype=torch.float32)
        values = self.sdf_grid(z, res)
        L = frame_extent(res)
        mesh = marching_cubes_grid(values, np.full(3, -L), np.full(3, 2 * L / (res - 1)))
        if not mesh.is_empty:
            mesh = Mesh(from_unit(mesh.vertices, b), mesh.triangles)
        return PartGeometry(z.numpy().astype(np.float64), values, mesh)

    def sample_part_geometry(self, P: torch.Tensor, c_s: torch.Tensor, b: Sequence[float], res: int,
                             rng: Rng, tau: float | None = None) -> PartGeometry:
        z = self.sample_z(P.reshape(1, 4, -1), c_s.reshape(1, -1), rng, tau)[0]
        return self.geometry(z, b, res)

    def nearest_label(self, c_s: torch.Tensor) -> str:
        if not self.labels:
            return ""
        d = ((self.label_table - c_s.float().reshape(1, -1)) ** 2).sum(-1)
        return self.labels[int(d.argmin())]


def part_field(geom: PartGeometry, b: Sequence[float]):
    """World-space field of a decoded part (positive outside the lattice)."""
    L = frame_extent(geom.sdf.shape[0])
    grid = GridField(geom.sdf, -L, L, outside=1.0)
    return lambda p: grid(to_unit(p, b))
