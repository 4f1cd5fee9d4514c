"""Shape-prior hyperparameters and named profiles."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Mapping


@dataclass(frozen=True)
class PriorConfig:
    d_z: int = 32
    plane_channels: int = 8
    plane_res: int = 16
    point_hidden: int = 64
    vae_channels: int = 32
    sdf_hidden: int = 64
    points: int = 512
    queries: int = 2048
    near_sigma: float = 0.04
    kl_weight: float = 1e-4
    # codebooks and conditions
    codebook_rows: int = 64
    c_g: int = 64
    c_s: int = 32
    enc_hidden: int = 64
    tau: float = 1.0
    label_buckets: int = 1024
    label_salt: str = "l0"
    # diffusion
    steps: int = 100
    beta_start: float = 1e-3
    beta_end: float = 0.2
    prediction: str = "z0"
    den_dim: int = 64
    den_blocks: int = 4
    den_heads: int = 4
    # training
    vae_steps: int = 1500
    diffusion_steps: int = 1500
    batch: int = 16
    lr: float = 1e-3
    weight_decay: float = 0.0
    mesh_res: int = 48
    point_pool: int = 2048
    query_pool: int = 8192

    def __post_init__(self) -> None:
        if self.c_g % 4:
            raise ValueError("c_g must split into 4 codebook chunks")
        if self.plane_res < 4 or self.plane_res & (self.plane_res - 1):
            raise ValueError("plane_res must be a power of two >= 4")
        if self.codebook_rows < 2:
            raise ValueError("codebooks need at least 2 rows")
        if self.prediction not in ("z0", "eps"):
            raise ValueError(f"unknown prediction target {self.prediction!r}")

    @property
    def chunk(self) -> int:
        return self.c_g // 4

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PriorConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})

    def with_(self, **kw) -> "PriorConfig":
        return replace(self, **kw)


PROFILES = {
    "desk": PriorConfig(),
    "paper-scale": PriorConfig(d_z=768, plane_channels=256, plane_res=64, point_hidden=256, vae_channels=64,
                               sdf_hidden=256, points=4096, queries=16000, den_dim=256, den_heads=8),
}
