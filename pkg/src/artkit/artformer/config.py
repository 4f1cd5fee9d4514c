"""ArtFormer hyperparameters and named profiles."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Mapping

from ..text import MAX_TOKENS


@dataclass(frozen=True)
class ArtFormerConfig:
    d_model: int = 128
    blocks: int = 4
    heads: int = 4
    a_dim: int = 16
    p_dim: int = 256
    d_z: int = 32
    codebook_rows: int = 64
    c_s: int = 32
    z_scale: float = 1.0
    # toy text encoder
    text_buckets: int = 4096
    text_salt: str = "t2"
    text_blocks: int = 2
    max_tokens: int = MAX_TOKENS
    # objective and optimiser
    beta_o: float = 1.0
    beta_p: float = 1.0
    lr: float = 5e-4
    weight_decay: float = 0.01
    steps: int = 2000
    batch: int = 16
    # decoding
    threshold: float = 0.5
    max_rounds: int = 24
    max_nodes: int = 16
    t_snap: float = 0.05
    r_snap: float = 0.15

    def __post_init__(self) -> None:
        if self.p_dim % self.a_dim:
            raise ValueError(f"p_dim={self.p_dim} must be a multiple of a_dim={self.a_dim}")
        if self.a_dim % 2:
            raise ValueError("a_dim must be even (two GRU directions)")
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")

    @property
    def slots(self) -> int:
        return self.p_dim // self.a_dim

    @property
    def attr_dim(self) -> int:
        return 6 + self.d_z + 6 + 4

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ArtFormerConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})

    def with_(self, **kw) -> "ArtFormerConfig":
        return replace(self, **kw)


PROFILES = {
    "desk": ArtFormerConfig(),
    "paper-scale": ArtFormerConfig(d_model=1024, blocks=8, heads=8, a_dim=64, p_dim=1024, d_z=768),
}
