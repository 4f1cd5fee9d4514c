"""Shape-prior training (VAE stage, then conditioned diffusion) and part caches."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import torch

from ..checkpoint import file_hash, load_arrays, save_arrays, write_atomic
from ..dataset import GENERATOR_VERSION, Corpus, part_pointcloud, part_queries, unit_mesh
from ..geometry import sample_surface
from ..tensor import Rng
from .config import PriorConfig
from .model import ShapePrior

Log = Callable[[dict[str, Any]], None]


@dataclass
class PartSample:
    """Pre-sampled supervision for one part in its normalised frame."""

    key: str
    label: str
    cloud: np.ndarray  # canonical encoder input (points, 3)
    point_pool: np.ndarray
    queries: np.ndarray
    sdf: np.ndarray


def canonical_cloud(key: str, recipe: Mapping[str, Any], n: int) -> np.ndarray:
    """The fixed point cloud a part is encoded from (training and caches alike)."""
    return part_pointcloud(recipe, n, Rng(0, "cloud", key))


def make_part_sample(key: str, recipe: Mapping[str, Any], label: str, cfg: PriorConfig) -> PartSample:
    rng = Rng(0, "samples", key)
    pool = sample_surface(unit_mesh(recipe, cfg.mesh_res), cfg.point_pool, rng.derive("pool").gen)
    q, sdf = part_queries(recipe, cfg.query_pool, rng.derive("queries"), cfg.near_sigma)
    return PartSample(key, label, canonical_cloud(key, recipe, cfg.points), pool, q, sdf)


def corpus_parts(corpus: Corpus, ids: Sequence[str], cfg: PriorConfig) -> list[PartSample]:
    out = []
    for oid in ids:
        tree, _ = corpus.objects[oid]
        for i, node in enumerate(tree.nodes):
            out.append(make_part_sample(f"{oid}/{i}", node.shape, node.label, cfg))
    return out


def _cosine(step: int, total: int, lr: float) -> float:
    return lr * (0.1 + 0.9 * 0.5 * (1.0 + math.cos(math.pi * step / max(1, total))))


def _log(log: Log | None, **record) -> None:
    if log is not None:
        log(record)


def _check(loss: torch.Tensor, stage: str, step: int) -> None:
    if not torch.isfinite(loss):
        raise FloatingPointError(f"non-finite {stage} loss at step {step}")


def train_vae(model: ShapePrior, parts: Sequence[PartSample], cfg: PriorConfig, rng: Rng,
              log: Log | None = None, every: int = 100) -> list[float]:
    params = list(model.gamma.parameters()) + list(model.vae.parameters()) + list(model.omega.parameters())
    opt = torch.optim.AdamW(params, lr=cfg.lr, betas=(0.9, 0.999), weight_decay=cfg.weight_decay)
    history = []
    B = min(cfg.batch, len(parts))
    for step in range(cfg.vae_steps):
        srng = rng.derive("vae", step)
        pick = srng.choice(len(parts), size=B, replace=len(parts) < B)
        pts = np.stack([parts[i].point_pool[srng.choice(len(parts[i].point_pool), cfg.points, replace=False)]
                        for i in pick])
        qi = [srng.choice(len(parts[i].queries), cfg.queries, replace=False) for i in pick]
        q = np.stack([parts[i].queries[k] for i, k in zip(pick, qi)])
        s = np.stack([parts[i].sdf[k] for i, k in zip(pick, qi)])
        for g in opt.param_groups:
            g["lr"] = _cosine(step, cfg.vae_steps, cfg.lr)
        loss, parts_log = model.sdf_vae_loss(torch.from_numpy(pts).float(), torch.from_numpy(q).float(),
                                             torch.from_numpy(s).float(), cfg.kl_weight,
                                             srng.torch_normal((B, cfg.d_z)))
        _check(loss, "vae", step)
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append(loss.item())
        if step % every == 0 or step == cfg.vae_steps - 1:
            _log(log, stage="vae", step=step, loss=loss.item(), **parts_log)
    return history


@torch.no_grad()
def encode_clouds(model: ShapePrior, clouds: Sequence[np.ndarray], batch: int = 64) -> torch.Tensor:
    """Posterior means (raw latents) for canonical clouds."""
    out = []
    for i in range(0, len(clouds), batch):
        mu, _ = model.encode(torch.from_numpy(np.stack(clouds[i:i + batch])).float())
        out.append(mu)
    return torch.cat(out) if out else torch.zeros(0, model.cfg.d_z)


def train_diffusion(model: ShapePrior, z_raw: torch.Tensor, labels: Sequence[str], cfg: PriorConfig, rng: Rng,
                    log: Log | None = None, every: int = 100, batch: int = 64) -> list[float]:
    params = (list(model.e_g.parameters()) + list(model.e_s.parameters()) + list(model.codebooks.parameters())
              + list(model.denoiser.parameters()))
    opt = torch.optim.AdamW(params, lr=cfg.lr, betas=(0.9, 0.999), weight_decay=cfg.weight_decay)
    z_all = z_raw * model.z_scale
    label_ids = model.label_ids(labels)
    history = []
    B = min(batch, len(z_all))
    for step in range(cfg.diffusion_steps):
        srng = rng.derive("diffusion", step)
        pick = srng.choice(len(z_all), size=B, replace=len(z_all) < B)
        c_s = model.e_s([label_ids[i] for i in pick])
        for g in opt.param_groups:
            g["lr"] = _cosine(step, cfg.diffusion_steps, cfg.lr)
        loss = model.diffusion_loss(z_all[pick], c_s, srng)
        _check(loss, "diffusion", step)
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append(loss.item())
        if step % every == 0 or step == cfg.diffusion_steps - 1:
            _log(log, stage="diffusion", step=step, loss=loss.item())
    return history


def train_prior(parts: Sequence[PartSample], cfg: PriorConfig, seed: int, log: Log | None = None) -> ShapePrior:
    """VAE on SDF supervision, then codebooks, condition encoders and denoiser on frozen latents."""
    rng = Rng(seed, "prior")
    torch.manual_seed(int(rng.derive("init").integers(0, 2 ** 31)))
    model = ShapePrior(cfg)
    train_vae(model, parts, cfg, rng, log)
    z_raw = encode_clouds(model, [p.cloud for p in parts])
    std = float(z_raw.std()) if len(z_raw) > 1 else 1.0
    with torch.no_grad():
        model.z_scale.fill_(1.0 / max(std, 1e-6))
    labels = [p.label for p in parts]
    train_diffusion(model, z_raw, labels, cfg, rng, log)
    model.set_label_table(labels)
    model.eval()
    return model


# -- per-part caches ------------------------------------------------------------

CACHE_FORMAT = "artkit-partcache/1"


@torch.no_grad()
def part_cache(model: ShapePrior, corpus: Corpus, oid: str) -> dict[str, np.ndarray]:
    """z (posterior mean), c_s = E_s(label) and D = distance logits of E_g(z) for every part."""
    tree, _ = corpus.objects[oid]
    clouds = [canonical_cloud(f"{oid}/{i}", n.shape, model.cfg.points) for i, n in enumerate(tree.nodes)]
    z = encode_clouds(model, clouds)
    D = model.geometry_logits(z * model.z_scale)
    c_s = model.semantic([n.label for n in tree.nodes])
    return {"z": z.numpy(), "c_s": c_s.numpy(), "D": D.numpy()}


def preprocess_parts(corpus: Corpus, prior_path: str | Path, out_dir: str | Path,
                     log: Log | None = None) -> dict[str, Any]:
    """Write ``<out>/<id>.bin`` caches plus a manifest stamped with the prior and corpus hashes."""
    out = Path(out_dir)
    model = ShapePrior.load(prior_path)
    prior_hash = file_hash(prior_path)
    entries = {}
    for oid in sorted(corpus.objects):
        meta = {"format": CACHE_FORMAT, "object": oid, "prior": prior_hash, "generator": GENERATOR_VERSION}
        entries[oid] = save_arrays(out / f"{oid}.bin", part_cache(model, corpus, oid), meta)
    manifest = {"format": CACHE_FORMAT, "prior": prior_hash, "dataset": corpus.hash, "caches": entries}
    write_atomic(out / "manifest.json", (json.dumps(manifest, indent=1, sort_keys=True) + "\n").encode("utf-8"))
    _log(log, stage="preprocess", objects=len(entries), prior=prior_hash)
    return manifest


def load_caches(cache_dir: str | Path, prior_hash: str | None = None) -> dict[str, dict[str, np.ndarray]]:
    cache_dir = Path(cache_dir)
    path = cache_dir / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run `artkit prior preprocess` first")
    manifest = json.loads(path.read_text())
    if prior_hash is not None and manifest["prior"] != prior_hash:
        raise ValueError(f"part caches were built with prior {manifest['prior'][:12]}, "
                         f"not {prior_hash[:12]}; rerun `artkit prior preprocess`")
    out = {}
    for oid in manifest["caches"]:
        arrays, meta = load_arrays(cache_dir / f"{oid}.bin")
        if meta.get("prior") != manifest["prior"]:
            raise ValueError(f"cache for {oid} does not match the manifest prior hash")
        out[oid] = arrays
    return out
