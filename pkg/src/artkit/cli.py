"""Command-line entry point: ``artkit <command> ...``.

Every command logs JSON lines to stdout, writes ``run.json`` next to its
outputs and exits nonzero on error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__

PROFILES = ("desk", "paper-scale")


def emit(record: dict[str, Any]) -> None:
    print(json.dumps(record, sort_keys=True, default=float), flush=True)


class CommandError(RuntimeError):
    pass


def _seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    env = os.environ.get("ARTKIT_SEED")
    if env is None:
        raise CommandError("a seed is required: pass --seed or set ARTKIT_SEED")
    return int(env)


def _hash_path(path: Path) -> str:
    """Content hash of a file, or of a directory's files in sorted order."""
    h = hashlib.sha256()
    if path.is_dir():
        for p in sorted(path.rglob("*")):
            if p.is_file() and p.name != "run.json":
                h.update(str(p.relative_to(path)).encode())
                h.update(hashlib.sha256(p.read_bytes()).digest())
    elif path.exists():
        h.update(path.read_bytes())
    return h.hexdigest()


def _require(path: str | Path, producer: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CommandError(f"{p} does not exist; produce it with `artkit {producer}`")
    return p


def _write_run(out: Path, args, inputs: dict[str, Path], extra: dict[str, Any] | None = None) -> None:
    from .checkpoint import write_atomic

    record = {
        "artkit": __version__,
        "command": args.command_path,
        "args": {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command_path")},
        "inputs": {name: _hash_path(p) for name, p in sorted(inputs.items())},
        **(extra or {}),
    }
    target = out if out.is_dir() else out.parent
    write_atomic(target / "run.json", (json.dumps(record, indent=1, sort_keys=True, default=str) + "\n").encode())


def _prior_config(args):
    from .prior import PROFILES as P

    cfg = P[args.profile]
    if args.config:
        cfg = cfg.from_dict({**cfg.to_dict(), **json.loads(Path(args.config).read_text())})
    overrides = {k: getattr(args, k) for k in ("vae_steps", "diffusion_steps") if getattr(args, k, None) is not None}
    return cfg.with_(**overrides)


def _artformer_config(args, prior):
    from .artformer import PROFILES as A

    cfg = A[args.profile]
    if args.config:
        cfg = cfg.from_dict({**cfg.to_dict(), **json.loads(Path(args.config).read_text())})
    kw = {"z_scale": float(prior.z_scale), "d_z": prior.cfg.d_z, "codebook_rows": prior.cfg.codebook_rows,
          "c_s": prior.cfg.c_s}
    if args.steps is not None:
        kw["steps"] = args.steps
    return cfg.with_(**kw)


# -- commands ------------------------------------------------------------------

def cmd_dataset_build(args) -> None:
    from .dataset import build_dataset

    t = time.time()
    manifest = build_dataset(args.out, args.count, _seed(args), tuple(args.splits))
    emit({"event": "dataset", "count": args.count, "hash": manifest["hash"], "seconds": round(time.time() - t, 3)})
    _write_run(Path(args.out), args, {})


def cmd_prior_train(args) -> None:
    from .checkpoint import write_atomic
    from .dataset import load_dataset
    from .prior.train import corpus_parts, train_prior

    corpus = load_dataset(_require(args.data, "dataset build"))
    cfg = _prior_config(args)
    seed = _seed(args)
    parts = corpus_parts(corpus, corpus.split("train"), cfg)
    emit({"event": "prior-parts", "parts": len(parts)})
    model = train_prior(parts, cfg, seed, log=emit)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    digest = model.save(out, {"dataset": corpus.hash, "seed": seed})
    write_atomic(out.with_suffix(".json"), (json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n").encode())
    emit({"event": "prior-saved", "path": str(out), "sha256": digest})
    _write_run(out, args, {"data": Path(args.data) / "manifest.json"}, {"seed": seed, "config": cfg.to_dict()})


def cmd_prior_preprocess(args) -> None:
    from .dataset import load_dataset
    from .prior.train import preprocess_parts

    corpus = load_dataset(_require(args.data, "dataset build"))
    manifest = preprocess_parts(corpus, _require(args.prior, "prior train"), args.out, log=emit)
    emit({"event": "caches", "objects": len(manifest["caches"]), "prior": manifest["prior"]})
    _write_run(Path(args.out), args, {"data": Path(args.data) / "manifest.json", "prior": Path(args.prior)})


def cmd_artformer_train(args) -> None:
    from .artformer.train import make_examples, terminal_accuracy, train_artformer
    from .dataset import load_dataset
    from .prior import ShapePrior
    from .prior.train import load_caches

    corpus = load_dataset(_require(args.data, "dataset build"))
    prior = ShapePrior.load(_require(args.prior, "prior train"))
    caches = load_caches(_require(args.caches, "prior preprocess"), prior.hash)
    cfg = _artformer_config(args, prior)
    seed = _seed(args)
    train = make_examples(corpus, caches, corpus.split("train"))
    model, _ = train_artformer(train, cfg, seed, log=emit)
    held = make_examples(corpus, caches, corpus.split("val"))
    acc = terminal_accuracy(model, held) if held else {}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    digest = model.save(out, {"prior": prior.hash, "dataset": corpus.hash, "seed": seed})
    emit({"event": "artformer-saved", "path": str(out), "sha256": digest, "val_terminal_accuracy": acc})
    _write_run(out, args, {"data": Path(args.data) / "manifest.json", "prior": Path(args.prior),
                           "caches": Path(args.caches) / "manifest.json"}, {"seed": seed, "config": cfg.to_dict()})


def _load_models(args):
    from .artformer import ArtFormer
    from .prior import ShapePrior

    model = ArtFormer.load(_require(args.model, "artformer train"))
    prior = ShapePrior.load(_require(args.prior, "prior train"))
    if model.meta.get("prior") not in (None, prior.hash):
        raise CommandError("the transformer was trained against a different prior checkpoint")
    return model, prior.generator()


def _write_object(path: Path, result, meta: dict[str, Any]) -> None:
    from .checkpoint import write_atomic
    from .serialize import to_json

    meta = {**meta, "rounds": result.rounds, "truncated": result.truncated}
    write_atomic(path, to_json(result.tree, meta).encode("utf-8"))


def cmd_generate(args) -> None:
    from .artformer import EmptyObjectError
    from .checkpoint import file_hash, write_atomic
    from .pipeline import decode_prompt
    from .tensor import Rng

    model, gen = _load_models(args)
    seed = _seed(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k in range(args.samples):
        name = f"sample_{k:03d}"
        try:
            res = decode_prompt(model, gen, args.text, Rng(seed, "generate", k))
        except EmptyObjectError:
            emit({"event": "empty-object", "sample": k})
            continue
        _write_object(out / f"{name}.json", res, {"text": args.text, "seed": seed, "sample": k,
                                                  "model": model.hash, "prior": file_hash(args.prior)})
        if args.trace:
            write_atomic(out / f"{name}.trace.json", (json.dumps(res.trace, indent=1) + "\n").encode())
        emit({"event": "generated", "sample": k, "parts": len(res.tree.nodes), "rounds": res.rounds,
              "truncated": res.truncated})
    _write_run(out, args, {"model": Path(args.model), "prior": Path(args.prior)}, {"seed": seed})


def cmd_edit(args) -> None:
    from .artformer import edit
    from .serialize import read_object
    from .tensor import Rng

    model, gen = _load_models(args)
    seed = _seed(args)
    tree, meta = read_object(_require(args.object, "generate").read_text())
    remove = [int(v) for v in args.remove.split(",") if v.strip()]
    cfg = model.cfg
    res = edit(tree, remove, model.round_fn(args.text), gen, Rng(seed, "edit"), max_rounds=cfg.max_rounds,
               max_nodes=cfg.max_nodes, threshold=cfg.threshold, d_z=cfg.d_z, t_snap=cfg.t_snap, r_snap=cfg.r_snap)
    out = Path(args.out)
    _write_object(out, res, {"text": args.text, "seed": seed, "edited_from": str(args.object), "removed": remove})
    emit({"event": "edited", "parts": len(res.tree.nodes), "rounds": res.rounds})
    _write_run(out, args, {"object": Path(args.object), "model": Path(args.model), "prior": Path(args.prior)})


def _generator_or_none(path):
    if not path:
        return None
    from .prior import ShapePrior

    return ShapePrior.load(_require(path, "prior train")).generator()


def cmd_evaluate(args) -> None:
    from .checkpoint import save_arrays, write_atomic
    from .metrics import EvalConfig, IDCache, por, set_metrics_from_distances
    from .pipeline import load_objects, object_parts

    cfg = EvalConfig(n_joint_states=args.joint_states, voxel_res=args.voxel_res,
                     surface_samples=args.samples, seed=_seed(args))
    gen_model = _generator_or_none(args.prior)
    sets = {}
    report: dict[str, Any] = {"config": cfg.__dict__ | {"openness": list(cfg.openness)}, "seed": cfg.seed}
    for side, d in (("gen", args.gen), ("ref", args.ref)):
        items = []
        for name, tree, _ in load_objects(_require(d, "generate")):
            items.append((name, object_parts(tree, gen_model, args.res, name)))
        sets[side] = items
        pors = {name: por(op.geometry.tree, op.shapes, cfg, np.random.default_rng([cfg.seed, i]))
                for i, (name, op) in enumerate(items)}
        report[f"{side}_por"] = pors
        report[f"{side}_mean_por"] = float(np.mean(list(pors.values())))
        emit({"event": "por", "set": side, "mean": report[f"{side}_mean_por"]})
    ids = IDCache(cfg)
    g = [op.geometry for _, op in sets["gen"]]
    r = [op.geometry for _, op in sets["ref"]]
    d_gr, d_gg, d_rr = ids.matrix(g, r), ids.matrix(g, g), ids.matrix(r, r)
    report.update(set_metrics_from_distances(d_gr, d_gg, d_rr))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_arrays(out / "id_matrix.bin", {"gen_ref": d_gr, "gen_gen": d_gg, "ref_ref": d_rr},
                {"gen": [n for n, _ in sets["gen"]], "ref": [n for n, _ in sets["ref"]]})
    report["id_matrix"] = "id_matrix.bin"
    write_atomic(out / "report.json", (json.dumps(report, indent=1, sort_keys=True) + "\n").encode())
    emit({"event": "metrics", "MMD": report["MMD"], "COV": report["COV"], "1-NNA": report["1-NNA"]})
    _write_run(out, args, {"gen": Path(args.gen), "ref": Path(args.ref)})


def cmd_export(args) -> None:
    from .checkpoint import write_atomic
    from .geometry import write_obj
    from .pipeline import object_parts
    from .serialize import export_urdf, read_object

    tree, meta = read_object(_require(args.object, "generate").read_text())
    gen_model = _generator_or_none(args.prior)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    parts = object_parts(tree, gen_model, args.res)
    files = {}
    for i, mesh in enumerate(parts.geometry.meshes):
        if mesh.is_empty:
            emit({"event": "empty-part", "part": i})
            continue
        files[i] = f"part_{i}.obj"
        write_obj(mesh, out / files[i])
    if args.format == "urdf":
        name = Path(args.object).stem
        write_atomic(out / f"{name}.urdf", export_urdf(tree, files, name).encode("utf-8"))
    emit({"event": "exported", "format": args.format, "parts": len(files)})
    _write_run(out, args, {"object": Path(args.object)})


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="artkit", description=__doc__.splitlines()[0])
    p.add_argument("--deterministic", action="store_true", help="force single-threaded reductions")
    sub = p.add_subparsers(dest="command", required=True)

    def cmd(parent, name, func, help_text):
        c = parent.add_parser(name, help=help_text)
        c.set_defaults(func=func)
        c.add_argument("--seed", type=int, default=None, help="random seed (default: $ARTKIT_SEED)")
        return c

    ds = sub.add_parser("dataset").add_subparsers(dest="sub", required=True)
    c = cmd(ds, "build", cmd_dataset_build, "write a procedural corpus")
    c.add_argument("--out", required=True)
    c.add_argument("--count", type=int, default=200)
    c.add_argument("--splits", type=float, nargs=3, default=(0.8, 0.1, 0.1))

    pr = sub.add_parser("prior").add_subparsers(dest="sub", required=True)
    c = cmd(pr, "train", cmd_prior_train, "train the shape prior")
    c.add_argument("--data", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--profile", choices=PROFILES, default="desk")
    c.add_argument("--config", help="JSON file overriding profile values")
    c.add_argument("--vae-steps", type=int)
    c.add_argument("--diffusion-steps", type=int)
    c = cmd(pr, "preprocess", cmd_prior_preprocess, "cache z, c_s and D for every part")
    c.add_argument("--data", required=True)
    c.add_argument("--prior", required=True)
    c.add_argument("--out", required=True)

    af = sub.add_parser("artformer").add_subparsers(dest="sub", required=True)
    c = cmd(af, "train", cmd_artformer_train, "train the articulation transformer")
    for flag in ("--data", "--prior", "--caches", "--out"):
        c.add_argument(flag, required=True)
    c.add_argument("--profile", choices=PROFILES, default="desk")
    c.add_argument("--config", help="JSON file overriding profile values")
    c.add_argument("--steps", type=int)

    c = cmd(sub, "generate", cmd_generate, "generate objects from a text prompt")
    for flag in ("--model", "--prior", "--text", "--out"):
        c.add_argument(flag, required=True)
    c.add_argument("--samples", type=int, default=1)
    c.add_argument("--trace", action="store_true", help="also dump the per-round decode trace")

    c = cmd(sub, "edit", cmd_edit, "remove parts and regenerate them under a new prompt")
    for flag in ("--object", "--remove", "--text", "--model", "--prior", "--out"):
        c.add_argument(flag, required=True)

    c = cmd(sub, "evaluate", cmd_evaluate, "POR, ID-based MMD / COV / 1-NNA")
    c.add_argument("--gen", required=True)
    c.add_argument("--ref", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--prior", help="needed when objects carry latents instead of analytic shapes")
    c.add_argument("--res", type=int, default=32, help="part SDF grid resolution")
    c.add_argument("--voxel-res", type=int, default=96)
    c.add_argument("--joint-states", type=int, default=10)
    c.add_argument("--samples", type=int, default=2048, help="surface samples per object")

    c = cmd(sub, "export", cmd_export, "write part meshes (OBJ) and optionally URDF")
    c.add_argument("--object", required=True)
    c.add_argument("--format", choices=("obj", "urdf"), required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--prior")
    c.add_argument("--res", type=int, default=32)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.command_path = " ".join(x for x in (args.command, getattr(args, "sub", None)) if x)
    from .tensor import configure_threads

    configure_threads(1 if args.deterministic else None)
    try:
        args.func(args)
    except (CommandError, FileNotFoundError, ValueError, FloatingPointError) as exc:
        emit({"event": "error", "command": args.command_path, "message": str(exc)})
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
