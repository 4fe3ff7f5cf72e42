"""Command-line entry point: ``motionedit <command> [flags]``.

Commands: generate, analyze, filter, train, sample, evaluate. Every command
writes ``config.resolved.json`` to the output directory before doing any
work, and every artifact it writes carries the resolved config's hash.
Failures print one JSON line on stderr; usage errors exit with 2, runtime
errors with 1.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from . import __version__
from .config import RunConfig, load_config, substream
from .diffusion import guided_sample, make_cosine_schedule
from .errors import MotionEditError
from .evaluation import fid_like, l2_distance, retrieval_metrics
from .model import ModelConfig, build_bundle, load_bundle, read_checkpoint_header, save_bundle
from .motion import (
    DEFAULT_LAYOUT,
    SMALL_LAYOUT,
    DatasetManifest,
    EditTriplet,
    ManifestEntry,
    MotionSequence,
    load_manifest,
    load_motion,
    load_triplet,
    resolve_entry_path,
    save_manifest,
    save_motion,
    save_triplet,
    triplet_from_dict,
)
from .similarity import build_curve, filter_dataset
from .synth import SynthSpec, generate, split_manifest
from .text import make_encoder
from .training import Trainer, TrainConfig, prepare_examples, sample_edits

CHECKPOINT_NAME = "checkpoint.mdt"


class UsageError(MotionEditError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail("usage", message, 2)


def _fail(kind: str, message: str, code: int):
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    raise SystemExit(code)


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"file not found: {path}")
    return p


def _layout(name: str):
    if name == "small":
        return SMALL_LAYOUT
    if name in ("full", "default"):
        return DEFAULT_LAYOUT
    raise UsageError(f"unknown layout {name!r}; expected 'small' or 'full'")


def _relpath(target: Path, start_dir: Path) -> str:
    return Path(os.path.relpath(Path(target).resolve(), Path(start_dir).resolve())).as_posix()


def _rebase(manifest: DatasetManifest, manifest_path: Path, out_dir: Path) -> DatasetManifest:
    """Rewrite entry paths relative to a manifest that will live in ``out_dir``."""
    entries = tuple(replace(e, path=_relpath(resolve_entry_path(manifest_path, e), out_dir))
                    for e in manifest.entries)
    return replace(manifest, entries=entries)


def _load_entries(manifest_path: Path, manifest: DatasetManifest, included_only: bool) -> list[EditTriplet]:
    entries = manifest.included_entries() if included_only else manifest.entries
    out = []
    for e in entries:
        p = resolve_entry_path(manifest_path, e)
        if not p.exists():
            raise UsageError(f"triplet file not found: {p}")
        out.append(load_triplet(p, layout=None))
    return out


def _curve_job(args):
    path, sim_cfg = args
    triplet = load_triplet(path, layout=None)
    return triplet.id, build_curve(triplet, sim_cfg)


def _curves(manifest_path: Path, manifest: DatasetManifest, cfg: RunConfig, workers: int):
    jobs = [(resolve_entry_path(manifest_path, e), cfg.similarity) for e in manifest.entries]
    for p, _ in jobs:
        if not p.exists():
            raise UsageError(f"triplet file not found: {p}")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_curve_job, jobs, chunksize=8))
    else:
        results = [_curve_job(j) for j in jobs]
    return dict(results)


def _model_config(cfg: RunConfig, D: int) -> ModelConfig:
    m = cfg.model
    return ModelConfig(latent_dim=m.latent_dim, cond_layers=m.cond_layers, diff_layers=m.diff_layers,
                       heads=m.heads, K=cfg.similarity.K, D=D, max_frames=m.max_frames,
                       dropout=m.dropout, text_dim=cfg.text.embed_dim, max_tokens=cfg.text.max_tokens,
                       ff_mult=m.ff_mult, num_timesteps=cfg.diffusion.T)


def _encoder(text_cfg: dict, seed: int):
    return make_encoder(text_cfg["encoder"], text_cfg["embed_dim"], text_cfg["max_tokens"],
                        seed=seed, sidecar=text_cfg.get("sidecar") or None)


def _load_checkpoint(path: Path):
    header = read_checkpoint_header(path)
    model = load_bundle(path)
    text_cfg = header.get("text", {"encoder": "stub", "embed_dim": model.config.text_dim,
                                   "max_tokens": model.config.max_tokens, "sidecar": ""})
    return model, _encoder(text_cfg, header.get("text_seed", 0)), header


# -- commands ---------------------------------------------------------------

def cmd_generate(args, cfg: RunConfig, out: Path) -> None:
    d = cfg.data
    spec = SynthSpec(n_triplets=d.n_triplets, F=d.frames, layout=_layout(d.layout), edit_kinds=d.kinds,
                     seed=substream(cfg.seed, "data") % 10000, magnitude=d.magnitude)
    triplets, manifest = generate(spec)
    manifest = replace(manifest, config_hash=cfg.hash())
    (out / "triplets").mkdir(parents=True, exist_ok=True)
    for t in triplets:
        save_triplet(t, out / "triplets" / f"{t.id}.json")
    save_manifest(manifest, out / "manifest_all.jsonl")
    for name, m in split_manifest(manifest, d.ratios, seed=substream(cfg.seed, "split")).items():
        save_manifest(m, out / f"manifest_{name}.jsonl")


def cmd_analyze(args, cfg: RunConfig, out: Path) -> None:
    mpath = _existing(args.manifest)
    manifest = load_manifest(mpath)
    curves = _curves(mpath, manifest, cfg, args.workers)
    with open(out / "curves.jsonl", "w", encoding="utf-8") as fh:
        for e in manifest.entries:
            rec = curves[e.id].to_record(e.id)
            rec["config_hash"] = cfg.hash()
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    entries = tuple(replace(e, snr=curves[e.id].snr) for e in manifest.entries)
    analyzed = _rebase(replace(manifest, entries=entries), mpath, out)
    analyzed = replace(analyzed, snr_threshold=None, config_hash=cfg.hash())
    save_manifest(analyzed, out / "manifest_analyzed.jsonl")
    if args.plots:
        from .plotting import plot_curve
        (out / "plots").mkdir(exist_ok=True)
        for e in manifest.entries:
            t = load_triplet(resolve_entry_path(mpath, e), layout=None)
            plot_curve(curves[e.id], out / "plots" / f"{e.id}.png", cfg.similarity.K,
                       title=t.instruction, edit_mask=t.edit_mask)


def cmd_filter(args, cfg: RunConfig, out: Path) -> None:
    mpath = _existing(args.manifest)
    manifest = load_manifest(mpath)
    threshold = cfg.similarity.snr_threshold if args.threshold is None else args.threshold
    if all(e.snr is not None for e in manifest.entries):
        snrs = {e.id: e.snr for e in manifest.entries}
    else:
        snrs = _curves(mpath, manifest, cfg, args.workers)
    filtered = filter_dataset(_rebase(manifest, mpath, out), snrs, threshold)
    save_manifest(replace(filtered, config_hash=cfg.hash()), out / "manifest_filtered.jsonl")


def cmd_train(args, cfg: RunConfig, out: Path) -> None:
    mpath = _existing(args.manifest)
    manifest = load_manifest(mpath)
    triplets = _load_entries(mpath, manifest, included_only=True)
    if not triplets:
        raise UsageError("manifest has no included triplets")
    curves = {t.id: build_curve(t, cfg.similarity) for t in triplets}
    text_seed = substream(cfg.seed, "text")
    text_cfg = {"encoder": cfg.text.encoder, "embed_dim": cfg.text.embed_dim,
                "max_tokens": cfg.text.max_tokens, "sidecar": cfg.text.sidecar}
    encoder = _encoder(text_cfg, text_seed)
    examples = prepare_examples(triplets, curves, encoder)
    model_cfg = _model_config(cfg, triplets[0].layout.D)
    model = build_bundle(model_cfg, seed=substream(cfg.seed, "init"))
    tc = cfg.train
    trainer = Trainer(model, make_cosine_schedule(cfg.diffusion.T),
                      TrainConfig(tc.steps, tc.batch_size, tc.lr, tc.weight_decay, tc.grad_clip, tc.aux_weight),
                      cfg.diffusion.guidance(), seed=substream(cfg.seed, "train"))
    log_path = out / "metrics.jsonl"
    log_path.write_text("", encoding="utf-8")
    history = trainer.fit(examples, log_path=None, log_timing=True)
    with open(log_path, "w", encoding="utf-8") as fh:
        for row in history:
            fh.write(json.dumps({**row, "config_hash": cfg.hash()}, sort_keys=True) + "\n")
    save_bundle(model, out / CHECKPOINT_NAME,
                extra={"config_hash": cfg.hash(), "text": text_cfg, "text_seed": text_seed,
                       "layout": triplets[0].layout.to_dict(), "steps": trainer.step_count})


def _read_source(path: Path) -> MotionSequence:
    doc = json.loads(path.read_text(encoding="utf-8"))
    if "source" in doc:
        return triplet_from_dict(doc).source
    return load_motion(path)


def cmd_sample(args, cfg: RunConfig, out: Path) -> None:
    model, encoder, header = _load_checkpoint(_existing(args.checkpoint))
    source = _read_source(_existing(args.source))
    if source.D != model.config.D:
        raise UsageError(f"source has D={source.D} but checkpoint expects D={model.config.D}")
    guidance = cfg.diffusion.guidance()
    guidance = replace(guidance, **{k: v for k, v in (("s_text", args.s_text), ("s_motion", args.s_motion))
                                    if v is not None})
    sched = make_cosine_schedule(model.config.num_timesteps)
    text = encoder.encode(args.instruction)
    edited = guided_sample(source, text, model, sched, guidance, length=args.frames or source.F,
                           seed=substream(cfg.seed, "sample"))
    save_motion(edited, out / "sample.json",
                extra={"instruction": args.instruction, "config_hash": cfg.hash(),
                       "s_text": guidance.s_text, "s_motion": guidance.s_motion})


def cmd_evaluate(args, cfg: RunConfig, out: Path) -> None:
    model, encoder, header = _load_checkpoint(_existing(args.checkpoint))
    mpath = _existing(args.manifest)
    triplets = _load_entries(mpath, load_manifest(mpath), included_only=True)
    if len(triplets) < 2:
        raise UsageError("evaluation needs at least two triplets")
    curves = {t.id: build_curve(t, cfg.similarity) for t in triplets}
    examples = prepare_examples(triplets, curves, encoder)
    sched = make_cosine_schedule(model.config.num_timesteps)
    generated = sample_edits(model, examples, sched, cfg.diffusion.guidance(),
                             seed=substream(cfg.seed, "sample"))
    targets = [t.target for t in triplets]
    batch = min(cfg.train.eval_batch_size, len(triplets))
    seed = substream(cfg.seed, "eval")
    batch_report = retrieval_metrics(generated, targets, "batch", batch, seed=seed)
    full_report = retrieval_metrics(generated, targets, "full_set", seed=seed)
    report = {
        "r_at": batch_report.as_dict()["r_at"],
        "avg_rank": batch_report.avg_rank,
        "batch_size": batch,
        "full_set": full_report.as_dict(),
        "l2": float(np.mean([l2_distance(g, t) for g, t in zip(generated, targets)])),
        "fid": fid_like(generated, targets),
        "m_score": None,
        "truncation": "generated motions use the target length; no truncation",
        "n": len(triplets),
        "checkpoint_config_hash": header.get("config_hash"),
        "config_hash": cfg.hash(),
    }
    (out / "report.json").write_text(json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")


COMMANDS = {"generate": cmd_generate, "analyze": cmd_analyze, "filter": cmd_filter,
            "train": cmd_train, "sample": cmd_sample, "evaluate": cmd_evaluate}


def _global_flags(p: argparse.ArgumentParser, top: bool) -> None:
    p.add_argument("--config", help="INI-style key-value config file")
    p.add_argument("--seed", type=int, help="global seed (overrides [run] seed)")
    p.add_argument("--out", help="output directory (MEL_OUT overrides; default: out)")
    p.add_argument("--workers", type=int, help="parallel preprocessing workers (default: 1)")
    if top:
        p.set_defaults(config=None, seed=None, out="out", workers=1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="motionedit", description=__doc__.splitlines()[0])
    _global_flags(parser, top=True)
    # Subcommands accept the same flags; SUPPRESS keeps them from overwriting
    # values given before the subcommand name.
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    _global_flags(common, top=False)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", parents=[common], help="write a synthetic triplet dataset")
    p.add_argument("--n", type=int, dest="n_triplets")
    p.add_argument("--frames", type=int)
    p.add_argument("--layout", choices=["small", "full"])
    p.add_argument("--magnitude", type=float)

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--window", type=int)
    sim.add_argument("--w1", type=float)
    sim.add_argument("--w2", type=float)
    sim.add_argument("--K", type=int)
    sim.add_argument("--kappa", type=int)
    sim.add_argument("--metric")

    p = sub.add_parser("analyze", parents=[common, sim], help="similarity curves and MotionSNR")
    p.add_argument("--manifest", required=True)
    p.add_argument("--plots", action="store_true", help="also write one PNG per triplet")

    p = sub.add_parser("filter", parents=[common, sim], help="exclude low-MotionSNR triplets")
    p.add_argument("--manifest", required=True)
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("train", parents=[common, sim], help="train the editor")
    p.add_argument("--manifest", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--aux-weight", type=float, dest="aux_weight")

    p = sub.add_parser("sample", parents=[common], help="edit one source motion")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source", required=True, help="triplet or motion JSON file")
    p.add_argument("--instruction", required=True)
    p.add_argument("--frames", type=int, help="output length F' (default: source length)")
    p.add_argument("--s-text", type=float, dest="s_text")
    p.add_argument("--s-motion", type=float, dest="s_motion")

    p = sub.add_parser("evaluate", parents=[common], help="retrieval and fidelity metrics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    return parser


def resolve_config(args) -> RunConfig:
    try:
        return _resolve(args)
    except UsageError:
        raise
    except (MotionEditError, ValueError, TypeError) as exc:
        # Schema violations in the config file or flags are usage errors.
        raise UsageError(str(exc)) from None


def _resolve(args) -> RunConfig:
    cfg = load_config(_existing(args.config) if args.config else None)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    cfg = cfg.override("data", n_triplets=getattr(args, "n_triplets", None),
                       frames=getattr(args, "frames", None) if args.command == "generate" else None,
                       layout=getattr(args, "layout", None), magnitude=getattr(args, "magnitude", None))
    cfg = cfg.override("similarity", **{k: getattr(args, k, None)
                                        for k in ("window", "w1", "w2", "K", "kappa", "metric")})
    return cfg.override("train", steps=getattr(args, "steps", None), batch_size=getattr(args, "batch_size", None),
                        lr=getattr(args, "lr", None), aux_weight=getattr(args, "aux_weight", None))


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        torch.use_deterministic_algorithms(True)
        cfg = resolve_config(args)
        out = Path(os.environ.get("MEL_OUT") or args.out)
        out.mkdir(parents=True, exist_ok=True)
        cfg.write(out / "config.resolved.json")
        COMMANDS[args.command](args, cfg, out)
    except UsageError as exc:
        _fail("usage", str(exc), 2)
    except MotionEditError as exc:
        _fail(type(exc).__name__, str(exc), 1)
    except (OSError, ValueError, RuntimeError) as exc:
        _fail(type(exc).__name__, str(exc), 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
