"""Command surface: ufo synth | train | eval | infer | gradcheck."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint
from .checks import run_all
from .config import load_run_config
from .data import (SynthConfig, load_manifest, read_ppm, split_groups, synthesize,
                   write_pgm)
from .errors import ConfigError, DataError, UFOError
from .model import CoObjectModel, config_from_dict
from .train import evaluate_model, restore_model, train_run

logger = logging.getLogger("ufo")


def _cmd_synth(args) -> int:
    with open(args.config, encoding="utf-8") as fh:
        doc = json.load(fh)
    cfg = config_from_dict(SynthConfig, doc)
    if args.seed is not None:
        cfg.seed = args.seed
    manifest = synthesize(cfg, args.out)
    print(f"wrote {len(manifest.groups)} groups "
          f"({len(manifest.classes)} classes, N={manifest.group_size}) to {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    if args.data:
        cfg.data.dataset = args.data
    if args.seed is not None:
        cfg.train.seed = args.seed
    manifest = load_manifest(cfg.data.dataset)
    result = train_run(cfg, manifest, args.out, resume=args.resume)
    print(json.dumps({"checkpoint": result["checkpoint"], "last": result["last"]}))
    return 0


def _load_model(args) -> tuple:
    cfg = load_run_config(args.config)
    if args.data:
        cfg.data.dataset = args.data
    model = CoObjectModel(cfg.model, seed=cfg.train.seed, dtype=np.float32)
    restore_model(model, load_checkpoint(args.checkpoint))
    return cfg, model


def _cmd_eval(args) -> int:
    cfg, model = _load_model(args)
    manifest = load_manifest(cfg.data.dataset)
    train_ids, val_ids = split_groups(manifest, cfg.data.val_fraction, cfg.train.seed)
    ids = {"train": train_ids, "val": val_ids, "all": sorted(manifest.group_ids())}[args.split]
    if not ids:
        raise DataError(f"split {args.split!r} selects no groups")
    report = evaluate_model(model, manifest, ids)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.save_json(out / f"report_{args.split}.json")
    report.save_curves_csv(out / f"curves_{args.split}.csv")
    print(f"split={args.split} groups={len(ids)} "
          f"P={report.mean_precision:.4f} J={report.mean_jaccard:.4f} "
          f"MAE={report.mean_mae:.4f} F={report.mean_f_beta:.4f}")
    return 0


def _read_group_dir(path) -> tuple[list[str], np.ndarray]:
    files = sorted(p for p in Path(path).iterdir() if p.suffix == ".ppm")
    if not files:
        raise DataError(f"no .ppm images under {path}")
    images = np.stack([read_ppm(p).astype(np.float32).transpose(2, 0, 1) / 255.0
                       for p in files])
    return [p.stem for p in files], images


def _cmd_infer(args) -> int:
    cfg, model = _load_model(args)
    stems, images = _read_group_dir(args.data)
    aux = None
    if args.aux:
        aux_stems, aux_imgs = _read_group_dir(args.aux)
        if len(aux_stems) != len(stems):
            raise DataError(f"aux group has {len(aux_stems)} images, inputs have {len(stems)}")
        aux = aux_imgs
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = model.forward(images, group_size=len(stems), aux=aux)
    probs = result.probs.data
    for i, stem in enumerate(stems):
        write_pgm(out_dir / f"{stem}_mask.pgm",
                  np.round(probs[i, 0] * 255.0).astype(np.uint8))
    print(f"wrote {len(stems)} masks to {out_dir}")
    return 0


def _cmd_gradcheck(args) -> int:
    if args.corrupt:
        T._CORRUPT_BACKWARD.add(args.corrupt)
    try:
        reports, _ = run_all(seed=args.seed if args.seed is not None else 0)
    finally:
        T._CORRUPT_BACKWARD.clear()
    ok = True
    for rep in reports:
        print(rep)
        ok = ok and rep.passed
    print("gradcheck:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ufo", description="Group-based co-object segmentation at desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic co-object dataset")
    p.add_argument("--config", required=True, help="SynthConfig JSON")
    p.add_argument("--out", required=True, help="dataset output directory")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("train", help="train a model end to end")
    p.add_argument("--config", required=True, help="RunConfig JSON")
    p.add_argument("--data", default=None, help="dataset directory (overrides config)")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--checkpoint", "--resume", dest="resume", default=None,
                   help="resume from this checkpoint")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--split", choices=("train", "val", "all"), default="val")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("infer", help="predict masks for one image group directory")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="directory of .ppm images (one group)")
    p.add_argument("--out", required=True)
    p.add_argument("--aux", default=None, help="directory of auxiliary .ppm images")
    p.set_defaults(fn=_cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and a micro model")
    p.add_argument("--config", default=None, help="accepted for interface parity; the "
                   "suite always runs the pinned micro configuration")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--corrupt", default=None, help=argparse.SUPPRESS)
    p.set_defaults(fn=_cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (UFOError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
