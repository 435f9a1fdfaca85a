"""Training loop, checkpoint persistence, and batched evaluation.

Determinism contract: each step draws its group sample and flip decisions
from a per-step seeded stream, the lr schedule is a pure function of the
step index, and the Adam state rides along in the checkpoint, so resuming
from step s replays exactly the run that trained straight through.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from .checkpoint import OPT_PREFIX, load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import DatasetManifest, load_batch, split_groups
from .errors import CheckpointError, DataError
from .metrics import MetricReport, evaluate
from .model import CoObjectModel
from .optim import AdamState, adam_step
from .tensor import Tape, backward, zero_grads

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.ckpt"
LOG_NAME = "train_log.jsonl"


class TrainingAborted(DataError):
    """Raised when the loss stops being finite."""


def _step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng((seed, 0x5EED, step))


def lr_at(cfg_lr: float, halve_every: int, step: int) -> float:
    return cfg_lr * 0.5 ** (step // halve_every)


def checkpoint_arrays(model: CoObjectModel, state: AdamState, step: int) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {name: p.data for name, p in model.params().items()}
    for name, m in state.m.items():
        arrays[f"{OPT_PREFIX}m/{name}"] = m
    for name, v in state.v.items():
        arrays[f"{OPT_PREFIX}v/{name}"] = v
    arrays[f"{OPT_PREFIX}t"] = np.array([state.t], dtype=np.int64)
    arrays[f"{OPT_PREFIX}step"] = np.array([step], dtype=np.int64)
    return arrays


def restore_model(model: CoObjectModel, arrays: dict[str, np.ndarray]) -> None:
    params = model.params()
    for name, p in params.items():
        if name not in arrays:
            raise CheckpointError(f"checkpoint is missing parameter {name}")
        saved = arrays[name]
        if saved.shape != p.data.shape:
            raise CheckpointError(
                f"{name}: checkpoint shape {saved.shape} != model shape {p.data.shape}")
        p.data = saved.astype(p.data.dtype, copy=True)
    extras = [k for k in arrays if not k.startswith(OPT_PREFIX) and k not in params]
    if extras:
        raise CheckpointError(f"checkpoint has unknown parameters {sorted(extras)[:3]}")


def restore_optimizer(state: AdamState, arrays: dict[str, np.ndarray]) -> int:
    for key, value in arrays.items():
        if key.startswith(f"{OPT_PREFIX}m/"):
            state.m[key[len(OPT_PREFIX) + 2:]] = value.copy()
        elif key.startswith(f"{OPT_PREFIX}v/"):
            state.v[key[len(OPT_PREFIX) + 2:]] = value.copy()
    state.t = int(arrays.get(f"{OPT_PREFIX}t", np.zeros(1, np.int64))[0])
    return int(arrays.get(f"{OPT_PREFIX}step", np.zeros(1, np.int64))[0])


def train_run(cfg: RunConfig, manifest: DatasetManifest, out_dir,
              resume: str | None = None, log_every: int = 50) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_ids, val_ids = split_groups(manifest, cfg.data.val_fraction, cfg.train.seed)
    if not train_ids:
        raise DataError("training split is empty")

    model = CoObjectModel(cfg.model, seed=cfg.train.seed, dtype=np.float32)
    params = model.params()
    opt_params = dict(params)
    if cfg.train.freeze_classifier:
        for name in model.classifier_param_names():
            opt_params.pop(name, None)
    state = AdamState(lr=cfg.train.lr)

    start_step = 0
    if resume is not None:
        arrays = load_checkpoint(resume)
        restore_model(model, arrays)
        start_step = restore_optimizer(state, arrays)

    train_pool = np.asarray(train_ids)
    last_finite: dict | None = None
    ckpt_path = out / CHECKPOINT_NAME
    mode = "a" if start_step and (out / LOG_NAME).exists() else "w"
    with open(out / LOG_NAME, mode, encoding="utf-8") as log_fh:
        for step in range(start_step, cfg.train.steps):
            state.lr = lr_at(cfg.train.lr, cfg.train.halve_every, step)
            rng = _step_rng(cfg.train.seed, step)
            ids = rng.choice(train_pool, size=cfg.train.batch_groups,
                             replace=len(train_pool) < cfg.train.batch_groups)
            batch = load_batch(manifest, [int(i) for i in ids],
                               rng=rng, flip=cfg.train.flip)
            with Tape() as tape:
                model_out = model.forward(batch.images, group_size=batch.group_size,
                                          aux=batch.aux_images)
                breakdown = model.compute_losses(
                    model_out, batch.masks, batch.labels,
                    include_cls=not cfg.train.freeze_classifier)
                values = breakdown.values()
                if not all(np.isfinite(v) for v in values.values()):
                    raise TrainingAborted(
                        f"non-finite loss at step {step}: {values}; "
                        f"last finite breakdown: {last_finite}")
                zero_grads(params.values())
                backward(breakdown.total, tape)
            adam_step(opt_params, state)

            record = {"step": step, **values, "lr": state.lr}
            last_finite = record
            log_fh.write(json.dumps(record) + "\n")
            if log_every and (step % log_every == 0 or step + 1 == cfg.train.steps):
                logger.info("step %d: total %.4f (cls %.4f wbce %.4f iou %.4f) lr %.2e",
                            step, values["total"], values["cls"], values["wbce"],
                            values["iou"], state.lr)
            if (cfg.train.checkpoint_interval
                    and (step + 1) % cfg.train.checkpoint_interval == 0):
                save_checkpoint(out / f"checkpoint_step{step + 1}.ckpt",
                                checkpoint_arrays(model, state, step + 1))
        save_checkpoint(ckpt_path, checkpoint_arrays(model, state, cfg.train.steps))
    return {"checkpoint": str(ckpt_path), "log": str(out / LOG_NAME),
            "last": last_finite, "train_ids": train_ids, "val_ids": val_ids}


def predict_groups(model: CoObjectModel, manifest: DatasetManifest,
                   group_ids) -> tuple[np.ndarray, np.ndarray]:
    """Forward each group without gradients; returns (probs, masks) stacked
    over sorted group ids."""
    probs, masks = [], []
    for gid in sorted(group_ids):
        batch = load_batch(manifest, [gid])
        out = model.forward(batch.images, group_size=batch.group_size,
                            aux=batch.aux_images)
        probs.append(out.probs.data)
        masks.append(batch.masks)
    return np.concatenate(probs), np.concatenate(masks)


def evaluate_model(model: CoObjectModel, manifest: DatasetManifest, group_ids,
                   with_curves: bool = True) -> MetricReport:
    probs, masks = predict_groups(model, manifest, group_ids)
    return evaluate(probs, masks, with_curves=with_curves)
