"""Gradient-check suites: one case per engine op, plus an end-to-end check
of a micro model (channels [2,2,4,4], 1 block / 1 head, K=2, N=2, B=1)
against central finite differences in double precision.

The micro model runs on 32x32 inputs: stage 4 sits at stride 16, and the
intra-MLP needs at least K+1 patches there, so 32x32 (Q=4) is the smallest
legal canvas for K=2.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .encoder import EncoderConfig
from .gradcheck import GradCheckReport, grad_check, grad_check_params
from .intra_mlp import IntraMlpConfig, similarity, topk_neighbors
from .model import AblationConfig, CoObjectModel, ModelConfig
from .semantic import SemanticConfig
from .tensor import Tensor
from .transformer import TransformerConfig

MICRO_HEIGHT = 32
MICRO_WIDTH = 32


def _t(rng, *shape) -> Tensor:
    return Tensor(rng.normal(size=shape))


def _away_from_zero(rng, *shape) -> Tensor:
    # Keeps relu/clamp kinks outside the FD stencil.
    return Tensor(rng.uniform(0.2, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape))


def standard_op_checks(seed: int = 0, eps: float = 1e-4,
                       tol: float = 1e-5) -> list[GradCheckReport]:
    rng = np.random.default_rng(seed)
    reports = []

    def check(name, f, x):
        reports.append(grad_check(f, x, eps=eps, tol=tol, name=name))

    w = _t(rng, 4, 2)
    r = _t(rng, 3, 2)
    check("matmul.lhs", lambda x: T.reduce_sum(T.mul(T.matmul(x, w), r)), _t(rng, 3, 4))
    a = _t(rng, 3, 4)
    check("matmul.rhs", lambda x: T.reduce_sum(T.mul(T.matmul(a, x), r)), _t(rng, 4, 2))
    rb = _t(rng, 2, 3, 5)
    bb = _t(rng, 2, 4, 5)
    check("matmul.batched", lambda x: T.reduce_sum(T.mul(T.matmul(x, bb), rb)), _t(rng, 2, 3, 4))

    cw = _t(rng, 2, 3, 3, 3)
    cb = _t(rng, 2)
    rc = _t(rng, 1, 2, 6, 6)
    check("conv2d.input",
          lambda x: T.reduce_sum(T.mul(T.conv2d(x, cw, cb, 1, 1), rc)), _t(rng, 1, 3, 6, 6))
    cx = _t(rng, 2, 3, 8, 8)
    cw2 = _t(rng, 4, 3, 2, 2)
    cb4 = Tensor(np.zeros(4))
    rs = _t(rng, 2, 4, 4, 4)
    check("conv2d.weight",
          lambda x: T.reduce_sum(T.mul(T.conv2d(cx, x, cb4, 2, 0), rs)), _t(rng, 4, 3, 2, 2))
    check("conv2d.bias",
          lambda x: T.reduce_sum(T.mul(T.conv2d(cx, cw2, x, 2, 0), rs)), _t(rng, 4))

    base = _t(rng, 2, 3, 4, 4)
    check("add.broadcast",
          lambda x: T.reduce_sum(T.sigmoid(T.add(base, x))), _t(rng, 2, 1, 4, 4))
    sub_r = _t(rng, 2, 3, 4, 4)
    check("sub", lambda x: T.reduce_sum(T.mul(T.sub(base, x), sub_r)), _t(rng, 2, 3, 4, 4))
    gate = _t(rng, 2, 3, 1, 1)
    check("mul.gate", lambda x: T.reduce_sum(T.sigmoid(T.mul(x, gate))), _t(rng, 2, 3, 4, 4))
    denom = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)))
    check("div.num", lambda x: T.reduce_sum(T.div(x, denom)), _t(rng, 3, 4))
    numer = _t(rng, 3, 4)
    check("div.den", lambda x: T.reduce_sum(T.div(numer, T.add(T.mul(x, x), 0.5))), _t(rng, 3, 4))
    check("scale", lambda x: T.reduce_sum(T.scale(x, -2.5)), _t(rng, 3, 4))

    check("relu", lambda x: T.reduce_sum(T.mul(T.relu(x), numer)), _away_from_zero(rng, 3, 4))
    check("sigmoid", lambda x: T.reduce_sum(T.mul(T.sigmoid(x), numer)), _t(rng, 3, 4))
    check("log", lambda x: T.reduce_sum(T.log(x)), Tensor(rng.uniform(0.1, 2.0, size=(3, 4))))
    check("sqrt", lambda x: T.reduce_sum(T.sqrt(x)), Tensor(rng.uniform(0.1, 2.0, size=(3, 4))))
    check("clamp", lambda x: T.reduce_sum(T.mul(T.clamp(x, -0.9, 0.9), numer)),
          _away_from_zero(rng, 3, 4))

    wsm = _t(rng, 4, 6)
    check("softmax", lambda x: T.reduce_sum(T.mul(T.softmax(x, 1), wsm)), _t(rng, 4, 6))
    check("log_softmax", lambda x: T.reduce_sum(T.mul(T.log_softmax(x, 1), wsm)), _t(rng, 4, 6))

    r2 = _t(rng, 2)
    check("reduce_sum", lambda x: T.reduce_sum(T.mul(T.reduce_sum(x, axis=(1, 2)), r2)),
          _t(rng, 2, 3, 4))
    r23 = _t(rng, 2, 3)
    check("reduce_mean", lambda x: T.reduce_sum(T.mul(T.reduce_mean(x, axis=2), r23)),
          _t(rng, 2, 3, 4))
    r4 = _t(rng, 4)
    check("reduce_max", lambda x: T.reduce_sum(T.mul(T.reduce_max(x, axis=1), r4)),
          _t(rng, 4, 6))

    rr = _t(rng, 4, 6)
    check("reshape", lambda x: T.reduce_sum(T.mul(T.reshape(x, (4, 6)), rr)), _t(rng, 2, 3, 4))
    rp = _t(rng, 4, 2, 3)
    check("permute", lambda x: T.reduce_sum(T.mul(T.permute(x, (2, 0, 1)), rp)), _t(rng, 2, 3, 4))
    cc_tail = _t(rng, 2, 2)
    cc = _t(rng, 2, 5)
    check("concat", lambda x: T.reduce_sum(T.mul(T.concat([x, cc_tail], 1), cc)), _t(rng, 2, 3))

    idx = np.random.default_rng(seed + 1).integers(0, 6, size=(4, 3))
    gw = _t(rng, 4, 3)
    check("gather_lastdim", lambda x: T.reduce_sum(T.mul(T.gather_lastdim(x, idx), gw)),
          _t(rng, 4, 6))

    uw = _t(rng, 1, 2, 6, 6)
    check("upsample_bilinear",
          lambda x: T.reduce_sum(T.mul(T.upsample_bilinear(x, 2), uw)), _t(rng, 1, 2, 3, 3))

    lg = Tensor(rng.normal(size=5), requires_grad=True)
    lb = Tensor(rng.normal(size=5), requires_grad=True)
    check("layer_norm", lambda x: T.reduce_sum(T.sigmoid(T.layer_norm(x, lg, lb))),
          _t(rng, 3, 4, 5))
    return reports


def micro_model_config() -> ModelConfig:
    return ModelConfig(
        group_size=2,
        num_classes=2,
        encoder=EncoderConfig(stage_channels=(2, 2, 4, 4), convs_per_stage=1),
        transformer=TransformerConfig(num_blocks=1, num_heads=1, model_dim=8, mlp_hidden=8),
        intra_mlp=IntraMlpConfig(k=2),
        semantic=SemanticConfig(embed_dim=8),
        ablation=AblationConfig(),
    )


def micro_model_batch(seed: int = 0, height: int = MICRO_HEIGHT, width: int = MICRO_WIDTH):
    rng = np.random.default_rng(seed)
    n = 2
    images = rng.uniform(0.0, 1.0, size=(n, 3, height, width))
    yy, xx = np.mgrid[0:height, 0:width]
    masks = np.zeros((n, 1, height, width))
    for i in range(n):
        cx, cy = rng.uniform(6, width - 6), rng.uniform(6, height - 6)
        rad = rng.uniform(4, 8)
        masks[i, 0] = ((xx - cx) ** 2 + (yy - cy) ** 2 <= rad * rad).astype(float)
    labels = np.array([1], dtype=np.int64)
    return images, masks, labels


def micro_model_check(seed: int = 0, eps: float = 1e-5,
                      tol: float = 1e-4) -> list[GradCheckReport]:
    cfg = micro_model_config()
    model = CoObjectModel(cfg, seed=seed, dtype=np.float64)
    images, masks, labels = micro_model_batch(seed)
    images_t = Tensor(images)

    # Freeze the KNN indices: the index path is non-differentiable, and FD
    # perturbations must not flip neighbor selections mid-check.
    enc = model.encoder(images_t)
    frozen_idx = topk_neighbors(similarity(enc.f4), cfg.intra_mlp.k)

    def forward():
        out = model.forward(images_t, group_size=cfg.group_size, frozen_idx=frozen_idx)
        return model.compute_losses(out, masks, labels).total

    return grad_check_params(forward, model.params(), eps=eps, tol=tol)


def run_all(seed: int = 0, op_eps: float = 1e-4, op_tol: float = 1e-5,
            model_eps: float = 1e-5, model_tol: float = 1e-4):
    reports = standard_op_checks(seed=seed, eps=op_eps, tol=op_tol)
    model_reports = micro_model_check(seed=seed, eps=model_eps, tol=model_tol)
    worst = max(r.max_rel_err for r in model_reports)
    merged = GradCheckReport(
        name="micro_model.end_to_end", tol=model_tol, max_rel_err=worst,
        passed=all(r.passed for r in model_reports),
        failures=[f for r in model_reports if not r.passed for f in r.failures])
    return reports + [merged], model_reports
