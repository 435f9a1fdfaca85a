"""Acceptance suite: one test per criterion, each printing a verdict line.

Run with `pytest tests/test_acceptance.py -s` to see the lines live. The
long criteria (4 and 5) train real models and dominate the runtime.
"""

import json
import math
import shutil
import time

import numpy as np
import numpy.testing as npt

import oracles
from ufo.checkpoint import load_checkpoint, save_checkpoint
from ufo.checks import run_all
from ufo.cli import main as cli_main
from ufo.config import DataConfig, RunConfig, TrainConfig
from ufo.data import SynthConfig, load_batch, split_groups, synthesize
from ufo.encoder import EncoderConfig
from ufo.intra_mlp import IntraMlpConfig, SelfMaskModule, similarity, topk_neighbors
from ufo.losses import loss_cls, loss_iou, loss_wbce
from ufo.metrics import evaluate
from ufo.model import AblationConfig, CoObjectModel, ModelConfig
from ufo.semantic import SemanticConfig
from ufo.tensor import Tensor
from ufo.train import evaluate_model, restore_model, train_run
from ufo.transformer import GroupTransformer, SelfAttention, TransformerConfig


def _verdict(criterion: str, ok: bool, detail: str) -> None:
    print(f"\nACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {criterion}: {detail}"


def desk_model_config(num_classes: int = 5, transformer_on: bool = True) -> ModelConfig:
    """The pinned desk scale: 64x64 inputs, channels [16,32,64,128],
    2 blocks x 2 heads, D=64, K=4, N=5."""
    return ModelConfig(
        group_size=5,
        num_classes=num_classes,
        encoder=EncoderConfig(stage_channels=(16, 32, 64, 128), convs_per_stage=2),
        transformer=TransformerConfig(num_blocks=2, num_heads=2, model_dim=64,
                                      mlp_hidden=64),
        intra_mlp=IntraMlpConfig(k=4),
        semantic=SemanticConfig(embed_dim=128),
        ablation=AblationConfig(transformer_on=transformer_on),
    )


def test_criterion_1_gradient_suite():
    t0 = time.time()
    reports, model_reports = run_all(seed=0, op_eps=1e-4, op_tol=1e-4,
                                     model_eps=1e-5, model_tol=1e-4)
    elapsed = time.time() - t0
    bad = [r.name for r in reports if not r.passed]
    worst_op = max(r.max_rel_err for r in reports)
    worst_model = max(r.max_rel_err for r in model_reports)
    ok = not bad and elapsed < 300
    _verdict("1 gradient suite", ok,
             f"{len(reports)} checks, worst op rel err {worst_op:.2e}, "
             f"micro model worst {worst_model:.2e} <= 1e-4, {elapsed:.0f}s < 300s"
             + (f"; failed: {bad}" if bad else ""))


def test_criterion_2_oracle_equivalence():
    t0 = time.time()
    ok = True
    notes = []

    # similarity vs double-loop cosine oracle (float64, 1e-6)
    for seed in range(20):
        feats = np.random.default_rng(seed).normal(size=(6, 5))
        got = similarity(Tensor(feats.reshape(1, 6, 1, 5))).data[0]
        want = oracles.cosine_similarity_loops(feats)
        off = ~np.eye(5, dtype=bool)
        if not np.allclose(got[off], want[off], atol=1e-6):
            ok = False
            notes.append(f"similarity seed {seed}")

    # top-K vs full-sort oracle (exact)
    for seed in range(20):
        m = np.random.default_rng(100 + seed).normal(size=(1, 7, 7))
        np.fill_diagonal(m[0], np.finfo(np.float64).min)
        idx = topk_neighbors(Tensor(m), 3)[0]
        for q in range(7):
            if list(idx[q]) != oracles.topk_desc_loops(list(m[0, q]), 3):
                ok = False
                notes.append(f"topk seed {seed}")

    # multi-head attention (float32 weights) vs brute-force oracle (1e-5)
    for seed in range(20):
        rng = np.random.default_rng(200 + seed)
        attn = SelfAttention(np.random.default_rng(seed), channels=6, model_dim=8,
                             num_heads=2)
        x = rng.normal(size=(1, 5, 6)).astype(np.float32)
        got = attn(Tensor(x)).data[0]
        xq = x[0].astype(np.float64)
        q = xq @ attn.wq.w.data.astype(np.float64) + attn.wq.b.data
        k = xq @ attn.wk.w.data.astype(np.float64) + attn.wk.b.data
        v = xq @ attn.wv.w.data.astype(np.float64) + attn.wv.b.data
        heads = []
        for h in range(2):
            sl = slice(4 * h, 4 * (h + 1))
            w_h, ctx = oracles.attention_loops(q[:, sl], k[:, sl], v[:, sl], 1 / 2.0)
            heads.append(ctx)
            if not np.allclose(attn.last_weights.data[0, h], w_h, atol=1e-5):
                ok = False
                notes.append(f"attention weights seed {seed}")
        want = np.concatenate(heads, axis=1) @ attn.wo.w.data.astype(np.float64) \
            + attn.wo.b.data
        if not np.allclose(got, want, atol=1e-5):
            ok = False
            notes.append(f"attention out seed {seed}")

    # metrics vs pixel-loop oracle (1e-6)
    for seed in range(20):
        rng = np.random.default_rng(300 + seed)
        pred = rng.uniform(size=(2, 1, 8, 8))
        gt = (rng.uniform(size=(2, 1, 8, 8)) > 0.6).astype(float)
        rep = evaluate(pred, gt, with_curves=False)
        for i in range(2):
            p, _, j, mae, f = oracles.metrics_loops(pred[i], gt[i])
            if max(abs(rep.precision[i] - p), abs(rep.jaccard[i] - j),
                   abs(rep.mae[i] - mae), abs(rep.f_beta[i] - f)) > 1e-6:
                ok = False
                notes.append(f"metrics seed {seed}")

    elapsed = time.time() - t0
    ok = ok and elapsed < 60
    _verdict("2 oracle equivalence", ok,
             f"similarity/topk/attention/metrics x 20 seeds, {elapsed:.1f}s < 60s"
             + (f"; {notes[:3]}" if notes else ""))


def test_criterion_3_loss_exactness():
    checks = []

    pred = Tensor(np.full((1, 1, 4, 4), 0.5))
    checks.append(("wbce all-positive", loss_wbce(pred, np.ones((1, 1, 4, 4))).item(),
                   0.6931))
    gt = np.zeros((1, 1, 2, 2))
    gt[0, 0, 0, 0] = 1.0
    checks.append(("wbce quarter-positive",
                   loss_wbce(Tensor(np.full((1, 1, 2, 2), 0.5)), gt).item(), 0.4332))
    checks.append(("iou half", loss_iou(Tensor(np.full((1, 1, 4, 4), 0.5)),
                                        np.ones((1, 1, 4, 4))).item(), 0.5))
    full = np.ones((1, 1, 3, 3))
    checks.append(("iou perfect", loss_iou(Tensor(full.copy()), full).item(), 0.0))
    some = np.zeros((1, 1, 2, 2))
    some[0, 0, 1, 1] = 1.0
    checks.append(("iou disjoint", loss_iou(Tensor(np.zeros((1, 1, 2, 2))), some).item(),
                   1.0))
    checks.append(("ce uniform-4", loss_cls(Tensor(np.zeros((2, 4))),
                                            np.array([0, 3])).item(), math.log(4)))

    bad = [f"{name}: {got:.6f} != {want:.4f}"
           for name, got, want in checks if abs(got - want) > 1e-4]
    _verdict("3 loss exactness", not bad,
             "six hand-computed values at 1e-4" + (f"; {bad}" if bad else ""))


def test_criterion_6_structural_invariants(tmp_path):
    notes = []

    # Group isolation through the whole model, bitwise.
    cfg = desk_model_config()
    cfg.encoder.stage_channels = (4, 4, 8, 8)
    cfg.semantic.embed_dim = 8
    cfg.transformer.model_dim = 8
    cfg.transformer.mlp_hidden = 8
    cfg.intra_mlp.k = 2
    cfg.group_size = 2
    model = CoObjectModel(cfg, seed=0)
    rng = np.random.default_rng(0)
    imgs = rng.uniform(size=(4, 3, 32, 32)).astype(np.float32)
    base = model.forward(imgs, group_size=2).probs.data
    mod = imgs.copy()
    mod[2:] = rng.uniform(size=(2, 3, 32, 32)).astype(np.float32)
    out = model.forward(mod, group_size=2).probs.data
    if not (out[:2] == base[:2]).all():
        notes.append("group isolation not bitwise")

    # Image-permutation equivariance of group attention (<= 1e-5).
    tcfg = TransformerConfig(num_blocks=2, num_heads=2, model_dim=8, mlp_hidden=8)
    gt_mod = GroupTransformer(tcfg, {3: 6, 4: 8}, np.random.default_rng(1))
    f3 = rng.normal(size=(3, 6, 4, 4)).astype(np.float32)
    f4 = rng.normal(size=(3, 8, 2, 2)).astype(np.float32)
    perm = np.array([2, 0, 1])
    o3, o4 = gt_mod(Tensor(f3), Tensor(f4), group_size=3)
    p3, p4 = gt_mod(Tensor(f3[perm]), Tensor(f4[perm]), group_size=3)
    if not (np.allclose(p3.data, o3.data[perm], atol=1e-5, rtol=1e-5)
            and np.allclose(p4.data, o4.data[perm], atol=1e-5, rtol=1e-5)):
        notes.append("permutation equivariance > 1e-5")

    # KNN neighbor-order invariance and no-self-match.
    mod_mask = SelfMaskModule(IntraMlpConfig(k=3), 4, np.random.default_rng(2),
                              dtype=np.float64)
    f4d = Tensor(np.random.default_rng(3).normal(size=(2, 4, 2, 3)))
    idx = topk_neighbors(similarity(f4d), 3)
    if any(q in idx[b, q] for b in range(2) for q in range(6)):
        notes.append("self-match found")
    base_mask = mod_mask.aggregate(f4d, idx).data
    shuffled = idx.copy()
    for b in range(shuffled.shape[0]):
        for q in range(shuffled.shape[1]):
            shuffled[b, q] = np.random.default_rng((b, q)).permutation(shuffled[b, q])
    if not (mod_mask.aggregate(f4d, shuffled).data == base_mask).all():
        notes.append("neighbor-order variance")

    # Checkpoint bitwise round trip.
    arrays = {n: p.data for n, p in model.params().items()}
    path = tmp_path / "inv.ckpt"
    save_checkpoint(path, arrays)
    loaded = load_checkpoint(path)
    if not all((loaded[n] == a).all() and loaded[n].dtype == a.dtype
               for n, a in arrays.items()):
        notes.append("checkpoint round trip not bitwise")

    _verdict("6 structural invariants", not notes, "group isolation, equivariance, "
             "KNN invariances, checkpoint round trip" + (f"; {notes}" if notes else ""))


def _smoke_run_doc(dataset: str) -> dict:
    return {
        "model": {
            "group_size": 5, "num_classes": 5,
            "encoder": {"stage_channels": [4, 4, 8, 8], "convs_per_stage": 1},
            "transformer": {"num_blocks": 1, "num_heads": 1, "model_dim": 8,
                            "mlp_hidden": 8},
            "intra_mlp": {"k": 2},
            "semantic": {"embed_dim": 8},
        },
        "train": {"lr": 0.001, "steps": 10, "batch_groups": 2, "seed": 0},
        "data": {"dataset": dataset, "val_fraction": 0.2},
    }


def test_criterion_7_pipeline_smoke(tmp_path):
    t0 = time.time()
    notes = []
    synth_doc = {"seed": 4, "groups_per_class": 1, "group_size": 5, "with_aux": True}
    (tmp_path / "synth.json").write_text(json.dumps(synth_doc))
    if cli_main(["synth", "--config", str(tmp_path / "synth.json"),
                 "--out", str(tmp_path / "data")]) != 0:
        notes.append("synth failed")
    (tmp_path / "run.json").write_text(json.dumps(_smoke_run_doc(str(tmp_path / "data"))))
    if cli_main(["train", "--config", str(tmp_path / "run.json"),
                 "--out", str(tmp_path / "run")]) != 0:
        notes.append("train failed")
    ckpt = str(tmp_path / "run" / "checkpoint.ckpt")
    if cli_main(["eval", "--config", str(tmp_path / "run.json"), "--checkpoint", ckpt,
                 "--out", str(tmp_path / "reports"), "--split", "val"]) != 0:
        notes.append("eval failed")
    else:
        doc = json.loads((tmp_path / "reports" / "report_val.json").read_text())
        if set(doc) != {"per_image", "mean", "pr_curve", "f_curve"} \
                or len(doc["pr_curve"]) != 256:
            notes.append("report schema invalid")

    gdir = tmp_path / "group"
    gdir.mkdir()
    auxdir = tmp_path / "aux"
    auxdir.mkdir()
    src = tmp_path / "data" / "group_0000"
    for p in sorted(src.glob("img_*.ppm")):
        shutil.copy(p, gdir / p.name)
        shutil.copy(src / p.name.replace("img_", "aux_"), auxdir / p.name)
    if cli_main(["infer", "--config", str(tmp_path / "run.json"), "--checkpoint", ckpt,
                 "--data", str(gdir), "--out", str(tmp_path / "masks")]) != 0:
        notes.append("infer failed")
    elif len(list((tmp_path / "masks").glob("*.pgm"))) != 5:
        notes.append("infer mask count wrong")
    single = tmp_path / "single"
    single.mkdir()
    shutil.copy(gdir / "img_0.ppm", single / "img_0.ppm")
    if cli_main(["infer", "--config", str(tmp_path / "run.json"), "--checkpoint", ckpt,
                 "--data", str(single), "--out", str(tmp_path / "mask1")]) != 0:
        notes.append("N=1 infer failed")
    if cli_main(["infer", "--config", str(tmp_path / "run.json"), "--checkpoint", ckpt,
                 "--data", str(gdir), "--out", str(tmp_path / "masks_aux"),
                 "--aux", str(auxdir)]) != 0:
        notes.append("aux infer failed")
    elapsed = time.time() - t0
    ok = not notes and elapsed < 300
    _verdict("7 pipeline smoke", ok,
             f"synth/train/eval/infer incl. N=1 and --aux, {elapsed:.0f}s < 300s"
             + (f"; {notes}" if notes else ""))


def test_criterion_4_overfit(tmp_path):
    t0 = time.time()
    synth = SynthConfig(seed=0, groups_per_class=1, group_size=5,
                        shapes=("disk", "square", "triangle", "cross"))
    manifest = synthesize(synth, tmp_path / "data")
    cfg = RunConfig(
        model=desk_model_config(num_classes=4),
        train=TrainConfig(lr=1e-3, steps=1500, batch_groups=2, halve_every=2000, seed=0),
        data=DataConfig(dataset=str(tmp_path / "data"), val_fraction=0.0),
    )
    result = train_run(cfg, manifest, tmp_path / "run", log_every=500)
    total = result["last"]["total"]

    model = CoObjectModel(cfg.model, seed=cfg.train.seed, dtype=np.float32)
    restore_model(model, load_checkpoint(result["checkpoint"]))
    rep = evaluate_model(model, manifest, result["train_ids"], with_curves=False)
    elapsed = time.time() - t0
    ok = total < 0.1 and rep.mean_jaccard >= 0.9 and elapsed < 1200
    _verdict("4 overfit", ok,
             f"4 groups x 1500 steps: L_total {total:.4f} < 0.1, "
             f"train J {rep.mean_jaccard:.3f} >= 0.9, {elapsed:.0f}s < 1200s")


def test_criterion_5_generalization_and_ablation(tmp_path):
    t0 = time.time()
    synth = SynthConfig(seed=7, groups_per_class=16, group_size=5)
    manifest = synthesize(synth, tmp_path / "data")

    def run(transformer_on: bool, out_name: str) -> float:
        cfg = RunConfig(
            model=desk_model_config(transformer_on=transformer_on),
            train=TrainConfig(lr=1e-3, steps=5000, batch_groups=2, halve_every=2000,
                              seed=0, flip=True),
            data=DataConfig(dataset=str(tmp_path / "data"), val_fraction=0.2),
        )
        result = train_run(cfg, manifest, tmp_path / out_name, log_every=1000)
        model = CoObjectModel(cfg.model, seed=cfg.train.seed, dtype=np.float32)
        restore_model(model, load_checkpoint(result["checkpoint"]))
        rep = evaluate_model(model, manifest, result["val_ids"], with_curves=False)
        return rep.mean_jaccard

    _, val_ids = split_groups(manifest, 0.2, 0)
    untrained = CoObjectModel(desk_model_config(), seed=0, dtype=np.float32)
    j_untrained = evaluate_model(untrained, manifest, val_ids, with_curves=False).mean_jaccard

    j_full = run(transformer_on=True, out_name="run_full")
    j_ablate = run(transformer_on=False, out_name="run_ablate")
    elapsed = time.time() - t0
    ok = (j_full >= 0.70 and j_ablate < j_full and j_untrained <= 0.30
          and elapsed < 7200)
    _verdict("5 generalization + ablation", ok,
             f"64 train / 16 held-out groups: full J {j_full:.3f} >= 0.70, "
             f"transformer-off J {j_ablate:.3f} < full, untrained J "
             f"{j_untrained:.3f} <= 0.30, {elapsed:.0f}s < 7200s")
