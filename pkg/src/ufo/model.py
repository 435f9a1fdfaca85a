"""Full network assembly and its serializable configuration.

Wiring: the encoder's stage-4 features feed both the co-category branch
(embedding alpha + class logits) and the self-mask branch (beta); the group
transformer updates stages 3 and 4 for the decoder, which also consumes the
raw stage-1/2 skips. Ablation toggles remove whole branches.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, is_dataclass

import numpy as np

from .decoder import Decoder, DecoderConfig
from .encoder import Encoder, EncoderConfig, fuse_auxiliary
from .errors import ConfigError
from .intra_mlp import IntraMlpConfig, SelfMaskModule
from .losses import LossBreakdown, loss_cls, loss_iou, loss_wbce, total_loss
from .semantic import SemanticConfig, SemanticHead
from .tensor import Tensor
from .transformer import GroupTransformer, TransformerConfig


@dataclass
class AblationConfig:
    alpha_on: bool = True
    beta_on: bool = True
    transformer_on: bool = True


@dataclass
class ModelConfig:
    group_size: int = 5
    num_classes: int = 5
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    transformer: TransformerConfig = field(default_factory=TransformerConfig)
    intra_mlp: IntraMlpConfig = field(default_factory=IntraMlpConfig)
    semantic: SemanticConfig = field(default_factory=SemanticConfig)
    modulated_stages: tuple[int, ...] = (3, 4)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    wbce_swap_gamma: bool = False

    def __post_init__(self):
        self.modulated_stages = tuple(self.modulated_stages)
        if self.group_size < 1:
            raise ConfigError("group_size must be >= 1")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")


def config_to_dict(cfg) -> dict:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if is_dataclass(v):
            out[f.name] = config_to_dict(v)
        elif isinstance(v, tuple):
            out[f.name] = list(v)
        else:
            out[f.name] = v
    return out


def config_from_dict(cls, doc: dict, path: str = ""):
    """Build a (possibly nested) config dataclass; unknown keys are rejected."""
    if not isinstance(doc, dict):
        raise ConfigError(f"{path or cls.__name__}: expected an object, got {type(doc).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(doc) - set(known))
    if unknown:
        raise ConfigError(f"{path or cls.__name__}: unknown keys {unknown}")
    kwargs = {}
    for name, f in known.items():
        if name not in doc:
            continue
        value = doc[name]
        sub = f.type if isinstance(f.type, type) else None
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else None
        if is_dataclass(default) or (sub is not None and is_dataclass(sub)):
            target = type(default) if default is not None else sub
            value = config_from_dict(target, value, f"{path}.{name}" if path else name)
        kwargs[name] = value
    return cls(**kwargs)


@dataclass
class ModelOutput:
    probs: Tensor                    # (B*N, 1, H, W) in (0, 1)
    logits: Tensor                   # (B*N, num_classes)
    embedding: Tensor                # (B*N, embed_dim)
    self_mask: Tensor | None         # (B*N, 1, H/16, W/16) or None when beta is off


class CoObjectModel:
    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        channels = cfg.encoder.stage_channels
        self.encoder = Encoder(cfg.encoder, rng, dtype)
        self.transformer = None
        if cfg.ablation.transformer_on:
            self.transformer = GroupTransformer(
                cfg.transformer, {3: channels[2], 4: channels[3]}, rng, dtype)
        self.semantic = SemanticHead(cfg.semantic, channels[3], cfg.num_classes, rng, dtype)
        self.selfmask = None
        if cfg.ablation.beta_on:
            self.selfmask = SelfMaskModule(cfg.intra_mlp, channels[3], rng, dtype)
        self.decoder = Decoder(DecoderConfig(
            stage_channels=channels,
            embed_dim=cfg.semantic.embed_dim,
            alpha_on=cfg.ablation.alpha_on,
            beta_on=cfg.ablation.beta_on,
            modulated_stages=cfg.modulated_stages,
        ), rng, dtype)

    def forward(self, images, group_size: int | None = None, aux=None,
                frozen_idx: np.ndarray | None = None) -> ModelOutput:
        if not isinstance(images, Tensor):
            images = Tensor(np.asarray(images, dtype=self.dtype))
        n = group_size or self.cfg.group_size
        enc = self.encoder(images)
        if aux is not None:
            if not isinstance(aux, Tensor):
                aux = Tensor(np.asarray(aux, dtype=self.dtype))
            enc = fuse_auxiliary(enc, self.encoder(aux))
        if self.transformer is not None:
            f3p, f4p = self.transformer(enc.f3, enc.f4, n)
        else:
            f3p, f4p = enc.f3, enc.f4
        embedding, logits = self.semantic(enc.f4)
        beta = self.selfmask(enc.f4, frozen_idx) if self.selfmask is not None else None
        probs = self.decoder(
            enc.f1, enc.f2, f3p, f4p,
            alpha=embedding if self.cfg.ablation.alpha_on else None,
            beta=beta,
        )
        return ModelOutput(probs=probs, logits=logits, embedding=embedding, self_mask=beta)

    def params(self) -> dict[str, Tensor]:
        out = self.encoder.params("encoder")
        if self.transformer is not None:
            out.update(self.transformer.params("transformer"))
        out.update(self.semantic.params("semantic"))
        if self.selfmask is not None:
            out.update(self.selfmask.params("intra"))
        out.update(self.decoder.params("decoder"))
        return out

    def classifier_param_names(self) -> set[str]:
        return set(self.semantic.classifier_params("semantic"))

    def compute_losses(self, out: ModelOutput, masks: np.ndarray, labels: np.ndarray,
                       include_cls: bool = True) -> LossBreakdown:
        """labels are per-group class ids, expanded to per-image here."""
        labels = np.asarray(labels, dtype=np.int64)
        per_image = np.repeat(labels, out.logits.shape[0] // max(len(labels), 1))
        if include_cls:
            cls = loss_cls(out.logits, per_image)
        else:
            cls = Tensor(np.zeros((), dtype=self.dtype))
        wbce = loss_wbce(out.probs, masks, swap_gamma=self.cfg.wbce_swap_gamma)
        iou = loss_iou(out.probs, masks)
        return total_loss(cls, wbce, iou)
