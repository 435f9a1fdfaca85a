"""Tiny four-stage convolutional encoder.

Each stage halves the spatial resolution with a 2x2/stride-2 conv and then
applies a fixed number of 3x3 convs, all relu-activated. Output strides
relative to the input are 2, 4, 8, 16. No normalization layers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import Conv2d, collect
from .tensor import Tensor, mul, relu


@dataclass
class EncoderConfig:
    in_channels: int = 3
    stage_channels: tuple[int, int, int, int] = (16, 32, 64, 128)
    convs_per_stage: int = 2

    def __post_init__(self):
        self.stage_channels = tuple(self.stage_channels)
        if len(self.stage_channels) != 4:
            raise ConfigError(f"encoder needs 4 stage channels, got {self.stage_channels}")
        if any(c < 1 for c in self.stage_channels):
            raise ConfigError(f"stage channels must be >= 1, got {self.stage_channels}")


@dataclass
class EncoderOutput:
    """Per-stage feature maps; f_k has shape (B*N, channels[k-1], H/2^k, W/2^k)."""
    f1: Tensor
    f2: Tensor
    f3: Tensor
    f4: Tensor

    def stages(self):
        return (self.f1, self.f2, self.f3, self.f4)


class Encoder:
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.stages = []
        c_prev = cfg.in_channels
        for c_out in cfg.stage_channels:
            down = Conv2d(rng, c_prev, c_out, k=2, stride=2, pad=0, dtype=dtype)
            convs = [Conv2d(rng, c_out, c_out, k=3, stride=1, pad=1, dtype=dtype)
                     for _ in range(cfg.convs_per_stage)]
            self.stages.append((down, convs))
            c_prev = c_out

    def __call__(self, images: Tensor) -> EncoderOutput:
        _, _, h, w = images.shape
        if h % 16 or w % 16:
            raise ConfigError(f"input spatial size must be divisible by 16, got {h}x{w}")
        x = images
        feats = []
        for down, convs in self.stages:
            x = relu(down(x))
            for conv in convs:
                x = relu(conv(x))
            feats.append(x)
        return EncoderOutput(*feats)

    def params(self, prefix: str = "encoder") -> dict[str, Tensor]:
        groups = []
        for s, (down, convs) in enumerate(self.stages, start=1):
            groups.append(down.params(f"{prefix}.s{s}.down"))
            for i, conv in enumerate(convs):
                groups.append(conv.params(f"{prefix}.s{s}.conv{i}"))
        return collect(*groups)


def fuse_auxiliary(f_img: EncoderOutput, f_aux: EncoderOutput) -> EncoderOutput:
    """Gate stages 3 and 4 of the image features by the auxiliary-stream
    features (elementwise product); stages 1 and 2 pass through."""
    for a, b, stage in ((f_img.f3, f_aux.f3, 3), (f_img.f4, f_aux.f4, 4)):
        if a.shape != b.shape:
            raise ShapeError(f"auxiliary stage {stage} shape {b.shape} != image {a.shape}")
    return EncoderOutput(
        f1=f_img.f1,
        f2=f_img.f2,
        f3=mul(f_aux.f3, f_img.f3),
        f4=mul(f_aux.f4, f_img.f4),
    )
