"""FPN-style decoder with semantic scale / self-mask bias modulation.

Top-down pass from stage 4 to stage 1: conv, optional modulation (channelwise
sigmoid gate from the co-category embedding, plus the resized self-mask added
across channels), x2 bilinear upsample, lateral 1x1 fusion of the next skip.
A final 1-channel conv + sigmoid emits per-image co-object probabilities at
the input resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import Conv2d, Linear, collect
from .tensor import Tensor, add, mul, reshape, sigmoid, upsample_bilinear


@dataclass
class DecoderConfig:
    stage_channels: tuple[int, int, int, int] = (16, 32, 64, 128)
    embed_dim: int = 128
    alpha_on: bool = True
    beta_on: bool = True
    modulated_stages: tuple[int, ...] = (3, 4)

    def __post_init__(self):
        self.stage_channels = tuple(self.stage_channels)
        self.modulated_stages = tuple(sorted(set(self.modulated_stages)))
        if len(self.stage_channels) != 4:
            raise ConfigError(f"decoder needs 4 stage channels, got {self.stage_channels}")
        if any(s not in (1, 2, 3, 4) for s in self.modulated_stages):
            raise ConfigError(f"modulated_stages must lie in 1..4, got {self.modulated_stages}")


class Decoder:
    def __init__(self, cfg: DecoderConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        c1, c2, c3, c4 = cfg.stage_channels
        # Stage conv output widths: s4 -> c3, s3 -> c2, s2 -> c1, s1 -> c1.
        self._conv_out = {4: c3, 3: c2, 2: c1, 1: c1}
        conv_in = {4: c4, 3: c3, 2: c2, 1: c1}
        self.convs = {s: Conv2d(rng, conv_in[s], self._conv_out[s], k=3, stride=1, pad=1, dtype=dtype)
                      for s in (4, 3, 2, 1)}
        self.lats = {s: Conv2d(rng, cfg.stage_channels[s - 1], cfg.stage_channels[s - 1],
                               k=1, stride=1, pad=0, dtype=dtype)
                     for s in (3, 2, 1)}
        self.out_conv = Conv2d(rng, c1, 1, k=1, stride=1, pad=0, dtype=dtype)
        self.alpha_proj = {}
        if cfg.alpha_on:
            self.alpha_proj = {s: Linear(rng, cfg.embed_dim, self._conv_out[s], dtype)
                               for s in cfg.modulated_stages}

    def __call__(self, f1: Tensor, f2: Tensor, f3: Tensor, f4: Tensor,
                 alpha: Tensor | None = None, beta: Tensor | None = None) -> Tensor:
        cfg = self.cfg
        if cfg.alpha_on and alpha is None:
            raise ConfigError("alpha_on is set but no embedding was supplied")
        if cfg.beta_on and beta is None:
            raise ConfigError("beta_on is set but no self-mask was supplied")
        feats = {1: f1, 2: f2, 3: f3, 4: f4}
        for s, f in feats.items():
            if f.shape[1] != cfg.stage_channels[s - 1]:
                raise ShapeError(
                    f"stage {s}: expected {cfg.stage_channels[s - 1]} channels, got {f.shape[1]}")
        if cfg.beta_on and beta.shape[2:] != f4.shape[2:]:
            raise ShapeError(
                f"stage 4: self-mask spatial size {beta.shape[2:]} != {f4.shape[2:]}")

        x = f4
        for s in (4, 3, 2, 1):
            x = self.convs[s](x)
            if s in cfg.modulated_stages:
                if cfg.alpha_on:
                    gate = sigmoid(self.alpha_proj[s](alpha))
                    bn, c = gate.shape
                    x = mul(x, reshape(gate, (bn, c, 1, 1)))
                if cfg.beta_on:
                    x = add(x, upsample_bilinear(beta, 2 ** (4 - s)))
            x = upsample_bilinear(x, 2)
            if s > 1:
                lat = self.lats[s - 1](feats[s - 1])
                if lat.shape[2:] != x.shape[2:]:
                    raise ShapeError(
                        f"stage {s}: skip size {lat.shape[2:]} != upsampled {x.shape[2:]}")
                x = add(x, lat)
        return sigmoid(self.out_conv(x))

    def params(self, prefix: str = "decoder") -> dict[str, Tensor]:
        groups = [self.convs[s].params(f"{prefix}.s{s}.conv") for s in (4, 3, 2, 1)]
        groups += [self.lats[s].params(f"{prefix}.s{s}.lateral") for s in (3, 2, 1)]
        groups.append(self.out_conv.params(f"{prefix}.out"))
        groups += [proj.params(f"{prefix}.s{s}.scale")
                   for s, proj in self.alpha_proj.items()]
        return collect(*groups)
