"""Co-category branch: conv + global average pool to an embedding, and a
linear classifier over it."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import Conv2d, Linear, collect
from .tensor import Tensor, reduce_mean, relu


@dataclass
class SemanticConfig:
    embed_dim: int = 128


class SemanticHead:
    def __init__(self, cfg: SemanticConfig, channels: int, num_classes: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.conv = Conv2d(rng, channels, cfg.embed_dim, k=3, stride=1, pad=1, dtype=dtype)
        self.classifier = Linear(rng, cfg.embed_dim, num_classes, dtype)

    def __call__(self, f4: Tensor) -> tuple[Tensor, Tensor]:
        """Returns (embedding (B*N, embed_dim), class logits (B*N, num_classes))."""
        x = relu(self.conv(f4))
        embedding = reduce_mean(x, axis=(2, 3))
        logits = self.classifier(embedding)
        return embedding, logits

    def params(self, prefix: str = "semantic") -> dict[str, Tensor]:
        return collect(self.conv.params(f"{prefix}.conv"),
                       self.classifier.params(f"{prefix}.classifier"))

    def classifier_params(self, prefix: str = "semantic") -> dict[str, Tensor]:
        """The co-classification layer alone (the freeze target)."""
        return self.classifier.params(f"{prefix}.classifier")
