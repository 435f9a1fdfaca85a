"""Intra-image self-mask production.

For every patch of the top feature map: cosine similarity against all other
patches of the same image, top-K neighbor selection, a shared per-neighbor
MLP, elementwise max over the K neighbors, and a learned 1-channel
projection squashed by a sigmoid. Neighbor indices are non-differentiable
by construction; gradients flow only through the gathered features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .layers import Linear, collect
from .tensor import (Tensor, add, concat, div, gather_lastdim, matmul, mul, permute,
                     reduce_max, reduce_sum, relu, reshape, sigmoid, sqrt)

# Patch L2-normalization guard so zero feature vectors stay finite.
_NORM_EPS = 1e-12


def similarity(f4: Tensor) -> Tensor:
    """(B*N, Q, Q) cosine-similarity matrix of per-patch channel vectors,
    diagonal replaced by the most-negative finite value of the dtype."""
    bn, c, h, w = f4.shape
    q = h * w
    flat = reshape(f4, (bn, c, q))
    norm = sqrt(reduce_sum(mul(flat, flat), axis=1, keepdims=True))
    unit = div(flat, add(norm, _NORM_EPS))
    m = matmul(permute(unit, (0, 2, 1)), unit)

    sentinel = np.finfo(f4.dtype).min
    eye = np.eye(q, dtype=f4.dtype)
    off_diag = Tensor(1.0 - eye)
    diag_fill = Tensor(sentinel * eye)
    return add(mul(m, off_diag), diag_fill)


def topk_neighbors(m, k: int) -> np.ndarray:
    """Indices of the K largest entries per row, descending, ties broken by
    lowest index. The sentinel diagonal guarantees no self-matching."""
    data = m.data if isinstance(m, Tensor) else np.asarray(m)
    q = data.shape[-1]
    if not 1 <= k <= q - 1:
        raise ConfigError(f"K must be in [1, Q-1] = [1, {q - 1}], got {k}")
    order = np.argsort(-data, axis=-1, kind="stable")
    return order[..., :k]


@dataclass
class IntraMlpConfig:
    k: int = 4
    # Append the query patch's own feature to each gathered neighbor.
    edge_concat: bool = False


class SelfMaskModule:
    def __init__(self, cfg: IntraMlpConfig, channels: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.cfg = cfg
        in_dim = 2 * channels if cfg.edge_concat else channels
        self.fc1 = Linear(rng, in_dim, channels, dtype)
        self.fc2 = Linear(rng, channels, channels, dtype)
        self.proj = Linear(rng, channels, 1, dtype)

    def aggregate(self, f4: Tensor, idx: np.ndarray) -> Tensor:
        bn, c, h, w = f4.shape
        q = h * w
        k = idx.shape[-1]
        flat = reshape(f4, (bn, c, q))
        idx_b = np.broadcast_to(idx.reshape(bn, 1, q * k), (bn, c, q * k))
        gathered = gather_lastdim(flat, idx_b)
        gathered = permute(reshape(gathered, (bn, c, q, k)), (0, 2, 3, 1))  # (B*N, Q, K, C)
        if self.cfg.edge_concat:
            center = reshape(permute(flat, (0, 2, 1)), (bn, q, 1, c))
            center = add(Tensor(np.zeros((bn, q, k, c), dtype=f4.dtype)), center)
            gathered = concat([gathered, center], axis=3)
        hidden = self.fc2(relu(self.fc1(gathered)))
        z = reduce_max(hidden, axis=2)                                      # (B*N, Q, C)
        logits = self.proj(z)
        return sigmoid(reshape(logits, (bn, 1, h, w)))

    def __call__(self, f4: Tensor, frozen_idx: np.ndarray | None = None) -> Tensor:
        if frozen_idx is None:
            frozen_idx = topk_neighbors(similarity(f4), self.cfg.k)
        return self.aggregate(f4, frozen_idx)

    def params(self, prefix: str = "intra") -> dict[str, Tensor]:
        return collect(self.fc1.params(f"{prefix}.fc1"),
                       self.fc2.params(f"{prefix}.fc2"),
                       self.proj.params(f"{prefix}.proj"))
