"""Group-wise transformer attention over patch tokens.

Each group's stage feature maps are flattened into one sequence of
N*h*w tokens so self-attention mixes information across all images of the
group; separate block stacks serve stages 3 and 4. No positional
embeddings, which makes the blocks equivariant to permuting the images
within a group.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import Linear, LayerNorm, collect
from .tensor import Tensor, add, matmul, permute, relu, reshape, scale, softmax


@dataclass
class TransformerConfig:
    num_blocks: int = 4
    num_heads: int = 4
    model_dim: int = 64
    mlp_hidden: int = 64
    applied_stages: tuple[int, ...] = (3, 4)
    # Literal reading of the block equation: MLP residual before attention.
    mlp_first: bool = False

    def __post_init__(self):
        self.applied_stages = tuple(sorted(set(self.applied_stages)))
        if self.num_blocks < 1:
            raise ConfigError("num_blocks must be >= 1")
        if self.model_dim % self.num_heads:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}")
        if any(s not in (3, 4) for s in self.applied_stages):
            raise ConfigError(f"applied_stages must be a subset of (3, 4), got {self.applied_stages}")


@dataclass
class TokenSequence:
    """(B, P, C) tokens with P = N*h*w; token n*h*w + i*w + j is pixel (i, j)
    of image n within its group."""
    tokens: Tensor
    group_size: int
    height: int
    width: int


def tokenize(f: Tensor, group_size: int) -> TokenSequence:
    bn, c, h, w = f.shape
    if bn % group_size:
        raise ShapeError(f"batch dim {bn} not divisible by group size {group_size}")
    b = bn // group_size
    t = reshape(f, (bn, c, h * w))
    t = permute(t, (0, 2, 1))                       # (B*N, h*w, C)
    t = reshape(t, (b, group_size * h * w, c))      # (B, P, C)
    return TokenSequence(tokens=t, group_size=group_size, height=h, width=w)


def detokenize(seq: TokenSequence) -> Tensor:
    b, p, c = seq.tokens.shape
    h, w = seq.height, seq.width
    bn = b * seq.group_size
    f = reshape(seq.tokens, (bn, h * w, c))
    f = permute(f, (0, 2, 1))
    return reshape(f, (bn, c, h, w))


class SelfAttention:
    """Multi-head scaled dot-product self-attention, C -> D -> C."""

    def __init__(self, rng, channels: int, model_dim: int, num_heads: int, dtype=np.float32):
        self.num_heads = num_heads
        self.head_dim = model_dim // num_heads
        self.wq = Linear(rng, channels, model_dim, dtype)
        self.wk = Linear(rng, channels, model_dim, dtype)
        self.wv = Linear(rng, channels, model_dim, dtype)
        self.wo = Linear(rng, model_dim, channels, dtype)
        self.last_weights: Tensor | None = None

    def _heads(self, x: Tensor, b: int, p: int) -> Tensor:
        x = reshape(x, (b, p, self.num_heads, self.head_dim))
        return permute(x, (0, 2, 1, 3))             # (B, heads, P, head_dim)

    def __call__(self, x: Tensor) -> Tensor:
        b, p, _ = x.shape
        q = self._heads(self.wq(x), b, p)
        k = self._heads(self.wk(x), b, p)
        v = self._heads(self.wv(x), b, p)
        scores = scale(matmul(q, permute(k, (0, 1, 3, 2))), 1.0 / math.sqrt(self.head_dim))
        attn = softmax(scores, axis=3)
        self.last_weights = attn
        ctx = permute(matmul(attn, v), (0, 2, 1, 3))
        ctx = reshape(ctx, (b, p, self.num_heads * self.head_dim))
        return self.wo(ctx)

    def params(self, prefix: str) -> dict[str, Tensor]:
        return collect(self.wq.params(f"{prefix}.wq"), self.wk.params(f"{prefix}.wk"),
                       self.wv.params(f"{prefix}.wv"), self.wo.params(f"{prefix}.wo"))


class TransformerBlock:
    """Pre-norm residual block: x += MSA(LN(x)); x += MLP(LN(x)).

    With ``mlp_first`` the MLP residual runs before the attention residual.
    """

    def __init__(self, rng, channels: int, cfg: TransformerConfig, dtype=np.float32):
        self.ln1 = LayerNorm(channels, dtype)
        self.attn = SelfAttention(rng, channels, cfg.model_dim, cfg.num_heads, dtype)
        self.ln2 = LayerNorm(channels, dtype)
        self.fc1 = Linear(rng, channels, cfg.mlp_hidden, dtype)
        self.fc2 = Linear(rng, cfg.mlp_hidden, channels, dtype)
        self.mlp_first = cfg.mlp_first

    def _mlp(self, x: Tensor) -> Tensor:
        return self.fc2(relu(self.fc1(self.ln2(x))))

    def _msa(self, x: Tensor) -> Tensor:
        return self.attn(self.ln1(x))

    def __call__(self, x: Tensor) -> Tensor:
        if self.mlp_first:
            x = add(x, self._mlp(x))
            return add(x, self._msa(x))
        x = add(x, self._msa(x))
        return add(x, self._mlp(x))

    def params(self, prefix: str) -> dict[str, Tensor]:
        return collect(
            self.ln1.params(f"{prefix}.ln1"), self.attn.params(f"{prefix}.attn"),
            self.ln2.params(f"{prefix}.ln2"), self.fc1.params(f"{prefix}.fc1"),
            self.fc2.params(f"{prefix}.fc2"))


class GroupTransformer:
    """Independent block stacks for stages 3 and 4; unselected stages pass
    through untouched."""

    def __init__(self, cfg: TransformerConfig, stage_channels: dict[int, int],
                 rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.blocks: dict[int, list[TransformerBlock]] = {}
        for stage in (3, 4):
            if stage in cfg.applied_stages:
                self.blocks[stage] = [
                    TransformerBlock(rng, stage_channels[stage], cfg, dtype)
                    for _ in range(cfg.num_blocks)
                ]

    def _run_stage(self, f: Tensor, stage: int, group_size: int) -> Tensor:
        if stage not in self.blocks:
            return f
        seq = tokenize(f, group_size)
        x = seq.tokens
        for block in self.blocks[stage]:
            x = block(x)
        return detokenize(TokenSequence(x, seq.group_size, seq.height, seq.width))

    def __call__(self, f3: Tensor, f4: Tensor, group_size: int) -> tuple[Tensor, Tensor]:
        return (self._run_stage(f3, 3, group_size),
                self._run_stage(f4, 4, group_size))

    def params(self, prefix: str = "transformer") -> dict[str, Tensor]:
        groups = []
        for stage, blocks in self.blocks.items():
            for i, block in enumerate(blocks):
                groups.append(block.params(f"{prefix}.s{stage}.block{i}"))
        return collect(*groups)
