"""Small parameter-holding building blocks (conv, linear, layer norm).

Weights use seeded Xavier-uniform init, biases start at zero. Each block
exposes ``params(prefix)`` so owners can assemble a flat named registry.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, add, conv2d, layer_norm, matmul


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int,
                   dtype) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape).astype(dtype)


class Conv2d:
    def __init__(self, rng, c_in: int, c_out: int, k: int, stride: int = 1,
                 pad: int = 0, dtype=np.float32):
        fan_in = c_in * k * k
        fan_out = c_out * k * k
        self.w = Tensor(xavier_uniform(rng, (c_out, c_in, k, k), fan_in, fan_out, dtype),
                        requires_grad=True)
        self.b = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)
        self.stride = stride
        self.pad = pad

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b, self.stride, self.pad)

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class Linear:
    def __init__(self, rng, d_in: int, d_out: int, dtype=np.float32):
        self.w = Tensor(xavier_uniform(rng, (d_in, d_out), d_in, d_out, dtype),
                        requires_grad=True)
        self.b = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.w), self.b)

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class LayerNorm:
    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.gamma": self.gamma, f"{prefix}.beta": self.beta}


def collect(*groups: dict[str, Tensor]) -> dict[str, Tensor]:
    out: dict[str, Tensor] = {}
    for g in groups:
        out.update(g)
    return out
