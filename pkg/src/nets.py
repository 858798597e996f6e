# -*- coding: utf-8 -*-
"""
Small numpy network toolkit: dense and strided-convolution layers with
hand-written backward passes, ReLU, flatten, a sequential container and Adam.

Layers keep the input of their last forward call; `backward(g)` returns the
gradient w.r.t. that input and stores parameter gradients in `.grads`.
"""
from __future__ import annotations

import math
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Layer:
    def __init__(self):
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, g: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, scale: Optional[float] = None):
        super().__init__()
        std = math.sqrt(2.0 / n_in) if scale is None else scale
        self.params["W"] = rng.normal(0.0, std, (n_in, n_out))
        self.params["b"] = np.zeros(n_out)
        self._x: Optional[np.ndarray] = None

    def forward(self, x):
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, g):
        self.grads["W"] = self._x.T @ g
        self.grads["b"] = g.sum(axis=0)
        return g @ self.params["W"].T


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, g):
        return g * self._mask


class Flatten(Layer):
    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        return g.reshape(self._shape)


class Conv2d(Layer):
    """Valid (unpadded) convolution, input (B, C, H, W)."""

    def __init__(self, c_in: int, c_out: int, k: int, stride: int, rng: np.random.Generator):
        super().__init__()
        self.k, self.s = k, stride
        self.params["W"] = rng.normal(0.0, math.sqrt(2.0 / (c_in * k * k)), (c_out, c_in, k, k))
        self.params["b"] = np.zeros(c_out)

    def out_size(self, n: int) -> int:
        return (n - self.k) // self.s + 1

    def forward(self, x):
        self._in_shape = x.shape
        win = sliding_window_view(x, (self.k, self.k), axis=(2, 3))[:, :, ::self.s, ::self.s]
        self._win = win
        return np.einsum("bchwij,ocij->bohw", win, self.params["W"], optimize=True) \
            + self.params["b"][None, :, None, None]

    def backward(self, g):
        self.grads["W"] = np.einsum("bchwij,bohw->ocij", self._win, g, optimize=True)
        self.grads["b"] = g.sum(axis=(0, 2, 3))
        dx = np.zeros(self._in_shape)
        Ho, Wo = g.shape[2], g.shape[3]
        W = self.params["W"]
        for i in range(self.k):
            for j in range(self.k):
                dx[:, :, i:i + self.s * Ho:self.s, j:j + self.s * Wo:self.s] += \
                    np.einsum("bohw,oc->bchw", g, W[:, :, i, j], optimize=True)
        return dx


class Sequential(Layer):
    def __init__(self, layers: Sequence[Layer]):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, g):
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def named(self, prefix: str) -> Iterable[Tuple[str, Layer, str]]:
        for i, layer in enumerate(self.layers):
            for key in layer.params:
                yield f"{prefix}.{i}.{key}", layer, key


def mlp(sizes: Sequence[int], rng: np.random.Generator, relu_last: bool = True) -> Sequential:
    layers: List[Layer] = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        layers += [Dense(n_in, n_out, rng), ReLU()]
    if not relu_last and layers:
        layers.pop()
    return Sequential(layers)


def conv_encoder(in_shape: Tuple[int, int, int], filters: Sequence[int], strides: Sequence[int],
                 channels: Sequence[int], out_dim: int, rng: np.random.Generator) -> Sequential:
    c, h, w = in_shape
    layers: List[Layer] = []
    for k, s, co in zip(filters, strides, channels):
        conv = Conv2d(c, co, k, s, rng)
        h, w, c = conv.out_size(h), conv.out_size(w), co
        if h < 1 or w < 1:
            raise ValueError(f"image {in_shape} too small for filters {list(filters)}")
        layers += [conv, ReLU()]
    layers += [Flatten(), Dense(c * h * w, out_dim, rng), ReLU()]
    return Sequential(layers)


class Adam:
    def __init__(self, params: Dict[str, np.ndarray], lr: float, eps: float = 1e-8,
                 betas: Tuple[float, float] = (0.9, 0.999)):
        self.lr, self.eps = lr, eps
        self.b1, self.b2 = betas
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        """In-place update of `params`."""
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def clip_grad_norm(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm > 0:
        scale = max_norm / (total + 1e-12)
        for k in grads:
            grads[k] = grads[k] * scale
    return total
