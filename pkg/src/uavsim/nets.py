"""Small fully-connected networks with hand-written backprop and Adam.

Layers are (W, b) pairs with W of shape (out, in); hidden activations are
tanh and the output layer is linear. Everything is float64 numpy, which keeps
training bit-reproducible for a fixed seed.
"""

from __future__ import annotations

from typing import Dict, List, Sequence, Tuple

import numpy as np

Layer = Tuple[np.ndarray, np.ndarray]


def init_layers(rng: np.random.Generator, sizes: Sequence[int],
                final_scale: float = 1.0) -> List[Layer]:
    """Gaussian fan-in init; the output layer can be shrunk via final_scale."""
    layers = []
    n = len(sizes) - 1
    for i in range(n):
        scale = 1.0 / np.sqrt(sizes[i])
        if i == n - 1:
            scale *= final_scale
        w = rng.normal(0.0, scale, size=(sizes[i + 1], sizes[i]))
        b = np.zeros(sizes[i + 1])
        layers.append((w, b))
    return layers


def forward(layers: List[Layer], x: np.ndarray):
    """Batched forward pass. Returns (output, activations) for backward."""
    x = np.atleast_2d(x)
    acts = [x]
    h = x
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        z = h @ w.T + b
        h = z if i == last else np.tanh(z)
        acts.append(h)
    return h, acts


def backward(layers: List[Layer], acts: List[np.ndarray], grad_out: np.ndarray):
    """Backprop of dL/d(output). Returns per-layer (dW, db) and dL/d(input)."""
    grads: List[Layer] = [None] * len(layers)  # type: ignore[list-item]
    g = np.atleast_2d(grad_out)
    for i in reversed(range(len(layers))):
        w, _ = layers[i]
        if i < len(layers) - 1:
            g = g * (1.0 - acts[i + 1] ** 2)  # through tanh
        grads[i] = (g.T @ acts[i], g.sum(axis=0))
        g = g @ w
    return grads, g


class Adam:
    """Adam over a dict of named arrays; state serializes with the policy."""

    def __init__(self, params: Dict[str, np.ndarray],
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
             lr: float) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for key, g in grads.items():
            m = self.m[key]
            v = self.v[key]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            params[key] -= lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def flatten(params: Dict[str, np.ndarray]) -> np.ndarray:
    """Concatenate arrays in sorted key order (for finite-difference checks)."""
    return np.concatenate([params[k].ravel() for k in sorted(params)])


def unflatten(vector: np.ndarray, template: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    out = {}
    offset = 0
    for k in sorted(template):
        size = template[k].size
        out[k] = vector[offset:offset + size].reshape(template[k].shape).copy()
        offset += size
    return out
