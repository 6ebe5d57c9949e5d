"""Elementwise functions, losses, initialisation and optimisers."""

from __future__ import annotations

import numpy as np

INIT_SCALE = 0.08
CLIP_NORM = 5.0


def sigmoid(x):
    # split by sign so large |x| never overflows exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(logits, axis=-1, mask=None):
    """Max-subtracted softmax; masked-out entries get probability 0."""
    z = np.asarray(logits, dtype=np.float64)
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def cross_entropy(probs, target_index) -> float:
    return float(-np.log(np.asarray(probs, dtype=np.float64)[target_index]))


def uniform_init(rng, shape, dtype=np.float32, scale=INIT_SCALE):
    return rng.uniform(-scale, scale, size=shape).astype(dtype)


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(np.sum(np.asarray(g, dtype=np.float64) ** 2) for g in grads.values())))


def clip_gradients(grads: dict, max_norm: float = CLIP_NORM) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= scale
    return norm


class SGD:
    def __init__(self, lr: float = 0.5, clip: float | None = CLIP_NORM):
        self.lr = lr
        self.clip = clip

    def update(self, params: dict, grads: dict) -> None:
        if self.clip:
            clip_gradients(grads, self.clip)
        for k, g in grads.items():
            params[k] -= (self.lr * g).astype(params[k].dtype)


class Adam:
    def __init__(self, lr: float = 0.01, clip: float | None = CLIP_NORM,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.clip = lr, clip
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def update(self, params: dict, grads: dict) -> None:
        if self.clip:
            clip_gradients(grads, self.clip)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            params[k] -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(params[k].dtype)


def make_optimizer(name: str, lr: float, clip: float | None = CLIP_NORM):
    if name == "sgd":
        return SGD(lr, clip)
    if name == "adam":
        return Adam(lr, clip)
    raise ValueError(f"unknown optimizer {name!r}")
