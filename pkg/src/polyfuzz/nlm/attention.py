"""Bilinear attention: score_t = d^T W h_t, weights = softmax(scores)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .functional import softmax


class EmptyEncoderError(ValueError):
    pass


@dataclass(frozen=True)
class AttentionContext:
    weights: np.ndarray
    context: np.ndarray


def attend_batch(H, d, W, mask=None):
    """Batched attention.

    H: encoder states (B, S, Hd); d: decoder states (B, Hd); W: (Hd, Hd);
    mask: (B, S) boolean, False for padding. Returns (weights, context, cache).
    """
    q = d @ W
    scores = np.einsum("bsh,bh->bs", H, q)
    a = softmax(scores, axis=1, mask=mask).astype(H.dtype)
    c = np.einsum("bs,bsh->bh", a, H)
    return a, c, (H, d, q, a)


def attend_backward(dc, cache, W):
    """Gradients of the context w.r.t. (H, d, W), given dL/dc."""
    H, d, q, a = cache
    da = np.einsum("bsh,bh->bs", H, dc)
    ds = a * (da - np.sum(a * da, axis=1, keepdims=True))
    dH = a[:, :, None] * dc[:, None, :] + ds[:, :, None] * q[:, None, :]
    k = np.einsum("bs,bsh->bh", ds, H)
    dW = d.T @ k
    dd = k @ W.T
    return dH, dd, dW


def attend(encoder_states, decoder_state, W) -> AttentionContext:
    """Attention for one decoder step over a list of encoder vectors."""
    H = np.asarray(encoder_states)
    if H.size == 0 or len(H) == 0:
        raise EmptyEncoderError("attention needs at least one encoder state")
    d = np.asarray(decoder_state)
    a, c, _ = attend_batch(H[None], d[None], np.asarray(W))
    return AttentionContext(a[0], c[0])
