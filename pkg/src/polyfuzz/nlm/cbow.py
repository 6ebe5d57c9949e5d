"""Continuous bag-of-words word vectors with a full softmax output layer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..text import Vocabulary
from .functional import SGD, log_softmax, softmax, uniform_init


class EmptyCorpusError(ValueError):
    pass


@dataclass
class EmbeddingTable:
    matrix: np.ndarray
    vocab: Vocabulary

    def __post_init__(self) -> None:
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.vocab):
            raise ValueError(f"embedding matrix rows {self.matrix.shape} do not match "
                             f"vocabulary size {len(self.vocab)}")
        if self.matrix.shape[1] < 1:
            raise ValueError("embedding dimension must be at least 1")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("embedding matrix has non-finite entries")

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def context_windows(corpus, window: int):
    """Every (target, context indices) pair; context excludes the target and
    is cut at sequence edges. Positions with no context are skipped.

    Returns (targets (N,), contexts (N, 2*window) padded with 0, mask (N, 2*window)).
    """
    targets, contexts = [], []
    for seq in corpus:
        n = len(seq)
        for i in range(n):
            ctx = [seq[j] for j in range(max(0, i - window), min(n, i + window + 1)) if j != i]
            if ctx:
                targets.append(seq[i])
                contexts.append(ctx)
    N, w2 = len(targets), 2 * window
    C = np.zeros((N, w2), dtype=np.int64)
    M = np.zeros((N, w2), dtype=bool)
    for k, ctx in enumerate(contexts):
        C[k, :len(ctx)] = ctx
        M[k, :len(ctx)] = True
    return np.asarray(targets, dtype=np.int64), C, M


def cbow_loss_and_grads(E, Wout, targets, C, M):
    """Mean cross-entropy and its gradients w.r.t. (E, Wout)."""
    counts = M.sum(1, keepdims=True)
    v = (E[C] * M[:, :, None]).sum(1) / counts
    logits = v @ Wout
    n = len(targets)
    loss = float(-log_softmax(logits)[np.arange(n), targets].mean())
    dlogits = softmax(logits)
    dlogits[np.arange(n), targets] -= 1.0
    dlogits = (dlogits / n).astype(E.dtype)
    dWout = v.T @ dlogits
    dv = dlogits @ Wout.T
    dctx = (dv / counts)[:, None, :] * M[:, :, None]
    dE = np.zeros_like(E)
    np.add.at(dE, C.ravel(), dctx.reshape(-1, E.shape[1]))
    return loss, dE, dWout


def train_cbow(corpus, vocab: Vocabulary, d: int = 128, window: int = 2, epochs: int = 5,
               lr: float = 5.0, rng=None, batch_size: int = 256, return_history: bool = False):
    """Train CBOW vectors on index sequences; returns an :class:`EmbeddingTable`.

    The loss is a batch mean, so ``lr`` is correspondingly larger than a
    per-example word2vec rate.

    With ``return_history`` the per-epoch mean loss list and the output
    matrix are returned too.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if d < 1:
        raise ValueError("d must be >= 1")
    corpus = [list(s) for s in corpus if len(s)]
    if not corpus:
        raise EmptyCorpusError("cbow corpus is empty")
    rng = np.random.default_rng(0) if rng is None else rng
    V = len(vocab)
    E = uniform_init(rng, (V, d))
    Wout = uniform_init(rng, (d, V))
    targets, C, M = context_windows(corpus, window)
    if len(targets) == 0:
        raise EmptyCorpusError("no position in the corpus has a context window")
    params = {"E": E, "Wout": Wout}
    opt = SGD(lr)
    history = []
    for _ in range(epochs):
        order = rng.permutation(len(targets))
        total = 0.0
        for s in range(0, len(order), batch_size):
            idx = order[s:s + batch_size]
            loss, dE, dW = cbow_loss_and_grads(params["E"], params["Wout"],
                                               targets[idx], C[idx], M[idx])
            total += loss * len(idx)
            opt.update(params, {"E": dE, "Wout": dW})
        history.append(total / len(order))
    table = EmbeddingTable(params["E"], vocab)
    if return_history:
        return table, history, params["Wout"]
    return table
