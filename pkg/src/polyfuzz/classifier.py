"""Per-type surrogate classifiers: token sequence -> probability of bypassing the WAF.

Architecture: pretrained embeddings, one recurrent layer, and a logistic
output on the final hidden state.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .grammar import InjectionType
from .nlm import EmbeddingTable, RecurrentCell, load_model, make_optimizer, save_model, sigmoid
from .nlm.functional import uniform_init
from .text import PAD, Vocabulary, encode_tokens

BLOCKED_LABEL = "blocked"
BYPASSED_LABEL = "bypassed"
MAX_LEN = 128


class DatasetError(ValueError):
    pass


class TypeMismatchError(ValueError):
    pass


@dataclass
class ClassifierConfig:
    cell_kind: str = "lstm"
    hidden_size: int = 128
    epochs: int = 10
    lr: float = 0.005
    optimizer: str = "adam"
    batch_size: int = 32
    val_fraction: float = 0.1
    max_len: int = MAX_LEN
    fine_tune_embeddings: bool = True
    seed: int = 0


@dataclass
class TrainingReport:
    train_loss: list = field(default_factory=list)
    val_accuracy: float = float("nan")
    val_balanced_accuracy: float = float("nan")
    n_train: int = 0
    n_val: int = 0


def pad_batch(seqs, max_len: int = MAX_LEN):
    """Right-pad index sequences into (B, T) indices and a boolean mask."""
    seqs = [list(s)[:max_len] for s in seqs]
    T = max(1, max((len(s) for s in seqs), default=0))
    idx = np.full((len(seqs), T), PAD, dtype=np.int64)
    mask = np.zeros((len(seqs), T), dtype=bool)
    for i, s in enumerate(seqs):
        idx[i, :len(s)] = s
        mask[i, :len(s)] = True
    return idx, mask


def length_batches(lengths, batch_size: int, rng=None):
    """Batches of similar length; batch order shuffled when ``rng`` is given."""
    lengths = np.asarray(lengths)
    if rng is None:
        order = np.argsort(lengths, kind="stable")
    else:
        order = np.lexsort((rng.random(len(lengths)), lengths))
    batches = [order[s:s + batch_size] for s in range(0, len(order), batch_size)]
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


class SurrogateClassifier:
    def __init__(self, injection_type, embeddings: EmbeddingTable, cell: RecurrentCell,
                 w_out, b_out, max_len: int = MAX_LEN):
        self.injection_type = InjectionType(injection_type)
        self.embeddings = embeddings
        self.cell = cell
        self.w_out = w_out
        self.b_out = b_out
        self.max_len = max_len
        self.report = TrainingReport()

    @property
    def vocab(self) -> Vocabulary:
        return self.embeddings.vocab

    def params(self, with_embeddings: bool = True) -> dict:
        p = {f"cell.{k}": v for k, v in self.cell.params.items()}
        p["w_out"] = self.w_out
        p["b_out"] = self.b_out
        if with_embeddings:
            p["embedding"] = self.embeddings.matrix
        return p

    def encode(self, tokens) -> list:
        return encode_tokens(list(tokens)[:self.max_len], self.vocab)

    def _forward(self, idx, mask):
        X = self.embeddings.matrix[idx]
        _, state, caches = self.cell.run(X, mask)
        h = state[0] if self.cell.kind == "lstm" else state
        logits = h @ self.w_out + self.b_out[0]
        return logits, h, caches, X

    def loss_and_grads(self, idx, mask, y, with_embeddings: bool = False):
        """Mean binary cross-entropy and gradients keyed like :meth:`params`."""
        logits, h, caches, X = self._forward(idx, mask)
        z = logits.astype(np.float64)
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
        dz = ((sigmoid(z) - y) / len(y)).astype(self.w_out.dtype)
        grads = {"w_out": h.T @ dz, "b_out": np.array([dz.sum()], dtype=self.b_out.dtype)}
        dh = np.outer(dz, self.w_out)
        d_final = (dh, np.zeros_like(dh)) if self.cell.kind == "lstm" else dh
        dX, _, cg = self.cell.run_backward(None, d_final, caches, mask)
        grads.update({f"cell.{k}": v for k, v in cg.items()})
        if with_embeddings:
            dE = np.zeros_like(self.embeddings.matrix)
            np.add.at(dE, idx[mask], dX[mask])
            grads["embedding"] = dE
        return loss, grads

    def predict_indices(self, seqs, batch_size: int = 256) -> np.ndarray:
        seqs = [list(s)[:self.max_len] for s in seqs]
        out = np.empty(len(seqs), dtype=np.float64)
        for b in length_batches([len(s) for s in seqs], batch_size):
            idx, mask = pad_batch([seqs[i] for i in b], self.max_len)
            logits, *_ = self._forward(idx, mask)
            out[b] = sigmoid(logits.astype(np.float64))
        return out

    def predict_tokens(self, token_lists) -> np.ndarray:
        return self.predict_indices([self.encode(t) for t in token_lists])

    def save(self, path) -> None:
        meta = {"injection_type": self.injection_type.value, "vocab": self.vocab.tokens,
                "max_len": self.max_len, "report": asdict(self.report)}
        save_model(path, self.params(), self.cell.kind,
                   [len(self.vocab), self.embeddings.dim, self.cell.hidden_size], meta)

    @classmethod
    def load(cls, path) -> "SurrogateClassifier":
        tensors, kind, dims, meta = load_model(path)
        vocab = Vocabulary(meta["vocab"])
        emb = EmbeddingTable(tensors["embedding"], vocab)
        cell = RecurrentCell(kind, dims[1], dims[2],
                             params={k[5:]: v for k, v in tensors.items() if k.startswith("cell.")})
        clf = cls(meta["injection_type"], emb, cell, tensors["w_out"], tensors["b_out"],
                  meta.get("max_len", MAX_LEN))
        if "report" in meta:
            clf.report = TrainingReport(**meta["report"])
        return clf


def classifier_filename(injection_type) -> str:
    return f"clf_{InjectionType(injection_type).value}.pfnn"


def _label_value(label) -> float:
    if label in (1, True, BYPASSED_LABEL):
        return 1.0
    if label in (0, False, BLOCKED_LABEL):
        return 0.0
    raise DatasetError(f"unknown label {label!r}")


def balanced_accuracy(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=bool)
    y_pred = np.asarray(y_pred, dtype=bool)
    recalls = [np.mean(y_pred[y_true == c] == c) for c in (False, True) if np.any(y_true == c)]
    return float(np.mean(recalls))


def train_classifier(dataset, injection_type, embeddings: EmbeddingTable,
                     config: ClassifierConfig | None = None) -> SurrogateClassifier:
    """Train on (tokens, label) pairs, label in {"blocked", "bypassed"} (or 0/1).

    A ``val_fraction`` share is held out; accuracy on it is stored in
    ``classifier.report``.
    """
    config = config or ClassifierConfig()
    if not dataset:
        raise DatasetError("classifier dataset is empty")
    tokens = [list(t) for t, _ in dataset]
    if any(len(t) == 0 for t in tokens):
        raise DatasetError("classifier dataset contains an empty token sequence")
    y = np.array([_label_value(lab) for _, lab in dataset])
    if len(np.unique(y)) < 2:
        raise DatasetError(f"classifier dataset has a single class "
                           f"({BYPASSED_LABEL if y[0] else BLOCKED_LABEL}); need both labels")
    rng = np.random.default_rng(config.seed)
    dtype = embeddings.matrix.dtype
    emb = EmbeddingTable(np.array(embeddings.matrix, copy=True), embeddings.vocab)
    cell = RecurrentCell(config.cell_kind, emb.dim, config.hidden_size, rng=rng, dtype=dtype)
    clf = SurrogateClassifier(injection_type, emb, cell,
                              uniform_init(rng, (config.hidden_size,), dtype),
                              np.zeros(1, dtype=dtype), config.max_len)
    seqs = [clf.encode(t) for t in tokens]

    n = len(seqs)
    perm = rng.permutation(n)
    n_val = int(round(config.val_fraction * n)) if n > 1 else 0
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    opt = make_optimizer(config.optimizer, config.lr)
    params = clf.params(config.fine_tune_embeddings)
    report = clf.report
    for _ in range(config.epochs):
        total = 0.0
        for b in length_batches([len(seqs[i]) for i in train_idx], config.batch_size, rng):
            rows = train_idx[b]
            idx, mask = pad_batch([seqs[i] for i in rows], config.max_len)
            loss, grads = clf.loss_and_grads(idx, mask, y[rows], config.fine_tune_embeddings)
            total += loss * len(rows)
            opt.update(params, grads)
        report.train_loss.append(total / max(1, len(train_idx)))
    report.n_train, report.n_val = len(train_idx), n_val
    if n_val:
        pred = clf.predict_indices([seqs[i] for i in val_idx]) >= 0.5
        report.val_accuracy = float(np.mean(pred == (y[val_idx] == 1.0)))
        report.val_balanced_accuracy = balanced_accuracy(y[val_idx] == 1.0, pred)
    return clf


def predict(classifier: SurrogateClassifier, test_input) -> float:
    """Bypass probability for one test input of the classifier's type."""
    if InjectionType(test_input.injection_type) != classifier.injection_type:
        raise TypeMismatchError(f"classifier for {classifier.injection_type.value} got "
                                f"a {InjectionType(test_input.injection_type).value} input")
    return float(classifier.predict_tokens([test_input.tokens])[0])


def predict_many(classifier: SurrogateClassifier, inputs) -> np.ndarray:
    for t in inputs:
        if InjectionType(t.injection_type) != classifier.injection_type:
            raise TypeMismatchError(f"classifier for {classifier.injection_type.value} got "
                                    f"a {InjectionType(t.injection_type).value} input")
    return classifier.predict_tokens([t.tokens for t in inputs])
