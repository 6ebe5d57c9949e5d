"""Cross-type translation: LSI pairing of corpora and attention encoder-decoder models.

One directed model per ordered pair of injection types. The decoder's
next-token logits are computed from the concatenation
[decoder hidden; attention context; previous target embedding].
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .classifier import length_batches, pad_batch
from .grammar import InjectionType
from .mutation import TRANSLATION, TestInput
from .nlm import RecurrentCell, attend_backward, attend_batch, load_model, make_optimizer, save_model
from .nlm.cells import _select
from .nlm.functional import log_softmax, softmax, uniform_init
from .text import BOS, EOS, PAD, UNK, Vocabulary, encode_tokens, tokenize

MAX_DECODE_LEN = 128
_NEVER_EMIT = [PAD, UNK, BOS]


class EmptyCorpusError(ValueError):
    pass


class TypeMismatchError(ValueError):
    pass


# -- LSI pairing -------------------------------------------------------------

@dataclass
class PairedCorpus:
    src_type: InjectionType
    dst_type: InjectionType
    pairs: list = field(default_factory=list)

    def __post_init__(self) -> None:
        self.src_type = InjectionType(self.src_type)
        self.dst_type = InjectionType(self.dst_type)
        if self.src_type == self.dst_type:
            raise ValueError("paired corpus needs two different injection types")
        for src, dst, _ in self.pairs:
            if not src or not dst:
                raise ValueError("paired corpus contains an empty sequence")

    def __len__(self) -> int:
        return len(self.pairs)

    def to_jsonl(self) -> str:
        lines = [json.dumps({"src_type": self.src_type.value, "dst_type": self.dst_type.value,
                             "src": list(s), "dst": list(d), "sim": round(float(sim), 6)})
                 for s, d, sim in self.pairs]
        return "".join(line + "\n" for line in lines)

    def save(self, path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "PairedCorpus":
        records = [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines()
                   if line.strip()]
        if not records:
            raise EmptyCorpusError(f"{path}: no pairs")
        return cls(records[0]["src_type"], records[0]["dst_type"],
                   [(r["src"], r["dst"], r["sim"]) for r in records])


def tfidf_matrix(docs, vocab_index: dict) -> np.ndarray:
    """Term-document matrix (terms x docs): raw term frequency x log(N/df)."""
    A = np.zeros((len(vocab_index), len(docs)))
    for j, doc in enumerate(docs):
        for tok in doc:
            A[vocab_index[tok], j] += 1.0
    df = np.count_nonzero(A, axis=1)
    idf = np.log(len(docs) / np.maximum(df, 1))
    return A * idf[:, None]


def latent_documents(docs, k: int):
    """Rank-k latent coordinates (docs x k') of every document, k' = min(k, rank)."""
    vocab_index: dict = {}
    for doc in docs:
        for tok in doc:
            vocab_index.setdefault(tok, len(vocab_index))
    A = tfidf_matrix(docs, vocab_index)
    if A.size == 0:
        return np.zeros((len(docs), 0))
    U, S, Vt = np.linalg.svd(A, full_matrices=False)
    rank = int(np.sum(S > S[0] * 1e-12)) if S.size and S[0] > 0 else 0
    kk = min(k, rank)
    Z = (S[:kk, None] * Vt[:kk]).T
    # documents orthogonal to the kept subspace come out as rounding noise; make them exact zeros
    if kk:
        Z[np.linalg.norm(Z, axis=1) <= S[0] * 1e-9] = 0.0
    return Z


def _unit_rows(X):
    n = np.linalg.norm(X, axis=1, keepdims=True)
    return np.divide(X, n, out=np.zeros_like(X), where=n > 0)


def lsi_pair(src_corpus, dst_corpus, k: int = 64, src_type=None, dst_type=None):
    """Pair every source document with its most similar destination document.

    tf-idf is computed over the combined collection, projected by truncated
    SVD, and similarity is the cosine in that space. Ties go to the lowest
    destination index. Returns a :class:`PairedCorpus` when both types are
    given, otherwise a list of (src index, dst index, similarity).
    """
    if not src_corpus or not dst_corpus:
        raise EmptyCorpusError("lsi_pair needs two non-empty corpora")
    if k < 1:
        raise ValueError("k must be >= 1")
    docs = [list(d) for d in src_corpus] + [list(d) for d in dst_corpus]
    Z = _unit_rows(latent_documents(docs, k))
    n = len(src_corpus)
    sims = Z[:n] @ Z[n:].T
    # lowest index within rounding of the row maximum, so duplicate documents tie
    best = np.argmax(sims >= sims.max(axis=1, keepdims=True) - 1e-12, axis=1)
    result = [(i, int(best[i]), float(np.clip(sims[i, best[i]], -1.0, 1.0))) for i in range(n)]
    if src_type is None or dst_type is None:
        return result
    return PairedCorpus(src_type, dst_type,
                        [(list(src_corpus[i]), list(dst_corpus[j]), s) for i, j, s in result
                         if len(src_corpus[i]) and len(dst_corpus[j])])


# -- sequence-to-sequence model ----------------------------------------------

@dataclass
class TranslatorConfig:
    cell_kind: str = "lstm"
    embed_dim: int = 128
    hidden_size: int = 128
    epochs: int = 15
    lr: float = 0.005
    optimizer: str = "adam"
    batch_size: int = 32
    max_src_len: int = 128
    max_decode_len: int = MAX_DECODE_LEN
    seed: int = 0


@dataclass(frozen=True)
class TranslationFailure:
    reason: str
    tokens: tuple = ()


class TranslationModel:
    def __init__(self, src_type, dst_type, vocab: Vocabulary, cell_kind: str = "lstm",
                 embed_dim: int = 128, hidden_size: int = 128, rng=None, params: dict | None = None,
                 dst_lexicon=None, dtype=np.float32):
        self.src_type = InjectionType(src_type)
        self.dst_type = InjectionType(dst_type)
        self.vocab = vocab
        self.cell_kind = cell_kind
        self.embed_dim = embed_dim
        self.hidden_size = hidden_size
        self.dst_lexicon = frozenset(dst_lexicon) if dst_lexicon is not None else None
        self.max_decode_len = MAX_DECODE_LEN
        self.train_loss: list = []
        V, d, H = len(vocab), embed_dim, hidden_size
        if params is None:
            rng = np.random.default_rng() if rng is None else rng
            enc = RecurrentCell(cell_kind, d, H, rng=rng, dtype=dtype)
            dec = RecurrentCell(cell_kind, d, H, rng=rng, dtype=dtype)
            params = {"E_src": uniform_init(rng, (V, d), dtype),
                      "E_dst": uniform_init(rng, (V, d), dtype),
                      "W_att": uniform_init(rng, (H, H), dtype),
                      "W_out": uniform_init(rng, (2 * H + d, V), dtype),
                      "b_out": np.zeros(V, dtype=dtype)}
            params.update({f"enc.{k}": v for k, v in enc.params.items()})
            params.update({f"dec.{k}": v for k, v in dec.params.items()})
        self.params = params
        self.enc = RecurrentCell(cell_kind, d, H, params=self._sub("enc."))
        self.dec = RecurrentCell(cell_kind, d, H, params=self._sub("dec."))

    def _sub(self, prefix):
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def _h(self, state):
        return state[0] if self.cell_kind == "lstm" else state

    def init_from_embeddings(self, matrix) -> None:
        """Copy pretrained word vectors into both embedding tables."""
        self.params["E_src"][...] = matrix
        self.params["E_dst"][...] = matrix

    # -- training ------------------------------------------------------------

    def loss_and_grads(self, src, src_mask, tgt_in, tgt_out, tgt_mask, attention_log=None):
        """Teacher-forced mean cross-entropy per target token and its gradients."""
        p, H = self.params, self.hidden_size
        B = src.shape[0]
        rows = np.arange(B)
        Hs, state, enc_caches = self.enc.run(p["E_src"][src], src_mask)
        Xt = p["E_dst"][tgt_in]
        T = tgt_in.shape[1]
        ntok = max(1, int(tgt_mask.sum()))
        loss = 0.0
        steps = []
        for t in range(T):
            new, dcache = self.dec.forward_step(Xt[:, t], state)
            m = tgt_mask[:, t:t + 1]
            state = _select(m, new, state)
            h = self._h(state)
            a, c, acache = attend_batch(Hs, h, p["W_att"], src_mask)
            if attention_log is not None:
                attention_log.append(a[tgt_mask[:, t]])
            feat = np.concatenate([h, c, Xt[:, t]], axis=1)
            logits = feat @ p["W_out"] + p["b_out"]
            logp = log_softmax(logits)
            loss -= float(np.sum(logp[rows, tgt_out[:, t]] * tgt_mask[:, t]))
            steps.append((dcache, acache, feat, logits, m))
        loss /= ntok

        g = {k: np.zeros_like(v) for k, v in p.items()}
        dec_g = {k: g[f"dec.{k}"] for k in self.dec.params}
        dHs = np.zeros_like(Hs)
        dXt = np.zeros_like(Xt)
        d_state = self.dec.initial_state(B)
        for t in reversed(range(T)):
            dcache, acache, feat, logits, m = steps[t]
            dlog = softmax(logits)
            dlog[rows, tgt_out[:, t]] -= 1.0
            dlog = (dlog * (m / ntok)).astype(feat.dtype)
            g["W_out"] += feat.T @ dlog
            g["b_out"] += dlog.sum(0)
            dfeat = dlog @ p["W_out"].T
            dh, dc, dx = dfeat[:, :H], dfeat[:, H:2 * H], dfeat[:, 2 * H:]
            dHs_t, dh_att, dW = attend_backward(dc, acache, p["W_att"])
            dHs += dHs_t
            g["W_att"] += dW
            dh = dh + dh_att
            if self.cell_kind == "lstm":
                d_state = (d_state[0] + dh, d_state[1])
                through = (d_state[0] * ~m, d_state[1] * ~m)
                d_in = (d_state[0] * m, d_state[1] * m)
            else:
                d_state = d_state + dh
                through, d_in = d_state * ~m, d_state * m
            dx_step, d_prev = self.dec.backward_step(d_in, dcache, dec_g)
            dXt[:, t] = dx + dx_step
            if self.cell_kind == "lstm":
                d_state = (d_prev[0] + through[0], d_prev[1] + through[1])
            else:
                d_state = d_prev + through
        enc_g = {k: g[f"enc.{k}"] for k in self.enc.params}
        dXs, _, _ = self.enc.run_backward(dHs, d_state, enc_caches, src_mask, grads=enc_g)
        np.add.at(g["E_src"], src[src_mask], dXs[src_mask])
        np.add.at(g["E_dst"], tgt_in[tgt_mask], dXt[tgt_mask])
        return loss, g

    # -- decoding ------------------------------------------------------------

    def greedy_decode(self, src_seqs, max_len: int | None = None):
        """Greedy decode a batch of index sequences.

        Returns a list of (token index list, saw_eos) per source.
        """
        p = self.params
        max_len = self.max_decode_len if max_len is None else max_len
        src, src_mask = pad_batch(src_seqs, max(1, max(len(s) for s in src_seqs)))
        B = len(src_seqs)
        Hs, state, _ = self.enc.run(p["E_src"][src], src_mask)
        prev = np.full(B, BOS, dtype=np.int64)
        out = [[] for _ in range(B)]
        done = np.zeros(B, dtype=bool)
        for _ in range(max_len):
            x = p["E_dst"][prev]
            state, _ = self.dec.forward_step(x, state)
            h = self._h(state)
            _, c, _ = attend_batch(Hs, h, p["W_att"], src_mask)
            logits = np.concatenate([h, c, x], axis=1) @ p["W_out"] + p["b_out"]
            logits[:, _NEVER_EMIT] = -np.inf
            nxt = np.argmax(logits, axis=1)
            for i in np.flatnonzero(~done):
                if nxt[i] == EOS:
                    done[i] = True
                else:
                    out[i].append(int(nxt[i]))
            if done.all():
                break
            prev = nxt
        return [(o, bool(d)) for o, d in zip(out, done)]

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        meta = {"src_type": self.src_type.value, "dst_type": self.dst_type.value,
                "vocab": self.vocab.tokens, "max_decode_len": self.max_decode_len,
                "dst_lexicon": sorted(self.dst_lexicon) if self.dst_lexicon is not None else None,
                "train_loss": self.train_loss}
        save_model(path, self.params, self.cell_kind,
                   [len(self.vocab), self.embed_dim, self.hidden_size], meta)

    @classmethod
    def load(cls, path) -> "TranslationModel":
        tensors, kind, dims, meta = load_model(path)
        model = cls(meta["src_type"], meta["dst_type"], Vocabulary(meta["vocab"]), kind,
                    dims[1], dims[2], params=tensors, dst_lexicon=meta.get("dst_lexicon"))
        model.max_decode_len = meta.get("max_decode_len", MAX_DECODE_LEN)
        model.train_loss = meta.get("train_loss", [])
        return model


def translator_filename(src_type, dst_type) -> str:
    return f"xlate_{InjectionType(src_type).value}_{InjectionType(dst_type).value}.pfnn"


def grammar_lexicon(grammar) -> frozenset:
    """Tokens of the grammar's terminal strings, used for the lexical sanity check."""
    return frozenset(tok for term in grammar.terminals for tok in tokenize(term))


def train_translator(corpus: PairedCorpus, vocab: Vocabulary, config: TranslatorConfig | None = None,
                     embeddings=None, dst_lexicon=None) -> TranslationModel:
    """Teacher-forced training on ``corpus``. Per-epoch mean loss lands in ``model.train_loss``."""
    config = config or TranslatorConfig()
    if len(corpus) == 0:
        raise EmptyCorpusError("translator corpus is empty")
    rng = np.random.default_rng(config.seed)
    model = TranslationModel(corpus.src_type, corpus.dst_type, vocab, config.cell_kind,
                             config.embed_dim, config.hidden_size, rng=rng, dst_lexicon=dst_lexicon)
    model.max_decode_len = config.max_decode_len
    if embeddings is not None:
        model.init_from_embeddings(embeddings)
    src = [encode_tokens(list(s)[:config.max_src_len], vocab) for s, _, _ in corpus.pairs]
    tgt = [encode_tokens(list(d)[:config.max_decode_len - 1], vocab) for _, d, _ in corpus.pairs]
    opt = make_optimizer(config.optimizer, config.lr)
    lengths = [len(s) + len(t) for s, t in zip(src, tgt)]
    for _ in range(config.epochs):
        total, count = 0.0, 0
        for b in length_batches(lengths, config.batch_size, rng):
            loss, grads = _batch_loss(model, [src[i] for i in b], [tgt[i] for i in b])
            ntok = sum(len(tgt[i]) + 1 for i in b)
            total += loss * ntok
            count += ntok
            opt.update(model.params, grads)
        model.train_loss.append(total / count)
    return model


def _teacher_batch(src_seqs, tgt_seqs):
    src, src_mask = pad_batch(src_seqs, max(len(s) for s in src_seqs))
    T = max(len(t) for t in tgt_seqs) + 1
    tin = np.zeros((len(tgt_seqs), T), dtype=np.int64)
    tout = np.zeros_like(tin)
    tmask = np.zeros(tin.shape, dtype=bool)
    for i, t in enumerate(tgt_seqs):
        tin[i, :len(t) + 1] = [BOS] + list(t)
        tout[i, :len(t) + 1] = list(t) + [EOS]
        tmask[i, :len(t) + 1] = True
    return src, src_mask, tin, tout, tmask


def _batch_loss(model, src_seqs, tgt_seqs, attention_log=None):
    return model.loss_and_grads(*_teacher_batch(src_seqs, tgt_seqs), attention_log=attention_log)


def _check_type(model: TranslationModel, inp: TestInput) -> None:
    if InjectionType(inp.injection_type) != model.src_type:
        raise TypeMismatchError(f"model translates {model.src_type.value}, "
                                f"input is {InjectionType(inp.injection_type).value}")


def _finish(model: TranslationModel, out, saw_eos):
    tokens = tuple(model.vocab.decode(out))
    if not saw_eos:
        return TranslationFailure("no_eos", tokens)
    if not tokens:
        return TranslationFailure("empty", tokens)
    if model.dst_lexicon is not None and not any(t in model.dst_lexicon for t in tokens):
        return TranslationFailure("lexical", tokens)
    return TestInput.from_tokens(model.dst_type, tokens, TRANSLATION)


def translate_many(model: TranslationModel, inputs, batch_size: int = 64):
    """Translate a list of inputs; each result is a TestInput or a TranslationFailure."""
    for inp in inputs:
        _check_type(model, inp)
    seqs = [encode_tokens(list(inp.tokens)[:MAX_DECODE_LEN], model.vocab) for inp in inputs]
    results: list = [None] * len(seqs)
    live = [i for i, s in enumerate(seqs) if s]
    for i, s in enumerate(seqs):
        if not s:
            results[i] = TranslationFailure("empty_source")
    for b in length_batches([len(seqs[i]) for i in live], batch_size):
        idx = [live[j] for j in b]
        for i, (out, eos) in zip(idx, model.greedy_decode([seqs[i] for i in idx])):
            results[i] = _finish(model, out, eos)
    return results


def translate(model: TranslationModel, inp: TestInput):
    return translate_many(model, [inp])[0]


def config_dict(config) -> dict:
    return asdict(config)
