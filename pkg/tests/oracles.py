"""Independent reference computations used as test oracles."""

import itertools

import numpy as np

from polyfuzz.nlm import EmbeddingTable
from polyfuzz.stats import midranks
from polyfuzz.text import Vocabulary, encode_tokens
from polyfuzz.translator import PairedCorpus

COPY_WORDS = [f"w{i}" for i in range(12)]


def a12_brute(x, y):
    wins = 0.0
    for xi in x:
        for yj in y:
            wins += 1.0 if xi > yj else 0.5 if xi == yj else 0.0
    return wins / (len(x) * len(y))


def exact_p_brute(x, y):
    """Two-sided p by enumerating every assignment of the pooled midranks to x."""
    pooled = list(x) + list(y)
    ranks = midranks(pooled)
    n, n1 = len(pooled), len(x)
    centre = n1 * (n + 1) / 2
    obs = abs(ranks[:n1].sum() - centre)
    hits = total = 0
    for idx in itertools.combinations(range(n), n1):
        total += 1
        hits += abs(ranks[list(idx)].sum() - centre) >= obs - 1e-9
    return hits / total


def _tfidf_loops(docs):
    terms = sorted({t for d in docs for t in d})
    A = np.array([[d.count(t) for d in docs] for t in terms], dtype=float)
    df = np.array([sum(1 for d in docs if t in d) for t in terms])
    return A * np.log(len(docs) / df)[:, None]


def lsi_well_posed(src, dst, k):
    """False when singular values tie across the rank-k cut, so the kept subspace is not unique."""
    S = np.linalg.svd(_tfidf_loops(src + dst), compute_uv=False)
    rank = int(np.sum(S > S[0] * 1e-12))
    return k >= rank or S[k - 1] - S[k] > S[0] * 1e-9


def lsi_brute(src, dst, k):
    """Explicit tf-idf loops, SVD, then an argmax by hand. Returns [(dst index, similarity)]."""
    _, S, Vt = np.linalg.svd(_tfidf_loops(src + dst), full_matrices=False)
    rank = int(np.sum(S > S[0] * 1e-12))
    Z = (S[:min(k, rank), None] * Vt[:min(k, rank)]).T
    out = []
    for i in range(len(src)):
        best, best_sim = 0, -np.inf
        for j in range(len(dst)):
            a, b = Z[i], Z[len(src) + j]
            na, nb = np.linalg.norm(a), np.linalg.norm(b)
            floor = S[0] * 1e-9
            sim = a @ b / (na * nb) if na > floor and nb > floor else 0.0
            if sim > best_sim + 1e-12:
                best, best_sim = j, sim
        out.append((best, best_sim))
    return out


def random_docs(r, n, vocab):
    return [list(r.choice(vocab, size=r.integers(1, 7))) for _ in range(n)]


def copy_corpus(n=200, seed=0):
    """Copy task: destination equals source, 2 to 8 tokens."""
    r = np.random.default_rng(seed)
    seqs = [list(r.choice(COPY_WORDS, size=r.integers(2, 9))) for _ in range(n)]
    return seqs, PairedCorpus("SQLi", "XSSi", [(s, s, 1.0) for s in seqs])


def copy_token_accuracy(model, seqs, vocab):
    outs = model.greedy_decode([encode_tokens(s, vocab) for s in seqs])
    hits = sum(sum(a == b for a, b in zip(o, encode_tokens(s, vocab))) for (o, _), s in zip(outs, seqs))
    return hits / sum(len(s) for s in seqs)


def nondup_fraction(payloads):
    return len(set(payloads)) / len(payloads)


def separable(n=2000, seed=0):
    """Random word sequences; half contain the token BAD, which means blocked."""
    r = np.random.default_rng(seed)
    words = [f"w{i}" for i in range(20)]
    data = []
    for i in range(n):
        toks = list(r.choice(words, size=r.integers(3, 11)))
        if i % 2:
            toks[r.integers(len(toks))] = "BAD"
        data.append((toks, "blocked" if "BAD" in toks else "bypassed"))
    return data


def embeddings_for(data, d=16):
    vocab = Vocabulary(sorted({t for s, _ in data for t in s}))
    return EmbeddingTable(np.random.default_rng(0).uniform(-0.5, 0.5, (len(vocab), d)).astype(np.float32), vocab)
