"""End-to-end model building: corpora -> labels -> embeddings -> classifiers -> translators."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classifier import (BLOCKED_LABEL, BYPASSED_LABEL, ClassifierConfig, SurrogateClassifier,
                         classifier_filename, train_classifier)
from .evolve import Models
from .grammar import InjectionType, derive
from .mutation import GRAMMAR, TestInput, load_tables
from .nlm import EmbeddingTable, train_cbow
from .text import Vocabulary, encode_tokens
from .translator import (PairedCorpus, TranslationModel, TranslatorConfig, grammar_lexicon, lsi_pair,
                         train_translator, translator_filename)
from .waf import check_many

VOCAB_FILE = "vocab.json"
EMBED_FILE = "embedding.pfnn"


def stream_rng(seed: int, name: str, *key: int) -> np.random.Generator:
    """Named sub-stream of a run seed, so components never share random draws."""
    tag = int.from_bytes(name.encode("utf-8")[:8].ljust(8, b"\0"), "little")
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(tag, *key)))


def generate_corpus(grammar, count: int, rng, max_depth: int = 32) -> list:
    return [TestInput.from_tree(grammar.injection_type, derive(grammar, rng, max_depth), GRAMMAR)
            for _ in range(count)]


def label_corpus(inputs, oracle) -> list:
    verdicts = check_many(oracle, [x.payload for x in inputs])
    return [BYPASSED_LABEL if v.bypassed else BLOCKED_LABEL for v in verdicts]


def distinct(inputs) -> list:
    seen, out = set(), []
    for x in inputs:
        if x.payload not in seen:
            seen.add(x.payload)
            out.append(x)
    return out


@dataclass
class BuildConfig:
    """Sizes for a full model build. Defaults are desk scale."""

    corpus_size: int = 2000
    pairs_per_direction: int = 100
    lsi_rank: int = 64
    embed_dim: int = 128
    window: int = 2
    embed_epochs: int = 5
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    translator: TranslatorConfig = field(default_factory=TranslatorConfig)
    seed: int = 0

    @classmethod
    def paper_scale(cls, **kw) -> "BuildConfig":
        return cls(corpus_size=20000, pairs_per_direction=30000, **kw)


def train_embeddings(corpora: dict, d: int = 128, window: int = 2, epochs: int = 5,
                     seed: int = 0) -> EmbeddingTable:
    """One vocabulary and one CBOW table over the corpora of every type."""
    seqs = [list(x.tokens) for t in sorted(corpora, key=lambda t: InjectionType(t).value)
            for x in corpora[t]]
    vocab = Vocabulary.build(seqs)
    return train_cbow([encode_tokens(s, vocab) for s in seqs], vocab, d=d, window=window,
                      epochs=epochs, rng=stream_rng(seed, "embed"))


def pair_corpora(corpora: dict, n_pairs: int, k: int = 64, seed: int = 0) -> dict:
    """LSI pairing for every ordered pair of types, on up to ``n_pairs``
    distinct source documents."""
    out = {}
    types = sorted(corpora, key=lambda t: InjectionType(t).value)
    uniq = {t: distinct(corpora[t]) for t in types}
    for i, src in enumerate(types):
        for j, dst in enumerate(types):
            if src == dst:
                continue
            rng = stream_rng(seed, "pair", i, j)
            pool = uniq[src]
            pick = np.sort(rng.permutation(len(pool))[:n_pairs])
            src_docs = [list(pool[p].tokens) for p in pick]
            dst_docs = [list(x.tokens) for x in uniq[dst]]
            out[(InjectionType(src), InjectionType(dst))] = lsi_pair(src_docs, dst_docs, k, src, dst)
    return out


def build_models(grammars: dict, oracle, config: BuildConfig | None = None,
                 translators: bool = True, log=None) -> tuple:
    """Generate, label and train everything a campaign needs.

    Returns (Models, info) where info holds the corpora, labels and pairings.
    """
    config = config or BuildConfig()
    say = log or (lambda msg: None)
    types = sorted(grammars, key=lambda t: InjectionType(t).value)
    corpora, labels = {}, {}
    for i, t in enumerate(types):
        corpora[t] = generate_corpus(grammars[t], config.corpus_size, stream_rng(config.seed, "gen", i))
        labels[t] = label_corpus(corpora[t], oracle)
        say(f"{t.value}: {config.corpus_size} inputs, "
            f"{labels[t].count(BYPASSED_LABEL)} bypass the oracle")
    emb = train_embeddings(corpora, config.embed_dim, config.window, config.embed_epochs, config.seed)
    say(f"embeddings: vocab {len(emb.vocab)}, d={emb.dim}")
    classifiers = {}
    for t in types:
        data = [(list(x.tokens), lab) for x, lab in zip(corpora[t], labels[t])]
        classifiers[t] = train_classifier(data, t, emb, config.classifier)
        say(f"classifier {t.value}: val accuracy {classifiers[t].report.val_accuracy:.3f}")
    pairs, models = {}, {}
    if translators and len(types) > 1:
        pairs = pair_corpora(corpora, config.pairs_per_direction, config.lsi_rank, config.seed)
        for (src, dst), pc in pairs.items():
            tc = TranslatorConfig(**{**config.translator.__dict__, "embed_dim": emb.dim})
            models[(src, dst)] = train_translator(pc, emb.vocab, tc, emb.matrix,
                                                  grammar_lexicon(grammars[dst]))
        say(f"translators: {len(models)} directed models")
    info = {"corpora": corpora, "labels": labels, "pairs": pairs, "embeddings": emb}
    return Models(grammars, classifiers, models, load_tables()), info


def save_models(models: Models, model_dir, embeddings: EmbeddingTable | None = None) -> None:
    d = Path(model_dir)
    d.mkdir(parents=True, exist_ok=True)
    for t, clf in sorted(models.classifiers.items(), key=lambda kv: kv[0].value):
        clf.save(d / classifier_filename(t))
    for (s, t), m in sorted(models.translators.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)):
        m.save(d / translator_filename(s, t))
    if embeddings is not None:
        save_embeddings(embeddings, d)


def save_embeddings(embeddings: EmbeddingTable, model_dir) -> None:
    from .nlm import save_model

    d = Path(model_dir)
    d.mkdir(parents=True, exist_ok=True)
    embeddings.vocab.save(d / VOCAB_FILE)
    save_model(d / EMBED_FILE, {"embedding": embeddings.matrix}, "cbow",
               list(embeddings.matrix.shape), {"vocab": embeddings.vocab.tokens})


def load_models(model_dir, grammars: dict, tables_path=None) -> Models:
    d = Path(model_dir)
    classifiers, translators = {}, {}
    for t in grammars:
        p = d / classifier_filename(t)
        if p.exists():
            classifiers[InjectionType(t)] = SurrogateClassifier.load(p)
        for s in grammars:
            q = d / translator_filename(s, t)
            if s != t and q.exists():
                translators[(InjectionType(s), InjectionType(t))] = TranslationModel.load(q)
    return Models(grammars, classifiers, translators, load_tables(tables_path))


def load_embeddings(model_dir) -> EmbeddingTable:
    from .nlm import load_model

    tensors, _, _, meta = load_model(Path(model_dir) / EMBED_FILE)
    return EmbeddingTable(tensors["embedding"], Vocabulary(meta["vocab"]))


def paired_corpus_files(pairs: dict, out_dir) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for (s, t), pc in sorted(pairs.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)):
        p = out / f"pairs_{s.value}_{t.value}.jsonl"
        pc.save(p)
        paths.append(p)
    return paths


__all__ = ["BuildConfig", "build_models", "generate_corpus", "label_corpus", "pair_corpora",
           "train_embeddings", "save_models", "save_embeddings", "load_models", "load_embeddings", "stream_rng",
           "PairedCorpus", "distinct", "paired_corpus_files"]
