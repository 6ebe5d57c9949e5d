import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import COPY_WORDS, copy_corpus, copy_token_accuracy, lsi_brute, lsi_well_posed, random_docs
from polyfuzz.grammar import bundled_grammar
from polyfuzz.mutation import TestInput
from polyfuzz.text import EOS, Vocabulary, encode_tokens
from polyfuzz.translator import (EmptyCorpusError, PairedCorpus, TranslationFailure, TranslationModel,
                                 TranslatorConfig, TypeMismatchError, _batch_loss, grammar_lexicon, lsi_pair,
                                 tfidf_matrix, train_translator, translate, translate_many, translator_filename)

WORDS = COPY_WORDS
COPY = TranslatorConfig(embed_dim=16, hidden_size=32, epochs=60, lr=0.01)


@pytest.fixture(scope="module")
def copy_model():
    seqs, corpus = copy_corpus()
    return seqs, train_translator(corpus, Vocabulary(WORDS), COPY)


# -- LSI -----------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(10))
def test_lsi_matches_brute_force(seed):
    r = np.random.default_rng(seed)
    vocab = [f"t{i}" for i in range(15)]
    src, dst = random_docs(r, 10, vocab), random_docs(r, 10, vocab)
    assert lsi_well_posed(src, dst, 4)
    got = lsi_pair(src, dst, k=4)
    for (i, j, sim), (bj, bsim) in zip(got, lsi_brute(src, dst, 4)):
        assert j == bj
        assert abs(sim - bsim) < 1e-9


def test_doc_outside_latent_subspace_scores_zero():
    # "u" occurs once, so at k=1 the source document has no latent component
    src = [["u"]]
    dst = [["a", "b"], ["a", "b", "a"], ["b"]]
    assert lsi_pair(src, dst, k=1) == [(0, 0, 0.0)]


def test_identical_doc_pairs_with_similarity_one():
    src = [["select", "from", "x"], ["a", "b"]]
    dst = [["p", "q"], ["select", "from", "x"], ["z"]]
    got = lsi_pair(src, dst, k=64)
    assert got[0][1] == 1 and got[0][2] == pytest.approx(1.0, abs=1e-6)


def test_disjoint_docs_orthogonal_in_tf_space():
    docs = [["a", "b"], ["c", "d"], ["a"]]
    index = {t: i for i, t in enumerate("abcd")}
    A = tfidf_matrix(docs, index)
    assert abs(A[:, 0] @ A[:, 1]) < 1e-6


def test_ties_go_to_lowest_index():
    got = lsi_pair([["a"]], [["a"], ["a"]], k=4)
    assert got[0][1] == 0


def test_lsi_errors():
    with pytest.raises(EmptyCorpusError):
        lsi_pair([], [["a"]])
    with pytest.raises(ValueError):
        lsi_pair([["a"]], [["a"]], k=0)


def test_paired_corpus_jsonl_round_trip(tmp_path):
    pc = lsi_pair([["a", "b"], ["c"]], [["a"], ["c", "d"]], k=2, src_type="SQLi", dst_type="OSi")
    pc.save(tmp_path / "p.jsonl")
    back = PairedCorpus.load(tmp_path / "p.jsonl")
    assert back.src_type == pc.src_type and back.dst_type == pc.dst_type
    assert [(s, d) for s, d, _ in back.pairs] == [(s, d) for s, d, _ in pc.pairs]


def test_paired_corpus_validation():
    with pytest.raises(ValueError):
        PairedCorpus("SQLi", "SQLi", [])
    with pytest.raises(ValueError):
        PairedCorpus("SQLi", "XSSi", [([], ["a"], 0.0)])


# -- seq2seq -------------------------------------------------------------------

def test_copy_task_accuracy(copy_model):
    seqs, model = copy_model
    assert copy_token_accuracy(model, seqs, model.vocab) >= 0.9


def test_copy_model_translates_training_input(copy_model):
    seqs, model = copy_model
    ok = 0
    for s in seqs[:20]:
        out = translate(model, TestInput.from_tokens("SQLi", s))
        if isinstance(out, TestInput):
            assert out.injection_type.value == "XSSi"
            ok += list(out.tokens) == s
    assert ok >= 15


def test_attention_weights_sum_to_one(copy_model):
    seqs, model = copy_model
    log = []
    src = [encode_tokens(s, model.vocab) for s in seqs[:16]]
    _batch_loss(model, src, src, attention_log=log)
    weights = np.concatenate(log)
    assert np.all(weights >= 0)
    assert np.max(np.abs(weights.sum(axis=1) - 1)) < 1e-6


def test_epoch_two_loss_below_epoch_one():
    _, corpus = copy_corpus()
    model = train_translator(corpus, Vocabulary(WORDS), TranslatorConfig(embed_dim=16, hidden_size=32, epochs=2))
    assert model.train_loss[1] < model.train_loss[0]


def test_training_deterministic():
    _, corpus = copy_corpus(30)
    cfg = TranslatorConfig(embed_dim=8, hidden_size=8, epochs=2)
    a = train_translator(corpus, Vocabulary(WORDS), cfg)
    b = train_translator(corpus, Vocabulary(WORDS), cfg)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_empty_corpus():
    with pytest.raises(EmptyCorpusError):
        train_translator(PairedCorpus("SQLi", "XSSi", []), Vocabulary(WORDS))


def _eos_only_model():
    model = TranslationModel("SQLi", "XSSi", Vocabulary(WORDS), "gru", 4, 4, rng=np.random.default_rng(0))
    model.params["W_out"][...] = 0
    model.params["b_out"][...] = 0
    model.params["b_out"][EOS] = 10.0
    return model


def test_eos_only_decode_is_failure():
    out = translate(_eos_only_model(), TestInput("SQLi", "w1 w2"))
    assert isinstance(out, TranslationFailure) and out.reason == "empty"


def test_decode_without_eos_is_failure_and_terminates():
    model = _eos_only_model()
    model.params["b_out"][EOS] = -10.0
    model.params["b_out"][model.vocab.stoi["w3"]] = 10.0
    model.max_decode_len = 7
    out = translate(model, TestInput("SQLi", "w1"))
    assert isinstance(out, TranslationFailure) and out.reason == "no_eos" and len(out.tokens) == 7


def test_lexical_sanity_check(copy_model):
    seqs, model = copy_model
    strict = TranslationModel.__new__(TranslationModel)
    strict.__dict__.update(model.__dict__)
    strict.dst_lexicon = frozenset({"nothing-matches"})
    out = translate(strict, TestInput.from_tokens("SQLi", seqs[0]))
    assert isinstance(out, TranslationFailure) and out.reason in ("lexical", "no_eos", "empty")


def test_type_mismatch(copy_model):
    _, model = copy_model
    with pytest.raises(TypeMismatchError):
        translate(model, TestInput("OSi", "ls"))


def test_empty_source_is_failure(copy_model):
    _, model = copy_model
    assert translate_many(model, [TestInput("SQLi", "")])[0].reason == "empty_source"


def test_save_load_round_trip(copy_model, tmp_path):
    seqs, model = copy_model
    path = tmp_path / translator_filename("SQLi", "XSSi")
    model.save(path)
    back = TranslationModel.load(path)
    src = [encode_tokens(s, model.vocab) for s in seqs[:30]]
    assert back.greedy_decode(src) == model.greedy_decode(src)
    assert path.name == "xlate_SQLi_XSSi.pfnn"


def test_grammar_lexicon_contains_keywords():
    lex = grammar_lexicon(bundled_grammar("XSSi"))
    assert "alert" in lex or "script" in lex


@given(st.lists(st.sampled_from(WORDS), min_size=1, max_size=6))
@settings(max_examples=30, deadline=None)
def test_translate_always_terminates(tokens):
    model = _eos_only_model()
    model.params["b_out"][EOS] = 0.0
    model.max_decode_len = 5
    out = translate(model, TestInput.from_tokens("SQLi", tokens))
    assert isinstance(out, (TestInput, TranslationFailure))
