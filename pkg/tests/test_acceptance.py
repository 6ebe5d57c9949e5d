"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s``; the lines are also
repeated in the terminal summary.
"""

import time

import numpy as np
import pytest

from acceptance_log import verdict
from cli_pipeline import run_pipeline, snapshot
from gradcases import all_cases
from oracles import (a12_brute, copy_corpus, copy_token_accuracy, embeddings_for, exact_p_brute, lsi_brute,
                     lsi_well_posed, nondup_fraction, random_docs, separable)
from polyfuzz.classifier import ClassifierConfig, train_classifier
from polyfuzz.evolve import Fuzzer, RunConfig, run
from polyfuzz.grammar import ALL_TYPES, derive, load_grammars, render
from polyfuzz.pipeline import BuildConfig, build_models, stream_rng
from polyfuzz.stats import a12, wilcoxon_rank_sum
from polyfuzz.text import Vocabulary, encode_tokens
from polyfuzz.translator import TranslatorConfig, _batch_loss, lsi_pair, train_translator
from polyfuzz.waf import bundled_ruleset, sim_check

# desk-scale corpora (2,000 labeled inputs per type), reduced model widths
ACCEPTANCE_BUILD = BuildConfig(embed_dim=32, classifier=ClassifierConfig(hidden_size=32, epochs=10),
                               translator=TranslatorConfig(hidden_size=32, epochs=15))


@pytest.fixture(scope="module")
def built(sim_oracle):
    t0 = time.perf_counter()
    models, info = build_models(load_grammars(), sim_oracle, ACCEPTANCE_BUILD)
    return models, info, time.perf_counter() - t0


def test_criterion_1_gradients():
    t0 = time.perf_counter()
    worst = {}
    for seed in range(3):
        for name, errs in all_cases(seed).items():
            worst[name] = max(worst.get(name, 0.0), max(errs.values()))
    elapsed = time.perf_counter() - t0
    top = max(worst, key=worst.get)
    ok = max(worst.values()) < 1e-3 and elapsed < 60
    assert verdict(1, ok, f"max relative error {worst[top]:.2e} ({top}) over {len(worst)} gradient "
                          f"families x 3 seeds; {elapsed:.1f}s")


def test_criterion_2_oracle_equivalence():
    t0 = time.perf_counter()
    r = np.random.default_rng(2024)
    a12_ok = all(a12(x, y) == a12_brute(x, y)
                 for x, y in ((r.integers(0, 6, r.integers(1, 9)), r.integers(0, 6, r.integers(1, 9)))
                              for _ in range(300)))
    p_err = 0.0
    for n in range(2, 13):
        for n1 in range(1, n):
            for _ in range(3):
                x, y = r.integers(0, 5, n1), r.integers(0, 5, n - n1)
                p_err = max(p_err, abs(wilcoxon_rank_sum(x, y) - exact_p_brute(x, y)))
    lsi_ok, lsi_n = True, 0
    vocab = [f"t{i}" for i in range(15)]
    while lsi_n < 20:
        ns, nd = int(r.integers(1, 11)), int(r.integers(1, 11))
        src, dst = random_docs(r, ns, vocab), random_docs(r, nd, vocab)
        k = int(r.integers(1, 8))
        if not lsi_well_posed(src, dst, k):
            continue
        lsi_n += 1
        got = lsi_pair(src, dst, k)
        want = lsi_brute(src, dst, k)
        lsi_ok &= all(j == bj and abs(s - bs) < 1e-9 for (_, j, s), (bj, bs) in zip(got, want))
    elapsed = time.perf_counter() - t0
    ok = a12_ok and p_err <= 1e-12 and lsi_ok and elapsed < 60
    assert verdict(2, ok, f"a12 exact={a12_ok}, wilcoxon max |dp|={p_err:.1e} (n<=12), "
                          f"lsi argmax match={lsi_ok} ({lsi_n} instances); {elapsed:.1f}s")


def test_criterion_3_classifier(built):
    models, _, build_seconds = built
    t0 = time.perf_counter()
    data = separable()
    toy = train_classifier(data, "SQLi", embeddings_for(data), ClassifierConfig(hidden_size=16, epochs=3))
    accs = {t.value: models.classifiers[t].report.val_accuracy for t in ALL_TYPES}
    elapsed = time.perf_counter() - t0 + build_seconds
    ok = toy.report.val_accuracy >= 0.95 and all(0.90 <= a <= 1.0 for a in accs.values()) and elapsed < 300
    bal = {t.value: models.classifiers[t].report.val_balanced_accuracy for t in ALL_TYPES}
    detail = ", ".join(f"{k} {v:.3f} (balanced {bal[k]:.3f})" for k, v in accs.items())
    assert verdict(3, ok, f"separable {toy.report.val_accuracy:.3f}; simulator-labeled {detail}; "
                          f"{elapsed:.0f}s including the full model build")


def test_criterion_4_translator():
    t0 = time.perf_counter()
    seqs, corpus = copy_corpus()
    vocab = Vocabulary(sorted({t for s in seqs for t in s}))
    model = train_translator(corpus, vocab, TranslatorConfig(embed_dim=16, hidden_size=32, epochs=60, lr=0.01))
    acc = copy_token_accuracy(model, seqs, vocab)
    log = []
    src = [encode_tokens(s, vocab) for s in seqs]
    for i in range(0, len(src), 32):
        _batch_loss(model, src[i:i + 32], src[i:i + 32], attention_log=log)
    dev = float(np.max(np.abs(np.concatenate(log).sum(axis=1) - 1)))
    elapsed = time.perf_counter() - t0
    ok = acc >= 0.90 and dev <= 1e-6 and elapsed < 300
    assert verdict(4, ok, f"copy-task token accuracy {acc:.3f}; max |sum(a)-1| {dev:.1e}; {elapsed:.0f}s")


def _invariant_violations(fuzzer, state, oracle):
    bad = []
    for t in fuzzer.config.tasks:
        k = t.value
        pop = state.populations[k]
        archive = state.archives[k]
        traj = state.trajectory[k]
        checks = {
            "capacity": len(pop) == fuzzer.config.pop_size,
            "purity": not any(oracle(m.input.payload).bypassed for m in pop),
            "mating pool": [m.input for m in pop] == state.mating_pool[k],
            "soundness": all(oracle(p).bypassed for p in archive.entries),
            "distinctness": len({r["payload"] for r in archive.records()}) == len(archive),
            "monotone": all(a <= b for a, b in zip(traj, traj[1:])),
        }
        bad += [f"{k}@{state.generation}:{name}" for name, good in checks.items() if not good]
    return bad


def test_criterion_5_evolution_invariants(built, sim_oracle):
    models = built[0]
    t0 = time.perf_counter()
    bad = []
    for variant in ("mtea", "ran"):
        fz = Fuzzer(RunConfig(pop_size=20, generations=10, seed=11, variant=variant), models, sim_oracle)
        state = fz.initialize()
        bad += _invariant_violations(fz, state, sim_oracle)
        while not fz.finished(state):
            fz.step_generation(state)
            bad += _invariant_violations(fz, state, sim_oracle)
    zero = run(RunConfig(pop_size=20, generations=10, seed=11, variant="mtea", p_transfer=0.0), models, sim_oracle)
    stea = run(RunConfig(pop_size=20, generations=10, seed=11, variant="stea"), models, sim_oracle)
    reduction = zero["tasks"] == stea["tasks"]
    elapsed = time.perf_counter() - t0
    ok = not bad and reduction and elapsed < 300
    assert verdict(5, ok, f"violations {bad[:5] or 'none'}; MTEA(p=0) == STEA: {reduction}; {elapsed:.0f}s")


def test_criterion_6_multitask_benefit(built, sim_oracle):
    models = built[0]
    t0 = time.perf_counter()
    m, G = 50, 25
    budget = m * (G + 1)  # per task: the initial population plus m evaluations per generation
    counts = {v: {t.value: [] for t in ALL_TYPES} for v in ("mtea", "stea", "ran")}
    for seed in range(21):
        for v in counts:
            rep = run(RunConfig(pop_size=m, generations=G, seed=seed, variant=v, query_budget=budget),
                      models, sim_oracle)
            for t, entry in rep["tasks"].items():
                counts[v][t].append(entry["archive_count"])
    med = {v: {t: float(np.median(x)) for t, x in per.items()} for v, per in counts.items()}
    beats_stea = [t for t in med["mtea"] if med["mtea"][t] >= med["stea"][t]]
    ran_below = [t for t in med["mtea"] if med["ran"][t] <= med["mtea"][t]]
    elapsed = time.perf_counter() - t0
    for t in med["mtea"]:
        p = wilcoxon_rank_sum(counts["mtea"][t], counts["stea"][t])
        eff = a12(counts["mtea"][t], counts["stea"][t])
        print(f"  {t}: median mtea {med['mtea'][t]:.0f} stea {med['stea'][t]:.0f} ran {med['ran'][t]:.0f}; "
              f"mtea vs stea p={p:.3f} A12={eff:.2f}")
    ok = len(beats_stea) >= 4 and len(ran_below) >= 4 and elapsed < 1800
    assert verdict(6, ok, f"MTEA >= STEA on {len(beats_stea)}/6 {beats_stea}; RAN <= MTEA on "
                          f"{len(ran_below)}/6; budget {budget} queries/task; {elapsed:.0f}s")


def test_criterion_7_duplicate_rate():
    t0 = time.perf_counter()
    grammars = load_grammars()
    frac = {}
    for i, t in enumerate(ALL_TYPES):
        r = stream_rng(0, "dup", i)
        frac[t.value] = nondup_fraction([render(derive(grammars[t], r)) for _ in range(10_000)])
    elapsed = time.perf_counter() - t0
    ok = frac["OSi"] < frac["SQLi"] < frac["HTMLi"] and elapsed < 120
    detail = ", ".join(f"{k} {v:.3f}" for k, v in frac.items())
    assert verdict(7, ok, f"non-duplicate fractions {detail}; {elapsed:.0f}s")


def test_criterion_8_cli_determinism(tmp_path):
    a = snapshot(run_pipeline(tmp_path / "a"))
    b = snapshot(run_pipeline(tmp_path / "b"))
    differing = sorted(k for k in a if a.get(k) != b.get(k)) + sorted(set(b) - set(a))
    assert verdict(8, not differing, f"{len(a)} output files from gen/label/pair/train/fuzz/report, "
                                     f"byte-identical: {not differing}")


def test_criterion_9_waf_fixture():
    rs = bundled_ruleset("sim_example")
    blocked = sim_check(rs, "OR 1=1").blocked
    bypassed = sim_check(rs, "OR%201=1").bypassed
    assert verdict(9, blocked and bypassed, f"'OR 1=1' blocked={blocked}, 'OR%201=1' bypassed={bypassed}")
