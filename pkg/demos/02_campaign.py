"""
A small multi-task fuzzing campaign
===================================

Build every model a campaign needs (embeddings, six surrogate
classifiers, 30 translators) at toy scale, then compare the multi-task
fuzzer with its single-task and random-search baselines on a few seeds.
Takes a couple of minutes on a laptop CPU.
"""

import numpy as np

from polyfuzz.classifier import ClassifierConfig
from polyfuzz.evolve import RunConfig, run
from polyfuzz.grammar import load_grammars
from polyfuzz.pipeline import BuildConfig, build_models
from polyfuzz.translator import TranslatorConfig
from polyfuzz.waf import SimulatorOracle, bundled_ruleset

oracle = SimulatorOracle(bundled_ruleset())
config = BuildConfig(corpus_size=500, pairs_per_direction=60, embed_dim=16,
                     classifier=ClassifierConfig(hidden_size=16, epochs=4),
                     translator=TranslatorConfig(hidden_size=16, epochs=6))
models, info = build_models(load_grammars(), oracle, config, log=print)

# archive sizes per task, three seeds per variant
results = {}
for variant in ("mtea", "stea", "ran"):
    counts = []
    for seed in range(3):
        rep = run(RunConfig(pop_size=20, generations=8, seed=seed, variant=variant), models, oracle)
        counts.append([e["archive_count"] for e in rep["tasks"].values()])
    results[variant] = np.array(counts)
    tasks = list(rep["tasks"])

print("\nmedian distinct bypasses per task")
print("variant " + " ".join(f"{t:>6s}" for t in tasks))
for variant, counts in results.items():
    print(f"{variant:7s} " + " ".join(f"{v:6.0f}" for v in np.median(counts, axis=0)))
