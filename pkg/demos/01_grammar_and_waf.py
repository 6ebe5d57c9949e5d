"""
Grammars, mutation and the simulated WAF
========================================

Derive a few injections per type, ask the bundled rule-set simulator
whether each one is blocked, then mutate a blocked SQL injection until
an encoded variant slips past the rules.
"""

import numpy as np

from polyfuzz.grammar import ALL_TYPES, derive, load_grammars, render
from polyfuzz.mutation import GRAMMAR, TestInput, default_tables, mutate
from polyfuzz.waf import bundled_ruleset, sim_check

rng = np.random.default_rng(0)
grammars = load_grammars()
rules = bundled_ruleset()

# three derivations per injection type, with the simulator verdict
for t in ALL_TYPES:
    for _ in range(3):
        payload = render(derive(grammars[t], rng))
        verdict = "blocked " if sim_check(rules, payload).blocked else "BYPASSED"
        print(f"{t.value:6s} {verdict} {payload!r}")

# the small fixture ruleset shows decode-aware matching in one line each
fixture = bundled_ruleset("sim_example")
for payload in ("OR 1=1", "OR%201=1"):
    print(f"sim_example: {payload!r} blocked={sim_check(fixture, payload).blocked}")

# random mutation walk from a blocked SQL injection
sqli = grammars[ALL_TYPES[0]]
while True:
    tree = derive(sqli, rng)
    if sim_check(rules, render(tree)).blocked:
        break
inp = TestInput.from_tree(sqli.injection_type, tree, GRAMMAR)
tables = default_tables()
print(f"\nstart: {inp.payload!r}")
for step in range(1, 201):
    inp = mutate(inp, sqli, rng, tables)
    if sim_check(rules, inp.payload).bypassed:
        print(f"bypass after {step} mutations: {inp.payload!r}")
        break
else:
    print("no bypass within 200 mutations")
