"""
Comparing fuzzers statistically
===============================

Per-run archive sizes are compared with the Wilcoxon rank-sum test,
the Vargha-Delaney A12 effect size and Scott-Knott ranking. The values
below are synthetic, drawn so that one fuzzer is clearly ahead.
"""

import numpy as np

from polyfuzz.stats import MetricSample, a12, compare, rows_to_text, scott_knott, wilcoxon_rank_sum

rng = np.random.default_rng(3)
table = {
    "SQLi": {"mtea": list(rng.poisson(170, 21)), "stea": list(rng.poisson(160, 21)),
             "ran": list(rng.poisson(90, 21))},
    "XSSi": {"mtea": list(rng.poisson(40, 21)), "stea": list(rng.poisson(40, 21)),
             "ran": list(rng.poisson(20, 21))},
}
print(rows_to_text(compare(table, reference="mtea")))

# the exact test is used up to 12 observations in total
x, y = [3, 5, 8, 9], [1, 2, 4, 6]
print(f"\nexact p {wilcoxon_rank_sum(x, y, method='exact'):.4f}, "
      f"normal p {wilcoxon_rank_sum(x, y, method='normal'):.4f}, A12 {a12(x, y):.3f}")

# Scott-Knott: rank 1 is the group with the lowest mean
samples = [MetricSample(k, tuple(v)) for k, v in table["SQLi"].items()]
print("Scott-Knott ranks on SQLi:", scott_knott(samples))
