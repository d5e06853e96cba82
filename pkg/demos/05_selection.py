"""
Selecting the best query
========================

Aggregators add discrete Laplace noise to their per-query totals and hand
them to an evaluator that reveals only the argmax. More aggregators mean more
noise, so accuracy drops as the trust parameter m grows.
"""

from __future__ import annotations

import numpy as np

from mcdp import selection

rng = np.random.default_rng(4)

counts = np.array([40, 52, 47, 30])
n = 100
answers = np.zeros((n, counts.size), dtype=np.uint64)
for l, c in enumerate(counts):
    answers[:c, l] = 1

print("P(select the true best query):")
for eps in (0.1, 0.5, 2.0):
    row = []
    for m in (1, 2, 4):
        wins = selection.simulate_selection(answers, m, eps, rng, trials=4000)
        row.append(f"m={m}: {np.mean(wins == counts.argmax()):.3f}")
    print(f"  eps={eps:<4} " + "  ".join(row))
