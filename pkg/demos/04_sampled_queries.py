"""
Many queries, one answer per client
===================================

With k queries, each client answers a single randomly chosen one. The answer
travels as a point function over [k], so a key costs O(log k) seeds. Random
sampling amplifies privacy: the effective epsilon shrinks roughly by k.
"""

from __future__ import annotations

import numpy as np

from mcdp import fss
from mcdp.field import DEFAULT_MODULUS

rng = np.random.default_rng(3)

n, k = 20000, 8
means = np.linspace(0.1, 0.8, k)
answers = (rng.random((n, k)) < means).astype(int)

k0, k1 = fss.sampled_encode_clients(answers, DEFAULT_MODULUS, rng)
releases = [fss.aggregator_histogram_release(keys, 2.0, rng) for keys in (k0, k1)]
est = fss.sampled_query_combine(releases, n, k, DEFAULT_MODULUS)

print("query  true    estimate")
for l in range(k):
    print(f"{l:5d}  {answers[:, l].mean():.3f}   {est[l]:.3f}")
print(f"sampling std scale sqrt(k/n) = {np.sqrt(k / n):.4f}")

b = fss.sampled_budget(2.0, 1e-6, k)
print(f"per-answer epsilon {b['epsilon']:.3f} -> amplified {b['epsilon_amplified']:.3f}")

for logk in (4, 10, 20):
    key, _ = fss.sampled_query_encode(0, [lambda x: 1] * (1 << logk), DEFAULT_MODULUS, rng)
    print(f"k = 2^{logk}: key size {key.size_bits} bits")
