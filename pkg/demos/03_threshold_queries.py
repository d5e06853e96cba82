"""
All threshold counts from distributed point functions
=====================================================

Two aggregators each receive one key of a point function at the client's
value. Summing full-domain evaluations gives additive shares of the
histogram, and a prefix sum answers count(x <= t) for every t at once.
"""

from __future__ import annotations

import numpy as np

from mcdp import fss
from mcdp.field import DEFAULT_MODULUS

rng = np.random.default_rng(2)

data = np.clip(rng.normal(20, 6, 2000).astype(int), 0, 63)
depth = 6  # domain [0, 64)

k0, k1 = fss.threshold_keys(data, depth, DEFAULT_MODULUS, rng)
print(f"one key is {k0[0].size_bits} bits")

exact = fss.threshold_counts(k0, k1, None, rng)
noisy = fss.threshold_counts(k0, k1, sigma=4, rng=rng)
for t in (10, 20, 30, 40):
    print(f"count(x <= {t}): noisy {noisy[t]:5d}  exact {exact[t]:5d}")

# noise accumulates along the prefix sum: error at t grows like sqrt(t)
err = np.abs(noisy - exact)
print(f"max error over all thresholds: {err.max()}")
print(fss.threshold_budget(4, 1e-6).as_dict())
