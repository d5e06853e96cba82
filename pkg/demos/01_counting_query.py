"""
Counting query with several aggregators
=======================================

Each client secret-shares one bit among m aggregators. Every aggregator adds
its own discrete Gaussian noise before releasing, so the answer stays private
as long as one aggregator is honest. The price is extra noise: the combined
estimate has standard deviation sqrt(m) * sigma / n.
"""

from __future__ import annotations

import numpy as np

from mcdp import counting, noise

rng = np.random.default_rng(0)

# 1000 clients, 37% of whom satisfy the query
n, sigma = 1000, 10
data = (rng.random(n) < 0.37).astype(int)
query = counting.CountingQuery(lambda x: x, "flag")
print(f"true fraction: {data.mean():.4f}")

# one run per trust level m
for m in (1, 2, 3, 5):
    res = counting.run_counting(data, query, m, sigma, rng, delta=1e-6)
    print(f"m={m}: estimate {res.estimate:.4f}  predicted std {res.predicted_std:.4f}")

# the predicted std is checked against many simulated runs
sims = counting.simulate_counting(data, 3, sigma, rng, trials=5000)
print(f"m=3 empirical std over 5000 runs: {sims.std():.5f} (predicted {np.sqrt(3) * sigma / n:.5f})")

# privacy of one honest aggregator's release
budget = noise.PrivacyBudget.from_sigma(sigma, delta=1e-6)
print(f"rho = {budget.rho:.4f}, epsilon = {budget.epsilon:.3f} at delta = 1e-6")
