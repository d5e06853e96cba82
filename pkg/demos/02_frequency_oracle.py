"""
Frequencies and heavy hitters from a shared sign sketch
=======================================================

Clients share a +/-1 column of a public random sketch instead of their raw
value. The combined noisy sketch answers "how often does y occur?" for any y,
and scanning the domain recovers the frequent elements.
"""

from __future__ import annotations

import numpy as np

from mcdp import sketch

rng = np.random.default_rng(1)

# skewed data over a domain of 2**10 elements
data = rng.zipf(1.5, 5000) % 1024
params = sketch.SketchParams(ell=1024, domain_bits=10, seed=42)

releases, combined = sketch.run_frequency_oracle(data, params, m=3, sigma0=1.0, rng=rng)

# point queries
for y in (1, 2, 3, 500):
    est = sketch.estimate_from_combined(combined, [y], params, data.size)[0]
    print(f"f({y:3d}): estimate {est:+.4f}  true {np.mean(data == y):.4f}")

# heavy hitters above 2%
print("\nheavy hitters (tau = 0.02):")
for element, freq in sketch.heavy_hitters(releases, 0.02, params, data.size, m=3):
    print(f"  {element:4d}  {freq:.4f}")

budget = sketch.sketch_budget(1.0, 1e-6)
print(f"\nper-release privacy: rho = {budget.rho}, epsilon = {budget.epsilon:.2f}")
