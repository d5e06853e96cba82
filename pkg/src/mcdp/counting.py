"""Counting queries: each client shares q(x_i), each aggregator sums its shares
and releases the sum plus its own discrete Gaussian noise, and anyone can add
the m releases to get a noisy count.

Throughout, ``sigma=None`` switches noise off. It is a test hook only; the
privacy report of such a run is meaningless.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .field import (
    DEFAULT_MODULUS,
    FieldElement,
    FieldModulus,
    add_arrays,
    as_modulus,
    from_signed,
    lift_array,
    sum_mod,
)
from .noise import PrivacyBudget, sample_discrete_gaussian
from .sharing import ShareBundle, share_array


@dataclass(frozen=True)
class CountingQuery:
    predicate: Callable
    identifier: str = "q"

    def __call__(self, x) -> int:
        out = self.predicate(x)
        if out not in (0, 1, True, False):
            raise ValueError(f"query {self.identifier!r} returned {out!r}, expected 0 or 1")
        return int(out)

    def evaluate(self, data) -> np.ndarray:
        return np.array([self(x) for x in data], dtype=np.uint64)


@dataclass(frozen=True)
class NoisyAggregate:
    aggregator: int
    value: FieldElement


def client_encode(x, query: CountingQuery, m: int, modulus: FieldModulus | int, rng) -> ShareBundle:
    modulus = as_modulus(modulus)
    return ShareBundle(share_array(np.uint64(query(x)), m, modulus, rng), modulus)


def encode_clients(bits, m: int, modulus: FieldModulus | int, rng) -> np.ndarray:
    """Shares for a whole population at once; returns shape ``(m, *bits.shape)``."""
    return share_array(np.asarray(bits, dtype=np.uint64), m, modulus, rng)


def aggregator_accumulate(shares, modulus: FieldModulus | int, n: int | None = None) -> FieldElement:
    """Sum of one aggregator's shares.

    ``shares`` is either an array (one entry per client) or an iterable of
    ``(client_id, share)`` pairs; the latter is checked for duplicate and,
    when ``n`` is given, missing clients (ids ``1..n``).
    """
    modulus = as_modulus(modulus)
    if isinstance(shares, np.ndarray):
        if n is not None and shares.shape[-1] != n:
            raise ValueError(f"expected {n} client shares, got {shares.shape[-1]}")
        return FieldElement(sum_mod(shares, modulus.p), modulus)
    seen: dict[int, int] = {}
    for client, value in shares:
        if client in seen:
            raise ValueError(f"duplicate share from client {client}")
        seen[client] = int(value)
    if n is not None:
        missing = set(range(1, n + 1)) - seen.keys()
        if missing:
            raise ValueError(f"missing shares from clients {sorted(missing)[:5]}")
    return FieldElement(sum(seen.values()) % modulus.p, modulus)


def noisy_release(values, sigma, p: int, rng) -> np.ndarray:
    """``values + eta mod p`` with independent discrete Gaussian ``eta`` per entry."""
    values = np.asarray(values, dtype=np.uint64)
    if sigma is None:
        return values.copy()
    eta = sample_discrete_gaussian(sigma, rng, size=values.shape)
    return add_arrays(values, from_signed(eta, p), p)


def aggregator_release(v: FieldElement, sigma, rng, aggregator: int = 1) -> NoisyAggregate:
    if sigma is not None and float(sigma) <= 0:
        raise ValueError("sigma must be positive")
    out = noisy_release(np.uint64(v.value), sigma, v.modulus.p, rng)
    return NoisyAggregate(aggregator, FieldElement(int(out), v.modulus))


def combine(aggregates: Iterable[NoisyAggregate], n: int, modulus: FieldModulus | int, m: int | None = None) -> float:
    """``centered_lift(sum_j V_j mod p) / n``."""
    modulus = as_modulus(modulus)
    aggregates = list(aggregates)
    if m is not None:
        have = {a.aggregator for a in aggregates}
        missing = set(range(1, m + 1)) - have
        if missing or len(aggregates) != m:
            raise ValueError(f"missing aggregates from {sorted(missing)}")
    if not aggregates:
        raise ValueError("no aggregates to combine")
    total = sum(a.value.value for a in aggregates) % modulus.p
    if n < 1:
        raise ValueError("n must be positive")
    return FieldElement(total, modulus).lift() / n


def predicted_std(m: int, sigma: float, n: int) -> float:
    return math.sqrt(m) * float(sigma) / n


@dataclass
class CountingResult:
    estimate: float
    aggregates: list
    budget: PrivacyBudget | None
    predicted_std: float


def run_counting(
    data,
    query: CountingQuery,
    m: int,
    sigma,
    rng,
    modulus: FieldModulus | int = DEFAULT_MODULUS,
    delta: float = 1e-6,
) -> CountingResult:
    """One end-to-end protocol run without message recording (see transport for that)."""
    modulus = as_modulus(modulus)
    bits = query.evaluate(data)
    n = bits.size
    shares = encode_clients(bits, m, modulus, rng)
    aggs = []
    for j in range(m):
        v = aggregator_accumulate(shares[j], modulus)
        aggs.append(aggregator_release(v, sigma, rng, aggregator=j + 1))
    budget = PrivacyBudget.from_sigma(sigma, delta) if sigma is not None else None
    return CountingResult(
        estimate=combine(aggs, n, modulus, m),
        aggregates=aggs,
        budget=budget,
        predicted_std=predicted_std(m, sigma or 0.0, n),
    )


def simulate_counting(bits, m: int, sigma, rng, trials: int, modulus: FieldModulus | int = DEFAULT_MODULUS,
                      chunk: int = 256) -> np.ndarray:
    """Estimates from ``trials`` independent protocol runs on the same data.

    Each run reshares every client bit and draws fresh noise; runs are
    processed in chunks so memory stays bounded.
    """
    modulus = as_modulus(modulus)
    p = modulus.p
    bits = np.asarray(bits, dtype=np.uint64)
    n = bits.size
    out = np.empty(trials, dtype=np.float64)
    for start in range(0, trials, chunk):
        r = min(chunk, trials - start)
        batch = np.broadcast_to(bits, (r, n))
        shares = share_array(batch, m, modulus, rng)  # (m, r, n)
        sums = sum_mod(shares, p, axis=2)  # (m, r)
        released = noisy_release(sums, sigma, p, rng)
        total = sum_mod(released, p, axis=0)
        out[start:start + r] = lift_array(total, p) / n
    return out
