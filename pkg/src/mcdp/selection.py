"""Distributed report-noisy-max.

Clients share their answer vector ``(q_1(x_i), ..., q_k(x_i))``. Each
aggregator sums its shares per query and adds its own discrete Laplace noise
of scale ``2 / epsilon`` to every coordinate. The argmax of the summed totals
is computed by :class:`IdealArgmax`, a stand-in for a secure computation that
sees every aggregator's totals and releases nothing but the winning index.

The privacy guarantee is accounted from one honest aggregator's noise alone;
the utility reflects the sum of all m aggregators' noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .counting import CountingQuery
from .field import DEFAULT_MODULUS, FieldModulus, add_arrays, as_modulus, from_signed, lift_array, sum_mod
from .noise import as_fraction, sample_discrete_laplace
from .sharing import ShareBundle, share_array


@dataclass(frozen=True)
class SelectionInstance:
    queries: Sequence[CountingQuery]
    epsilon: float
    m: int
    modulus: FieldModulus = DEFAULT_MODULUS

    def __post_init__(self):
        if len(self.queries) < 1:
            raise ValueError("selection needs at least one query")
        if self.m < 1:
            raise ValueError("need at least one aggregator")
        object.__setattr__(self, "modulus", as_modulus(self.modulus))

    @property
    def k(self) -> int:
        return len(self.queries)

    def answers(self, data) -> np.ndarray:
        """``(n, k)`` 0/1 matrix of every client's answers."""
        return np.array([[q(x) for q in self.queries] for x in data], dtype=np.uint64).reshape(-1, self.k)


@dataclass(frozen=True)
class NoisyTotals:
    aggregator: int
    values: np.ndarray


def laplace_scale(epsilon) -> Fraction:
    """``2 * sensitivity / epsilon`` with sensitivity 1."""
    epsilon = as_fraction(epsilon)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return 2 / epsilon


def client_encode_selection(x, instance: SelectionInstance, rng) -> ShareBundle:
    vec = np.array([q(x) for q in instance.queries], dtype=np.uint64)
    return ShareBundle(share_array(vec, instance.m, instance.modulus, rng), instance.modulus)


def aggregator_noisy_totals(shares, epsilon, rng, modulus: FieldModulus | int = DEFAULT_MODULUS,
                            aggregator: int = 1) -> NoisyTotals:
    """``shares`` is this aggregator's ``(n, k)`` share matrix (or ``(..., n, k)``).

    ``epsilon=None`` disables noise (test hook).
    """
    p = as_modulus(modulus).p
    shares = np.asarray(shares, dtype=np.uint64)
    totals = sum_mod(shares, p, axis=-2)
    totals = np.asarray(totals, dtype=np.uint64)
    if epsilon is not None:
        xi = sample_discrete_laplace(laplace_scale(epsilon), rng, size=totals.shape)
        totals = add_arrays(totals, from_signed(xi, p), p)
    return NoisyTotals(aggregator, totals)


class IdealArgmax:
    """Trusted evaluator for ``argmax_l centered_lift(sum_j h_{j,l} mod p)``.

    Holds the received totals privately; ``release`` returns only the index.
    Ties go to the lowest index.
    """

    def __init__(self, m: int, modulus: FieldModulus | int):
        self.m = m
        self.modulus = as_modulus(modulus)
        self._inbox: dict[int, np.ndarray] = {}

    def receive(self, totals: NoisyTotals):
        if totals.aggregator in self._inbox:
            raise ValueError(f"aggregator {totals.aggregator} already submitted")
        self._inbox[totals.aggregator] = np.asarray(totals.values, dtype=np.uint64)

    def release(self):
        missing = set(range(1, self.m + 1)) - self._inbox.keys()
        if missing:
            raise ValueError(f"missing totals from aggregators {sorted(missing)}")
        p = self.modulus.p
        stack = np.stack([self._inbox[j] for j in range(1, self.m + 1)])
        lifted = lift_array(sum_mod(stack, p, axis=0), p)
        self._inbox.clear()
        winner = np.argmax(lifted, axis=-1)
        return int(winner) if winner.ndim == 0 else winner


def ideal_argmax(totals: Sequence[NoisyTotals], modulus: FieldModulus | int, m: int | None = None):
    evaluator = IdealArgmax(len(totals) if m is None else m, modulus)
    for t in totals:
        evaluator.receive(t)
    return evaluator.release()


@dataclass
class SelectionResult:
    selected_index: int
    epsilon_accounted: float | None
    k: int
    m: int
    n: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def run_selection(instance: SelectionInstance, dataset, rng) -> SelectionResult:
    answers = instance.answers(dataset)
    n = answers.shape[0]
    shares = share_array(answers, instance.m, instance.modulus, rng)  # (m, n, k)
    totals = [
        aggregator_noisy_totals(shares[j], instance.epsilon, rng, instance.modulus, aggregator=j + 1)
        for j in range(instance.m)
    ]
    index = ideal_argmax(totals, instance.modulus, instance.m)
    eps = None if instance.epsilon is None else float(instance.epsilon)
    return SelectionResult(index, eps, instance.k, instance.m, n)


def simulate_selection(answers, m: int, epsilon, rng, trials: int,
                       modulus: FieldModulus | int = DEFAULT_MODULUS, chunk: int = 500) -> np.ndarray:
    """Winning indices of ``trials`` independent full pipeline runs on the same data."""
    modulus = as_modulus(modulus)
    answers = np.asarray(answers, dtype=np.uint64)
    out = np.empty(trials, dtype=np.int64)
    for start in range(0, trials, chunk):
        r = min(chunk, trials - start)
        batch = np.broadcast_to(answers, (r,) + answers.shape)
        shares = share_array(batch, m, modulus, rng)  # (m, r, n, k)
        totals = [aggregator_noisy_totals(shares[j], epsilon, rng, modulus, aggregator=j + 1) for j in range(m)]
        out[start:start + r] = ideal_argmax(totals, modulus, m)
    return out
