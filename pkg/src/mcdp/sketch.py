"""Private frequency oracle built from a shared-seed sign sketch.

Every party derives the same ``ell`` row hashes from a public seed. A client
holding ``x`` secret-shares the column ``phi(x) in {+1, -1}^ell``; each
aggregator sums its shares and adds discrete Gaussian noise to every
coordinate; the frequency of ``y`` is then read off as
``<S, phi(y)> / (n * ell)`` where ``S`` is the combined noisy sketch.

Noise calibration. Replacing one client's datum changes the summed sketch by
``phi(x) - phi(x')``, whose L2 norm is at most ``2 * sqrt(ell)``. With
per-coordinate noise ``sigma_coord = sqrt(ell) * sigma0`` from one honest
aggregator, the release is ``rho``-zCDP with ``rho = 2 / sigma0**2``. The
noise contributes ``sqrt(m) * sigma0 / n`` of standard error to each
frequency estimate, independent of ``ell``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .field import (
    DEFAULT_MODULUS,
    FieldModulus,
    as_modulus,
    from_signed,
    lift_array,
    sum_mod,
)
from .noise import PrivacyBudget, rho_from_sigma
from .counting import noisy_release
from .sharing import ShareBundle, share_array

HASH_PRIME = 2**31 - 1
MAX_DOMAIN_BITS = 30
MAX_SCAN_BITS = 24


@dataclass(frozen=True)
class SketchParams:
    ell: int
    domain_bits: int
    seed: int
    coeffs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.ell < 1:
            raise ValueError("sketch length must be at least 1")
        if not 1 <= self.domain_bits <= MAX_DOMAIN_BITS:
            raise ValueError(f"domain_bits must be in [1, {MAX_DOMAIN_BITS}]")
        # degree-3 polynomials over Z_P: a 4-wise independent family per row
        gen = np.random.default_rng([int(self.seed), 0x534B])
        coeffs = gen.integers(0, HASH_PRIME, size=(self.ell, 4), dtype=np.int64).astype(np.uint64)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def domain_size(self) -> int:
        return 1 << self.domain_bits

    def check(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.int64)
        if xs.size and (xs.min() < 0 or xs.max() >= self.domain_size):
            bad = xs[(xs < 0) | (xs >= self.domain_size)][0]
            raise ValueError(f"element {bad} outside domain [0, {self.domain_size})")
        return xs


@dataclass(frozen=True)
class SketchVector:
    aggregator: int
    coords: np.ndarray

    def __len__(self) -> int:
        return self.coords.shape[-1]


def sign_matrix(xs, params: SketchParams) -> np.ndarray:
    """``(len(xs), ell)`` int8 matrix whose row ``i`` is ``phi(xs[i])``."""
    xs = params.check(np.atleast_1d(xs)).astype(np.uint64)[:, None]
    P = np.uint64(HASH_PRIME)
    a = params.coeffs
    h = a[:, 3][None, :].repeat(xs.shape[0], axis=0)
    for c in (2, 1, 0):
        h = (h * xs + a[:, c][None, :]) % P
    return (1 - 2 * (h & np.uint64(1)).astype(np.int8)).astype(np.int8)


def sketch_column(x: int, params: SketchParams) -> np.ndarray:
    return sign_matrix([x], params)[0]


def client_encode_sketch(x: int, params: SketchParams, m: int, modulus: FieldModulus | int, rng) -> ShareBundle:
    modulus = as_modulus(modulus)
    col = from_signed(sketch_column(x, params).astype(np.int64), modulus.p)
    return ShareBundle(share_array(col, m, modulus, rng), modulus)


def accumulate_sketches(data, params: SketchParams, m: int, modulus: FieldModulus | int, rng,
                        chunk: int = 2048) -> np.ndarray:
    """Per-aggregator share sums for a whole population, shape ``(m, ell)``.

    Clients are encoded in chunks and folded in immediately, so no more than
    ``chunk`` clients' shares are alive at once.
    """
    modulus = as_modulus(modulus)
    p = modulus.p
    data = params.check(data)
    acc = np.zeros((m, params.ell), dtype=np.uint64)
    for start in range(0, data.size, chunk):
        cols = from_signed(sign_matrix(data[start:start + chunk], params).astype(np.int64), p)
        shares = share_array(cols, m, modulus, rng)  # (m, c, ell)
        part = sum_mod(shares, p, axis=1)
        acc = sum_mod(np.stack([acc, part]), p, axis=0)
    return acc


def coord_sigma(ell: int, sigma0: float) -> float:
    return math.sqrt(ell) * float(sigma0)


def aggregator_release_sketch(share_sum, sigma_coord, rng, modulus: FieldModulus | int = DEFAULT_MODULUS,
                              aggregator: int = 1) -> SketchVector:
    """Add independent discrete Gaussian noise of scale ``sigma_coord`` to every coordinate."""
    modulus = as_modulus(modulus)
    if sigma_coord is not None and float(sigma_coord) <= 0:
        raise ValueError("sigma_coord must be positive")
    return SketchVector(aggregator, noisy_release(share_sum, sigma_coord, modulus.p, rng))


def combine_sketches(sketches, modulus: FieldModulus | int, m: int | None = None) -> np.ndarray:
    """Signed combined sketch ``centered_lift(sum_j S_j mod p)``."""
    modulus = as_modulus(modulus)
    sketches = list(sketches)
    if not sketches:
        raise ValueError("no sketches to combine")
    if m is not None:
        missing = set(range(1, m + 1)) - {s.aggregator for s in sketches}
        if missing:
            raise ValueError(f"missing sketches from aggregators {sorted(missing)}")
    stack = np.stack([s.coords for s in sketches])
    return lift_array(sum_mod(stack, modulus.p, axis=0), modulus.p)


def estimate_from_combined(combined: np.ndarray, ys, params: SketchParams, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be positive")
    signs = sign_matrix(ys, params).astype(np.int64)
    return (signs @ combined.astype(np.int64)) / (n * params.ell)


def estimate_frequency(sketches, y: int, params: SketchParams, n: int,
                       modulus: FieldModulus | int = DEFAULT_MODULUS, m: int | None = None) -> float:
    combined = combine_sketches(sketches, modulus, m)
    return float(estimate_from_combined(combined, [y], params, n)[0])


def heavy_hitters(sketches, tau: float, params: SketchParams, n: int, candidates=None,
                  modulus: FieldModulus | int = DEFAULT_MODULUS, m: int | None = None) -> list[tuple[int, float]]:
    """Candidates whose estimated frequency is at least ``tau``, most frequent first."""
    if n < 1:
        raise ValueError("heavy hitters need at least one client")
    if candidates is None:
        if params.domain_bits > MAX_SCAN_BITS:
            raise ValueError(f"domain of 2**{params.domain_bits} too large to scan; pass candidates")
        candidates = np.arange(params.domain_size)
    candidates = np.asarray(candidates, dtype=np.int64)
    combined = combine_sketches(sketches, modulus, m)
    freqs = np.empty(candidates.size)
    for start in range(0, candidates.size, 4096):
        freqs[start:start + 4096] = estimate_from_combined(combined, candidates[start:start + 4096], params, n)
    keep = np.flatnonzero(freqs >= tau)
    order = keep[np.lexsort((candidates[keep], -freqs[keep]))]
    return [(int(candidates[i]), float(freqs[i])) for i in order]


def sketch_budget(sigma0: float, delta: float) -> PrivacyBudget:
    """Replacement-neighbour zCDP of one honest aggregator's noisy sketch."""
    rho = rho_from_sigma(sigma0, sensitivity=2.0)
    return PrivacyBudget.from_rho(rho, delta)


def run_frequency_oracle(data, params: SketchParams, m: int, sigma0, rng,
                         modulus: FieldModulus | int = DEFAULT_MODULUS) -> tuple[list[SketchVector], np.ndarray]:
    """Encode, accumulate and release; returns the m releases and the combined sketch."""
    modulus = as_modulus(modulus)
    sums = accumulate_sketches(data, params, m, modulus, rng)
    sc = None if sigma0 is None else coord_sigma(params.ell, sigma0)
    releases = [aggregator_release_sketch(sums[j], sc, rng, modulus, aggregator=j + 1) for j in range(m)]
    return releases, combine_sketches(releases, modulus, m)
