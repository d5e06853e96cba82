"""Two-party distributed point functions and the protocols built on them.

The DPF is the GGM-tree construction of Boyle, Gilboa and Ishai: each party
holds a 128-bit root seed, expands it level by level with a length-doubling
PRG, and applies a public correction word whenever its control bit is set.
Off the path to ``alpha`` the two parties' seeds and control bits coincide and
their outputs cancel; on the path they differ and the final correction word
turns the leaf into an additive Z_p share of ``beta``.

Keys are generated and evaluated in batches (one row per client) so that a
population of clients costs a handful of AES calls per tree level.

The PRG is fixed-key AES in Matyas-Meyer-Oseas mode, ``G_i(s) = AES_{k_i}(s) xor s``
with public keys ``k_0, k_1`` for the two children and ``k_2`` for converting a
leaf seed to a field element. The lowest bit of each child seed serves as its
control bit and is cleared before the seed is used, so seeds carry 127
bits of entropy.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .field import (
    DEFAULT_MODULUS,
    FieldElement,
    FieldModulus,
    add_arrays,
    as_modulus,
    lift_array,
    mul_pow2_32,
    neg_array,
    sub_arrays,
    sum_mod,
)
from .counting import noisy_release
from .noise import PrivacyBudget, amplify_by_sampling, rho_from_sigma, zcdp_to_approx_dp

LAMBDA = 128
SEED_BYTES = LAMBDA // 8
KEY_VERSION = 1
MAX_DEPTH = 64
MAX_FULL_DEPTH = 24

_KEY_HEADER = struct.Struct("<BBB")
_PRG_KEYS = [bytes([0xA5 ^ i]) * 16 for i in range(3)]
_CIPHERS = [Cipher(algorithms.AES(k), modes.ECB()).encryptor() for k in _PRG_KEYS]


def _aes(which: int, seeds: np.ndarray) -> np.ndarray:
    flat = np.ascontiguousarray(seeds, dtype=np.uint8).reshape(-1, SEED_BYTES)
    out = np.frombuffer(_CIPHERS[which].update(flat.tobytes()), dtype=np.uint8)
    return out.reshape(flat.shape) ^ flat


def prg(seeds: np.ndarray):
    """Length-doubling PRG on an ``(N, 16)`` seed array.

    Returns ``(s_left, t_left, s_right, t_right)`` with control bits split off.
    """
    left = _aes(0, seeds)
    right = _aes(1, seeds)
    t_left = left[:, 0] & 1
    t_right = right[:, 0] & 1
    left[:, 0] &= 0xFE
    right[:, 0] &= 0xFE
    return left, t_left, right, t_right


def convert(seeds: np.ndarray, p: int) -> np.ndarray:
    """Map leaf seeds to Z_p via 128 pseudorandom bits reduced mod p."""
    block = _aes(2, seeds)
    words = block.view("<u8").reshape(-1, 2).astype(np.uint64)
    lo, hi = words[:, 0] % np.uint64(p), words[:, 1] % np.uint64(p)
    # hi * 2**64 + lo
    return add_arrays(mul_pow2_32(mul_pow2_32(hi, p), p), lo, p)


def _random_seeds(n: int, rng) -> np.ndarray:
    return rng.bit_generator.random_raw(2 * n).astype("<u8").view(np.uint8).reshape(n, SEED_BYTES).copy()


@dataclass(frozen=True)
class PointFunction:
    alpha: int
    beta: int


@dataclass
class DpfKeys:
    """One party's keys for a batch of point functions (row ``i`` = client ``i``)."""

    party: int
    depth: int
    root: np.ndarray  # (N, 16) uint8
    cw_seed: np.ndarray  # (N, depth, 16) uint8
    cw_t: np.ndarray  # (N, depth, 2) uint8: left / right control corrections
    final: np.ndarray  # (N,) uint64
    modulus: FieldModulus

    def __len__(self) -> int:
        return self.root.shape[0]

    def __getitem__(self, i: int) -> "DpfKey":
        return DpfKey(self.party, self.depth, self.root[i:i + 1], self.cw_seed[i:i + 1],
                      self.cw_t[i:i + 1], self.final[i:i + 1], self.modulus)


class DpfKey(DpfKeys):
    """A single key: a batch of one, plus the wire format."""

    def to_bytes(self) -> bytes:
        ctrl = (self.cw_t[0, :, 0] | (self.cw_t[0, :, 1] << 1)).astype(np.uint8)
        levels = np.concatenate([self.cw_seed[0], ctrl[:, None]], axis=1)
        return (
            _KEY_HEADER.pack(KEY_VERSION, self.party, self.depth)
            + self.root[0].tobytes()
            + levels.tobytes()
            + struct.pack("<Q", int(self.final[0]))
        )

    @classmethod
    def from_bytes(cls, data: bytes, modulus: FieldModulus | int = DEFAULT_MODULUS) -> "DpfKey":
        modulus = as_modulus(modulus)
        version, party, depth = _KEY_HEADER.unpack_from(data)
        if version != KEY_VERSION:
            raise ValueError(f"unsupported key version {version}")
        expected = _KEY_HEADER.size + SEED_BYTES + depth * (SEED_BYTES + 1) + 8
        if len(data) != expected:
            raise ValueError(f"key of depth {depth} must be {expected} bytes, got {len(data)}")
        off = _KEY_HEADER.size
        root = np.frombuffer(data, np.uint8, SEED_BYTES, off).reshape(1, SEED_BYTES).copy()
        off += SEED_BYTES
        levels = np.frombuffer(data, np.uint8, depth * (SEED_BYTES + 1), off).reshape(depth, SEED_BYTES + 1)
        off += depth * (SEED_BYTES + 1)
        (final,) = struct.unpack_from("<Q", data, off)
        if final >= modulus.p:
            raise ValueError("final correction word out of range")
        ctrl = levels[:, SEED_BYTES]
        cw_t = np.stack([ctrl & 1, (ctrl >> 1) & 1], axis=1)[None].astype(np.uint8)
        return cls(party, depth, root, levels[None, :, :SEED_BYTES].copy(), cw_t,
                   np.array([final], dtype=np.uint64), modulus)

    @property
    def size_bits(self) -> int:
        return 8 * len(self.to_bytes())


def _check_depth(depth: int):
    if not 1 <= depth <= MAX_DEPTH:
        raise ValueError(f"depth must be in [1, {MAX_DEPTH}], got {depth}")


def dpf_gen_batch(alphas, betas, depth: int, modulus: FieldModulus | int, rng, lam: int = LAMBDA):
    """Key pairs for ``len(alphas)`` point functions at once."""
    if lam != LAMBDA:
        raise ValueError(f"only lambda={LAMBDA} is supported")
    _check_depth(depth)
    modulus = as_modulus(modulus)
    p = modulus.p
    alphas = np.atleast_1d(np.asarray(alphas, dtype=object)).astype(object)
    if any(int(a) < 0 or int(a) >= (1 << depth) for a in alphas):
        raise ValueError(f"alpha out of range for depth {depth}")
    alphas = np.array([int(a) for a in alphas], dtype=np.uint64)
    betas = np.broadcast_to(np.asarray(betas, dtype=object), alphas.shape)
    betas = np.array([int(b) % p for b in betas], dtype=np.uint64)
    n = alphas.size

    roots = [_random_seeds(n, rng), _random_seeds(n, rng)]
    s = [roots[0].copy(), roots[1].copy()]
    t = [np.zeros(n, np.uint8), np.ones(n, np.uint8)]
    cw_seed = np.empty((n, depth, SEED_BYTES), np.uint8)
    cw_t = np.empty((n, depth, 2), np.uint8)
    for level in range(depth):
        bit = ((alphas >> np.uint64(depth - 1 - level)) & np.uint64(1)).astype(np.uint8)
        sl0, tl0, sr0, tr0 = prg(s[0])
        sl1, tl1, sr1, tr1 = prg(s[1])
        # the "lose" child is the one off alpha's path
        lose0 = np.where(bit[:, None] == 0, sr0, sl0)
        lose1 = np.where(bit[:, None] == 0, sr1, sl1)
        scw = lose0 ^ lose1
        tlcw = tl0 ^ tl1 ^ bit ^ 1
        trcw = tr0 ^ tr1 ^ bit
        cw_seed[:, level] = scw
        cw_t[:, level, 0] = tlcw
        cw_t[:, level, 1] = trcw
        tkeep_cw = np.where(bit == 0, tlcw, trcw)
        for b, (sl, tl, sr, tr) in enumerate(((sl0, tl0, sr0, tr0), (sl1, tl1, sr1, tr1))):
            keep_s = np.where(bit[:, None] == 0, sl, sr)
            keep_t = np.where(bit == 0, tl, tr)
            s[b] = keep_s ^ (scw * t[b][:, None])
            t[b] = keep_t ^ (tkeep_cw & t[b])
    c0, c1 = convert(s[0], p), convert(s[1], p)
    final = add_arrays(sub_arrays(betas, c0, p), c1, p)
    final = np.where(t[1] == 1, neg_array(final, p), final)
    keys = tuple(
        DpfKeys(b, depth, roots[b], cw_seed, cw_t, final.astype(np.uint64), modulus) for b in (0, 1)
    )
    return keys


def dpf_gen(f: PointFunction, depth: int, modulus: FieldModulus | int, rng, lam: int = LAMBDA):
    """Key pair for the point function ``x -> beta * [x == alpha]``."""
    k0, k1 = dpf_gen_batch([f.alpha], [f.beta], depth, modulus, rng, lam)
    return k0[0], k1[0]


def _leaf_outputs(keys: DpfKeys, seeds: np.ndarray, t: np.ndarray, rows: np.ndarray) -> np.ndarray:
    p = keys.modulus.p
    out = convert(seeds, p)
    out = np.where(t == 1, add_arrays(out, keys.final[rows], p), out)
    if keys.party == 1:
        out = neg_array(out, p)
    return out


def dpf_eval_batch(keys: DpfKeys, xs) -> np.ndarray:
    """Evaluate key ``i`` at ``xs[i]`` for every row of the batch."""
    depth = keys.depth
    xs = np.atleast_1d(np.asarray(xs, dtype=object))
    if any(int(x) < 0 or int(x) >= (1 << depth) for x in xs):
        raise ValueError(f"input out of range for depth {depth}")
    xs = np.array([int(x) for x in xs], dtype=np.uint64)
    n = len(keys)
    s = keys.root.copy()
    t = np.full(n, keys.party, np.uint8)
    for level in range(depth):
        bit = ((xs >> np.uint64(depth - 1 - level)) & np.uint64(1)).astype(np.uint8)
        sl, tl, sr, tr = prg(s)
        scw = keys.cw_seed[:, level] * t[:, None]
        child_s = np.where(bit[:, None] == 0, sl, sr) ^ scw
        child_t = np.where(bit == 0, tl ^ (keys.cw_t[:, level, 0] & t), tr ^ (keys.cw_t[:, level, 1] & t))
        s, t = child_s, child_t
    return _leaf_outputs(keys, s, t, np.arange(n))


def dpf_eval(key: DpfKeys, x: int) -> FieldElement:
    if len(key) != 1:
        raise ValueError("dpf_eval takes a single key")
    return FieldElement(int(dpf_eval_batch(key, [x])[0]), key.modulus)


def dpf_eval_full(keys: DpfKeys) -> np.ndarray:
    """Every key's share at every domain point: shape ``(N, 2**depth)``, or
    ``(2**depth,)`` for a single :class:`DpfKey`.

    Breadth-first expansion: one PRG call per tree node, all nodes of a level
    in one AES batch.
    """
    depth = keys.depth
    if depth > MAX_FULL_DEPTH:
        raise ValueError(f"full-domain evaluation limited to depth {MAX_FULL_DEPTH}")
    n = len(keys)
    s = keys.root.copy()  # (n * width, 16), rows grouped by key
    t = np.full(n, keys.party, np.uint8)
    width = 1
    for level in range(depth):
        sl, tl, sr, tr = prg(s)
        scw = np.repeat(keys.cw_seed[:, level], width, axis=0)
        ctl = np.repeat(keys.cw_t[:, level, 0], width)
        ctr = np.repeat(keys.cw_t[:, level, 1], width)
        sl ^= scw * t[:, None]
        sr ^= scw * t[:, None]
        tl = tl ^ (ctl & t)
        tr = tr ^ (ctr & t)
        s = np.stack([sl, sr], axis=1).reshape(-1, SEED_BYTES)
        t = np.stack([tl, tr], axis=1).reshape(-1)
        width *= 2
    rows = np.repeat(np.arange(n), width)
    out = _leaf_outputs(keys, s, t, rows).reshape(n, width)
    return out[0] if isinstance(keys, DpfKey) else out


def aggregate_full(keys: DpfKeys, chunk: int = 1 << 16) -> np.ndarray:
    """Sum of full-domain evaluations over every key in the batch."""
    p = keys.modulus.p
    width = 1 << keys.depth
    step = max(1, chunk // width)
    acc = np.zeros(width, np.uint64)
    for start in range(0, len(keys), step):
        part = dpf_eval_full(_slice(keys, start, start + step))
        part = part.reshape(-1, width)
        acc = sum_mod(np.vstack([acc[None], part]), p, axis=0)
    return acc


def stack_keys(keys: list[DpfKeys]) -> DpfKeys:
    """Concatenate same-party, same-depth keys into one batch."""
    if not keys:
        raise ValueError("no keys to stack")
    first = keys[0]
    if any(k.party != first.party or k.depth != first.depth for k in keys):
        raise ValueError("keys disagree on party or depth")
    return DpfKeys(first.party, first.depth, np.concatenate([k.root for k in keys]),
                   np.concatenate([k.cw_seed for k in keys]), np.concatenate([k.cw_t for k in keys]),
                   np.concatenate([k.final for k in keys]), first.modulus)


def _slice(keys: DpfKeys, a: int, b: int) -> DpfKeys:
    return DpfKeys(keys.party, keys.depth, keys.root[a:b], keys.cw_seed[a:b], keys.cw_t[a:b],
                   keys.final[a:b], keys.modulus)


# ------------------------------------------------------------------ thresholds


@dataclass(frozen=True)
class NoisyVector:
    aggregator: int
    values: np.ndarray


def threshold_keys(data, depth: int, modulus: FieldModulus | int, rng):
    """Every client's key pair for the point function at its own datum."""
    data = np.asarray(data, dtype=np.int64)
    if data.size and (data.min() < 0 or data.max() >= (1 << depth)):
        raise ValueError(f"datum outside domain [0, {1 << depth})")
    return dpf_gen_batch(data, 1, depth, modulus, rng)


def aggregator_histogram_release(keys: DpfKeys, sigma, rng, aggregator: int | None = None) -> NoisyVector:
    hist = aggregate_full(keys)
    released = noisy_release(hist, sigma, keys.modulus.p, rng)
    return NoisyVector(keys.party + 1 if aggregator is None else aggregator, released)


def combine_histogram(releases, modulus: FieldModulus | int) -> np.ndarray:
    modulus = as_modulus(modulus)
    releases = list(releases)
    if len(releases) != 2:
        raise ValueError(f"need both aggregators' releases, got {len(releases)}")
    return lift_array(sum_mod(np.stack([r.values for r in releases]), modulus.p, axis=0), modulus.p)


def cumulative_counts(releases, modulus: FieldModulus | int) -> np.ndarray:
    """``out[t]`` estimates ``#{i : x_i <= t}``."""
    return np.cumsum(combine_histogram(releases, modulus))


def threshold_counts(keys0: DpfKeys, keys1: DpfKeys, sigma, rng) -> np.ndarray:
    """Both aggregators' noisy histogram releases, combined and prefix-summed."""
    if keys0 is None or keys1 is None:
        raise ValueError("missing keys")
    if len(keys0) != len(keys1):
        raise ValueError("aggregators hold different numbers of client keys")
    rel = [aggregator_histogram_release(k, sigma, rng) for k in (keys0, keys1)]
    return cumulative_counts(rel, keys0.modulus)


def threshold_budget(sigma, delta: float) -> PrivacyBudget:
    """Replacing one datum moves two histogram cells by one: L2 sensitivity sqrt(2)."""
    rho = rho_from_sigma(sigma, sensitivity=2**0.5)
    return PrivacyBudget.from_rho(rho, delta)


# ------------------------------------------------------------- sampled queries


def query_depth(k: int) -> int:
    if k < 1:
        raise ValueError("need at least one query")
    return max(1, (k - 1).bit_length())


def sampled_query_encode(x, queries, modulus: FieldModulus | int, rng, lam: int = LAMBDA):
    """Pick one of ``k`` queries uniformly and share its answer as a DPF over ``[k]``."""
    k = len(queries)
    depth = query_depth(k)
    choice = int(rng.integers(0, k))
    beta = int(queries[choice](x))
    return dpf_gen(PointFunction(choice, beta), depth, modulus, rng, lam)


def sampled_encode_clients(answers, modulus: FieldModulus | int, rng):
    """Batch version: ``answers`` is the ``(n, k)`` 0/1 matrix of every client's
    answers to every query. Returns the two key batches."""
    answers = np.asarray(answers)
    n, k = answers.shape
    choice = rng.integers(0, k, size=n)
    beta = answers[np.arange(n), choice]
    return dpf_gen_batch(choice, beta, query_depth(k), modulus, rng)


def sampled_query_combine(releases, n: int, k: int, modulus: FieldModulus | int) -> np.ndarray:
    """Unbiased per-query means: ``k * (noisy count at l) / n``."""
    if n < 1:
        raise ValueError("n must be positive")
    hist = combine_histogram(releases, modulus)[:k]
    return k * hist / n


def sampled_budget(sigma, delta: float, k: int) -> dict:
    """Per-answer zCDP, its (eps, delta) conversion, and the amplified eps."""
    rho = rho_from_sigma(sigma)
    eps = zcdp_to_approx_dp(rho, delta)
    return {"rho": rho, "epsilon": eps, "delta": delta, "epsilon_amplified": amplify_by_sampling(eps, k), "k": k}
