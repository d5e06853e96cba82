"""Arithmetic in Z_p.

Scalars are wrapped in :class:`FieldElement`; bulk data (one share per client,
one coordinate per sketch row, ...) lives in ``np.uint64`` arrays whose entries
are canonical residues in ``[0, p)``. Every array helper here is exact for any
``p < 2**64``: nothing ever overflows and nothing passes through floating point.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import sympy

#: Largest prime below 2**62.
DEFAULT_PRIME = 4611686018427387847  # 2**62 - 57

# ten-sigma tail margin times a safety factor of 8
TAIL_SIGMAS = 10
SAFETY_FACTOR = 8

_U64 = np.uint64
_LO_MASK = _U64(0xFFFFFFFF)


class ModulusMismatch(ValueError):
    pass


@dataclass(frozen=True)
class FieldModulus:
    p: int

    def __post_init__(self):
        p = int(self.p)
        if p <= 2 or p >= 2**64:
            raise ValueError(f"modulus must be an odd prime below 2**64, got {p}")
        if not sympy.isprime(p):
            raise ValueError(f"modulus {p} is not prime")
        object.__setattr__(self, "p", p)

    @property
    def half(self) -> int:
        return (self.p - 1) // 2

    def __call__(self, value: int) -> "FieldElement":
        return FieldElement(int(value) % self.p, self)

    def __int__(self) -> int:
        return self.p


DEFAULT_MODULUS = FieldModulus(DEFAULT_PRIME)


def as_modulus(modulus: FieldModulus | int) -> FieldModulus:
    if isinstance(modulus, FieldModulus):
        return modulus
    return FieldModulus(int(modulus))


def required_modulus_bound(n: int, m: int, sigma: float) -> float:
    """Smallest modulus the configuration rule accepts: ``8 * (n + m * sigma * 10)``."""
    return SAFETY_FACTOR * (n + m * float(sigma) * TAIL_SIGMAS)


def validate_modulus(modulus: FieldModulus | int, n: int, m: int, sigma: float) -> FieldModulus:
    """Check that sums of ``n`` bits plus ``m`` noise draws cannot plausibly wrap.

    Raises ValueError when ``p <= 8 * (n + 10 * m * sigma)``.
    """
    modulus = as_modulus(modulus)
    bound = required_modulus_bound(n, m, sigma)
    if modulus.p <= bound:
        raise ValueError(
            f"modulus {modulus.p} too small for n={n}, m={m}, sigma={sigma}; "
            f"need p > {bound:g}"
        )
    return modulus


@dataclass(frozen=True)
class FieldElement:
    value: int
    modulus: FieldModulus

    def __post_init__(self):
        if not 0 <= self.value < self.modulus.p:
            raise ValueError(f"{self.value} is not a canonical residue mod {self.modulus.p}")

    def _check(self, other: "FieldElement"):
        if not isinstance(other, FieldElement):
            raise TypeError(f"expected FieldElement, got {type(other).__name__}")
        if other.modulus.p != self.modulus.p:
            raise ModulusMismatch(f"mod {self.modulus.p} vs mod {other.modulus.p}")

    def __add__(self, other):
        self._check(other)
        return FieldElement((self.value + other.value) % self.modulus.p, self.modulus)

    def __sub__(self, other):
        self._check(other)
        return FieldElement((self.value - other.value) % self.modulus.p, self.modulus)

    def __neg__(self):
        return FieldElement((-self.value) % self.modulus.p, self.modulus)

    def lift(self) -> int:
        return centered_lift(self)

    def __int__(self) -> int:
        return self.value

    def to_bytes(self) -> bytes:
        return struct.pack("<Q", self.value)

    @classmethod
    def from_bytes(cls, data: bytes, modulus: FieldModulus) -> "FieldElement":
        (value,) = struct.unpack("<Q", data)
        return cls(value, modulus)


def add(a: FieldElement, b: FieldElement) -> FieldElement:
    return a + b


def sub(a: FieldElement, b: FieldElement) -> FieldElement:
    return a - b


def neg(a: FieldElement) -> FieldElement:
    return -a


def centered_lift(a: FieldElement) -> int:
    """Representative of ``a`` in ``[-(p-1)/2, (p-1)/2]``."""
    p = a.modulus.p
    return a.value - p if a.value > (p - 1) // 2 else a.value


def sample_uniform(modulus: FieldModulus | int, rng: np.random.Generator, size=None):
    """Exactly uniform residues mod p.

    Draws raw 64-bit words, masks them to ``bit_length(p)`` bits and rejects
    anything ``>= p``, so no modulo bias. Returns a :class:`FieldElement` when
    ``size`` is None, else a ``uint64`` array of that shape.
    """
    modulus = as_modulus(modulus)
    p = modulus.p
    count = 1 if size is None else int(np.prod(size, dtype=np.int64))
    out = _uniform_u64(p, count, rng)
    if size is None:
        return FieldElement(int(out[0]), modulus)
    return out.reshape(size)


def _uniform_u64(p: int, count: int, rng: np.random.Generator) -> np.ndarray:
    bits = (p - 1).bit_length()
    mask = _U64((1 << bits) - 1)
    out = np.empty(count, dtype=_U64)
    filled = 0
    while filled < count:
        need = count - filled
        # acceptance rate is > 1/2, so ask for a little extra up front
        raw = rng.bit_generator.random_raw(need + need // 2 + 8).astype(_U64) & mask
        raw = raw[raw < _U64(p)][:need]
        out[filled:filled + raw.size] = raw
        filled += raw.size
    return out


# ---------------------------------------------------------------- array helpers


def add_arrays(a, b, p: int) -> np.ndarray:
    a = np.asarray(a, dtype=_U64)
    b = np.asarray(b, dtype=_U64)
    gap = _U64(p) - b
    return np.where(a >= gap, a - gap, a + b)


def neg_array(a, p: int) -> np.ndarray:
    a = np.asarray(a, dtype=_U64)
    return np.where(a == 0, a, _U64(p) - a)


def sub_arrays(a, b, p: int) -> np.ndarray:
    return add_arrays(a, neg_array(b, p), p)


def sum_mod(a, p: int, axis=None):
    """Exact modular sum along ``axis``.

    Short axes are folded with :func:`add_arrays`. Long ones are split into
    32-bit halves so the partial sums cannot overflow for fewer than 2**32
    summands.
    """
    a = np.asarray(a, dtype=_U64)
    if axis is not None and a.ndim and a.shape[axis] <= 16:
        parts = np.moveaxis(a, axis, 0)
        if parts.shape[0] == 0:
            return np.zeros(parts.shape[1:], dtype=_U64)
        out = parts[0]
        for part in parts[1:]:
            out = add_arrays(out, part, p)
        return out if out.ndim else int(out)
    lo = (a & _LO_MASK).sum(axis=axis, dtype=_U64)
    hi = (a >> _U64(32)).sum(axis=axis, dtype=_U64)
    if np.ndim(lo) == 0:
        return int((int(hi) << 32) + int(lo)) % p
    p64 = _U64(p)
    return add_arrays(mul_pow2_32(hi % p64, p), lo % p64, p)


def mul_pow2_32(a, p: int) -> np.ndarray:
    """``a * 2**32 mod p`` for residues ``a``.

    Shifts by as many bits as the headroom above ``p`` allows, reducing after
    each shift.
    """
    out = np.asarray(a, dtype=_U64)
    step = 64 - p.bit_length()
    if step == 0:
        for _ in range(32):
            out = add_arrays(out, out, p)
        return out
    p64 = _U64(p)
    done = 0
    while done < 32:
        s = min(step, 32 - done)
        out = (out << _U64(s)) % p64
        done += s
    return out


def from_signed(z, p: int) -> np.ndarray:
    """Map signed integers (int64) to canonical residues."""
    z = np.asarray(z, dtype=np.int64)
    mag = np.abs(z).astype(_U64) % _U64(p)
    return np.where(z < 0, neg_array(mag, p), mag)


def lift_array(a, p: int) -> np.ndarray:
    """Vectorised :func:`centered_lift`; returns int64."""
    a = np.asarray(a, dtype=_U64)
    half = _U64((p - 1) // 2)
    neg = -((_U64(p) - a).astype(np.int64))
    return np.where(a > half, neg, a.astype(np.int64))


def encode_elements(values) -> bytes:
    """8-byte little-endian words, one per element."""
    return np.ascontiguousarray(values, dtype="<u8").tobytes()


def decode_elements(data: bytes, p: int | None = None) -> np.ndarray:
    if len(data) % 8:
        raise ValueError(f"payload length {len(data)} is not a multiple of 8")
    out = np.frombuffer(data, dtype="<u8").astype(_U64)
    if p is not None and out.size and out.max() >= p:
        raise ValueError(f"element out of range for modulus {p}")
    return out
