"""Additive m-out-of-m secret sharing over Z_p."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .field import (
    FieldElement,
    FieldModulus,
    ModulusMismatch,
    as_modulus,
    decode_elements,
    encode_elements,
    sample_uniform,
    sub_arrays,
    sum_mod,
)

# protocol id (1 byte) | client id (4 bytes) | vector length (4 bytes)
BUNDLE_HEADER = struct.Struct("<BII")


@dataclass(frozen=True)
class ShareBundle:
    """Shares of one secret (scalar or vector), row ``j`` destined for aggregator ``j``.

    ``shares`` has shape ``(m,)`` for a scalar secret and ``(m, k)`` for a
    length-``k`` vector.
    """

    shares: np.ndarray
    modulus: FieldModulus

    @property
    def m(self) -> int:
        return self.shares.shape[0]

    @property
    def is_vector(self) -> bool:
        return self.shares.ndim > 1

    def __getitem__(self, j: int):
        row = self.shares[j]
        if self.is_vector:
            return row
        return FieldElement(int(row), self.modulus)

    def __len__(self) -> int:
        return self.m


def share_array(values, m: int, modulus: FieldModulus | int, rng: np.random.Generator) -> np.ndarray:
    """Share every entry of ``values`` independently.

    Returns a ``uint64`` array of shape ``(m, *values.shape)``: the first
    ``m - 1`` rows are fresh uniform residues, the last row closes the sum.
    """
    if m < 1:
        raise ValueError("need at least one aggregator")
    modulus = as_modulus(modulus)
    p = modulus.p
    values = np.asarray(values, dtype=np.uint64)
    if values.size and values.max() >= p:
        raise ValueError(f"secret out of range for modulus {p}")
    out = np.empty((m,) + values.shape, dtype=np.uint64)
    if m > 1:
        out[:-1] = sample_uniform(modulus, rng, size=(m - 1,) + values.shape)
        out[-1] = sub_arrays(values, sum_mod(out[:-1], p, axis=0), p)
    else:
        out[0] = values
    return out


def share(secret: FieldElement, m: int, rng: np.random.Generator) -> ShareBundle:
    if m < 1:
        raise ValueError("need at least one aggregator")
    shares = share_array(np.uint64(secret.value), m, secret.modulus, rng)
    return ShareBundle(shares, secret.modulus)


def share_vector(secret, m: int, rng: np.random.Generator, modulus: FieldModulus | int | None = None) -> ShareBundle:
    """Coordinate-wise sharing of a vector.

    ``secret`` is either a sequence of FieldElement or an integer array, in
    which case ``modulus`` is required.
    """
    if len(secret) == 0:
        raise ValueError("cannot share an empty vector")
    if modulus is None:
        if not isinstance(secret[0], FieldElement):
            raise ValueError("modulus is required for raw integer vectors")
        modulus = secret[0].modulus
    modulus = as_modulus(modulus)
    if isinstance(secret[0], FieldElement):
        if any(s.modulus.p != modulus.p for s in secret):
            raise ModulusMismatch("vector entries carry different moduli")
        values = np.array([s.value for s in secret], dtype=np.uint64)
    else:
        values = np.asarray(secret, dtype=np.uint64)
    return ShareBundle(share_array(values, m, modulus, rng), modulus)


def reconstruct(bundle: ShareBundle | list):
    """Sum all m shares. Returns a FieldElement for scalars, a uint64 array for vectors.

    Also accepts a list of FieldElement (one per aggregator).
    """
    if isinstance(bundle, ShareBundle):
        if bundle.m < 1:
            raise ValueError("missing shares")
        total = sum_mod(bundle.shares, bundle.modulus.p, axis=0)
        if bundle.is_vector:
            return total
        return FieldElement(int(total), bundle.modulus)
    shares = list(bundle)
    if not shares:
        raise ValueError("missing shares")
    out = shares[0]
    for s in shares[1:]:
        if s is None:
            raise ValueError("missing share")
        out = out + s
    return out


def encode_bundle_row(protocol_id: int, client_id: int, row) -> bytes:
    """Wire format of the share one client sends to one aggregator."""
    row = np.atleast_1d(np.asarray(row, dtype=np.uint64))
    return BUNDLE_HEADER.pack(protocol_id, client_id, row.size) + encode_elements(row)


def decode_bundle_row(payload: bytes, p: int | None = None) -> tuple[int, int, np.ndarray]:
    if len(payload) < BUNDLE_HEADER.size:
        raise ValueError("truncated share header")
    protocol_id, client_id, length = BUNDLE_HEADER.unpack_from(payload)
    body = payload[BUNDLE_HEADER.size:]
    if len(body) != 8 * length:
        raise ValueError(f"declared {length} elements, payload carries {len(body) / 8:g}")
    return protocol_id, client_id, decode_elements(body, p)
