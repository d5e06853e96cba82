from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from mcdp import sharing
from mcdp.field import DEFAULT_MODULUS, FieldElement, FieldModulus, ModulusMismatch

P101 = FieldModulus(101)


def test_m1_share_is_secret(rng):
    b = sharing.share(FieldElement(42, P101), 1, rng)
    assert b.m == 1 and b[0].value == 42


def test_regression_bundle_secret_zero():
    b = sharing.share(FieldElement(0, DEFAULT_MODULUS), 3, np.random.default_rng(7))
    assert b.shares.tolist() == [2307604057237572235, 2715615310603774613, 4200152669013428846]
    assert sharing.reconstruct(b).value == 0


def test_zero_vector(rng):
    for m in (1, 2, 5):
        b = sharing.share_vector(np.zeros(6, dtype=np.uint64), m, rng, modulus=P101)
        assert sharing.reconstruct(b).tolist() == [0] * 6


def test_reconstruct_examples():
    els = [FieldElement(v, P101) for v in (40, 25, 37)]
    assert sharing.reconstruct(els).value == 1
    assert sharing.reconstruct([FieldElement(17, P101)]).value == 17
    assert sharing.reconstruct([FieldElement(3, P101), FieldElement(97, P101)]).value == 100


def test_errors(rng):
    with pytest.raises(ValueError):
        sharing.share(FieldElement(1, P101), 0, rng)
    with pytest.raises(ValueError):
        sharing.reconstruct([])
    with pytest.raises(ValueError):
        sharing.reconstruct([FieldElement(1, P101), None])
    with pytest.raises(ModulusMismatch):
        sharing.share_vector([FieldElement(1, P101), FieldElement(1, FieldModulus(103))], 2, rng)
    with pytest.raises(ValueError):
        sharing.share_array(np.array([101]), 2, 101, rng)


@given(st.lists(st.integers(0, 2**62 - 58), min_size=1, max_size=12), st.integers(1, 6), st.integers(0, 2**32))
def test_vector_roundtrip(secret, m, seed):
    b = sharing.share_vector(np.array(secret, dtype=np.uint64), m, np.random.default_rng(seed), DEFAULT_MODULUS)
    assert b.shares.shape == (m, len(secret))
    assert sharing.reconstruct(b).tolist() == secret


@given(st.integers(0, 100), st.integers(1, 5), st.integers(0, 2**32))
def test_scalar_roundtrip(secret, m, seed):
    b = sharing.share(FieldElement(secret, P101), m, np.random.default_rng(seed))
    assert sharing.reconstruct(b).value == secret
    assert sharing.reconstruct([b[j] for j in range(m)]).value == secret


def test_any_m_minus_1_rows_uniform(rng):
    # every (m-1)-subset, not only the first m-1 rows that are sampled directly
    p, m, trials = 17, 3, 60000
    for secret in (0, 9):
        sh = sharing.share_array(np.full(trials, secret, dtype=np.uint64), m, p, rng).astype(np.int64)
        for drop in range(m):
            keep = [r for r in range(m) if r != drop]
            cells = sh[keep[0]] * p + sh[keep[1]]
            counts = np.bincount(cells, minlength=p * p)
            assert stats.chisquare(counts).pvalue > 1e-4


def test_wire_roundtrip():
    row = np.array([1, 2, 100], dtype=np.uint64)
    payload = sharing.encode_bundle_row(3, 77, row)
    assert len(payload) == sharing.BUNDLE_HEADER.size + 24
    pid, cid, vec = sharing.decode_bundle_row(payload, 101)
    assert (pid, cid, vec.tolist()) == (3, 77, [1, 2, 100])
    with pytest.raises(ValueError):
        sharing.decode_bundle_row(payload[:-1], 101)
    with pytest.raises(ValueError):
        sharing.decode_bundle_row(payload, 17)
