from __future__ import annotations

import hashlib
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from mcdp import fss, noise
from mcdp.field import DEFAULT_MODULUS, FieldModulus, add_arrays

P = DEFAULT_MODULUS.p
P101 = FieldModulus(101)


def joint_full(k0, k1):
    return add_arrays(fss.dpf_eval_full(k0), fss.dpf_eval_full(k1), k0.modulus.p)


def test_depth4_example(rng):
    k0, k1 = fss.dpf_gen(fss.PointFunction(5, 1), 4, DEFAULT_MODULUS, rng)
    want = [0] * 16
    want[5] = 1
    assert [(fss.dpf_eval(k0, x) + fss.dpf_eval(k1, x)).value for x in range(16)] == want
    assert joint_full(k0, k1).tolist() == want


def test_beta_zero(rng):
    k0, k1 = fss.dpf_gen(fss.PointFunction(9, 0), 6, DEFAULT_MODULUS, rng)
    assert not joint_full(k0, k1).any()


def test_pinned_key_bytes():
    k0, k1 = fss.dpf_gen(fss.PointFunction(77, 1), 8, P101, np.random.default_rng(13))
    assert k0.to_bytes().hex().startswith("010008bc345de5e95f63ddffd3dad1091bf5da40")
    digest = hashlib.sha256(k0.to_bytes() + k1.to_bytes()).hexdigest()
    assert digest == "4802035f47d4be5d01ee007e653db3339c49de80cb89c6ad4d89de0bb0ea292d"


@settings(max_examples=25)
@given(st.integers(1, 12), st.data())
def test_correctness_property(depth, data):
    alpha = data.draw(st.integers(0, 2**depth - 1))
    beta = data.draw(st.integers(0, P - 1))
    seed = data.draw(st.integers(0, 2**32))
    k0, k1 = fss.dpf_gen(fss.PointFunction(alpha, beta), depth, DEFAULT_MODULUS, np.random.default_rng(seed))
    out = joint_full(k0, k1)
    assert int(out[alpha]) == beta
    assert np.count_nonzero(out) == (1 if beta else 0)


def test_eval_deterministic_and_consistent(rng):
    k0, _ = fss.dpf_gen(fss.PointFunction(300, 7), 10, DEFAULT_MODULUS, rng)
    full = fss.dpf_eval_full(k0)
    for x in rng.integers(0, 1024, 40):
        assert fss.dpf_eval(k0, int(x)).value == int(full[x]) == fss.dpf_eval(k0, int(x)).value


def test_serialization_roundtrip(rng):
    k0, k1 = fss.dpf_gen(fss.PointFunction(11, 3), 5, DEFAULT_MODULUS, rng)
    for k in (k0, k1):
        back = fss.DpfKey.from_bytes(k.to_bytes(), DEFAULT_MODULUS)
        assert back.to_bytes() == k.to_bytes()
        assert np.array_equal(fss.dpf_eval_full(back), fss.dpf_eval_full(k))
    raw = k0.to_bytes()
    with pytest.raises(ValueError):
        fss.DpfKey.from_bytes(raw[:-1])
    with pytest.raises(ValueError):
        fss.DpfKey.from_bytes(b"\x02" + raw[1:])


def test_errors(rng):
    with pytest.raises(ValueError):
        fss.dpf_gen(fss.PointFunction(16, 1), 4, DEFAULT_MODULUS, rng)
    with pytest.raises(ValueError):
        fss.dpf_gen(fss.PointFunction(1, 1), 4, DEFAULT_MODULUS, rng, lam=256)
    k0, _ = fss.dpf_gen(fss.PointFunction(1, 1), 4, DEFAULT_MODULUS, rng)
    with pytest.raises(ValueError):
        fss.dpf_eval(k0, 16)
    big, _ = fss.dpf_gen(fss.PointFunction(1, 1), 25, DEFAULT_MODULUS, rng)
    with pytest.raises(ValueError):
        fss.dpf_eval_full(big)
    assert fss.dpf_eval(big, 1).value < P


def test_full_eval_depth16_fast(rng):
    k0, k1 = fss.dpf_gen(fss.PointFunction(12345, 1), 16, DEFAULT_MODULUS, rng)
    start = time.perf_counter()
    out = joint_full(k0, k1)
    assert time.perf_counter() - start < 1.0
    assert int(out.sum()) == 1 and out[12345] == 1


def test_single_key_monobit(rng):
    k0, _ = fss.dpf_gen(fss.PointFunction(3, 1), 12, DEFAULT_MODULUS, rng)
    vals = np.delete(fss.dpf_eval_full(k0), 3)
    bits = np.unpackbits(vals.view(np.uint8), bitorder="little").reshape(-1, 64)[:, :56]  # low 56 bits only
    ones = bits.sum()
    z = (ones - bits.size / 2) / np.sqrt(bits.size / 4)
    assert abs(z) < 4
    assert stats.pearsonr(vals[:-1].astype(float), vals[1:].astype(float))[1] > 1e-3


def test_one_key_secrecy_anova():
    rng = np.random.default_rng(77)
    groups = []
    for alpha in rng.choice(256, size=100, replace=False):
        k0, _ = fss.dpf_gen(fss.PointFunction(int(alpha), 1), 8, DEFAULT_MODULUS, rng)
        groups.append(fss.dpf_eval_full(k0).astype(float) / P)
    assert stats.f_oneway(*groups).pvalue > 1e-3
    assert stats.levene(*groups).pvalue > 1e-3


def brute_cumulative(data, width):
    return np.cumsum(np.bincount(np.asarray(data, dtype=np.int64), minlength=width))


def test_threshold_example(rng):
    k0, k1 = fss.threshold_keys([3, 5, 5, 9], 4, DEFAULT_MODULUS, rng)
    cum = fss.threshold_counts(k0, k1, None, rng)
    assert cum[5] == 3 and cum[0] == 0 and cum[15] == 4 and cum[2] == 0


@settings(max_examples=40)
@given(st.integers(1, 6), st.data())
def test_threshold_noise_off_bruteforce(bits, data):
    xs = data.draw(st.lists(st.integers(0, 2**bits - 1), min_size=1, max_size=16))
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32)))
    k0, k1 = fss.threshold_keys(xs, bits, DEFAULT_MODULUS, rng)
    assert fss.threshold_counts(k0, k1, None, rng).tolist() == brute_cumulative(xs, 2**bits).tolist()


def test_threshold_errors(rng):
    k0, k1 = fss.threshold_keys([1, 2], 3, DEFAULT_MODULUS, rng)
    with pytest.raises(ValueError):
        fss.threshold_counts(k0, None, 1.0, rng)
    with pytest.raises(ValueError):
        fss.combine_histogram([fss.aggregator_histogram_release(k0, None, rng)], DEFAULT_MODULUS)
    with pytest.raises(ValueError):
        fss.threshold_keys([8], 3, DEFAULT_MODULUS, rng)


def test_threshold_budget():
    assert fss.threshold_budget(2.0, 1e-6).rho == pytest.approx(0.25)


def _sampled_run(answers, sigma, rng):
    n, k = answers.shape
    k0, k1 = fss.sampled_encode_clients(answers, DEFAULT_MODULUS, rng)
    rel = [fss.aggregator_histogram_release(kk, sigma, rng) for kk in (k0, k1)]
    return fss.sampled_query_combine(rel, n, k, DEFAULT_MODULUS)


def test_sampled_single_query(rng):
    qs = [lambda x: int(x > 2)]
    for x in range(6):
        k0, k1 = fss.sampled_query_encode(x, qs, DEFAULT_MODULUS, rng)
        assert int(joint_full(k0, k1)[0]) == int(x > 2)
    answers = (np.arange(40) % 3 == 0).astype(np.int64)[:, None]
    assert _sampled_run(answers, None, rng)[0] == pytest.approx(answers.mean())


def test_sampled_at_most_one_nonzero(rng):
    qs = [lambda x, t=t: int(x >= t) for t in range(6)]
    for x in range(8):
        k0, k1 = fss.sampled_query_encode(x, qs, DEFAULT_MODULUS, rng)
        assert np.count_nonzero(joint_full(k0, k1)) <= 1


def test_query_depth():
    assert [fss.query_depth(k) for k in (1, 2, 3, 4, 5, 2**20)] == [1, 1, 2, 2, 3, 20]
    with pytest.raises(ValueError):
        fss.query_depth(0)


def test_sampled_std_matches_sampling_oracle():
    n, k, runs = 4000, 10, 120
    answers = np.zeros((n, k), dtype=np.int64)
    answers[: n // 2] = 1
    rng = np.random.default_rng(21)
    ests = np.array([_sampled_run(answers, None, rng) for _ in range(runs)])
    # oracle: only the answering clients' query choices matter
    hits = np.random.default_rng(22).multinomial(n // 2, [1 / k] * k, size=20000)
    oracle = (k * hits / n).std()
    assert abs(ests.std() / oracle - 1) < 0.10


def test_sampled_budget():
    b = fss.sampled_budget(2.0, 1e-6, 16)
    assert b["epsilon_amplified"] == noise.amplify_by_sampling(noise.zcdp_to_approx_dp(0.125, 1e-6), 16)
