"""Exact discrete noise and privacy accounting.

Both samplers follow the rejection construction of Canonne, Kamath and
Steinke: every random decision is a Bernoulli trial with a rational
parameter, realised by comparing a uniform integer draw against a numerator.
No density is ever evaluated in floating point.

Two code paths produce the same distributions:

* a numpy path that runs the rejection loops over whole arrays of pending
  draws in ``int64`` arithmetic; used whenever the rational parameters are
  small enough that nothing can overflow, and
* a scalar path on Python ints / ``Fraction`` for anything larger.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

# largest denominator the int64 path accepts (leaves 7 bits of headroom for
# the Bernoulli-chain counter in the exp(-x) sampler)
_MAX_DEN = 1 << 56
_MAX_CHAIN = 64
# below this many draws the per-call overhead of the array path dominates
_SCALAR_BELOW = 8


def as_fraction(x) -> Fraction:
    """Exact rational for ints/Fractions/decimal strings; floats are rounded to
    a denominator of at most 10**6."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    if isinstance(x, str):
        return Fraction(x)
    return Fraction(float(x)).limit_denominator(10**6)


# ------------------------------------------------------------ vectorised path


def _bernoulli(num, den, rng):
    """Bernoulli(num/den) elementwise; 0 <= num <= den."""
    return rng.integers(0, den, dtype=np.int64) < num


def _bernoulli_exp_unit(num, den, rng):
    """Bernoulli(exp(-num/den)) elementwise for 0 <= num/den <= 1."""
    num = np.asarray(num, dtype=np.int64)
    den = np.broadcast_to(np.asarray(den, dtype=np.int64), num.shape)
    k = np.ones(num.shape, dtype=np.int64)
    active = np.ones(num.shape, dtype=bool)
    while active.any():
        idx = np.flatnonzero(active)
        kk = np.minimum(k[idx], _MAX_CHAIN)
        hit = _bernoulli(num[idx], den[idx] * kk, rng)
        k[idx[hit]] += 1
        active[idx[~hit]] = False
    return (k % 2) == 1


def _bernoulli_exp(whole, num, den, rng):
    """Bernoulli(exp(-(whole + num/den))) with integer part ``whole``.

    The integer part costs one Bernoulli(exp(-1)) per unit; all must succeed.
    """
    whole = np.asarray(whole, dtype=np.int64).copy()
    num = np.asarray(num, dtype=np.int64)
    den = np.broadcast_to(np.asarray(den, dtype=np.int64), num.shape)
    alive = np.ones(num.shape, dtype=bool)
    pending = whole > 0
    while pending.any():
        idx = np.flatnonzero(pending)
        ok = _bernoulli_exp_unit(np.ones(idx.size, dtype=np.int64), 1, rng)
        alive[idx[~ok]] = False
        whole[idx] -= 1
        pending = alive & (whole > 0)
    idx = np.flatnonzero(alive)
    if idx.size:
        alive[idx] = _bernoulli_exp_unit(num[idx], den[idx], rng)
    return alive


def _geometric_exp1(size, rng):
    """Number of successes before the first failure of Bernoulli(exp(-1))."""
    v = np.zeros(size, dtype=np.int64)
    active = np.ones(size, dtype=bool)
    while active.any():
        idx = np.flatnonzero(active)
        ok = _bernoulli_exp_unit(np.ones(idx.size, dtype=np.int64), 1, rng)
        v[idx[ok]] += 1
        active[idx[~ok]] = False
    return v


def _dlaplace_vec(t: int, s: int, size: int, rng) -> np.ndarray:
    """Discrete Laplace with scale t/s (integers t, s >= 1)."""
    out = np.empty(size, dtype=np.int64)
    todo = np.arange(size)
    while todo.size:
        n = todo.size
        u = rng.integers(0, t, size=n, dtype=np.int64)
        keep = _bernoulli_exp_unit(u, t, rng)
        u = u[keep]
        v = _geometric_exp1(u.size, rng)
        y = (u + t * v) // s
        b = rng.integers(0, 2, size=u.size, dtype=np.int64)
        good = ~((b == 1) & (y == 0))
        vals = ((1 - 2 * b) * y)[good]
        out[todo[:vals.size]] = vals
        todo = todo[vals.size:]
    return out


def _dgauss_vec(sigma2: Fraction, size: int, rng) -> np.ndarray:
    a, c = sigma2.numerator, sigma2.denominator
    t = _floor_sqrt(sigma2) + 1
    den = 2 * a * c * t * t
    out = np.empty(size, dtype=np.int64)
    todo = np.arange(size)
    while todo.size:
        n = todo.size
        y = _dlaplace_vec(t, 1, n, rng)
        ymax = int(np.abs(y).max()) if n else 0
        if c * t * ymax + a < 3_000_000_000:
            d = c * t * np.abs(y) - a
            whole, rem = np.divmod(d * d, den)
        else:
            pairs = [divmod((c * t * abs(int(x)) - a) ** 2, den) for x in y]
            whole = np.array([q for q, _ in pairs], dtype=np.int64)
            rem = np.array([r for _, r in pairs], dtype=np.int64)
        acc = _bernoulli_exp(whole, rem, den, rng)
        vals = y[acc]
        out[todo[:vals.size]] = vals
        todo = todo[vals.size:]
    return out


def _floor_sqrt(x: Fraction) -> int:
    a = math.isqrt(x.numerator // x.denominator)
    while (a + 1) ** 2 <= x:
        a += 1
    while a * a > x:
        a -= 1
    return a


# ------------------------------------------------------------------ scalar path


def _s_bernoulli(p: Fraction, rng) -> bool:
    return _randbelow(p.denominator, rng) < p.numerator


def _randbelow(n: int, rng) -> int:
    if n < 2**63:
        return int(rng.integers(0, n, dtype=np.int64))
    bits = n.bit_length()
    while True:
        words = rng.bit_generator.random_raw((bits + 63) // 64)
        r = 0
        for w in np.atleast_1d(words):
            r = (r << 64) | int(w)
        r &= (1 << bits) - 1
        if r < n:
            return r


def _s_bernoulli_exp(gamma: Fraction, rng) -> bool:
    while gamma > 1:
        if not _s_bernoulli_exp(Fraction(1), rng):
            return False
        gamma -= 1
    k = 1
    while _s_bernoulli(gamma / k, rng):
        k += 1
    return k % 2 == 1


def _s_dlaplace(t: int, s: int, rng) -> int:
    while True:
        u = _randbelow(t, rng)
        if not _s_bernoulli_exp(Fraction(u, t), rng):
            continue
        v = 0
        while _s_bernoulli_exp(Fraction(1), rng):
            v += 1
        y = (u + t * v) // s
        b = _randbelow(2, rng)
        if b == 1 and y == 0:
            continue
        return (1 - 2 * b) * y


def _s_dgauss(sigma2: Fraction, rng) -> int:
    t = _floor_sqrt(sigma2) + 1
    while True:
        y = _s_dlaplace(t, 1, rng)
        gamma = (abs(y) - sigma2 / t) ** 2 / (2 * sigma2)
        if _s_bernoulli_exp(gamma, rng):
            return y


# ------------------------------------------------------------------ public API


def sample_discrete_gaussian(sigma, rng: np.random.Generator, size=None, exact_scalar: bool = False):
    """Draw from the discrete Gaussian on Z, P(k) proportional to exp(-k^2 / 2 sigma^2).

    Returns an int for ``size=None``, else an int64 array. ``exact_scalar``
    forces the Python-int reference implementation.
    """
    sigma = as_fraction(sigma)
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    sigma2 = sigma * sigma
    count = 1 if size is None else int(np.prod(size, dtype=np.int64))
    t = _floor_sqrt(sigma2) + 1
    den = 2 * sigma2.numerator * sigma2.denominator * t * t
    if exact_scalar or den >= _MAX_DEN or count <= _SCALAR_BELOW:
        out = np.array([_s_dgauss(sigma2, rng) for _ in range(count)], dtype=np.int64)
    else:
        out = _dgauss_vec(sigma2, count, rng)
    return int(out[0]) if size is None else out.reshape(size)


def sample_discrete_laplace(scale, rng: np.random.Generator, size=None, exact_scalar: bool = False):
    """Draw from the discrete Laplace on Z, P(k) proportional to exp(-|k| / scale)."""
    scale = as_fraction(scale)
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    t, s = scale.numerator, scale.denominator
    count = 1 if size is None else int(np.prod(size, dtype=np.int64))
    if exact_scalar or t >= _MAX_DEN or count <= _SCALAR_BELOW:
        out = np.array([_s_dlaplace(t, s, rng) for _ in range(count)], dtype=np.int64)
    else:
        out = _dlaplace_vec(t, s, count, rng)
    return int(out[0]) if size is None else out.reshape(size)


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    scale: Fraction

    def __post_init__(self):
        if self.kind not in ("discrete-gaussian", "discrete-laplace"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        object.__setattr__(self, "scale", as_fraction(self.scale))
        if self.scale <= 0:
            raise ValueError("noise scale must be positive")

    def sample(self, rng, size=None):
        if self.kind == "discrete-gaussian":
            return sample_discrete_gaussian(self.scale, rng, size)
        return sample_discrete_laplace(self.scale, rng, size)


# --------------------------------------------------------------- closed forms


def discrete_gaussian_pmf(k, sigma: float, tail: int | None = None):
    """P(X = k) for the discrete Gaussian, normaliser summed to |j| <= tail."""
    sigma = float(sigma)
    if tail is None:
        tail = int(40 * sigma) + 40
    j = np.arange(-tail, tail + 1, dtype=np.float64)
    norm = np.exp(-j * j / (2 * sigma * sigma)).sum()
    k = np.asarray(k, dtype=np.float64)
    return np.exp(-k * k / (2 * sigma * sigma)) / norm


def discrete_gaussian_variance(sigma: float) -> float:
    sigma = float(sigma)
    tail = int(40 * sigma) + 40
    j = np.arange(-tail, tail + 1, dtype=np.float64)
    w = np.exp(-j * j / (2 * sigma * sigma))
    return float((j * j * w).sum() / w.sum())


def discrete_laplace_variance(scale: float) -> float:
    q = math.exp(-1.0 / float(scale))
    return 2 * q / (1 - q) ** 2


# ---------------------------------------------------------------- accounting


def zcdp_to_approx_dp(rho: float, delta: float) -> float:
    """Convert rho-zCDP to (epsilon, delta)-DP: ``rho + 2 sqrt(rho ln(1/delta))``."""
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    return rho + 2.0 * math.sqrt(rho * math.log(1.0 / delta))


def rho_from_sigma(sigma, sensitivity: float = 1.0) -> float:
    """zCDP of the Gaussian mechanism: ``sensitivity^2 / (2 sigma^2)``."""
    sigma = float(sigma)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return sensitivity**2 / (2.0 * sigma * sigma)


def amplify_by_sampling(epsilon: float, k: int) -> float:
    """Pure-DP amplification when each client answers one of ``k`` queries at
    random: ``ln(1 + (e^eps - 1) / k)``. An upper bound, not a tight one."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    return math.log1p(math.expm1(epsilon) / k)


@dataclass(frozen=True)
class PrivacyBudget:
    rho: float
    epsilon: float
    delta: float
    sigma: float | None = None

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")

    @classmethod
    def from_sigma(cls, sigma, delta: float, sensitivity: float = 1.0) -> "PrivacyBudget":
        rho = rho_from_sigma(sigma, sensitivity)
        return cls(rho=rho, epsilon=zcdp_to_approx_dp(rho, delta), delta=delta, sigma=float(sigma))

    @classmethod
    def from_rho(cls, rho: float, delta: float) -> "PrivacyBudget":
        return cls(rho=rho, epsilon=zcdp_to_approx_dp(rho, delta), delta=delta)

    def as_dict(self) -> dict:
        return {"rho": self.rho, "epsilon": self.epsilon, "delta": self.delta, "sigma": self.sigma}
