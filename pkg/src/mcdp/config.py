"""Run configuration, query syntax and dataset loading."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .counting import CountingQuery
from .field import DEFAULT_PRIME, FieldModulus, required_modulus_bound
from .fss import LAMBDA, query_depth
from .selection import laplace_scale

PROTOCOLS = ("count", "freq", "hh", "threshold", "sampled", "select")
FSS_PROTOCOLS = ("threshold", "sampled")


class ConfigError(ValueError):
    exit_code = 2


class DataError(ValueError):
    exit_code = 3


class ProtocolError(RuntimeError):
    exit_code = 4


_QUERY_KINDS = {
    "eq": lambda a: (lambda x: x == a[0]),
    "ne": lambda a: (lambda x: x != a[0]),
    "lt": lambda a: (lambda x: x < a[0]),
    "le": lambda a: (lambda x: x <= a[0]),
    "gt": lambda a: (lambda x: x > a[0]),
    "ge": lambda a: (lambda x: x >= a[0]),
    "range": lambda a: (lambda x: a[0] <= x < a[1]),
    "bit": lambda a: (lambda x: (x >> a[0]) & 1),
    "mod": lambda a: (lambda x: x % a[0] == a[1]),
}


def parse_query(spec: str) -> CountingQuery:
    """Build a counting query from ``kind:arg[:arg]``, e.g. ``ge:10``,
    ``range:3:7`` (half-open), ``bit:2``, ``mod:3:1``."""
    kind, *args = spec.strip().split(":")
    if kind not in _QUERY_KINDS:
        raise ConfigError(f"unknown query kind {kind!r} in {spec!r}")
    try:
        nums = [int(a) for a in args]
    except ValueError as e:
        raise ConfigError(f"bad query arguments in {spec!r}") from e
    need = 2 if kind in ("range", "mod") else 1
    if len(nums) != need:
        raise ConfigError(f"query {kind!r} takes {need} argument(s), got {len(nums)}")
    fn = _QUERY_KINDS[kind](nums)
    return CountingQuery(lambda x, fn=fn: int(bool(fn(int(x)))), spec.strip())


def read_lines(path) -> list[str]:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    return [ln for ln in lines if ln and not ln.startswith("#")]


def load_dataset(path, domain_bits: int | None = None) -> np.ndarray:
    """One record per client: the first column of a CSV holds a non-negative
    integer. A non-numeric first row is treated as a header."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    values = []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not row[0].strip():
                continue
            cell = row[0].strip()
            try:
                v = int(cell)
            except ValueError:
                if lineno == 1 and not values:
                    continue
                raise DataError(f"{path}:{lineno}: cannot parse {cell!r} as an integer") from None
            if v < 0:
                raise DataError(f"{path}:{lineno}: negative value {v}")
            if domain_bits is not None and v >= 1 << domain_bits:
                raise DataError(f"{path}:{lineno}: value {v} outside domain [0, 2**{domain_bits})")
            values.append(v)
    if not values:
        raise DataError(f"{path}: no records")
    return np.array(values, dtype=np.int64)


@dataclass
class RunConfig:
    protocol: str
    m: int = 2
    sigma: float | None = 1.0
    sigma0: float | None = 1.0
    epsilon: float | None = 1.0
    delta: float = 1e-6
    ell: int = 256
    domain_bits: int = 8
    lam: int = LAMBDA
    seed: int = 0
    sketch_seed: int | None = None
    modulus: int = DEFAULT_PRIME
    check_modulus: bool = True
    query: str | None = None
    queries: list[str] = field(default_factory=list)
    query_elements: list[int] = field(default_factory=list)
    tau: float = 0.0

    @property
    def k(self) -> int:
        return len(self.queries)

    @property
    def public_sketch_seed(self) -> int:
        return self.seed if self.sketch_seed is None else self.sketch_seed

    def noise_scale(self) -> float:
        """Per-entry noise scale each aggregator adds, for the wraparound rule."""
        if self.protocol in ("count", "threshold", "sampled"):
            return float(self.sigma or 0.0)
        if self.protocol in ("freq", "hh"):
            return math.sqrt(self.ell) * float(self.sigma0 or 0.0)
        return float(laplace_scale(self.epsilon)) if self.epsilon else 0.0

    def validate(self, n: int | None = None) -> "RunConfig":
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {self.protocol!r}; choose from {', '.join(PROTOCOLS)}")
        if self.m < 1:
            raise ConfigError("m must be at least 1")
        if self.protocol in FSS_PROTOCOLS and self.m != 2:
            raise ConfigError(f"{self.protocol} uses two-party function secret sharing: m must be 2")
        if self.lam != LAMBDA:
            raise ConfigError(f"only lambda={LAMBDA} is supported")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        for name in ("sigma", "sigma0", "epsilon"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ConfigError(f"{name} must be positive (omit it to disable noise)")
        if self.protocol == "count" and not self.query:
            raise ConfigError("count needs a query")
        if self.protocol in ("select", "sampled") and not self.queries:
            raise ConfigError(f"{self.protocol} needs at least one query")
        if self.protocol in ("freq", "hh") and self.ell < 1:
            raise ConfigError("ell must be at least 1")
        if not 1 <= self.domain_bits <= 30:
            raise ConfigError("domain_bits must be in [1, 30]")
        if self.protocol == "threshold" and self.domain_bits > 24:
            raise ConfigError("threshold full-domain evaluation is limited to 24 domain bits")
        try:
            FieldModulus(self.modulus)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if n is not None:
            if n < 1:
                raise ConfigError("dataset is empty")
            if self.check_modulus:
                bound = required_modulus_bound(n, self.m, self.noise_scale())
                if self.modulus <= bound:
                    raise ConfigError(f"modulus {self.modulus} fails the wraparound rule: need p > {bound:g}")
        if self.protocol == "sampled":
            query_depth(self.k)
        return self

    def as_dict(self) -> dict:
        return asdict(self)
