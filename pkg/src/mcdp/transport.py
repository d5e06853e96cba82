"""In-process, round-based protocol simulator with full message transcripts.

Parties never share state: a client only talks to aggregators, an aggregator
only sees what arrives in its inbox, and the combiner only sees what
aggregators (or the evaluator) release to it. Every message is recorded in a
:class:`Transcript`, from which adversary views are cut.

Channels are private and authenticated by construction; encryption is not
simulated. Each party draws randomness from its own generator, derived from
the master seed and its :class:`PartyId`, so any single party's coins can be
regenerated without replaying the others.
"""

from __future__ import annotations

import json
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import stats

from . import fss, sketch
from .config import ConfigError, DataError, ProtocolError, RunConfig, parse_query
from .counting import NoisyAggregate, aggregator_accumulate, aggregator_release, combine
from .field import FieldElement, FieldModulus, from_signed, sum_mod
from .noise import PrivacyBudget, discrete_gaussian_pmf
from .selection import NoisyTotals, aggregator_noisy_totals, ideal_argmax
from .sharing import decode_bundle_row, encode_bundle_row, share_array

ROLES = ("client", "aggregator", "evaluator", "combiner")
PROTOCOL_IDS = {"count": 1, "freq": 2, "hh": 3, "threshold": 4, "sampled": 5, "select": 6}

Sharer = Callable[[np.ndarray, int, FieldModulus, np.random.Generator], np.ndarray]


@dataclass(frozen=True, order=True)
class PartyId:
    role: str
    index: int

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.index < 0:
            raise ValueError("party index must be non-negative")

    def __str__(self) -> str:
        return f"{self.role}:{self.index}"

    @classmethod
    def parse(cls, text: str) -> "PartyId":
        role, index = text.split(":")
        return cls(role, int(index))


COMBINER = PartyId("combiner", 0)
EVALUATOR = PartyId("evaluator", 0)


def client(i: int) -> PartyId:
    return PartyId("client", i)


def aggregator(j: int) -> PartyId:
    return PartyId("aggregator", j)


@dataclass(frozen=True)
class Message:
    sender: PartyId
    receiver: PartyId
    round: int
    payload: bytes

    def record(self) -> dict:
        return {"round": self.round, "from": str(self.sender), "to": str(self.receiver),
                "payload_hex": self.payload.hex()}

    @classmethod
    def from_record(cls, rec: dict) -> "Message":
        return cls(PartyId.parse(rec["from"]), PartyId.parse(rec["to"]), int(rec["round"]),
                   bytes.fromhex(rec["payload_hex"]))


@dataclass
class Transcript:
    """Append-only record of every message, plus the released outputs."""

    meta: dict = field(default_factory=dict)
    messages: list[Message] = field(default_factory=list)
    public_outputs: dict = field(default_factory=dict)

    def append(self, msg: Message):
        if msg.round < 0:
            raise ValueError("rounds start at 0")
        if self.messages and msg.round < self.messages[-1].round:
            raise ValueError(f"message for round {msg.round} after round {self.messages[-1].round}")
        self.messages.append(msg)

    def dumps(self) -> str:
        head = json.dumps({"meta": self.meta, "public_outputs": self.public_outputs}, sort_keys=True)
        body = [json.dumps(m.record(), sort_keys=True) for m in self.messages]
        return "\n".join([head, *body]) + "\n"

    def dump(self, path):
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "Transcript":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise DataError("empty transcript")
        head = json.loads(lines[0])
        t = cls(meta=head.get("meta", {}), public_outputs=head.get("public_outputs", {}))
        for ln in lines[1:]:
            t.append(Message.from_record(json.loads(ln)))
        return t

    @classmethod
    def load(cls, path) -> "Transcript":
        return cls.loads(Path(path).read_text())

    def sent_by(self, party: PartyId) -> list[Message]:
        return [m for m in self.messages if m.sender == party]

    def received_by(self, party: PartyId) -> list[Message]:
        return [m for m in self.messages if m.receiver == party]


_ROLE_CODE = {r: i for i, r in enumerate(ROLES)}


def party_rng(seed: int, party: PartyId) -> np.random.Generator:
    """Independent stream keyed by (master seed, role, index)."""
    ss = np.random.SeedSequence([int(seed), _ROLE_CODE[party.role], party.index])
    return np.random.Generator(np.random.PCG64(ss))


class Network:
    def __init__(self, transcript: Transcript):
        self.transcript = transcript
        self._inbox: dict[PartyId, list[Message]] = defaultdict(list)

    def send(self, sender: PartyId, receiver: PartyId, rnd: int, payload: bytes):
        msg = Message(sender, receiver, rnd, payload)
        self.transcript.append(msg)
        self._inbox[receiver].append(msg)

    def inbox(self, party: PartyId) -> list[Message]:
        return self._inbox.pop(party, [])


# ------------------------------------------------------------------ protocols


def _send_shares(net, pid, i, rng, shares, m):
    # per-client random transmission order
    for j in rng.permutation(m):
        net.send(client(i), aggregator(int(j) + 1), 0, encode_bundle_row(pid, i, shares[j]))


def _collect(net, party, p, n, width=None) -> np.ndarray:
    """Decode one share row per client from ``party``'s inbox, ordered by client id."""
    rows: dict[int, np.ndarray] = {}
    for msg in net.inbox(party):
        _, cid, vec = decode_bundle_row(msg.payload, p)
        if cid in rows:
            raise ProtocolError(f"{party} received two shares from client {cid}")
        if width is not None and vec.size != width:
            raise ProtocolError(f"client {cid} sent {vec.size} elements, expected {width}")
        rows[cid] = vec
    missing = set(range(1, n + 1)) - rows.keys()
    if missing:
        raise ProtocolError(f"{party} is missing shares from clients {sorted(missing)[:5]}")
    return np.stack([rows[i] for i in range(1, n + 1)])


def _run_count(cfg, data, net, sharer):
    mod = FieldModulus(cfg.modulus)
    p, m, n, pid = mod.p, cfg.m, len(data), PROTOCOL_IDS["count"]
    query = parse_query(cfg.query)
    for i, x in enumerate(data, start=1):
        rng = party_rng(cfg.seed, client(i))
        shares = sharer(np.array([query(x)], dtype=np.uint64), m, mod, rng)
        _send_shares(net, pid, i, rng, shares, m)
    for j in range(1, m + 1):
        rows = _collect(net, aggregator(j), p, n, width=1)[:, 0]
        v = aggregator_accumulate(rows, mod, n)
        rel = aggregator_release(v, cfg.sigma, party_rng(cfg.seed, aggregator(j)), aggregator=j)
        net.send(aggregator(j), COMBINER, 1, encode_bundle_row(pid, j, [rel.value.value]))
    releases = []
    for msg in net.inbox(COMBINER):
        _, j, vec = decode_bundle_row(msg.payload, p)
        releases.append(NoisyAggregate(j, FieldElement(int(vec[0]), mod)))
    estimate = combine(releases, n, mod, m)
    out = {"estimate": estimate, "released": [int(r.value.value) for r in releases]}
    if cfg.sigma is not None:
        out["privacy"] = PrivacyBudget.from_sigma(cfg.sigma, cfg.delta).as_dict()
        out["predicted_std"] = float(np.sqrt(m) * cfg.sigma / n)
    else:
        out["privacy"] = None
    return out


def _run_sketch(cfg, data, net, sharer):
    mod = FieldModulus(cfg.modulus)
    p, m, n, pid = mod.p, cfg.m, len(data), PROTOCOL_IDS[cfg.protocol]
    params = sketch.SketchParams(cfg.ell, cfg.domain_bits, cfg.public_sketch_seed)
    params.check(data)
    for i, x in enumerate(data, start=1):
        rng = party_rng(cfg.seed, client(i))
        col = from_signed(sketch.sketch_column(int(x), params).astype(np.int64), p)
        _send_shares(net, pid, i, rng, sharer(col, m, mod, rng), m)
    sc = None if cfg.sigma0 is None else sketch.coord_sigma(cfg.ell, cfg.sigma0)
    for j in range(1, m + 1):
        total = sum_mod(_collect(net, aggregator(j), p, n, width=cfg.ell), p, axis=0)
        rel = sketch.aggregator_release_sketch(total, sc, party_rng(cfg.seed, aggregator(j)), mod, aggregator=j)
        net.send(aggregator(j), COMBINER, 1, encode_bundle_row(pid, j, rel.coords))
    releases = []
    for msg in net.inbox(COMBINER):
        _, j, vec = decode_bundle_row(msg.payload, p)
        releases.append(sketch.SketchVector(j, vec))
    combined = sketch.combine_sketches(releases, mod, m)
    out = {}
    if cfg.query_elements:
        est = sketch.estimate_from_combined(combined, cfg.query_elements, params, n)
        out["estimates"] = [[int(y), float(f)] for y, f in zip(cfg.query_elements, est)]
    if cfg.protocol == "hh":
        cands = cfg.query_elements or None
        hh = sketch.heavy_hitters(releases, cfg.tau, params, n, candidates=cands, modulus=mod, m=m)
        out["heavy_hitters"] = [[e, f] for e, f in hh]
    out["privacy"] = None if cfg.sigma0 is None else sketch.sketch_budget(cfg.sigma0, cfg.delta).as_dict()
    if cfg.sigma0 is not None:
        out["predicted_noise_std"] = float(np.sqrt(m) * cfg.sigma0 / n)
    return out


def _run_dpf(cfg, data, net, sharer):
    # sharer is irrelevant here: keys, not additive shares, leave the client
    mod = FieldModulus(cfg.modulus)
    p, n = mod.p, len(data)
    if cfg.protocol == "threshold":
        if np.max(data) >= 1 << cfg.domain_bits:
            raise DataError(f"datum outside domain [0, 2**{cfg.domain_bits})")
        depth = cfg.domain_bits
        queries = None
    else:
        queries = [parse_query(q) for q in cfg.queries]
        depth = fss.query_depth(len(queries))
    for i, x in enumerate(data, start=1):
        rng = party_rng(cfg.seed, client(i))
        if queries is None:
            keys = fss.dpf_gen(fss.PointFunction(int(x), 1), depth, mod, rng, cfg.lam)
        else:
            keys = fss.sampled_query_encode(x, queries, mod, rng, cfg.lam)
        for b in rng.permutation(2):
            net.send(client(i), aggregator(int(b) + 1), 0, keys[b].to_bytes())
    pid = PROTOCOL_IDS[cfg.protocol]
    for j in (1, 2):
        inbox = net.inbox(aggregator(j))
        if len(inbox) != n or len({m.sender for m in inbox}) != n:
            raise ProtocolError(f"aggregator {j} expected {n} keys, got {len(inbox)}")
        received = [fss.DpfKey.from_bytes(msg.payload, mod) for msg in sorted(inbox, key=lambda msg: msg.sender)]
        keys = fss.stack_keys(received)
        if keys.party != j - 1 or keys.depth != depth:
            raise ProtocolError(f"aggregator {j} received keys for the wrong party or depth")
        rel = fss.aggregator_histogram_release(keys, cfg.sigma, party_rng(cfg.seed, aggregator(j)), aggregator=j)
        net.send(aggregator(j), COMBINER, 1, encode_bundle_row(pid, j, rel.values))
    releases = []
    for msg in net.inbox(COMBINER):
        _, j, vec = decode_bundle_row(msg.payload, p)
        releases.append(fss.NoisyVector(j, vec))
    if queries is None:
        cum = fss.cumulative_counts(releases, mod)
        out = {"cumulative_counts": [int(c) for c in cum]}
        out["privacy"] = None if cfg.sigma is None else fss.threshold_budget(cfg.sigma, cfg.delta).as_dict()
    else:
        est = fss.sampled_query_combine(releases, n, len(queries), mod)
        out = {"estimates": [float(e) for e in est]}
        out["privacy"] = None if cfg.sigma is None else fss.sampled_budget(cfg.sigma, cfg.delta, len(queries))
        out["sampling_std_scale"] = float(np.sqrt(len(queries) / n))
    out["key_bits"] = received[0].size_bits
    return out


def _run_select(cfg, data, net, sharer):
    mod = FieldModulus(cfg.modulus)
    p, m, n, pid = mod.p, cfg.m, len(data), PROTOCOL_IDS["select"]
    queries = [parse_query(q) for q in cfg.queries]
    k = len(queries)
    for i, x in enumerate(data, start=1):
        rng = party_rng(cfg.seed, client(i))
        vec = np.array([q(x) for q in queries], dtype=np.uint64)
        _send_shares(net, pid, i, rng, sharer(vec, m, mod, rng), m)
    for j in range(1, m + 1):
        rows = _collect(net, aggregator(j), p, n, width=k)
        tot = aggregator_noisy_totals(rows, cfg.epsilon, party_rng(cfg.seed, aggregator(j)), mod, aggregator=j)
        net.send(aggregator(j), EVALUATOR, 1, encode_bundle_row(pid, j, tot.values))
    totals = []
    for msg in net.inbox(EVALUATOR):
        _, j, vec = decode_bundle_row(msg.payload, p)
        totals.append(NoisyTotals(j, vec))
    index = ideal_argmax(totals, mod, m)
    net.send(EVALUATOR, COMBINER, 2, struct.pack("<I", index))
    (released,) = struct.unpack("<I", net.inbox(COMBINER)[0].payload)
    return {"selected_index": released, "k": k,
            "privacy": None if cfg.epsilon is None else {"epsilon": float(cfg.epsilon), "delta": 0.0}}


_RUNNERS = {
    "count": _run_count,
    "freq": _run_sketch,
    "hh": _run_sketch,
    "threshold": _run_dpf,
    "sampled": _run_dpf,
    "select": _run_select,
}


def run_protocol(protocol: str, config: RunConfig, dataset, seed: int | None = None,
                 sharer: Sharer | None = None) -> tuple[dict, Transcript]:
    """Simulate one full protocol run.

    Returns the combiner's public outputs and the transcript of every
    message. ``sharer`` replaces the additive sharing routine (used to test
    that broken sharing is detected).
    """
    if config.protocol != protocol:
        raise ConfigError(f"config is for {config.protocol!r}, asked to run {protocol!r}")
    if seed is not None:
        config.seed = int(seed)
    data = np.asarray(dataset, dtype=np.int64)
    if data.ndim != 1:
        raise DataError("dataset must be one value per client")
    config.validate(n=data.size)
    meta = {"protocol": protocol, "m": config.m, "n": int(data.size), "modulus": config.modulus,
            "seed": config.seed, "config": config.as_dict()}
    transcript = Transcript(meta=meta)
    net = Network(transcript)
    outputs = _RUNNERS[protocol](config, data, net, sharer or share_array)
    transcript.public_outputs = outputs
    return outputs, transcript


# ------------------------------------------------------------- adversary view


@dataclass
class AdversaryView:
    honest_aggregator: int
    protected_client: int
    messages: list[Message]
    public_outputs: dict

    def shares_from(self, i: int) -> list[Message]:
        return [m for m in self.messages if m.sender == client(i)]

    def as_dict(self) -> dict:
        return {"honest_aggregator": self.honest_aggregator, "protected_client": self.protected_client,
                "messages": [m.record() for m in self.messages], "public_outputs": self.public_outputs}


def _visible(msg: Message, j: int) -> bool:
    for party in (msg.sender, msg.receiver):
        if party.role == "aggregator" and party.index != j:
            return True
    # releases to the combiner are public
    return msg.receiver == COMBINER


def adversary_view(t: Transcript, honest_aggregator: int, protected_client: int) -> AdversaryView:
    """What a coalition of every aggregator but ``honest_aggregator`` sees:
    their own traffic plus everything released publicly. The honest
    aggregator's inbox and the protected client's coins are excluded."""
    m, n = int(t.meta["m"]), int(t.meta["n"])
    if not 1 <= honest_aggregator <= m:
        raise ValueError(f"honest aggregator must be in [1, {m}]")
    if not 1 <= protected_client <= n:
        raise ValueError(f"protected client must be in [1, {n}]")
    msgs = [msg for msg in t.messages if _visible(msg, honest_aggregator)]
    return AdversaryView(honest_aggregator, protected_client, msgs, t.public_outputs)


# ---------------------------------------------------------- statistical audit


@dataclass
class ViewTestReport:
    trials: int
    share_pvalue: float
    share_passed: bool
    output_gof_pvalues: list = field(default_factory=list)
    empirical_max_log_ratio: float | None = None
    analytic_max_log_ratio: float | None = None
    slack: float | None = None
    output_passed: bool | None = None
    alpha: float = 1e-3
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.share_passed and self.output_passed is not False

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["passed"] = self.passed
        return d


def _wrapped_dg_pmf(center: int, sigma: float, p: int) -> np.ndarray:
    tail = int(40 * sigma) + 2 * p
    z = np.arange(-tail, tail + 1)
    w = discrete_gaussian_pmf(z, sigma)
    out = np.zeros(p)
    np.add.at(out, (z + center) % p, w)
    return out / out.sum()


def view_distribution_test(protocol: str, config: RunConfig, dataset_pair, j: int, i: int, trials: int,
                           alpha: float = 1e-3, sharer: Sharer | None = None, seed0: int = 0) -> ViewTestReport:
    """Empirical multi-central DP audit at toy scale.

    (a) the protected client's shares inside the view must have the same
        distribution under both datasets (chi-square homogeneity test);
    (b) for counting, the honest aggregator's release, de-masked with the
        coalition's own share sums, must follow the analytic wrapped discrete
        Gaussian under each dataset, and its empirical log pmf ratio must stay
        within statistical slack of the analytic one.
    """
    if protocol not in ("count", "select"):
        raise ConfigError("statistical view tests cover the additive-sharing protocols count and select")
    d0, d1 = (np.asarray(d, dtype=np.int64) for d in dataset_pair)
    p, n, m = config.modulus, d0.size, config.m
    if p > 31 or n > 8:
        raise ConfigError("view tests need p <= 31 and n <= 8 to keep histograms tractable")
    if d1.size != n or np.count_nonzero(d0 != d1) > 1:
        raise ConfigError("datasets must be neighbours (differ in at most one client)")
    if np.array_equal(d0, d1):
        return ViewTestReport(trials, 1.0, True, output_passed=True, alpha=alpha, note="identical datasets")
    width = 1 if protocol == "count" else len(config.queries)
    if p ** ((m - 1) * width) > 20000:
        raise ConfigError("share portion of the view has too many cells")

    share_cells = np.zeros((2, p ** ((m - 1) * width)), dtype=np.int64)
    out_cells = np.zeros((2, p), dtype=np.int64)
    for which, data in enumerate((d0, d1)):
        for trial in range(trials):
            cfg = RunConfig(**{**config.as_dict(), "seed": seed0 + which * trials + trial})
            _, t = run_protocol(protocol, cfg, data, sharer=sharer)
            view = adversary_view(t, j, i)
            vals = []
            for msg in sorted(view.shares_from(i), key=lambda msg: msg.receiver):
                vals.extend(int(v) for v in decode_bundle_row(msg.payload, p)[2])
            share_cells[which, _cell_index(vals, p)] += 1
            if protocol == "count":
                out_cells[which, _demasked_output(view, j, p)] += 1

    keep = share_cells.sum(axis=0) > 0
    share_p = float(stats.chi2_contingency(share_cells[:, keep])[1]) if keep.sum() > 1 else 1.0
    report = ViewTestReport(trials, share_p, share_p > alpha, alpha=alpha)
    if protocol != "count":
        report.note = "output check applies to counting only"
        return report

    sigma = float(config.sigma)
    query = parse_query(config.query)
    pmfs = [_wrapped_dg_pmf(sum(query(x) for x in d), sigma, p) for d in (d0, d1)]
    gof = []
    for which in (0, 1):
        exp = pmfs[which] * trials
        ok = exp >= 5
        obs = np.append(out_cells[which][ok], out_cells[which][~ok].sum())
        ex = np.append(exp[ok], exp[~ok].sum())
        if ex[-1] == 0:
            obs, ex = obs[:-1], ex[:-1]
        gof.append(float(stats.chisquare(obs, ex * obs.sum() / ex.sum())[1]))
    both = (out_cells[0] >= 100) & (out_cells[1] >= 100)
    emp = np.abs(np.log(out_cells[0][both] / out_cells[1][both]))
    ana = np.abs(np.log(pmfs[0] / pmfs[1]))
    se = np.sqrt(1 / out_cells[0][both] + 1 / out_cells[1][both])
    report.output_gof_pvalues = gof
    report.empirical_max_log_ratio = float(emp.max()) if emp.size else 0.0
    report.analytic_max_log_ratio = float(ana.max())
    report.slack = float(4 * se.max()) if se.size else 0.0
    report.output_passed = (min(gof) > alpha) and report.empirical_max_log_ratio <= report.analytic_max_log_ratio + report.slack
    return report


def _cell_index(vals, p: int) -> int:
    idx = 0
    for v in vals:
        idx = idx * p + v
    return idx


def _demasked_output(view: AdversaryView, j: int, p: int) -> int:
    """Honest release plus the coalition's own share sums: the true count plus
    only the honest aggregator's noise, mod p."""
    total = 0
    for msg in view.messages:
        if msg.receiver.role == "aggregator" and msg.sender.role == "client":
            total += int(decode_bundle_row(msg.payload, p)[2][0])
        if msg.sender == aggregator(j) and msg.receiver == COMBINER:
            total += int(decode_bundle_row(msg.payload, p)[2][0])
    return total % p
