"""``mcdp`` command-line front end.

Reports are JSON (sorted keys, so equal runs give equal bytes); tabular
outputs and sweeps are CSV. Exit codes: 0 ok, 2 configuration error, 3 data
error, 4 protocol error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import noise
from .config import ConfigError, DataError, ProtocolError, RunConfig, load_dataset, parse_query, read_lines
from .field import DEFAULT_PRIME
from .transport import Transcript, adversary_view, run_protocol


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _elements(path) -> list[int]:
    try:
        return [int(x) for x in read_lines(path)]
    except ValueError as e:
        raise DataError(f"{path}: query elements must be integers") from e


def _config_from_args(args, protocol: str) -> RunConfig:
    cfg = RunConfig(protocol=protocol, seed=args.seed, modulus=args.modulus, delta=args.delta)
    if protocol in ("count", "threshold", "sampled"):
        cfg.sigma = args.sigma
    if protocol in ("freq", "hh"):
        cfg.sigma0 = args.sigma0
        cfg.ell = args.ell
        cfg.sketch_seed = args.sketch_seed
        if args.query_elements:
            cfg.query_elements = _elements(args.query_elements)
        if protocol == "hh":
            cfg.tau = args.tau
    if protocol == "select":
        cfg.epsilon = args.epsilon
    if protocol in ("count", "freq", "hh", "select"):
        cfg.m = args.m
    if protocol in ("freq", "hh", "threshold"):
        cfg.domain_bits = args.domain_bits
    if protocol == "count":
        cfg.query = args.query
    if protocol in ("select", "sampled"):
        if not args.queries:
            raise ConfigError(f"{protocol} needs --queries")
        cfg.queries = read_lines(args.queries)
        for q in cfg.queries:
            parse_query(q)
        k = getattr(args, "k", None)
        if k is not None:
            if not 1 <= k <= len(cfg.queries):
                raise ConfigError(f"--k must be between 1 and {len(cfg.queries)}")
            cfg.queries = cfg.queries[:k]
    if args.no_noise:
        cfg.sigma = cfg.sigma0 = cfg.epsilon = None
    return cfg


def _truth(cfg: RunConfig, data: np.ndarray) -> dict:
    n = data.size
    if cfg.protocol == "count":
        q = parse_query(cfg.query)
        return {"true_value": sum(q(x) for x in data) / n}
    if cfg.protocol in ("freq", "hh"):
        vals, counts = np.unique(data, return_counts=True)
        freq = dict(zip(vals.tolist(), (counts / n).tolist()))
        return {"true_frequencies": {str(y): freq.get(y, 0.0) for y in cfg.query_elements or vals.tolist()}}
    if cfg.protocol == "threshold":
        hist = np.bincount(data, minlength=1 << cfg.domain_bits)
        return {"true_cumulative_counts": np.cumsum(hist).tolist()}
    queries = [parse_query(q) for q in cfg.queries]
    means = [sum(q(x) for x in data) / n for q in queries]
    if cfg.protocol == "sampled":
        return {"true_means": means}
    return {"true_argmax": int(np.argmax(means))}


def _measured_error(cfg: RunConfig, outputs: dict, truth: dict) -> dict:
    if cfg.protocol == "count":
        return {"abs_error": abs(outputs["estimate"] - truth["true_value"])}
    if cfg.protocol == "threshold":
        err = np.abs(np.array(outputs["cumulative_counts"]) - np.array(truth["true_cumulative_counts"]))
        return {"max_abs_error": int(err.max())}
    if cfg.protocol == "sampled":
        err = np.abs(np.array(outputs["estimates"]) - np.array(truth["true_means"]))
        return {"max_abs_error": float(err.max())}
    return {}


def build_report(cfg: RunConfig, data: np.ndarray, outputs: dict, reveal_truth: bool, elapsed: float | None) -> dict:
    report = {
        "protocol": cfg.protocol,
        "config": cfg.as_dict(),
        "m": cfg.m,
        "n": int(data.size),
        "outputs": {k: v for k, v in outputs.items() if k != "privacy"},
        "privacy": outputs.get("privacy"),
    }
    if cfg.protocol == "count":
        report["estimate"] = outputs["estimate"]
        report["sigma"] = cfg.sigma
        if cfg.sigma is not None:
            report["rho"] = outputs["privacy"]["rho"]
            report["epsilon"] = outputs["privacy"]["epsilon"]
            report["predicted_std"] = outputs["predicted_std"]
    if cfg.protocol == "select":
        report.update(selected_index=outputs["selected_index"], epsilon_accounted=cfg.epsilon, k=cfg.k)
    if reveal_truth:
        truth = _truth(cfg, data)
        report["truth"] = truth
        report["measured_error"] = _measured_error(cfg, outputs, truth)
    if elapsed is not None:
        report["timing_seconds"] = elapsed
    return report


def _run(args, protocol: str):
    cfg = _config_from_args(args, protocol)
    bits = cfg.domain_bits if protocol in ("freq", "hh", "threshold") else None
    data = load_dataset(args.data, bits)
    if getattr(args, "sweep", None):
        return _sweep(args, cfg, data)
    start = time.perf_counter()
    outputs, transcript = run_protocol(protocol, cfg, data)
    elapsed = time.perf_counter() - start if args.timing else None
    if args.dump_transcript:
        transcript.dump(args.dump_transcript)
    report = build_report(cfg, data, outputs, args.reveal_truth, elapsed)
    if protocol == "freq" and not args.json:
        truth = _truth(cfg, data)["true_frequencies"] if args.reveal_truth else None
        header = ["element", "estimate"] + (["true_frequency"] if truth else [])
        rows = [[y, f] + ([truth[str(y)]] if truth else []) for y, f in outputs.get("estimates", [])]
        _emit(_csv(header, rows), args.out)
        if args.report:
            Path(args.report).write_text(_json(report))
        return 0
    if protocol == "hh" and not args.json:
        rows = [[r + 1, e, f] for r, (e, f) in enumerate(outputs["heavy_hitters"])]
        _emit(_csv(["rank", "element", "estimate"], rows), args.out)
        if args.report:
            Path(args.report).write_text(_json(report))
        return 0
    _emit(_json(report), args.out)
    return 0


def _sweep(args, cfg: RunConfig, data: np.ndarray):
    """Repeat the run across one parameter's values; CSV of measured error."""
    name, _, values = args.sweep.partition("=")
    if name not in ("ell", "sigma", "sigma0", "m", "epsilon") or not values:
        raise ConfigError("--sweep takes NAME=v1,v2,... with NAME in ell, sigma, sigma0, m, epsilon")
    caster = int if name in ("ell", "m") else float
    try:
        grid = [caster(v) for v in values.split(",")]
    except ValueError as e:
        raise ConfigError(f"bad sweep values {values!r}") from e
    rows = []
    for value in grid:
        errors = []
        for rep in range(args.sweep_trials):
            run_cfg = RunConfig(**{**cfg.as_dict(), name: value, "seed": cfg.seed + rep})
            if run_cfg.protocol in ("freq", "hh") and not run_cfg.query_elements:
                run_cfg.query_elements = list(range(1 << run_cfg.domain_bits))
            outputs, _ = run_protocol(run_cfg.protocol, run_cfg, data)
            errors.extend(_sweep_errors(run_cfg, data, outputs))
        errors = np.asarray(errors, dtype=float)
        rows.append([value, float(np.quantile(errors, 0.95)), float(errors.mean()), args.sweep_trials])
    _emit(_csv([name, "alpha_95", "mean_abs_error", "trials"], rows), args.out)
    return 0


def _sweep_errors(cfg, data, outputs) -> list[float]:
    truth = _truth(cfg, data)
    if cfg.protocol in ("freq", "hh"):
        if "estimates" not in outputs:
            raise ConfigError("sweeps over heavy hitters need --query-elements or a scannable domain")
        tf = truth["true_frequencies"]
        return [abs(f - tf[str(y)]) for y, f in outputs["estimates"]]
    if cfg.protocol == "count":
        return [abs(outputs["estimate"] - truth["true_value"])]
    if cfg.protocol == "threshold":
        return [float(_measured_error(cfg, outputs, truth)["max_abs_error"])]
    if cfg.protocol == "sampled":
        return [float(_measured_error(cfg, outputs, truth)["max_abs_error"])]
    return [float(outputs["selected_index"] != truth["true_argmax"])]


def cmd_account(args):
    budget = noise.PrivacyBudget.from_sigma(args.sigma, args.delta)
    report = budget.as_dict()
    if args.m is not None and args.n is not None:
        report.update(m=args.m, n=args.n, predicted_std=math.sqrt(args.m) * args.sigma / args.n)
    if args.k is not None:
        report["k"] = args.k
        report["epsilon_amplified"] = noise.amplify_by_sampling(budget.epsilon, args.k)
    _emit(_json(report), args.out)
    return 0


def cmd_simulate(args):
    return _run(args, args.protocol)


def cmd_audit_view(args):
    t = Transcript.load(args.transcript)
    view = adversary_view(t, args.honest_agg, args.protected)
    summary = {
        "honest_aggregator": args.honest_agg,
        "protected_client": args.protected,
        "messages_in_transcript": len(t.messages),
        "messages_in_view": len(view.messages),
        "protected_client_shares_in_view": len(view.shares_from(args.protected)),
        "view": view.as_dict(),
    }
    _emit(_json(summary), args.out)
    return 0


def _global(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--modulus", type=int, default=DEFAULT_PRIME, help="prime modulus p")
    p.add_argument("--out", help="write the main output here instead of stdout")
    p.add_argument("--dump-transcript", help="write the message transcript (JSON lines)")


def _protocol_args(p: argparse.ArgumentParser, protocol: str | None):
    every = protocol is None
    p.add_argument("--data", required=True, help="CSV, one integer per client")
    p.add_argument("--delta", type=float, default=1e-6)
    p.add_argument("--reveal-truth", action="store_true", help="include true values (not a private release!)")
    p.add_argument("--no-noise", action="store_true", help="disable all noise (testing only)")
    p.add_argument("--timing", action="store_true", help="include wall-clock time (breaks byte-reproducibility)")
    p.add_argument("--sweep", help="NAME=v1,v2,...: CSV of measured error across values")
    p.add_argument("--sweep-trials", type=int, default=10)
    p.add_argument("--json", action="store_true", help="JSON report instead of CSV (freq, hh)")
    p.add_argument("--report", help="also write the JSON report here (freq, hh)")
    if every or protocol in ("count", "freq", "hh", "select"):
        p.add_argument("--m", type=int, default=2, help="number of aggregators")
    if every or protocol in ("count", "threshold", "sampled"):
        p.add_argument("--sigma", type=float, default=10.0)
    if every or protocol in ("freq", "hh"):
        p.add_argument("--ell", type=int, default=256)
        p.add_argument("--sigma0", type=float, default=1.0)
        p.add_argument("--sketch-seed", type=int, help="public sketch seed (default: --seed)")
        p.add_argument("--query-elements", help="file of domain elements, one per line")
    if every or protocol == "hh":
        p.add_argument("--tau", type=float, default=0.05)
    if every or protocol in ("freq", "hh", "threshold"):
        p.add_argument("--domain-bits", type=int, default=8)
    if every or protocol == "count":
        p.add_argument("--query", default="ge:1", help="counting query, e.g. ge:10, range:3:7, bit:0")
    if every or protocol in ("select", "sampled"):
        p.add_argument("--queries", help="file of counting queries, one per line")
    if every or protocol == "sampled":
        p.add_argument("--k", type=int, help="use the first k queries")
    if every or protocol == "select":
        p.add_argument("--epsilon", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcdp", description="Multi-central differential privacy toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    acc = sub.add_parser("account", help="zCDP / (eps, delta) accounting for Gaussian noise")
    acc.add_argument("--sigma", type=float, required=True)
    acc.add_argument("--delta", type=float, required=True)
    acc.add_argument("--m", type=int)
    acc.add_argument("--n", type=int)
    acc.add_argument("--k", type=int, help="also report amplification for k sampled queries")
    acc.add_argument("--out")
    acc.set_defaults(func=cmd_account)

    for name, helptext in [
        ("count", "counting query"),
        ("freq", "frequency oracle; CSV of estimates"),
        ("hh", "heavy hitters; ranked CSV"),
        ("threshold", "all threshold counts via DPF histograms (m=2)"),
        ("sampled", "k counting queries, one sampled per client (m=2)"),
        ("select", "distributed report-noisy-max"),
    ]:
        p = sub.add_parser(name, help=helptext)
        _global(p)
        _protocol_args(p, name)
        p.set_defaults(func=lambda a, name=name: _run(a, name))

    sim = sub.add_parser("simulate", help="run any protocol (use with --dump-transcript)")
    _global(sim)
    sim.add_argument("--protocol", required=True, choices=["count", "freq", "hh", "threshold", "sampled", "select"])
    _protocol_args(sim, None)
    sim.set_defaults(func=cmd_simulate)

    audit = sub.add_parser("audit-view", help="extract an adversary view from a transcript")
    audit.add_argument("--transcript", required=True)
    audit.add_argument("--honest-agg", type=int, required=True)
    audit.add_argument("--protected", type=int, required=True)
    audit.add_argument("--out")
    audit.set_defaults(func=cmd_audit_view)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, ProtocolError) as e:
        print(f"mcdp: {e}", file=sys.stderr)
        return e.exit_code
    except BrokenPipeError:
        return 0
    except ValueError as e:
        # validation failures raised below the config layer
        print(f"mcdp: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
