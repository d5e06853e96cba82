from __future__ import annotations

import csv
import io
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from mcdp.cli import main


@pytest.fixture
def files(tmp_path):
    rng = np.random.default_rng(0)
    data = tmp_path / "d.csv"
    data.write_text("\n".join(map(str, rng.integers(0, 64, 300))) + "\n")
    queries = tmp_path / "q.txt"
    queries.write_text("ge:32\nlt:8\nrange:10:40\nbit:0\n")
    elems = tmp_path / "e.txt"
    elems.write_text("1\n2\n3\n")
    return {"data": str(data), "queries": str(queries), "elems": str(elems), "dir": tmp_path}


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_account(capsys):
    code, out, _ = run(capsys, "account", "--sigma", "1", "--delta", str(math.exp(-2)), "--m", "3", "--n", "1000")
    rep = json.loads(out)
    assert code == 0 and rep["epsilon"] == pytest.approx(2.5) and rep["rho"] == 0.5
    assert rep["predicted_std"] == pytest.approx(math.sqrt(3) * 1 / 1000)
    _, out, _ = run(capsys, "account", "--sigma", "1", "--delta", "0.1353")
    assert json.loads(out)["epsilon"] == pytest.approx(2.5, abs=1e-3)


def test_count_report(capsys, files):
    code, out, _ = run(capsys, "count", "--data", files["data"], "--query", "ge:32", "--m", "3", "--sigma", "10",
                       "--seed", "7")
    rep = json.loads(out)
    assert code == 0
    for key in ("estimate", "rho", "epsilon", "m", "n", "sigma", "privacy", "config", "predicted_std"):
        assert key in rep
    assert rep["config"]["seed"] == 7 and rep["n"] == 300 and rep["m"] == 3
    assert "truth" not in out and "true_value" not in out
    _, out, _ = run(capsys, "count", "--data", files["data"], "--query", "ge:32", "--reveal-truth")
    rep = json.loads(out)
    assert "true_value" in rep["truth"] and "abs_error" in rep["measured_error"]


def test_every_protocol_reports_privacy(capsys, files):
    cmds = [
        ["threshold", "--domain-bits", "6", "--sigma", "2"],
        ["sampled", "--queries", files["queries"], "--sigma", "2"],
        ["select", "--queries", files["queries"], "--m", "3"],
        ["freq", "--json", "--domain-bits", "6", "--query-elements", files["elems"]],
        ["hh", "--json", "--domain-bits", "6"],
    ]
    for c in cmds:
        code, out, _ = run(capsys, *c, "--data", files["data"])
        rep = json.loads(out)
        assert code == 0 and rep["privacy"] is not None, c
    _, out, _ = run(capsys, "select", "--queries", files["queries"], "--m", "3", "--data", files["data"])
    rep = json.loads(out)
    assert {"selected_index", "epsilon_accounted", "k", "m", "n"} <= rep.keys() and rep["k"] == 4


def test_sampled_k(capsys, files):
    _, out, _ = run(capsys, "sampled", "--queries", files["queries"], "--k", "2", "--data", files["data"])
    rep = json.loads(out)
    assert len(rep["outputs"]["estimates"]) == 2
    assert rep["privacy"]["k"] == 2
    code, _, _ = run(capsys, "sampled", "--queries", files["queries"], "--k", "9", "--data", files["data"])
    assert code == 2


def test_freq_and_hh_csv(capsys, files):
    code, out, _ = run(capsys, "freq", "--data", files["data"], "--domain-bits", "6", "--query-elements",
                       files["elems"], "--m", "3", "--ell", "64")
    rows = list(csv.reader(io.StringIO(out)))
    assert code == 0 and rows[0] == ["element", "estimate"] and [r[0] for r in rows[1:]] == ["1", "2", "3"]
    code, out, _ = run(capsys, "hh", "--data", files["data"], "--domain-bits", "6", "--tau", "0.02")
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["rank", "element", "estimate"]
    est = [float(r[2]) for r in rows[1:]]
    assert est == sorted(est, reverse=True) and all(e >= 0.02 for e in est)


def test_sweep(capsys, files):
    code, out, _ = run(capsys, "freq", "--data", files["data"], "--domain-bits", "6", "--sweep", "ell=64,256,1024",
                       "--sweep-trials", "2")
    rows = list(csv.reader(io.StringIO(out)))
    assert code == 0 and len(rows) == 4 and [r[0] for r in rows[1:]] == ["64", "256", "1024"]
    assert run(capsys, "freq", "--data", files["data"], "--sweep", "bogus=1")[0] == 2


def test_exit_codes(capsys, files):
    assert run(capsys, "count", "--data", files["data"], "--sigma", "-1")[0] == 2
    assert run(capsys, "count", "--data", str(files["dir"] / "nope.csv"))[0] == 3
    assert run(capsys, "threshold", "--data", files["data"], "--modulus", "101")[0] == 2
    assert run(capsys, "threshold", "--data", files["data"], "--domain-bits", "4")[0] == 3
    bad = files["dir"] / "bad.csv"
    bad.write_text("1\nx\n")
    code, _, err = run(capsys, "count", "--data", str(bad))
    assert code == 3 and ":2:" in err
    with pytest.raises(SystemExit) as exc:
        main(["count"])
    assert exc.value.code == 2


def test_simulate_and_audit(capsys, files):
    t = files["dir"] / "t.jsonl"
    code, _, _ = run(capsys, "simulate", "--protocol", "count", "--data", files["data"], "--m", "3",
                     "--dump-transcript", str(t))
    assert code == 0 and t.exists()
    code, out, _ = run(capsys, "audit-view", "--transcript", str(t), "--honest-agg", "2", "--protected", "5")
    rep = json.loads(out)
    assert code == 0 and rep["protected_client_shares_in_view"] == 2
    assert rep["messages_in_view"] == 2 * 300 + 3
    assert run(capsys, "audit-view", "--transcript", str(t), "--honest-agg", "4", "--protected", "5")[0] == 2


def test_timing_flag(capsys, files):
    _, out, _ = run(capsys, "count", "--data", files["data"], "--timing")
    assert json.loads(out)["timing_seconds"] >= 0


def test_console_script(files):
    r = subprocess.run([sys.executable, "-m", "mcdp.cli", "account", "--sigma", "2", "--delta", "1e-6"],
                       capture_output=True, text=True, check=True)
    assert json.loads(r.stdout)["rho"] == 0.125
