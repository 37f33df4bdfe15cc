import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from tcmv.cli import main
from tcmv.config import digest, dump_config, load_config
from tcmv.errors import ConfigError
from tcmv.market_tree import build_from_config
from tcmv.outputs import fmt, read_csv
from tcmv.solvers import solve_lmve_recursion

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, name, doc):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


ZERO_DRIFT = {
    "kind": "explicit-tree", "horizon": 2, "gamma": 1.0, "x": 2.0,
    "nodes": [
        {"id": "r", "price": 10, "children": ["u", "d"], "probs": [0.5, 0.5]},
        {"id": "u", "price": 11, "children": ["uu", "ud"], "probs": [0.5, 0.5]},
        {"id": "d", "price": 9, "children": ["du", "dd"], "probs": [0.5, 0.5]},
        {"id": "uu", "price": 12}, {"id": "ud", "price": 10},
        {"id": "du", "price": 10}, {"id": "dd", "price": 8},
    ],
}

VIOLATION = {
    "kind": "explicit-tree", "horizon": 1, "gamma": 1.0, "x": 0.0,
    "nodes": [{"id": "r", "price": 1, "children": ["a"], "probs": [1.0]}, {"id": "a", "price": 2}],
}


@pytest.mark.parametrize("name", ["binomial_gbm.json", "explicit_tree.json", "regime.json",
                                  "regime_rates.json"])
def test_config_round_trip(tmp_path, name):
    doc = load_config(CONFIGS / name)
    dump_config(doc, tmp_path / name)
    assert load_config(tmp_path / name) == doc


def test_unknown_key_named(tmp_path):
    doc = load_config(CONFIGS / "binomial_gbm.json")
    doc["gamma_"] = 2.0
    with pytest.raises(ConfigError, match="gamma_"):
        dump_config(doc, tmp_path / "bad.json")
    doc.pop("gamma_")
    doc["spec"]["sigma_"] = 1
    with pytest.raises(ConfigError, match="spec.*sigma_"):
        dump_config(doc, tmp_path / "bad.json")


def test_malformed_and_exclusive(tmp_path):
    p = tmp_path / "m.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="malformed"):
        load_config(p)
    doc = dict(ZERO_DRIFT, spec={"model": "multiplicative", "s0": 1, "u": 2, "d": 0.5, "p_up": 0.5})
    with pytest.raises(ConfigError, match="mutually exclusive"):
        load_config(write(tmp_path, "x.json", doc))


def test_digest_is_content_hash(tmp_path):
    p = CONFIGS / "explicit_tree.json"
    assert digest(p) == hashlib.sha256(p.read_bytes()).hexdigest()
    q = tmp_path / "copy.json"
    q.write_bytes(p.read_bytes())
    assert digest(q) == digest(p)


def test_fmt_round_trip():
    rng = np.random.default_rng(0)
    for v in rng.normal(size=1000) * 10.0 ** rng.integers(-20, 20, size=1000):
        assert float(fmt(v)) == v
    assert fmt(None) == "" and fmt(3) == "3"


def test_solve_zero_drift_csv(tmp_path, capsys):
    cfg = write(tmp_path, "z.json", ZERO_DRIFT)
    assert main(["solve", str(cfg), "--kind", "lmve", "--out-dir", str(tmp_path)]) == 0
    _, header, rows = read_csv(tmp_path / "solve.csv")
    assert header == ["node_id", "level", "price", "theta", "Z", "U"]
    for r in rows:
        assert r[3] in ("", "0.0") and float(r[4]) == 0.0 and float(r[5]) == 2.0
    man = json.loads((tmp_path / "solve.manifest.json").read_text())
    assert man["config_sha256"] == digest(cfg) and man["command"] == "solve"


def test_solve_csv_is_lossless(tmp_path):
    cfg = CONFIGS / "regime.json"
    assert main(["solve", str(cfg), "--kind", "lmve", "--out-dir", str(tmp_path)]) == 0
    doc = load_config(cfg)
    tree = build_from_config(doc)
    res = solve_lmve_recursion(tree, doc["gamma"], doc["x"])
    _, header, rows = read_csv(tmp_path / "solve.csv")
    got = np.array([float(r[3]) for r in rows if r[3] != ""])
    assert np.max(np.abs(got - res.strategy.flat())) <= 1e-15
    assert main(["solve", str(cfg), "--kind", "mmve", "--out", "jsonl",
                 "--out-dir", str(tmp_path)]) == 0
    recs = [json.loads(line) for line in (tmp_path / "solve.jsonl").read_text().splitlines()]
    assert len(recs) == tree.n_nodes


def test_solve_sc_violation_exit_1(tmp_path, capsys):
    cfg = write(tmp_path, "v.json", VIOLATION)
    assert main(["solve", str(cfg), "--kind", "lmve", "--out-dir", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "nodes: r" in err


def test_usage_errors_exit_64(tmp_path, capsys):
    assert main(["frobnicate"]) == 64
    assert main(["solve", str(CONFIGS / "regime.json")]) == 64  # --kind missing


def test_config_error_exit_1(tmp_path, capsys):
    doc = dict(ZERO_DRIFT, gamma_=1.0)
    assert main(["solve", str(write(tmp_path, "b.json", doc)), "--kind", "lmve",
                 "--out-dir", str(tmp_path)]) == 1
    assert "gamma_" in capsys.readouterr().err


def test_nonconvergence_exit_2(tmp_path, capsys):
    assert main(["decompose", str(CONFIGS / "regime.json"), "--method", "fixed-point",
                 "--cap", "1", "--out-dir", str(tmp_path)]) == 2


def test_decompose_output(tmp_path):
    assert main(["decompose", str(CONFIGS / "explicit_tree.json"), "--out-dir", str(tmp_path)]) == 0
    comments, header, rows = read_csv(tmp_path / "decompose.csv")
    assert header == ["node_id", "level", "xi_hat", "L_hat", "deltaK"]
    assert comments[0].startswith("K0_hat=")
    assert len(rows) == 7


def test_diagnose_output_and_violation_warning(tmp_path, capsys):
    assert main(["diagnose", str(CONFIGS / "explicit_tree.json"), "--out-dir", str(tmp_path)]) == 0
    recs = [json.loads(s) for s in (tmp_path / "diagnose.jsonl").read_text().splitlines()]
    assert recs[-1]["record"] == "summary" and recs[-1]["sc_holds"]
    assert recs[0]["lambda"] == pytest.approx(5 / 27)
    cfg = write(tmp_path, "v.json", VIOLATION)
    assert main(["diagnose", str(cfg), "--out-dir", str(tmp_path)]) == 0
    assert "warning" in capsys.readouterr().err


def test_verify_and_selftest(tmp_path, capsys):
    assert main(["verify", str(CONFIGS / "explicit_tree.json"), "--perturbations", "100",
                 "--out-dir", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "verify.json").read_text())
    assert rep["passed"]
    cfg = write(tmp_path, "v.json", VIOLATION)
    assert main(["verify", str(cfg), "--out-dir", str(tmp_path)]) == 1
    assert main(["selftest", "--out-dir", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "selftest.json").read_text())["passed"]


def test_converge_rejects_explicit_tree(tmp_path, capsys):
    assert main(["converge", str(CONFIGS / "explicit_tree.json"), "--out-dir", str(tmp_path)]) == 1


def test_converge_small(tmp_path):
    assert main(["converge", str(CONFIGS / "binomial_gbm.json"), "--n-list", "8,32",
                 "--plot-csv", "--out-dir", str(tmp_path)]) == 0
    _, header, rows = read_csv(tmp_path / "converge.csv")
    assert header[0] == "n" and "seconds" not in header and len(rows) == 2
    _, pheader, _ = read_csv(tmp_path / "converge.plot.csv")
    assert pheader[0] == "log10_n"
    assert json.loads((tmp_path / "converge.rates.json").read_text())["rates"]


def test_threads_flag_position_and_env(tmp_path, monkeypatch, capsys):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main(["--threads", "1", "example-bm", "--paths", "500", "--dt", "0.01",
                 "--out-dir", str(a)]) == 0
    assert main(["example-bm", "--paths", "500", "--dt", "0.01", "--threads", "2",
                 "--out-dir", str(b)]) == 0
    monkeypatch.setenv("TCMV_THREADS", "2")
    assert main(["--out-dir", str(c), "example-bm", "--paths", "500", "--dt", "0.01"]) == 0
    ref = (a / "example_bm.json").read_bytes()
    assert (b / "example_bm.json").read_bytes() == ref == (c / "example_bm.json").read_bytes()
    out = capsys.readouterr().out
    assert '"E[sigma]"' in out
