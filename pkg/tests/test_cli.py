import json
import os
import subprocess
import sys

import pytest

from infbond.__main__ import main
from infbond.scenarios import (BUNDLED, ScenarioError, dumps, emit_report, format_float, load_scenario,
                               parse_scenario, run_experiments)

BASE_MARKET = {"N": 1, "horizon": 1.0, "steps": 10, "curve": {"kind": "flat", "rate": 0.0},
               "vol": {"kind": "zero"}, "gamma": {"kind": "zero"}}


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(doc if isinstance(doc, str) else json.dumps(doc))
    return str(path)


def run_cli(*args):
    return subprocess.run([sys.executable, "-m", "infbond", *args], capture_output=True, text=True)


def read_dir(d):
    return {f: open(os.path.join(d, f), "rb").read() for f in sorted(os.listdir(d))}


class TestBundled:
    def test_flat_zero_vol(self, tmp_path):
        out = tmp_path / "out"
        proc = run_cli("run", "flat-zero-vol", "--out", str(out))
        assert proc.returncode == 0, proc.stderr
        report = json.loads((out / "report.json").read_text())
        assert report["passed"] and [e["type"] for e in report["experiments"]] == ["simulate", "hedge"]
        hedge = json.loads((out / "money-account.json").read_text())
        run = hedge["result"]["runs"][0]
        assert run["initial_wealth_exact"] and run["replication"]["l2_error"] <= 1e-12

    def test_binary_hedge(self, tmp_path):
        out = tmp_path / "out"
        assert main(["run", "binary-hedge", "--out", str(out)]) == 0
        lines = (out / "binary-replication.csv").read_text().splitlines()
        assert lines[0] == ("refine,steps,relative_l2_error,relative_mean_abs_error,max_hedge_residual,"
                            "max_realized_sf_residual,sf_tolerance")
        assert len(lines) == 3

    def test_bundled_names(self):
        for name in BUNDLED:
            assert load_scenario(name).name == name


class TestExitCodes:
    def test_unknown_experiment(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"market": BASE_MARKET, "experiments": [{"type": "teleport"}]})
        assert main(["run", cfg, "--out", str(tmp_path / "o")]) == 2
        assert "experiments[0].type" in capsys.readouterr().err

    def test_json_syntax_error_location(self, tmp_path, capsys):
        cfg = write_config(tmp_path, '{\n  "market": {,\n}')
        assert main(["run", cfg]) == 2
        assert "cfg.json:2:" in capsys.readouterr().err

    def test_missing_file(self, capsys):
        assert main(["run", "/nonexistent/config.json"]) == 2

    def test_unknown_claim_reference(self, tmp_path):
        cfg = write_config(tmp_path, {"market": BASE_MARKET,
                                      "experiments": [{"type": "hedge", "claim": "nope"}]})
        assert main(["run", cfg, "--out", str(tmp_path / "o")]) == 2

    def test_bad_arguments(self, tmp_path):
        cfg = write_config(tmp_path, {"market": BASE_MARKET})
        assert main(["run", cfg, "--paths", "0"]) == 2

    def test_assertion_failure(self, tmp_path, capsys):
        doc = {"market": BASE_MARKET, "paths": 10,
               "experiments": [{"name": "sim", "type": "simulate",
                                "assert": [{"metric": "boundary_residual", "op": ">", "value": 1.0}]}]}
        assert main(["run", write_config(tmp_path, doc), "--out", str(tmp_path / "o")]) == 1
        assert "sim" in capsys.readouterr().err

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        cfg = write_config(tmp_path, {"market": BASE_MARKET})
        assert main(["run", cfg, "--out", str(blocker / "sub")]) == 3


class TestReports:
    def test_empty_experiment_list(self, tmp_path):
        cfg = write_config(tmp_path, {"name": "empty", "market": BASE_MARKET})
        out = tmp_path / "o"
        assert main(["run", cfg, "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report == {"scenario": "empty", "seed": 0, "paths": 1000, "experiments": [], "passed": True}

    def test_rerun_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["run", "flat-zero-vol", "--out", str(a), "--seed", "3"]) == 0
        assert main(["run", "flat-zero-vol", "--out", str(b), "--seed", "3"]) == 0
        assert read_dir(a) == read_dir(b)

    def test_experiment_filter(self, tmp_path):
        out = tmp_path / "o"
        assert main(["run", "flat-zero-vol", "--out", str(out), "--experiment", "money-account"]) == 0
        assert sorted(os.listdir(out)) == ["money-account.csv", "money-account.json", "report.json"]

    def test_float_format(self):
        assert format_float(0.1) == "0.10000000000000001"
        assert format_float(float("inf")) == '"inf"'
        assert json.loads(dumps({"b": 1.0, "a": [float("nan")]})) == {"b": 1.0, "a": ["nan"]}
        assert list(json.loads(dumps({"z": 1, "a": 2}))) == ["z", "a"]

    def test_table_headers(self, tmp_path):
        doc = {"name": "tables", "paths": 20,
               "market": {**BASE_MARKET, "N": 4, "vol": {"kind": "scenario_a"}},
               "claims": {"ce": {"kind": "product_counterexample", "n_max": 64}},
               "experiments": [
                   {"name": "sim", "type": "simulate", "track_dates": [2.0]},
                   {"name": "comp", "type": "check-completeness", "s": [1.0], "levels": [2, 4]},
                   {"name": "demo", "type": "demo-incomplete", "levels": [2, 4]},
                   {"name": "diag", "type": "diagnose-ds", "claim": "ce", "s": [0.0], "levels": [16, 64]},
               ]}
        sc = parse_scenario(json.dumps(doc))
        out = tmp_path / "o"
        emit_report(run_experiments(sc), str(out), sc.name, sc.seed, sc.paths)
        headers = {f: (out / f).read_text().splitlines()[0] for f in os.listdir(out) if f.endswith(".csv")}
        assert headers == {"sim.csv": "date,time,mean_discounted_price,se,initial_price",
                           "comp.csv": "s,level,k",
                           "demo.csv": "level,preimage_norm",
                           "diag.csv": "s,p,level,integrand_norm"}

    def test_scenario_error_is_invalid_input(self):
        with pytest.raises(ScenarioError):
            parse_scenario("[]")
