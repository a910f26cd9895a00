import csv
import json
import os
import subprocess
import sys
import urllib.request
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
CLI = [sys.executable, "-m", "catcache.cli"]


def run(args, **kw):
    return subprocess.run(CLI + args, capture_output=True, text=True, timeout=120, **kw)


def test_economics_command(tmp_path):
    out = tmp_path / "t1.csv"
    r = run(["economics", "--workload", str(ROOT / "scenarios" / "long_tail_workload.json"), "--out", str(out)])
    assert r.returncode == 0, r.stderr
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert [row["vdb_viable"] for row in rows] == ["true", "true"] + ["false"] * 5
    assert all(row["hybrid_viable"] == "true" for row in rows)


def test_simulate_command(tmp_path):
    scen = {
        "seed": 1, "n_queries": 500, "dimension": 16,
        "index": {"m": 8, "ef_construction": 32},
        "models": [{"model_id": "A", "t_base": 200}],
        "categories": [{"category_id": "code", "traffic_share": 1.0, "pool_size": 50, "model_id": "A",
                        "paraphrase_noise": 0.1,
                        "policy": {"base_threshold": 0.9, "base_ttl": 3600, "quota_fraction": 1.0}}],
    }
    path = tmp_path / "s.json"
    path.write_text(json.dumps(scen))
    r = run(["simulate", "--scenario", str(path), "--out", str(tmp_path / "out")])
    assert r.returncode == 0, r.stderr
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["per_category"]["code"]["queries"] == 500
    assert (tmp_path / "out" / "timeseries.csv").exists()


def test_invalid_input_exit_code(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"categories": []}))
    r = run(["simulate", "--scenario", str(path), "--out", str(tmp_path / "o")])
    assert r.returncode == 2 and "missing_field" in r.stderr
    r = run(["economics", "--workload", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o.csv")])
    assert r.returncode == 1


def test_log_level_from_environment(tmp_path):
    env = dict(os.environ, CATCACHE_LOG="DEBUG")
    r = run(["economics", "--workload", str(ROOT / "scenarios" / "long_tail_workload.json"),
             "--out", str(tmp_path / "o.csv")], env=env)
    assert r.returncode == 0
    assert "DEBUG" in r.stderr


def test_serve_command(tmp_path):
    proc = subprocess.Popen(CLI + ["serve", "--config", str(ROOT / "scenarios" / "categories.json"),
                                   "--listen", "127.0.0.1:0", "--dimension", "8",
                                   "--store", str(tmp_path / "docs.log")],
                            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    try:
        line = proc.stdout.readline()
        assert "listening on" in line, proc.stderr.read() if proc.poll() is not None else line
        base = line.strip().rsplit(" ", 1)[1]
        req = urllib.request.Request(base + "/v1/insert", method="POST", data=json.dumps(
            {"category": "code", "text": "hi", "response_body": "aGk="}).encode())
        with urllib.request.urlopen(req, timeout=10) as resp:
            assert json.loads(resp.read()) == {"outcome": "stored"}
        with urllib.request.urlopen(base + "/v1/stats", timeout=10) as resp:
            stats = json.loads(resp.read())
        assert stats["categories"]["code"]["insertions"] == 1
        assert stats["policies"]["medical"]["registered"]
    finally:
        proc.terminate()
        proc.wait(timeout=10)
    assert (tmp_path / "docs.log").stat().st_size > 0


def test_serve_rejects_bad_config(tmp_path):
    bad = tmp_path / "c.json"
    bad.write_text(json.dumps([{"category_id": "a", "base_threshold": 0.9, "base_ttl": 60,
                                "quota_fraction": 0.8},
                               {"category_id": "b", "base_threshold": 0.9, "base_ttl": 60,
                                "quota_fraction": 0.8}]))
    r = run(["serve", "--config", str(bad), "--listen", "127.0.0.1:0"])
    assert r.returncode == 2 and "quota_sum_exceeded" in r.stderr


@pytest.mark.parametrize("args", [[], ["bogus"], ["simulate"]])
def test_usage_errors(args):
    assert run(args).returncode == 2
