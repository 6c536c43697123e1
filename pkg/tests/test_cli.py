import io
import json
import os
import subprocess
import sys
from contextlib import redirect_stdout

import numpy as np
import pytest

from batchpost.cli import main


def run_cli(argv) -> tuple:
    buf = io.StringIO()
    with redirect_stdout(buf):
        code = main(argv)
    return code, buf.getvalue()


def write_series(tmp_path, values, name="prices.csv"):
    path = tmp_path / name
    path.write_text("fee_gwei\n" + "".join(f"{v}\n" for v in values))
    return str(path)


def test_backtest_trivial_identity(tmp_path):
    prices = write_series(tmp_path, [10.0, 20.0, 30.0])
    code, out = run_cli(["backtest", "--policy", '{"kind":"trivial"}', "--prices", prices])
    assert code == 0
    doc = json.loads(out)
    assert doc["delayCost"] == 0
    assert doc["maxDelay"] == 0
    assert doc["publishingCost"] == 60
    assert doc["maxPostedInOneRound"] == 1


def test_dp_oracle_example_golden_bytes():
    code, out = run_cli(["dp", "--prices", "1,10,1", "--c", "1", "--oracle"])
    assert code == 0
    assert out == (
        '{"c":1,"oracleCost":4,"oracleMatch":true,"rounds":3,'
        '"schedule":[1,0,2],"totalCost":4,"zeroOrAllFraction":1}\n'
    )


def test_solve_micro_then_analyze(tmp_path):
    tables = str(tmp_path / "tables.json")
    policy_csv = str(tmp_path / "policy.csv")
    code, _ = run_cli(
        ["solve", "--preset", "micro", "--kernel", "synthetic", "--out", tables,
         "--policy-csv", policy_csv]
    )
    assert code == 0
    csv_lines = open(policy_csv).read().strip().splitlines()
    assert csv_lines[0] == "queueLen,p0,p1,p2,p3,p4"
    assert len(csv_lines) == 6  # header + queue levels 0..4
    code, out = run_cli(["analyze", "--tables", tables, "--exempt-top", "0.0"])
    assert code == 0
    doc = json.loads(out)
    assert doc["monotonicityViolationCount"] == 0
    assert doc["thresholdPriceIndex"] >= -1
    assert os.path.exists(tables + ".manifest.json")
    manifest = json.loads(open(tables + ".manifest.json").read())
    assert manifest["subcommand"] == "solve"
    assert manifest["toolVersion"]
    assert tables in manifest["outputs"]


def test_synth_deterministic_and_ingest_round_trip(tmp_path):
    out1 = str(tmp_path / "a.csv")
    out2 = str(tmp_path / "b.csv")
    argv = ["synth", "--dist", "minute", "--length", "200", "--seed", "9",
            "--floor", "1", "--out"]
    assert run_cli(argv + [out1])[0] == 0
    assert run_cli(argv + [out2])[0] == 0
    assert open(out1).read() == open(out2).read()

    code, out = run_cli(["ingest", "--prices", out1, "--stride", "5"])
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "fee_gwei"
    assert len(lines) - 1 == 40  # 200 points, stride 5


def test_synth_requires_seed():
    code, _ = run_cli(["synth", "--length", "10"])
    assert code == 1


def test_histogram_formats(tmp_path):
    prices = write_series(tmp_path, [8.0, 9.0, 9.0])
    code, out = run_cli(["histogram", "--prices", prices, "--bin-width", "0.05"])
    assert code == 0
    doc = json.loads(out)
    assert doc["total"] == 2
    code, out = run_cli(
        ["histogram", "--prices", prices, "--bin-width", "0.05", "--format", "csv"]
    )
    assert code == 0
    assert out.splitlines()[0] == "binStart,binEnd,count"


def test_sweep_csv_output(tmp_path):
    prices = write_series(tmp_path, list(np.linspace(20, 120, 60)))
    code, out = run_cli(
        ["sweep", "--family", "priceMin", "--param", "T=40,60,80",
         "--prices", prices, "--c", "1"]
    )
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0].startswith("T,publishingCost,delayCost")
    assert len(lines) == 4
    # deterministic re-run
    assert run_cli(
        ["sweep", "--family", "priceMin", "--param", "T=40,60,80",
         "--prices", prices, "--c", "1"]
    )[1] == out


def test_sweep_json_output(tmp_path):
    prices = write_series(tmp_path, list(np.linspace(20, 120, 40)))
    code, out = run_cli(
        ["sweep", "--family", "qThreshold", "--param", "Tp=40,60",
         "--param", "d=1,2", "--prices", prices, "--format", "json"]
    )
    assert code == 0
    rows = json.loads(out)
    assert len(rows) == 4
    assert all("report" in r for r in rows)
    assert any(r["pareto"] for r in rows)


def test_exit_codes(tmp_path):
    assert run_cli(["dp", "--bogus"])[0] == 1
    assert run_cli(["dp"])[0] == 1  # neither --prices nor --prices-file
    assert run_cli(["backtest", "--policy", "{bad json", "--prices", "x.csv"])[0] == 1
    assert run_cli(
        ["backtest", "--policy", '{"kind":"trivial"}', "--prices",
         str(tmp_path / "missing.csv")]
    )[0] == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("fee_gwei\n-3\n")
    assert run_cli(
        ["backtest", "--policy", '{"kind":"trivial"}', "--prices", str(bad)]
    )[0] == 2
    assert run_cli(
        ["solve", "--preset", "micro", "--kernel", "synthetic", "--max-iter", "2"]
    )[0] == 3


def test_backtest_trace_and_flags(tmp_path):
    prices = write_series(tmp_path, [200.0] * 6)
    trace = str(tmp_path / "trace.csv")
    code, out = run_cli(
        ["backtest", "--policy", '{"kind":"priceMin","T":60}', "--prices", prices,
         "--trace", trace, "--flush-at-end"]
    )
    assert code == 0
    doc = json.loads(out)
    assert doc["finalQueueLen"] == 0
    rows = open(trace).read().strip().splitlines()
    assert rows[0] == "round,price,queueBefore,nPost,postingCost,delayCost"
    assert len(rows) == 7
    assert os.path.exists(trace + ".manifest.json")


def test_backtest_learned_from_tables(tmp_path):
    tables = str(tmp_path / "tables.json")
    assert run_cli(
        ["solve", "--preset", "micro", "--kernel", "synthetic", "--out", tables]
    )[0] == 0
    prices = write_series(tmp_path, [30.0, 90.0, 25.0, 60.0, 21.0])
    code, out = run_cli(["backtest", "--tables", tables, "--prices", prices])
    assert code == 0
    doc = json.loads(out)
    assert doc["batchesCreated"] == 5


def test_data_dir_env(tmp_path, monkeypatch):
    write_series(tmp_path, [10.0, 11.0], name="env.csv")
    monkeypatch.setenv("BATCHPOST_DATA_DIR", str(tmp_path))
    code, out = run_cli(["backtest", "--policy", '{"kind":"trivial"}',
                         "--prices", "env.csv"])
    assert code == 0
    assert json.loads(out)["rounds"] == 2


def test_backtest_tips_and_exclude_unposted(tmp_path):
    prices = write_series(tmp_path, [10.0, 200.0, 200.0])
    tips = write_series(tmp_path, [1.0, 1.0, 1.0], name="tips.csv")
    code, out = run_cli(
        ["backtest", "--policy", '{"kind":"priceMin","T":15}', "--prices", prices,
         "--tips", tips, "--exclude-unposted"]
    )
    assert code == 0
    doc = json.loads(out)
    assert doc["publishingCost"] == 11.0  # 10 + 1 tip, only round 0 posts
    assert doc["includeUnpostedInDelayStats"] is False
    assert doc["maxDelay"] == 0  # stranded batches excluded
    bad_tips = write_series(tmp_path, [1.0], name="short.csv")
    code, _ = run_cli(
        ["backtest", "--policy", '{"kind":"trivial"}', "--prices", prices,
         "--tips", bad_tips]
    )
    assert code == 2


def test_backtest_golden_bytes(tmp_path):
    prices = write_series(tmp_path, [10.0, 20.0, 30.0])
    code, out = run_cli(
        ["backtest", "--policy", '{"kind":"priceMin","T":15}', "--prices", prices]
    )
    assert code == 0
    # rounds: post@10, hold (delay 1), hold (delay 4); stranded batches from
    # rounds 1 and 2 have final ages 1 and 0, so avg = (0+1+0)/3
    assert out == (
        '{"avgDelay":0.333333,"batchesCreated":3,"batchesPosted":1,"costWeight":1,'
        '"delayCost":5,"finalQueueLen":2,"includeUnpostedInDelayStats":true,'
        '"maxDelay":1,"maxPostedInOneRound":1,"publishingCost":10,"rounds":3}\n'
    )


def test_solve_kernel_save_and_reload(tmp_path):
    kernel_path = str(tmp_path / "kernel.json")
    base = ["solve", "--preset", "micro", "--max-iter", "5000"]
    code, first = run_cli(base + ["--kernel", "synthetic", "--save-kernel", kernel_path])
    assert code == 0
    assert os.path.exists(kernel_path + ".manifest.json")
    code, second = run_cli(base + ["--kernel", kernel_path])
    assert code == 0
    assert json.loads(first)["policy"] == json.loads(second)["policy"]


def test_solve_empirical_kernel(tmp_path):
    rng = np.random.default_rng(0)
    walk = 100.0 * np.cumprod(rng.uniform(0.9, 1.12, size=400))
    prices = write_series(tmp_path, list(np.maximum(walk, 5.0)))
    code, out = run_cli(
        ["solve", "--preset", "micro", "--kernel", "synthetic",
         "--empirical-from", prices, "--bins", "16"]
    )
    assert code == 0
    assert json.loads(out)["converged"] is True


def test_sweep_variant_flag(tmp_path):
    prices = write_series(tmp_path, list(np.linspace(20, 150, 50)))
    out_a = run_cli(["sweep", "--family", "qThreshold", "--param", "Tp=40",
                     "--param", "d=1", "--prices", prices])[1]
    out_b = run_cli(["sweep", "--family", "qThreshold", "--param", "Tp=40",
                     "--param", "d=1", "--variant", "toThreshold",
                     "--prices", prices])[1]
    assert out_a != out_b  # variants post differently above the threshold


def test_solve_determinism_across_thread_env(tmp_path):
    # byte-identical machine output at different numba thread counts
    outputs = []
    for threads in ("1", "2"):
        env = dict(os.environ, NUMBA_NUM_THREADS="2")
        result = subprocess.run(
            [sys.executable, "-m", "batchpost", "solve", "--preset", "micro",
             "--kernel", "synthetic", "--threads", threads],
            env=env, capture_output=True, text=True,
        )
        assert result.returncode == 0, result.stderr
        outputs.append(result.stdout)
    assert outputs[0] == outputs[1]
