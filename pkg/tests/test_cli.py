import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from evpricing.cli import main

from conftest import tiny_doc

FAST = ["--population", "20", "--max-iters", "3", "--elite-ratio", "0.1"]


@pytest.fixture
def tiny_path(tmp_path):
    p = tmp_path / "tiny.json"
    p.write_text(json.dumps(tiny_doc(n_stations=2, hours=3, counts=[4, 6, 2])))
    return p


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def check_totals(out):
    rows = read_csv(out / "hourly.csv")
    tot = json.loads((out / "totals.json").read_text())
    for col, key in (("queue_penalty", "total_queue_penalty"), ("ev_utility", "total_ev_utility"),
                     ("cs_revenue", "total_cs_revenue"), ("PI", "total_PI")):
        assert sum(float(r[col]) for r in rows) == pytest.approx(tot[key], abs=1e-6)
    return rows, tot


def test_run_fixed_dc(tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--scenario", "desk", "--pricing", "fixed", "--choice", "dc", "--out", str(out)]) == 0
    rows, tot = check_totals(out)
    assert len(rows) == 24
    assert tot["metadata"]["strategy"] == "fixed" and tot["metadata"]["mode"] == "deterministic_dc"
    assert all(float(r["price_0"]) == 0.5 for r in rows)


def test_csv_format(tmp_path):
    out = tmp_path / "o"
    main(["run", "--scenario", "desk", "--out", str(out)])
    raw = (out / "hourly.csv").read_bytes()
    assert b"\r" not in raw
    first = raw.decode().splitlines()[1].split(",")
    assert all(len(v.split(".")[1]) == 6 for v in first[1:])


def test_tou_switches_at_peak_edges(tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--scenario", "desk", "--pricing", "tou", "--out", str(out)]) == 0
    prices = [float(r["price_0"]) for r in read_csv(out / "hourly.csv")]
    changes = [h for h in range(1, 24) if prices[h] != prices[h - 1]]
    assert changes == [8, 18]


def test_run_byte_identical(tmp_path):
    for k in (1, 2):
        main(["run", "--scenario", "desk", "--pricing", "tou", "--seed", "9", "--threads", str(k),
              "--out", str(tmp_path / f"o{k}")])
    for f in ("hourly.csv", "totals.json"):
        assert (tmp_path / "o1" / f).read_bytes() == (tmp_path / "o2" / f).read_bytes()


def test_optimize_and_replay(tmp_path, tiny_path):
    out = tmp_path / "opt"
    code = main(["optimize", "--scenario", str(tiny_path), "--out", str(out), *FAST])
    assert code == 0
    for f in ("prices.json", "trace.csv", "report.svg", "totals.json", "hourly.csv"):
        assert (out / f).exists()
    prices = np.array(json.loads((out / "prices.json").read_text())["prices"])
    assert prices.shape == (2, 3) and prices.min() >= 0.2 and prices.max() <= 0.8
    trace = read_csv(out / "trace.csv")
    assert list(trace[0]) == ["window", "iteration", "best", "mean", "elite_min", "elite_max", "mean_sigma", "active_count"]
    for w in {r["window"] for r in trace}:
        best = [float(r["best"]) for r in trace if r["window"] == w]
        assert all(b2 >= b1 for b1, b2 in zip(best, best[1:]))
    assert (out / "report.svg").read_text().startswith("<svg")
    check_totals(out)

    replay = tmp_path / "replay"
    assert main(["run", "--scenario", str(tiny_path), "--pricing", "dynamic-file",
                 "--schedule", str(out / "prices.json"), "--out", str(replay)]) == 0
    a = json.loads((out / "totals.json").read_text())
    b = json.loads((replay / "totals.json").read_text())
    # the replay sees the 6-decimal prices, so totals agree to rounding
    assert b["total_PI"] == pytest.approx(a["total_PI"], rel=1e-4)


def test_one_station_one_hour(tmp_path):
    p = tmp_path / "one.json"
    p.write_text(json.dumps(tiny_doc(n_stations=1, hours=1, counts=[3])))
    out = tmp_path / "o"
    assert main(["optimize", "--scenario", str(p), "--out", str(out), *FAST]) == 0
    prices = json.loads((out / "prices.json").read_text())["prices"]
    assert len(prices) == 1 and len(prices[0]) == 1 and 0.2 <= prices[0][0] <= 0.8


def test_strict_flags_non_convergence(tmp_path, tiny_path):
    out = tmp_path / "o"
    assert main(["optimize", "--scenario", str(tiny_path), "--population", "10", "--max-iters", "2",
                 "--out", str(out), "--strict"]) == 3
    assert json.loads((out / "totals.json").read_text())["non_converged_windows"]
    assert main(["optimize", "--scenario", str(tiny_path), "--population", "10", "--max-iters", "2",
                 "--out", str(out)]) == 0


def test_compare(tmp_path, tiny_path):
    out = tmp_path / "o"
    assert main(["compare", "--scenario", str(tiny_path), "--out", str(out), *FAST]) == 0
    rows = read_csv(out / "compare.csv")
    assert [r["strategy"] for r in rows] == ["fixed", "tou", "dynamic"]
    assert list(rows[0]) == ["strategy", "total_ev_utility", "total_cs_revenue", "total_queue_penalty", "total_PI"]
    # baseline rows do not depend on the optimizer budget
    out2 = tmp_path / "o2"
    main(["compare", "--scenario", str(tiny_path), "--out", str(out2), "--population", "30", "--max-iters", "2"])
    assert read_csv(out2 / "compare.csv")[:2] == rows[:2]


def test_omega_sweep(tmp_path, tiny_path):
    out = tmp_path / "o"
    assert main(["omega-sweep", "--scenario", str(tiny_path), "--omegas", "0,0.5,1", "--out", str(out), *FAST]) == 0
    rows = read_csv(out / "omega_sweep.csv")
    assert len(rows) == 3
    assert float(rows[0]["PI"]) == pytest.approx(float(rows[0]["U_EV"]), abs=1e-6)
    assert float(rows[2]["PI"]) == pytest.approx(float(rows[2]["R_CS"]), abs=1e-6)


def test_omega_sweep_default_list(tmp_path, tiny_path):
    out = tmp_path / "o"
    assert main(["omega-sweep", "--scenario", str(tiny_path), "--out", str(out), "--population", "10",
                 "--max-iters", "1"]) == 0
    assert [float(r["omega"]) for r in read_csv(out / "omega_sweep.csv")] == [0.1, 0.3, 0.5, 0.7, 0.9]


def test_exit_codes(tmp_path, tiny_path):
    assert main(["run", "--scenario", "no_such_scenario", "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{ nope")
    assert main(["run", "--scenario", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["run", "--scenario", str(tiny_path), "--price-level", "0.95", "--out", str(tmp_path)]) == 2
    assert main(["omega-sweep", "--scenario", str(tiny_path), "--omegas", "1.5", "--out", str(tmp_path)]) == 2
    assert main(["run", "--scenario", str(tiny_path), "--pricing", "dynamic-file", "--out", str(tmp_path)]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["run"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1


def test_console_script(tmp_path):
    r = subprocess.run([sys.executable, "-m", "evpricing.cli", "run", "--scenario", "desk", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "hourly.csv").exists()
