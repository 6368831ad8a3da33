import csv
import json
import subprocess
import sys

import pytest

from batchroute.cli import main

from instances import DATA


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def pool_doc(*models):
    return {"models": [{"id": i, "input_price": p, "output_price": p, "system_prompt_tokens": t}
                       for i, p, t in models]}


def workload_doc(n, labels=True, k=1, batch_utilities=None):
    qs = []
    for i in range(n):
        q = {"id": f"q{i}", "embedding": [float(i % 5), float(i // 5)], "input_tokens": 10,
             "expected_output_tokens": 2}
        if labels:
            q["truth_utilities"] = [(i + j) % 2 for j in range(k)]
        if batch_utilities:
            q["batch_utilities"] = batch_utilities
        qs.append(q)
    return {"dim": 2, "queries": qs}


def test_route_golden_trace(tmp_path, capsys):
    rc = main(["route", "--frontiers", str(DATA / "running_example.json"), "--budget", "100",
               "--out", str(tmp_path)])
    assert rc == 0
    assert (tmp_path / "trace.csv").read_text() == (DATA / "running_example_trace.csv").read_text()
    rows = list(csv.DictReader(open(tmp_path / "trace.csv")))
    assert [(r["query"], r["budget_after"]) for r in rows[1:4]] == [("q1", "38.4"), ("q5", "35.0"), ("q3", "26.0")]
    assert "amortized spend 98.2" in capsys.readouterr().out


def test_route_budget_infeasible(tmp_path, capsys):
    rc = main(["route", "--frontiers", str(DATA / "running_example.json"), "--budget", "50",
               "--out", str(tmp_path)])
    assert rc == 2
    assert "budget infeasible" in capsys.readouterr().err


def test_route_huge_budget(tmp_path):
    assert main(["route", "--frontiers", str(DATA / "running_example.json"), "--budget", "1000000000",
                 "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "assignment.json").read_text())
    frontiers = json.loads((DATA / "running_example.json").read_text())["frontiers"]
    last = {f["query"]: (f["entries"][-1]["model"], f["entries"][-1]["batch"]) for f in frontiers}
    assert {a["query"]: (a["model"], a["batch"]) for a in doc["assignment"]} == last


def test_schema_and_io_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["route", "--frontiers", str(bad), "--budget", "1", "--out", str(tmp_path)]) == 3
    assert main(["route", "--frontiers", str(tmp_path / "missing.json"), "--budget", "1",
                 "--out", str(tmp_path)]) == 3
    desc = write(tmp_path / "desc.json", pool_doc(("a", "0.02", 10), ("b", "0.01", 10)))
    wl = write(tmp_path / "w.json", workload_doc(4))
    assert main(["calibrate", "--pool", desc, "--workload", wl, "--out", str(tmp_path)]) == 3


def test_calibrate_missing_labels(tmp_path, capsys):
    pool = write(tmp_path / "p.json", pool_doc(("a", "0.01", 100)))
    wl = write(tmp_path / "w.json", workload_doc(4, labels=False))
    assert main(["calibrate", "--pool", pool, "--workload", wl, "--out", str(tmp_path)]) == 3
    assert "training labels required" in capsys.readouterr().err


def test_calibrate_zero_decay_and_batch_bound(tmp_path, capsys):
    # C_sys = 1000 * 0.01 = 10, C_q = 12 * 0.01 = 0.12 -> b_max = ceil(10 * 0.99 / 0.0012) = 8250
    pool = write(tmp_path / "p.json", pool_doc(("a", "0.01", 1000)))
    wl = write(tmp_path / "w.json", workload_doc(8))
    assert main(["calibrate", "--pool", pool, "--workload", wl, "--out", str(tmp_path),
                 "--grid-cap", "64", "--exhaustive-scan"]) == 0
    prof = json.loads((tmp_path / "profile.json").read_text())["models"][0]
    assert prof["b_max"] == 8250 and prof["effective_batch_size"] == 64
    assert "b_effect" in capsys.readouterr().out

    # C_sys = E[C_q] with eps = 0.5
    pool = write(tmp_path / "p2.json", pool_doc(("a", "0.01", 12)))
    assert main(["calibrate", "--pool", pool, "--workload", wl, "--out", str(tmp_path),
                 "--epsilon", "0.5"]) == 0
    prof = json.loads((tmp_path / "profile.json").read_text())["models"][0]
    assert (prof["b_max"], prof["effective_batch_size"]) == (1, 1)


def test_calibrate_then_route_and_frontier(tmp_path):
    pool = write(tmp_path / "p.json", pool_doc(("a", "0.01", 400), ("b", "0.03", 400)))
    decay = {"a": {str(b): 1.0 if b < 12 else 0.0 for b in range(1, 200)}}
    train = write(tmp_path / "t.json", workload_doc(20, k=2, batch_utilities=decay))
    out = tmp_path / "out"
    assert main(["calibrate", "--pool", pool, "--workload", train, "--out", str(out), "--coreset-size", "8"]) == 0
    test = write(tmp_path / "q.json", workload_doc(7, labels=False))
    args = ["--pool", pool, "--profile", str(out / "profile.json"), "--workload", test, "--train", train,
            "--k-neighbors", "3", "--out", str(out)]
    assert main(["route", "--budget", "30", *args]) == 0
    assert json.loads((out / "router.json").read_text())["k_neighbors"] == 3
    batches = json.loads((out / "batches.json").read_text())
    assert sorted(m for b in batches for m in b["members"]) == [f"q{i}" for i in range(7)]
    assert all(len(b["members"]) <= b["batch_size"] for b in batches)
    doc = json.loads((out / "assignment.json").read_text())
    assert float(doc["exact_spend"]) >= float(doc["amortized_spend"])
    assert main(["frontier", *args]) == 0
    assert (out / "frontiers.csv").read_text().startswith("query,rank,model,batch,cost,utility\n")


def test_reduce(tmp_path, capsys):
    mc = write(tmp_path / "mc.json", {"n": 3, "sets": [[0, 1], [1, 2]], "budget": 1})
    assert main(["reduce", "--mc", mc, "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.strip() == "2 == 2: yes"
    assert json.loads((tmp_path / "reduced.json").read_text())["cost_mode"] == "exact_batched"
    mc = write(tmp_path / "all.json", {"n": 3, "sets": [[0, 1], [1, 2]], "budget": 2})
    assert main(["reduce", "--mc", mc]) == 0
    assert capsys.readouterr().out.startswith("3 == 3: yes")
    mc = write(tmp_path / "none.json", {"n": 3, "sets": [[0, 1], [1, 2]], "budget": 0})
    assert main(["reduce", "--mc", mc]) == 0
    assert capsys.readouterr().out.startswith("0 == 0: yes")


def test_oracle_cap_exit(tmp_path):
    mc = write(tmp_path / "mc.json", {"n": 6, "sets": [[0, 1, 2], [3, 4, 5], [0, 3]], "budget": 2})
    assert main(["reduce", "--mc", mc, "--oracle-cap", "10"]) == 4


SIM = {
    "models": [
        {"id": "s", "input_price": "0.001", "output_price": "0.002", "system_prompt_tokens": 3000,
         "alpha": 0.01, "beta": 1.2, "competence": 0.7},
        {"id": "l", "input_price": "0.005", "output_price": "0.01", "system_prompt_tokens": 3000,
         "alpha": 0.004, "beta": 1.0, "competence": 0.9},
    ],
    "n_train": 64, "n_test": 6, "dim": 4, "clusters": 2, "max_batch": 32,
}


def test_simulate_deterministic(tmp_path):
    spec = write(tmp_path / "sim.json", SIM)
    outs = []
    for d in ("a", "b"):
        assert main(["simulate", "--sim", spec, "--budget", "20,40", "--strategy", "robatch,router_only",
                     "--oracle", "--seed", "3", "--coreset-size", "32", "--out", str(tmp_path / d)]) == 0
        outs.append((tmp_path / d / "eval.csv").read_bytes())
    assert outs[0] == outs[1]
    rows = list(csv.DictReader(outs[0].decode().splitlines()))
    assert len(rows) == 4
    for budget in ("20.0", "40.0"):
        by = {r["strategy"]: r for r in rows if r["budget"] == budget}
        assert float(by["robatch"]["proxy_utility"]) >= float(by["router_only"]["proxy_utility"])


def test_simulate_bad_spec(tmp_path):
    spec = write(tmp_path / "sim.json", {"models": [{"id": "x"}]})
    assert main(["simulate", "--sim", spec, "--budget", "1", "--out", str(tmp_path)]) == 3


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "batchroute", "route", "--frontiers",
                        str(DATA / "running_example.json"), "--budget", "100", "--out", str(tmp_path)],
                       capture_output=True, text=True, env={"ROBATCH_LOG": "debug", "PATH": ""})
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "trace.csv").exists()


def test_bad_budget_rejected():
    with pytest.raises(SystemExit):
        main(["route", "--frontiers", "x", "--budget", "-3"])
