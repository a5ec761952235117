from __future__ import annotations

import csv
import json
from importlib import resources

import pytest

from conftest import ConstantModel
from dial import __version__
from dial.config import Configuration, Op, Scenario
from dial.experiments import (RunMode, collect, measure, provenance, read_results, result_rows,
                              shipped_models, simulate, summarize, sweep, train_with_holdout,
                              write_results)
from dial.gbdt import Hyperparams, serialize
from dial.metrics import SCHEMA_VERSION
from dial.workload import parse_spec

STUBS = {Op.READ: ConstantModel(0.5), Op.WRITE: ConstantModel(0.5)}


@pytest.fixture(scope="module")
def small_sweep():
    return sweep(parse_spec("s_wr_sq_1m"), 1.0, 0.5, seed=2)


def test_sweep_grid_covers_the_space(small_sweep):
    assert len(small_sweep.grid) == 42
    assert [t for t, _ in small_sweep.grid] == list(Scenario().space)
    best_theta, best = small_sweep.best
    assert all(best >= thr for _, thr in small_sweep.grid)
    assert small_sweep.throughput(best_theta) == best


def test_fixed_run_reproduces_its_sweep_row(small_sweep):
    for theta in (small_sweep.best[0], Configuration(16, 1)):
        thr, _ = measure(parse_spec("s_wr_sq_1m"), 1.0, 0.5, seed=2, mode=RunMode.FIXED,
                         theta=theta)
        assert thr == small_sweep.throughput(theta)


def test_sweep_csv_marks_one_best_row(small_sweep):
    text = small_sweep.to_csv({"seed": 2})
    assert text.startswith("# provenance: ")
    rows = list(csv.DictReader(text.splitlines()[1:]))
    assert len(rows) == 42 and sum(int(r["is_best"]) for r in rows) == 1
    back = {Configuration(int(r["window"]), int(r["inflight"])): float(r["throughput"])
            for r in rows}
    assert back == dict(small_sweep.grid)


def test_tuned_with_stub_below_tau_matches_default_trace():
    phases = {0: [parse_spec("s_wr_rn_1m", duration=2.0)]}
    a = simulate(phases, 2.0, seed=4, mode=RunMode.DEFAULT, trace=True)
    b = simulate(phases, 2.0, seed=4, mode=RunMode.TUNED, models=STUBS, trace=True)
    assert a.trace_digest == b.trace_digest
    assert a.client_bytes == b.client_bytes
    assert b.records and not any(r.applied for r in b.records)


def test_simulate_rejects_bad_input():
    spec = parse_spec("s_wr_sq_1m")
    with pytest.raises(ValueError):
        simulate({0: [spec], 1: [spec, spec]}, 1.0, Scenario(n_clients=2))
    with pytest.raises(ValueError):
        simulate({3: [spec]}, 1.0)
    with pytest.raises(ValueError):
        simulate({0: [spec]}, 1.0, mode=RunMode.FIXED)
    with pytest.raises(ValueError):
        simulate({0: [spec]}, 1.0, mode=RunMode.TUNED)
    with pytest.raises(ValueError):
        measure(spec, 1.0, 1.0)


def test_run_trace_throughput_accounting():
    run = simulate({0: [parse_spec("s_rd_sq_1m", duration=2.0)]}, 2.0, seed=1)
    assert run.times[0] == 0.0 and run.times[-1] == pytest.approx(2.0)
    series = run.interval_series(0)
    assert sum(series) * 0.5 == pytest.approx(run.client_throughput(0, 0.0, 2.0) * 2.0)
    # OSC counters see bytes on entry, the client on completion: at either
    # end of the window they differ by at most the requests outstanding
    osc_total = sum(sum(run.osc_throughput((0, j), 0.0, 2.0)) for j in range(4))
    slack = Scenario().queue_depth * 1 << 20
    assert abs(osc_total - run.client_throughput(0, 0.0, 2.0)) * 2.0 <= slack
    with pytest.raises(ValueError):
        run.client_throughput(0, 0.3, 2.0)


# -- results and reports --------------------------------------------------------

def _rows():
    rows = []
    for mode, scale in (("default", 1.0), ("tuned", 1.5)):
        for rep in range(3):
            run = simulate({0: [parse_spec("s_wr_sq_1m", duration=1.0)]}, 1.0, seed=rep)
            for r in result_rows(run, mode, rep, rep):
                r["write_throughput"] *= scale
                rows.append(r)
    return rows


def test_results_csv_round_trip(tmp_path):
    rows = _rows()
    path = tmp_path / "results.csv"
    prov = provenance(Scenario(), [0, 1, 2], kind="results")
    write_results(path, rows, prov)
    back = read_results(path)
    key = lambda r: (r["mode"], r["osc"], r["repeat"])
    assert sorted(back, key=key) == sorted(rows, key=key)
    header = path.read_text().splitlines()[0]
    assert json.loads(header.removeprefix("# provenance: ")) == prov


def test_result_rows_have_client_and_osc_rows():
    run = simulate({0: [parse_spec("s_wr_sq_1m", duration=1.0)]}, 1.0)
    rows = result_rows(run, "default", 0, 0)
    assert sorted(r["osc"] for r in rows) == [-1, 0, 1, 2, 3]
    total = next(r for r in rows if r["osc"] == -1)["write_throughput"]
    per_osc = sum(r["write_throughput"] for r in rows if r["osc"] >= 0)
    assert abs(per_osc - total) <= Scenario().queue_depth * 1 << 20


def test_summary_normalizes_to_default():
    summary = {s["mode"]: s for s in summarize(_rows())}
    assert summary["default"]["normalized"] == 1.0
    assert summary["tuned"]["normalized"] == pytest.approx(1.5)
    assert summary["default"]["n"] == 3


def test_summary_flags_missing_default():
    rows = [r for r in _rows() if r["mode"] == "tuned"]
    (only,) = summarize(rows)
    assert only["normalized"] is None


def test_provenance_fields():
    prov = provenance(Scenario(), [3, 1, 3], kind="x")
    assert prov["tool_version"] == __version__
    assert prov["schema_version"] == SCHEMA_VERSION
    assert prov["seeds"] == [1, 3]
    assert prov["scenario_hash"] == Scenario().digest()
    assert prov["scenario_hash"] != Scenario(n_osts=2).digest()


# -- training pipeline ----------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_collection():
    return collect(["s_wr_rn_1m", "s_rd_rn_1m"], duration=6.0, repeats=2, seed=1)


def test_collect_is_deterministic(tiny_collection):
    again = collect(["s_wr_rn_1m", "s_rd_rn_1m"], duration=6.0, repeats=2, seed=1)
    for op in Op:
        assert [s.to_json() for s in again.samples[op]] == \
            [s.to_json() for s in tiny_collection.samples[op]]
    assert [r["seed"] for r in tiny_collection.runs] == [1000, 1001, 1000, 1001]


def test_collect_counts_per_op(tiny_collection):
    for op in Op:
        assert tiny_collection.samples[op]
        assert all(s.op is op for s in tiny_collection.samples[op])
    total = sum(r["samples"] for r in tiny_collection.runs)
    assert total == sum(len(v) for v in tiny_collection.samples.values())


def test_training_is_byte_identical(tiny_collection):
    samples = tiny_collection.samples[Op.WRITE]
    hp = Hyperparams(num_trees=20, min_samples_leaf=5)
    a, rep = train_with_holdout(samples, hp)
    b, _ = train_with_holdout(samples, hp)
    assert serialize(a) == serialize(b)
    assert rep.n_train + rep.n_test == len(samples)
    assert rep.n_test == round(0.2 * len(samples))
    text = rep.text()
    assert f"schema v{SCHEMA_VERSION}" in text and "class counts" in text


def test_bundled_models_match_schema_and_record_provenance():
    models = shipped_models()
    for op in Op:
        m = models[op]
        assert m.op is op and m.schema_version == SCHEMA_VERSION
        assert len(m.trees) >= 1
        doc = json.loads((resources.files("dial") / "models" / f"{op.value}.json").read_text())
        prov = doc["provenance"]
        assert prov["op"] == op.value and prov["n_samples"] > 1000
        assert prov["held_out_error"] < 0.1
        assert prov["scenario_hash"] == Scenario().digest()
