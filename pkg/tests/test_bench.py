import csv
from dataclasses import replace

import pytest

from miscite.bench import (ablation_study, bench_runtime, export_embeddings, format_table, mock_teacher, run_once,
                           sweep, synthetic_fixture)
from miscite.trainer import TrainConfig

SMALL = {"n_papers": 60, "refs_per_paper": 3}
QUICK = TrainConfig(epochs=2, d_hidden=8, d_edge=8)


@pytest.fixture(scope="module")
def trained():
    fx = synthetic_fixture(0, SMALL)
    rec, res = run_once(fx, QUICK, mock_teacher(fx))
    return fx, rec, res


def test_run_record(trained):
    _, rec, _ = trained
    assert rec.ablation == "full" and rec.epochs_run == 2
    assert 0 <= rec.test["auc"] <= 1
    assert set(rec.best_losses) >= {"total", "distill", "task"}


def test_runtime_modes(trained):
    fx, _, res = trained
    edges = list(fx.split.test)[:30]
    backend = mock_teacher(fx, latency=0.005)
    rep = bench_runtime(fx.graph, fx.split, res.model, backend, ["gnn", "llm_directed", "llm_ec"], fx.features,
                        edges=edges)
    assert rep["llm_directed"]["backend_calls"] == 30
    assert rep["llm_ec"]["backend_calls"] >= 5 * 30
    assert rep["llm_ec"]["total_s"] >= 5 * rep["llm_directed"]["total_s"] * 0.9
    assert rep["gnn"]["backend_calls"] == 0
    assert rep["gnn"]["per_edge_s"] < 0.005
    only = bench_runtime(fx.graph, fx.split, res.model, backend, ["gnn"], fx.features)
    assert list(only) == ["gnn"]
    with pytest.raises(ValueError):
        bench_runtime(fx.graph, fx.split, res.model, backend, ["gpu"], fx.features)


def test_export_embeddings(trained, tmp_path):
    fx, _, res = trained
    n = export_embeddings(res.model, fx.graph, fx.features, 1, tmp_path / "a.csv")
    export_embeddings(res.model, fx.graph, fx.features, 1, tmp_path / "b.csv")
    rows = list(csv.reader(open(tmp_path / "a.csv")))
    assert rows[0][:3] == ["edge_id", "label", "h0"] and len(rows[0]) == 2 + 8
    assert n == len(rows) - 1 == len(fx.graph.labeled_edges())
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    with pytest.raises(ValueError):
        export_embeddings(res.model, fx.graph, fx.features, 3, tmp_path / "c.csv")
    with pytest.raises(OSError):
        export_embeddings(res.model, fx.graph, fx.features, 1, tmp_path / "missing" / "c.csv")


def test_sweep_rows():
    rows = sweep(QUICK, "K", [1, 2], [0], synth=SMALL)
    assert [r["value"] for r in rows] == [1, 2]
    assert all(0 <= r["auc"] <= 1 for r in rows)
    deltas = sweep(replace(QUICK, epochs=1), "delta", [0.2, 1.0], [0], synth=SMALL)
    assert deltas[0]["loss_distill"] != deltas[1]["loss_distill"]
    assert "loss_total" in format_table(deltas).splitlines()[0]
    with pytest.raises(ValueError):
        sweep(QUICK, "lr", [0.1], [0])


def test_ablation_study_shares_full_cache():
    out = ablation_study([0], ["no_kd", "full"], QUICK, synth=SMALL)
    assert list(out) == ["full", "no_kd"]
    assert out["no_kd"][0].backend_calls == 0 and out["full"][0].backend_calls > 0
