"""Experiment harness: synthetic fixtures, ablation runs, runtime benchmark,
hyperparameter sweeps and embedding export."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .backends import MockBackend
from .chain import ChainConfig
from .encoder import EncoderSpec, FeatureTables, encode_graph
from .graph import CitationGraph, DatasetSplit, split_edges
from .reasoner import TraceStore, judge_direct, load_templates, reason_edge
from .student import StudentModel, edge_reps, forward_nodes, init_model, predict_edges
from .synthetic import SyntheticConfig, concept_of, generate_synthetic
from .trainer import TrainConfig, evaluate_model, judgment_feature, teacher_alignment, train

RUNTIME_MODES = ("gnn", "llm_directed", "llm_ec")
SWEEP_PARAMETERS = ("K", "m", "w_percent", "delta")


@dataclass
class Fixture:
    graph: CitationGraph
    features: FeatureTables
    split: DatasetSplit
    labels: dict
    seed: int


def synthetic_fixture(seed: int, synth: SyntheticConfig | dict | None = None,
                      encoder: EncoderSpec | None = None, ratios=(0.7, 0.1, 0.2)) -> Fixture:
    """Generate, encode and split a synthetic graph with everything keyed on ``seed``."""
    if isinstance(synth, SyntheticConfig):
        syn_cfg = replace(synth, seed=seed)
    else:
        syn_cfg = SyntheticConfig(**{**(synth or {}), "seed": seed})
    graph = generate_synthetic(syn_cfg)
    features = encode_graph(encoder or EncoderSpec(), graph)
    split = split_edges(graph, ratios, seed)
    return Fixture(graph, features, split, graph.labels(), seed)


def mock_teacher(fixture: Fixture, **kwargs) -> MockBackend:
    """Mock LLM that knows the training labels and the synthetic vocabulary's concepts."""
    labels = {e: fixture.labels[e] for e in fixture.split.train if e in fixture.labels}
    opts = {"seed": fixture.seed, "labels": labels, "lexicon": concept_of}
    opts.update(kwargs)
    return MockBackend(**opts)


@dataclass
class RunRecord:
    ablation: str
    seed: int
    test: dict
    best_epoch: int
    epochs_run: int
    backend_calls: int
    n_distill: int
    align_init: float
    align_final: float
    seconds: float
    best_losses: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def run_once(fixture: Fixture, cfg: TrainConfig, backend, store: TraceStore | None = None,
             history_path=None) -> tuple[RunRecord, object]:
    """Train one model and score it on the test split."""
    t0 = time.perf_counter()
    result = train(fixture.graph, fixture.features, fixture.split, backend, cfg,
                   trace_store=store, history_path=history_path)
    seconds = time.perf_counter() - t0
    test_edges = [e for e in fixture.split.test if e in fixture.labels]
    test = evaluate_model(result.model, fixture.graph, fixture.features, test_edges, fixture.labels,
                          threshold=cfg.threshold, traces=result.traces)
    distilled = result.distill_set.traces()
    if distilled:
        start = init_model(result.model.dims, seed=cfg.seed)
        align_init = teacher_alignment(start, fixture.graph, fixture.features, distilled)
        align_final = teacher_alignment(result.model, fixture.graph, fixture.features, distilled)
    else:
        align_init = align_final = float("nan")
    best = next((h for h in result.history if h["epoch"] == result.best_epoch), {})
    losses = {k[5:]: best[k] for k in ("loss_total", "loss_distill", "loss_task", "loss_aux") if k in best}
    record = RunRecord(cfg.ablation, cfg.seed, test, result.best_epoch, len(result.history),
                       result.backend_calls, len(result.distill_set), align_init, align_final, seconds, losses)
    return record, result


def ablation_study(seeds, ablations, base: TrainConfig, synth=None, teacher: dict | None = None,
                   progress=None) -> dict[str, list[RunRecord]]:
    """Run every ablation on every seed's fixture.

    Per seed, ``no_kd`` reads its judgment scalars from the traces the
    ``full`` run produced (when ``full`` is among the ablations and runs
    first); the other variants use a store of their own.
    """
    ablations = list(ablations)
    if "full" in ablations and "no_kd" in ablations:
        ablations.remove("full")
        ablations.insert(0, "full")
    out: dict[str, list[RunRecord]] = {a: [] for a in ablations}
    for seed in seeds:
        fx = synthetic_fixture(seed, synth)
        full_store = TraceStore()
        for ab in ablations:
            cfg = replace(base, seed=seed, ablation=ab)
            store = full_store if ab in ("full", "no_kd") else TraceStore()
            backend = mock_teacher(fx, **(teacher or {}))
            rec, _ = run_once(fx, cfg, backend, store)
            out[ab].append(rec)
            if progress:
                progress(rec)
    return out


def mean_test_auc(records) -> float:
    return float(np.mean([r.test["auc"] for r in records]))


def bench_runtime(graph: CitationGraph, split: DatasetSplit, model: StudentModel, backend, modes,
                  features: FeatureTables, K: int = 2, m: int = 10, edges=None, templates=None) -> dict:
    """Wall time per inference mode over the test edges (or ``edges``)."""
    modes = list(modes)
    bad = [md for md in modes if md not in RUNTIME_MODES]
    if bad:
        raise ValueError(f"unknown runtime mode(s) {bad}; expected a subset of {RUNTIME_MODES}")
    edges = list(edges if edges is not None else split.test)
    templates = templates or load_templates()
    report = {}
    for mode in modes:
        calls0 = backend.calls["generate"] if hasattr(backend, "calls") else 0
        t0 = time.perf_counter()
        if mode == "gnn":
            extra = judgment_feature(edges, {}) if model.dims.d_extra else None
            states = forward_nodes(model, graph, features.node_matrix)
            predict_edges(model, states, edges, features.edge_matrix, extra)
        elif mode == "llm_directed":
            for e in edges:
                judge_direct(backend, graph, e, templates)
        else:
            cfg = ChainConfig(K=K, m=m)
            for e in edges:
                reason_edge(backend, graph, e, cfg, templates, features)
        total = time.perf_counter() - t0
        calls = (backend.calls["generate"] - calls0) if hasattr(backend, "calls") else None
        report[mode] = {
            "n_edges": len(edges),
            "total_s": total,
            "per_edge_s": total / len(edges) if edges else 0.0,
            "backend_calls": 0 if mode == "gnn" else calls,
        }
    return report


def export_embeddings(model: StudentModel, graph: CitationGraph, features: FeatureTables, layer: int, path) -> int:
    """CSV of layer-``layer`` edge representations for every labeled edge; returns the row count."""
    if not 1 <= layer <= model.K:
        raise ValueError(f"layer {layer} outside 1..{model.K}")
    edges = [e.id for e in graph.labeled_edges()]
    states = forward_nodes(model, graph, features.node_matrix)
    reps = edge_reps(model, states, edges, features.edge_matrix, layer).data if edges else np.zeros((0, 0))
    width = model.dims.d_edge
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["edge_id", "label"] + [f"h{i}" for i in range(width)])
            for e, row in zip(edges, reps):
                w.writerow([e, graph.edge(e).label] + [repr(float(x)) for x in row])
    except OSError as exc:
        raise OSError(f"cannot write embeddings to {path}: {exc}") from exc
    return len(edges)


def sweep(base: TrainConfig, parameter: str, values, seeds, synth=None, teacher: dict | None = None) -> list[dict]:
    """Mean test metrics and best-epoch loss components per swept value."""
    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(f"cannot sweep {parameter!r}; choose one of {SWEEP_PARAMETERS}")
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    seeds = list(seeds)
    rows = []
    for value in values:
        runs = []
        for seed in seeds:
            fx = synthetic_fixture(seed, synth)
            cfg = replace(base, seed=seed, **{parameter: value})
            rec, _ = run_once(fx, cfg, mock_teacher(fx, **(teacher or {})))
            runs.append(rec)
        row = {"parameter": parameter, "value": value, "runs": len(runs)}
        for key in ("auc", "f1", "precision", "recall"):
            row[key] = float(np.mean([r.test.get(key, float("nan")) for r in runs]))
        for key in ("total", "distill", "task"):
            row[f"loss_{key}"] = float(np.mean([r.best_losses.get(key, float("nan")) for r in runs]))
        rows.append(row)
    return rows


def write_jsonl(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def format_table(rows) -> str:
    """Aligned-column text rendering of a list of flat dicts."""
    if not rows:
        return ""
    cols = list(rows[0].keys())

    def cell(v):
        return f"{v:.4f}" if isinstance(v, float) else str(v)

    body = [[cell(r.get(c, "")) for c in cols] for r in rows]
    widths = [max(len(c), *(len(b[i]) for b in body)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(b, widths)) for b in body]
    return "\n".join(lines)
