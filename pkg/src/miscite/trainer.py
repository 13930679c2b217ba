"""Collaborative training loop: uncertainty-targeted LLM reasoning + distillation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autograd as ag
from .chain import ChainConfig
from .encoder import FeatureTables
from .graph import CitationGraph, DatasetSplit
from .losses import distill_loss, entropies, hop_student_vectors
from .metrics import auc, f1_precision
from .reasoner import TeacherTrace, TraceStore, load_templates, reason_edges
from .student import (
    StudentDims,
    StudentModel,
    aux_logits,
    edge_reps,
    final_logits,
    forward_nodes,
    init_model,
    leaf_params,
    predict_edges,
)

log = logging.getLogger(__name__)

ABLATIONS = ("full", "no_ec", "no_kd", "no_ld", "no_td")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    K: int = 2
    m: int = 10
    w_percent: float = 0.2
    tau_conf: float = 0.7
    delta: float = 1.0
    lambdas: list | None = None  # None -> uniform 1/K
    beta1: float = 1.0
    beta2: float = 1.0
    lr: float = 1e-3
    weight_decay: float = 0.01
    batch_size: int = 32
    epochs: int = 200
    patience: int = 20
    seed: int = 0
    ablation: str = "full"
    chain_variant: str = "full"
    d_hidden: int = 64
    d_edge: int = 64
    max_in_flight: int = 1
    threshold: float = 0.5

    def __post_init__(self):
        if not 0 < self.w_percent <= 1:
            raise ValueError("w_percent must lie in (0, 1]")
        if not 0 <= self.tau_conf <= 1:
            raise ValueError("tau_conf must lie in [0, 1]")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.beta1 < 0 or self.beta2 < 0:
            raise ValueError("beta1 and beta2 must be non-negative")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}; expected one of {ABLATIONS}")
        if self.chain_variant not in ("directed", "unfiltered", "full"):
            raise ValueError(f"unknown chain_variant {self.chain_variant!r}")
        if self.K < 1 or self.m < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("K, m, batch_size must be >= 1 and epochs >= 0")
        if self.lambdas is not None:
            self.lambdas = [float(x) for x in self.lambdas]
            if len(self.lambdas) != self.K:
                raise ValueError(f"lambdas needs {self.K} entries")
            if any(x < 0 for x in self.lambdas):
                raise ValueError("lambdas must be non-negative")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def hop_weights(self) -> list[float]:
        """Per-hop distillation weights after applying the ablation."""
        if self.ablation == "no_ld":
            return [0.0] * (self.K - 1) + [1.0]
        if self.lambdas is not None:
            return list(self.lambdas)
        return [1.0 / self.K] * self.K

    def effective_chain_variant(self) -> str:
        return "directed" if self.ablation == "no_ec" else self.chain_variant

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class UncertainSelection:
    per_layer: list

    def union(self) -> list:
        seen, out = set(), []
        for layer in self.per_layer:
            for e in layer:
                if e not in seen:
                    seen.add(e)
                    out.append(e)
        return out


@dataclass
class DistillSet:
    entries: list = field(default_factory=list)  # (edge-id, TeacherTrace)

    def __len__(self):
        return len(self.entries)

    def edges(self) -> list:
        return [e for e, _ in self.entries]

    def traces(self) -> list:
        return [t for _, t in self.entries]


def select_uncertain(per_layer_probs, edge_ids, w_percent: float) -> UncertainSelection:
    """Top ``ceil(w * N)`` edges per layer by entropy (ties: ascending edge id).

    ``per_layer_probs[k]`` is an ``(N, 2)`` array aligned with ``edge_ids``.
    """
    edge_ids = list(edge_ids)
    n = len(edge_ids)
    take = min(n, math.ceil(w_percent * n - 1e-12))
    out = []
    for probs in per_layer_probs:
        ent = entropies(np.asarray(probs))
        ranked = sorted(range(n), key=lambda i: (-ent[i], edge_ids[i]))
        out.append([edge_ids[i] for i in ranked[:take]])
    return UncertainSelection(out)


def filter_distill_set(traces, labels: dict, tau_conf: float) -> DistillSet:
    """Keep traces with confidence > tau_conf whose verdict agrees with the label."""
    entries, seen = [], set()
    for tr in traces:
        if tr.edge not in labels or labels[tr.edge] is None:
            raise ValueError(f"trace for unlabeled edge {tr.edge}")
        if tr.edge in seen:
            continue
        predicted = 1 if tr.judgment.level >= 0.5 else 0
        if tr.judgment.confidence > tau_conf and predicted == labels[tr.edge]:
            entries.append((tr.edge, tr))
            seen.add(tr.edge)
    return DistillSet(entries)


class AdamW:
    """Adam with decoupled weight decay applied to every parameter array."""

    def __init__(self, params: dict, lr=1e-3, weight_decay=0.01, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.wd, self.b1, self.b2, self.eps = lr, weight_decay, betas[0], betas[1], eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        if self.lr == 0:
            return
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in params.items():
            g = grads.get(k)
            if g is None:
                g = np.zeros_like(p)
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * (g * g)
            denom = np.sqrt(v / c2)
            denom += self.eps
            p *= 1.0 - self.lr * self.wd
            p -= (self.lr / c1) * (m / denom)


def backend_dim(backend) -> int:
    d = getattr(backend, "d_T", None)
    if d is None:
        raise TrainingError("backend does not declare its teacher-vector dimension d_T")
    return int(d)


def trace_key(edge: str, variant: str, K: int, m: int, fingerprint: str) -> str:
    return f"{edge}|{variant}|K{K}|m{m}|{fingerprint}"


@dataclass
class BatchLosses:
    total: float
    distill: float
    task: float
    aux: float
    n_distill: int


def judgment_feature(edge_ids, traces: dict) -> np.ndarray:
    """Centred teacher miscitation level (0 when no trace is cached)."""
    return np.array([[traces[e].judgment.level - 0.5] if e in traces else [0.0] for e in edge_ids])


def batch_objective(model, graph, features, batch, labels, distill_traces, cfg: TrainConfig,
                    extra=None, P=None):
    """Build the batch graph; returns ``(optimised loss tensor, L_total tensor, parts dict, P)``.

    L_total = beta1 * L_distill + beta2 * L_task. The auxiliary per-layer heads
    are fitted on detached edge representations, so their loss only moves the
    auxiliary parameters and is kept out of L_total.
    """
    P = P if P is not None else leaf_params(model, requires_grad=True)
    states = forward_nodes(model, graph, features.node_matrix, P)
    y = np.array([labels[e] for e in batch], dtype=np.float64)
    aux_terms = []
    reps = None
    for k in range(1, model.K + 1):
        reps = edge_reps(model, states, batch, features.edge_matrix, k, P)
        detached = ag.Tensor(reps.data)
        aux_terms.append(ag.softmax2_bce(aux_logits(model, detached, k, P), y))
    logits = final_logits(model, reps, extra, P)
    l_task = ag.softmax2_bce(logits, y)
    if distill_traces and cfg.beta1 > 0:
        l_distill, per_hop = distill_loss(model, distill_traces, states, graph, features.edge_matrix,
                                          cfg.hop_weights(), cfg.delta, P)
    else:
        l_distill, per_hop = ag.Tensor(np.array(0.0)), {}
    l_total = ag.add(ag.scale(l_distill, cfg.beta1), ag.scale(l_task, cfg.beta2))
    l_aux = ag.scale(ag.add_scalars(aux_terms), 1.0 / model.K)
    l_opt = ag.add(l_total, l_aux)
    parts = {
        "total": float(l_total.data),
        "distill": float(l_distill.data),
        "task": float(l_task.data),
        "aux": float(l_aux.data),
        "per_hop": per_hop,
    }
    return l_opt, l_total, parts, P


@dataclass
class TrainResult:
    model: StudentModel
    history: list
    best_epoch: int
    distill_set: DistillSet
    traces: dict
    backend_calls: int = 0


def evaluate_model(model, graph, features, edge_ids, labels, extra=None, threshold=0.5,
                   traces: dict | None = None) -> dict:
    """Test-style metrics; a no_kd model takes its judgment scalar from ``traces``."""
    if extra is None and model.dims.d_extra:
        extra = judgment_feature(edge_ids, traces or {})
    states = forward_nodes(model, graph, features.node_matrix)
    final, _ = predict_edges(model, states, edge_ids, features.edge_matrix, extra)
    y = np.array([labels[e] for e in edge_ids])
    scores = final[:, 1]
    out = {"n": int(len(edge_ids))}
    if 0 < y.sum() < len(y):
        f1, prec, rec = f1_precision(scores, y, threshold)
        out.update(auc=auc(scores, y), f1=f1, precision=prec, recall=rec)
    return out


def teacher_alignment(model, graph, features, traces, hop: int = 1) -> float:
    """Mean cosine between projected hop-``hop`` student vectors and teacher vectors."""
    traces = [t for t in traces if t.k_eff >= hop]
    if not traces:
        return float("nan")
    states = forward_nodes(model, graph, features.node_matrix)
    P = leaf_params(model, requires_grad=False)
    s = hop_student_vectors(model, states, graph, traces, features.edge_matrix, hop, P).data
    t = np.stack([tr.teacher_vectors[hop - 1] for tr in traces])
    cos = np.sum(s * t, axis=1) / (np.linalg.norm(s, axis=1) * np.linalg.norm(t, axis=1))
    return float(np.mean(cos))


def train(graph: CitationGraph, features: FeatureTables, split: DatasetSplit, backend, cfg: TrainConfig,
          templates=None, trace_store: TraceStore | None = None, history_path=None,
          batch_log: list | None = None) -> TrainResult:
    labels = graph.labels()
    train_edges = [e for e in split.train if e in labels]
    valid_edges = [e for e in split.valid if e in labels]
    if not train_edges:
        raise TrainingError("no labeled training edges")
    templates = templates or load_templates()
    store = trace_store if trace_store is not None else TraceStore()
    use_kd = cfg.ablation != "no_kd"
    variant = cfg.effective_chain_variant()
    chain_cfg = ChainConfig.for_variant(variant, cfg.K, cfg.m)
    fingerprint = backend.fingerprint if backend is not None else "none"

    dims = StudentDims(
        d_in=features.node_matrix.shape[1],
        d_edge_in=features.edge_matrix.shape[1],
        d_hidden=cfg.d_hidden,
        d_edge=cfg.d_edge,
        d_T=backend_dim(backend) if backend is not None else cfg.d_edge,
        K=cfg.K,
        d_extra=0 if use_kd else 1,
    )
    model = init_model(dims, seed=cfg.seed)
    opt = AdamW(model.params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed + 1)

    traces: dict[str, TeacherTrace] = {}

    def cached(edges):
        found = {}
        for e in edges:
            t = store.get(trace_key(e, variant, chain_cfg.K, chain_cfg.m, fingerprint))
            if t is not None:
                found[e] = t
        return found

    if not use_kd:
        traces.update(cached(train_edges + valid_edges + list(split.test)))

    def extra_for(edges):
        return None if use_kd else judgment_feature(edges, traces)

    history = []
    best_auc, best_epoch, best_params = -math.inf, 0, model.copy().params
    since_best = 0
    calls0 = backend.calls["generate"] if backend is not None and hasattr(backend, "calls") else 0
    distill = DistillSet()
    fh = open(history_path, "w", encoding="utf-8", newline="\n") if history_path else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            n_reasoned = 0
            selected: list = []
            if use_kd and backend is not None:
                states = forward_nodes(model, graph, features.node_matrix)
                _, per_layer = predict_edges(model, states, train_edges, features.edge_matrix)
                if cfg.ablation == "no_td":
                    selected = list(train_edges)
                else:
                    selected = select_uncertain(per_layer, train_edges, cfg.w_percent).union()
                traces.update(cached(e for e in selected if e not in traces))
                missing = [e for e in selected if e not in traces]
                if missing:
                    fresh = reason_edges(backend, graph, missing, chain_cfg, templates, features,
                                         max_in_flight=cfg.max_in_flight)
                    for e in missing:
                        store.put(trace_key(e, variant, chain_cfg.K, chain_cfg.m, fingerprint), fresh[e])
                        traces[e] = fresh[e]
                    n_reasoned = len(missing)
                distill = filter_distill_set([traces[e] for e in selected], labels, cfg.tau_conf)
            distill_map = dict(distill.entries)

            order = rng.permutation(len(train_edges))
            sums = {"total": 0.0, "distill": 0.0, "task": 0.0, "aux": 0.0}
            n_batches = 0
            for b0 in range(0, len(order), cfg.batch_size):
                batch = [train_edges[i] for i in order[b0:b0 + cfg.batch_size]]
                d_batch = [distill_map[e] for e in batch if e in distill_map]
                l_opt, _, parts, P = batch_objective(model, graph, features, batch, labels, d_batch, cfg,
                                                     extra=extra_for(batch))
                if not math.isfinite(parts["total"]) or not math.isfinite(parts["aux"]):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, batch {n_batches}")
                try:
                    l_opt.backward()
                except FloatingPointError as exc:
                    raise TrainingError(f"epoch {epoch}, batch {n_batches}: {exc}") from None
                grads = {k: t.grad for k, t in P.items() if t.grad is not None}
                opt.step(model.params, grads)
                for k in sums:
                    sums[k] += parts[k]
                if batch_log is not None:
                    batch_log.append({"epoch": epoch, "batch": n_batches, "n_distill": len(d_batch),
                                      **{k: parts[k] for k in sums}})
                n_batches += 1

            val = evaluate_model(model, graph, features, valid_edges, labels, extra_for(valid_edges),
                                 cfg.threshold) if valid_edges else {}
            val_auc = val.get("auc", float("nan"))
            rec = {
                "epoch": epoch,
                "ablation": cfg.ablation,
                "loss_total": sums["total"] / n_batches,
                "loss_distill": sums["distill"] / n_batches,
                "loss_task": sums["task"] / n_batches,
                "loss_aux": sums["aux"] / n_batches,
                "n_selected": len(selected),
                "n_reasoned": n_reasoned,
                "n_distill": len(distill),
                "val_auc": None if math.isnan(val_auc) else val_auc,
                "val_f1": val.get("f1"),
                "val_precision": val.get("precision"),
            }
            history.append(rec)
            if fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
            log.info("epoch %d total=%.4f task=%.4f distill=%.4f val_auc=%s", epoch, rec["loss_total"],
                     rec["loss_task"], rec["loss_distill"], rec["val_auc"])

            score = val_auc if not math.isnan(val_auc) else -rec["loss_total"]
            if score > best_auc:
                best_auc, best_epoch, since_best = score, epoch, 0
                best_params = {k: v.copy() for k, v in model.params.items()}
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    break
    finally:
        if fh:
            fh.close()

    if cfg.epochs > 0:
        model.params = best_params
    calls = (backend.calls["generate"] - calls0) if backend is not None and hasattr(backend, "calls") else 0
    return TrainResult(model, history, best_epoch, distill, traces, calls)


def read_history(path) -> list:
    with open(Path(path), encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
