"""GNN student: directed mean-aggregation layers, edge MLPs and classifier heads.

Layer k updates every node as ``ReLU(W_k @ mean(z_u, z_v for v in N+(u)) + b_k)``.
Edge representations at layer k pass ``[z_i || z_j || x_e]`` through a
two-layer MLP. Each layer has an auxiliary 2-way classifier (used for
per-layer uncertainty) and a projection into the teacher space; the final
head classifies the last layer's edge representation.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .graph import CitationGraph

CHECKPOINT_FORMAT = "miscite-student"
CHECKPOINT_VERSION = 1


@dataclass
class StudentDims:
    d_in: int
    d_edge_in: int
    d_hidden: int = 64
    d_edge: int = 64
    d_T: int = 64
    K: int = 2
    d_extra: int = 0  # scalars appended to e^(K) before the final head

    @property
    def d_mlp(self) -> int:
        return self.d_hidden


@dataclass
class StudentModel:
    dims: StudentDims
    params: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def K(self) -> int:
        return self.dims.K

    def copy(self) -> "StudentModel":
        return StudentModel(self.dims, {k: v.copy() for k, v in self.params.items()}, self.seed)

    def shapes(self) -> dict:
        return param_shapes(self.dims)

    def check(self):
        for name, shape in self.shapes().items():
            if name not in self.params:
                raise ValueError(f"missing parameter {name}")
            if self.params[name].shape != shape:
                raise ValueError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")
            if not np.all(np.isfinite(self.params[name])):
                raise ValueError(f"parameter {name} is not finite")


def param_shapes(d: StudentDims) -> dict:
    shapes = {}
    d_prev = d.d_in
    for k in range(1, d.K + 1):
        shapes[f"layer{k}.W"] = (d_prev, d.d_hidden)
        shapes[f"layer{k}.b"] = (d.d_hidden,)
        d_prev = d.d_hidden
        shapes[f"edge{k}.W1"] = (2 * d.d_hidden + d.d_edge_in, d.d_mlp)
        shapes[f"edge{k}.b1"] = (d.d_mlp,)
        shapes[f"edge{k}.W2"] = (d.d_mlp, d.d_edge)
        shapes[f"edge{k}.b2"] = (d.d_edge,)
        shapes[f"aux{k}.W"] = (d.d_edge, 2)
        shapes[f"aux{k}.b"] = (2,)
        shapes[f"proj{k}.W"] = (d.d_edge, d.d_T)
        shapes[f"proj{k}.b"] = (d.d_T,)
    shapes["final.W"] = (d.d_edge + d.d_extra, 2)
    shapes["final.b"] = (2,)
    return shapes


def init_model(dims: StudentDims, seed: int = 0) -> StudentModel:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(dims).items():
        if len(shape) == 2:
            a = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-a, a, size=shape)
        else:
            params[name] = np.zeros(shape)
    model = StudentModel(dims, params, seed)
    model.check()
    return model


def leaf_params(model: StudentModel, requires_grad: bool = True) -> dict:
    return {k: ag.Tensor(v, requires_grad=requires_grad, op=k) for k, v in model.params.items()}


@dataclass
class NodeStates:
    """z^(0)..z^(K) as tensors whose rows follow ``graph.node_ids``."""

    graph: CitationGraph
    layers: list

    def table(self, k: int) -> dict:
        z = self.layers[k].data
        return {nid: z[i] for i, nid in enumerate(self.graph.node_ids)}


def forward_nodes(model: StudentModel, graph: CitationGraph, node_matrix, P: dict | None = None) -> NodeStates:
    node_matrix = np.asarray(node_matrix, dtype=np.float64)
    if node_matrix.shape != (len(graph.node_ids), model.dims.d_in):
        raise ValueError(
            f"node features have shape {node_matrix.shape}, expected {(len(graph.node_ids), model.dims.d_in)}"
        )
    P = P if P is not None else leaf_params(model, requires_grad=False)
    indptr, indices = graph.self_loop_csr()
    z = ag.Tensor(node_matrix)
    layers = [z]
    for k in range(1, model.K + 1):
        agg = ag.mean_aggregate(z, indptr, indices)
        z = ag.relu(ag.add(ag.matmul(agg, P[f"layer{k}.W"]), P[f"layer{k}.b"]))
        layers.append(z)
    return NodeStates(graph, layers)


def _edge_index_arrays(graph: CitationGraph, edge_ids):
    src = np.fromiter((graph.node_pos[graph.edge(e).source] for e in edge_ids), dtype=np.int64, count=len(edge_ids))
    dst = np.fromiter((graph.node_pos[graph.edge(e).target] for e in edge_ids), dtype=np.int64, count=len(edge_ids))
    pos = np.fromiter((graph.edge_position(e) for e in edge_ids), dtype=np.int64, count=len(edge_ids))
    return src, dst, pos


def edge_reps(model: StudentModel, states: NodeStates, edge_ids, edge_matrix, k: int, P: dict | None = None):
    """Layer-k edge representations for ``edge_ids`` as an ``(n, d_edge)`` tensor."""
    if not 1 <= k <= model.K:
        raise ValueError(f"layer {k} outside 1..{model.K}")
    P = P if P is not None else leaf_params(model, requires_grad=False)
    src, dst, pos = _edge_index_arrays(states.graph, list(edge_ids))
    z = states.layers[k]
    x = ag.concat([ag.take_rows(z, src), ag.take_rows(z, dst), ag.Tensor(np.asarray(edge_matrix)[pos])])
    h = ag.relu(ag.add(ag.matmul(x, P[f"edge{k}.W1"]), P[f"edge{k}.b1"]))
    return ag.add(ag.matmul(h, P[f"edge{k}.W2"]), P[f"edge{k}.b2"])


def edge_rep(model: StudentModel, states: NodeStates, edge: str, edge_matrix, k: int) -> np.ndarray:
    return edge_reps(model, states, [edge], edge_matrix, k).data[0]


def aux_logits(model, reps_k, k, P=None):
    P = P if P is not None else leaf_params(model, requires_grad=False)
    return ag.add(ag.matmul(reps_k, P[f"aux{k}.W"]), P[f"aux{k}.b"])


def final_logits(model, reps_K, extra=None, P=None):
    P = P if P is not None else leaf_params(model, requires_grad=False)
    x = reps_K
    if model.dims.d_extra:
        if extra is None:
            raise ValueError("model expects extra scalar features for the final head")
        x = ag.concat([reps_K, ag.Tensor(np.asarray(extra, dtype=np.float64).reshape(reps_K.shape[0], -1))])
    return ag.add(ag.matmul(x, P["final.W"]), P["final.b"])


def project(model, reps_k, k, P=None):
    P = P if P is not None else leaf_params(model, requires_grad=False)
    return ag.add(ag.matmul(reps_k, P[f"proj{k}.W"]), P[f"proj{k}.b"])


def softmax2(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class Prediction:
    probs: tuple
    per_layer_probs: tuple

    @property
    def p_miscite(self) -> float:
        return self.probs[1]


def predict_edges(model: StudentModel, states: NodeStates, edge_ids, edge_matrix, extra=None):
    """Returns ``(final_probs (n, 2), [layer-k probs (n, 2) for k in 1..K])``."""
    edge_ids = list(edge_ids)
    per_layer, reps = [], None
    for k in range(1, model.K + 1):
        reps = edge_reps(model, states, edge_ids, edge_matrix, k)
        per_layer.append(softmax2(aux_logits(model, reps, k).data))
    final = softmax2(final_logits(model, reps, extra).data)
    return final, per_layer


def predict(model, states, edge, edge_matrix, extra=None) -> Prediction:
    final, per_layer = predict_edges(model, states, [edge], edge_matrix,
                                     None if extra is None else np.atleast_2d(extra))
    return Prediction(tuple(final[0]), tuple(tuple(p[0]) for p in per_layer))


# ---------------------------------------------------------------- checkpoints

def _encode(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def save_checkpoint(model: StudentModel, path, extra_meta: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dims": vars(model.dims),
        "seed": model.seed,
        "meta": extra_meta or {},
        "params": {k: {"shape": list(v.shape), "data": _encode(v)} for k, v in sorted(model.params.items())},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_checkpoint(path, expect: StudentDims | None = None) -> StudentModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a student checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    dims = StudentDims(**doc["dims"])
    if expect is not None and vars(expect) != vars(dims):
        raise ValueError(f"checkpoint dimensions {vars(dims)} do not match expected {vars(expect)}")
    params = {}
    for k, rec in doc["params"].items():
        arr = np.frombuffer(base64.b64decode(rec["data"]), dtype="<f8").astype(np.float64)
        params[k] = arr.reshape(rec["shape"])
    model = StudentModel(dims, params, doc.get("seed", 0))
    model.check()
    return model
