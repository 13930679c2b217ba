"""Text-rich citation graph: data model, JSONL ingestion, validation, splits."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np


class GraphError(ValueError):
    """Raised for malformed or inconsistent graph input."""


@dataclass(frozen=True)
class Publication:
    id: str
    text: str
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.text, str) or not self.text.strip():
            raise GraphError(f"empty node text for node {self.id}")


@dataclass(frozen=True)
class CitationEdge:
    id: str
    source: str
    target: str
    statement: str
    label: int | None = None

    def __post_init__(self):
        if self.label is not None and self.label not in (0, 1):
            raise GraphError(f"edge {self.id}: label must be 0, 1 or null, got {self.label!r}")
        if isinstance(self.label, bool):
            raise GraphError(f"edge {self.id}: label must be an integer, got {self.label!r}")
        if self.source == self.target:
            raise GraphError(f"edge {self.id}: self-citation {self.source} -> {self.target}")


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[str, ...]
    valid: tuple[str, ...]
    test: tuple[str, ...]


class CitationGraph:
    """Immutable directed citation graph.

    ``adjacency[u]`` lists the out-neighbours (cited papers) of ``u`` sorted by
    node id; it is derived from the edge list and never stored separately.
    """

    def __init__(self, nodes: Iterable[Publication], edges: Iterable[CitationEdge]):
        node_map: dict[str, Publication] = {}
        for pub in nodes:
            if pub.id in node_map:
                raise GraphError(f"duplicate node-id {pub.id}")
            node_map[pub.id] = pub
        edge_list = list(edges)
        edge_index: dict[str, int] = {}
        triples = set()
        adj: dict[str, set[str]] = {nid: set() for nid in node_map}
        for pos, e in enumerate(edge_list):
            for end in (e.source, e.target):
                if end not in node_map:
                    raise GraphError(f"dangling endpoint {end} (edge {e.id})")
            if e.id in edge_index:
                raise GraphError(f"duplicate edge-id {e.id}")
            key = (e.source, e.target, e.statement)
            if key in triples:
                raise GraphError(f"duplicate (source, target, statement) triple on edge {e.id}")
            triples.add(key)
            edge_index[e.id] = pos
            adj[e.source].add(e.target)

        self.nodes: Mapping[str, Publication] = MappingProxyType(node_map)
        self.edges: tuple[CitationEdge, ...] = tuple(edge_list)
        self.adjacency: Mapping[str, tuple[str, ...]] = MappingProxyType(
            {nid: tuple(sorted(vs)) for nid, vs in adj.items()}
        )
        self._edge_index = edge_index
        self.node_ids: tuple[str, ...] = tuple(node_map)
        self.node_pos: Mapping[str, int] = MappingProxyType(
            {nid: i for i, nid in enumerate(self.node_ids)}
        )
        pair_edges: dict[tuple[str, str], list[str]] = {}
        for e in edge_list:
            pair_edges.setdefault((e.source, e.target), []).append(e.id)
        self._pair_edges = {k: tuple(v) for k, v in pair_edges.items()}
        self._csr = None

    def __len__(self):
        return len(self.nodes)

    def edge(self, edge_id: str) -> CitationEdge:
        try:
            return self.edges[self._edge_index[edge_id]]
        except KeyError:
            raise KeyError(f"unknown edge-id {edge_id}") from None

    def has_edge(self, edge_id: str) -> bool:
        return edge_id in self._edge_index

    def edge_position(self, edge_id: str) -> int:
        return self._edge_index[edge_id]

    def edges_between(self, source: str, target: str) -> tuple[str, ...]:
        """Ids of all edges source -> target, in file order."""
        return self._pair_edges.get((source, target), ())

    def labeled_edges(self) -> list[CitationEdge]:
        return [e for e in self.edges if e.label is not None]

    def labels(self) -> dict[str, int]:
        return {e.id: e.label for e in self.edges if e.label is not None}

    def self_loop_csr(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR rows of ``{u} + N+(u)`` in node-position order (self first)."""
        if self._csr is None:
            indptr = [0]
            indices: list[int] = []
            for nid in self.node_ids:
                indices.append(self.node_pos[nid])
                indices.extend(self.node_pos[v] for v in self.adjacency[nid])
                indptr.append(len(indices))
            self._csr = (np.asarray(indptr, dtype=np.int64), np.asarray(indices, dtype=np.int64))
        return self._csr


def out_neighbors(graph: CitationGraph, node: str) -> tuple[str, ...]:
    """Papers cited by ``node``, ascending by id."""
    try:
        return graph.adjacency[node]
    except KeyError:
        raise KeyError(f"unknown node-id {node}") from None


def _read_jsonl(path: Path, kind: str) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise GraphError(f"{kind} file {path}: malformed line {lineno}: {exc.msg}") from None
            if not isinstance(rec, dict):
                raise GraphError(f"{kind} file {path}: malformed line {lineno}: expected an object")
            yield lineno, rec


def load_graph(nodes_path: str | Path, edges_path: str | Path) -> CitationGraph:
    nodes = []
    for lineno, rec in _read_jsonl(Path(nodes_path), "nodes"):
        try:
            nodes.append(Publication(id=str(rec["id"]), text=rec["text"], meta=rec.get("meta") or {}))
        except KeyError as exc:
            raise GraphError(f"nodes file {nodes_path}: malformed line {lineno}: missing {exc}") from None
        except GraphError as exc:
            raise GraphError(f"nodes file {nodes_path}: line {lineno}: {exc}") from None
    edges = []
    for lineno, rec in _read_jsonl(Path(edges_path), "edges"):
        try:
            edges.append(
                CitationEdge(
                    id=str(rec["id"]),
                    source=str(rec["source"]),
                    target=str(rec["target"]),
                    statement=rec["statement"],
                    label=rec.get("label"),
                )
            )
        except KeyError as exc:
            raise GraphError(f"edges file {edges_path}: malformed line {lineno}: missing {exc}") from None
        except GraphError as exc:
            raise GraphError(f"edges file {edges_path}: line {lineno}: {exc}") from None
    return CitationGraph(nodes, edges)


def save_graph(graph: CitationGraph, nodes_path: str | Path, edges_path: str | Path) -> None:
    with open(nodes_path, "w", encoding="utf-8", newline="\n") as fh:
        for pub in graph.nodes.values():
            rec = {"id": pub.id, "text": pub.text}
            if pub.meta:
                rec["meta"] = dict(pub.meta)
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
    with open(edges_path, "w", encoding="utf-8", newline="\n") as fh:
        for e in graph.edges:
            rec = {"id": e.id, "source": e.source, "target": e.target,
                   "statement": e.statement, "label": e.label}
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def split_edges(graph: CitationGraph, ratios=(0.7, 0.1, 0.2), seed: int = 0) -> DatasetSplit:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValueError("ratios must be three non-negative fractions")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    labeled = [e.id for e in graph.edges if e.label is not None]
    if not labeled:
        raise ValueError("no labeled edges to split")
    n = len(labeled)
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [labeled[i] for i in order]
    n_train = int(round(n * ratios[0]))
    n_valid = min(int(round(n * ratios[1])), n - n_train)
    return DatasetSplit(
        train=tuple(shuffled[:n_train]),
        valid=tuple(shuffled[n_train:n_train + n_valid]),
        test=tuple(shuffled[n_train + n_valid:]),
    )


def validate(graph: CitationGraph) -> dict:
    """Summary counts plus warnings; never mutates ``graph``."""
    labeled = graph.labeled_edges()
    n_pos = sum(e.label for e in labeled)
    has_in = {e.target for e in graph.edges}
    has_out = {e.source for e in graph.edges}
    warnings = []
    if not graph.edges:
        warnings.append("no edges")
    elif not labeled:
        warnings.append("no labeled edges")
    isolated = [nid for nid in graph.node_ids if nid not in has_in and nid not in has_out]
    if isolated and graph.edges:
        warnings.append(f"{len(isolated)} isolated nodes")
    return {
        "nodes": len(graph.nodes),
        "edges": len(graph.edges),
        "labeled": len(labeled),
        "miscite_frac": (n_pos / len(labeled)) if labeled else None,
        "sinks": sum(1 for nid in graph.node_ids if nid not in has_out),
        "sources": sum(1 for nid in graph.node_ids if nid not in has_in),
        "warnings": warnings,
    }
