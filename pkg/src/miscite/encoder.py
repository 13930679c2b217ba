"""Text encoders for node and edge text, plus cosine similarity.

The default encoder is a feature-hashing bag of words: lowercase, split on
non-alphanumerics, FNV-1a-64 hash every token (prefixed by a fixed seed) into
``d_enc`` buckets, count, then optionally L2-normalise. An ``external``
encoder posts batches to an embedding endpoint instead.
"""

from __future__ import annotations

import os
import re
import time
from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping

import httpx
import numpy as np

from . import kernels
from .graph import CitationGraph

HASH_SEED = b"miscite-fnv-v1"
_TOKEN_RE = re.compile(r"[^0-9a-z]+")


class EncoderError(RuntimeError):
    pass


@dataclass(frozen=True)
class EncoderSpec:
    kind: str = "hashing"
    d_enc: int = 256
    normalization: str = "l2"
    url: str | None = None
    token_env: str = "MISCITE_EMBED_TOKEN"
    retries: int = 2
    timeout: float = 30.0

    def __post_init__(self):
        if self.kind not in ("hashing", "external"):
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if self.normalization not in ("l2", "none"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if int(self.d_enc) < 2:
            raise ValueError("d_enc must be >= 2")


class Embedding:
    """A finite dense vector with its cached Euclidean norm."""

    __slots__ = ("values", "norm")

    def __init__(self, values):
        arr = np.array(values, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError("embedding must be one-dimensional")
        if not np.all(np.isfinite(arr)):
            raise ValueError("embedding has non-finite entries")
        arr.setflags(write=False)
        self.values = arr
        self.norm = float(np.linalg.norm(arr))

    def __len__(self):
        return self.values.shape[0]

    def __eq__(self, other):
        return isinstance(other, Embedding) and np.array_equal(self.values, other.values)

    def __repr__(self):
        return f"Embedding(dim={len(self)}, norm={self.norm:.4g})"


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN_RE.split(text.lower()) if t]


def hash_embed(tokens: list[str], d_enc: int, seed: bytes = HASH_SEED) -> np.ndarray:
    return kernels.hash_counts([t.encode("utf-8") for t in tokens], seed, int(d_enc))


def _normalise(vec: np.ndarray, how: str) -> np.ndarray:
    if how == "l2":
        n = np.linalg.norm(vec)
        if n > 0:
            return vec / n
    return vec


def _external_embed(spec: EncoderSpec, texts: list[str], client: httpx.Client | None = None) -> np.ndarray:
    url = spec.url or os.environ.get("MISCITE_EMBED_URL")
    if not url:
        raise EncoderError("external encoder needs a url (spec.url or MISCITE_EMBED_URL)")
    headers = {}
    token = os.environ.get(spec.token_env)
    if token:
        headers["Authorization"] = f"Bearer {token}"
    owns = client is None
    client = client or httpx.Client(timeout=spec.timeout)
    last_exc = None
    try:
        for attempt in range(spec.retries + 1):
            try:
                resp = client.post(url, json={"input": texts}, headers=headers)
                resp.raise_for_status()
                data = np.asarray(resp.json()["embeddings"], dtype=np.float64)
                if data.shape != (len(texts), spec.d_enc):
                    raise EncoderError(
                        f"embedding endpoint returned shape {data.shape}, expected {(len(texts), spec.d_enc)}"
                    )
                return data
            except (httpx.HTTPError, KeyError, ValueError) as exc:
                last_exc = exc
                if attempt < spec.retries:
                    time.sleep(min(2.0, 0.1 * 2 ** attempt))
    finally:
        if owns:
            client.close()
    raise EncoderError(f"embedding endpoint failed after {spec.retries + 1} attempts: {last_exc}")


def encode_text(spec: EncoderSpec, text: str, client: httpx.Client | None = None) -> Embedding:
    if not isinstance(text, str) or not text.strip():
        raise EncoderError("cannot encode empty text")
    if spec.kind == "hashing":
        vec = hash_embed(tokenize(text), spec.d_enc)
    else:
        vec = _external_embed(spec, [text], client)[0]
    return Embedding(_normalise(vec, spec.normalization))


def cosine_sim(a: Embedding, b: Embedding) -> float:
    if len(a) != len(b):
        raise ValueError(f"dimension mismatch: {len(a)} vs {len(b)}")
    if a.norm == 0.0 or b.norm == 0.0:
        raise ValueError("cosine similarity of a zero-norm vector")
    s = float(np.dot(a.values, b.values) / (a.norm * b.norm))
    return min(1.0, max(-1.0, s))


@dataclass(frozen=True)
class FeatureTables:
    """Per-id embeddings for nodes and edges, plus dense matrices in graph order."""

    nodes: Mapping[str, Embedding]
    edges: Mapping[str, Embedding]
    node_matrix: np.ndarray
    edge_matrix: np.ndarray

    def node_vec(self, node_id: str) -> Embedding:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise KeyError(f"missing embedding for node {node_id}") from None


def encode_graph(
    spec: EncoderSpec,
    graph: CitationGraph,
    edge_spec: EncoderSpec | None = None,
    client: httpx.Client | None = None,
) -> FeatureTables:
    """Encode every node text with ``spec`` and every statement with ``edge_spec``.

    ``edge_spec`` defaults to ``spec``.
    """
    edge_spec = edge_spec or spec

    def run(s: EncoderSpec, items: list[tuple[str, str]], what: str) -> dict[str, Embedding]:
        for item_id, text in items:
            if not isinstance(text, str) or not text.strip():
                raise EncoderError(f"{what} {item_id}: empty text")
        if s.kind == "external" and items:
            mat = _external_embed(s, [t for _, t in items], client)
            return {i: Embedding(_normalise(row, s.normalization)) for (i, _), row in zip(items, mat)}
        out = {}
        for item_id, text in items:
            try:
                out[item_id] = encode_text(s, text)
            except EncoderError as exc:
                raise EncoderError(f"{what} {item_id}: {exc}") from None
        return out

    nodes = run(spec, [(p.id, p.text) for p in graph.nodes.values()], "node")
    edges = run(edge_spec, [(e.id, e.statement) for e in graph.edges], "edge")
    node_matrix = np.stack([nodes[n].values for n in graph.node_ids]) if nodes else np.zeros((0, spec.d_enc))
    edge_matrix = (
        np.stack([edges[e.id].values for e in graph.edges]) if edges else np.zeros((0, edge_spec.d_enc))
    )
    node_matrix.setflags(write=False)
    edge_matrix.setflags(write=False)
    return FeatureTables(MappingProxyType(nodes), MappingProxyType(edges), node_matrix, edge_matrix)
