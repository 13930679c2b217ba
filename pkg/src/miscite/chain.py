"""Evidence-chain extraction: hop-wise source expansion with top-m filtering."""

from __future__ import annotations

from dataclasses import dataclass, field

from .encoder import Embedding, FeatureTables, cosine_sim
from .graph import CitationGraph, out_neighbors

CHAIN_VARIANTS = ("directed", "unfiltered", "full")


@dataclass(frozen=True)
class ChainConfig:
    K: int = 2
    m: int = 10
    filtering: bool = True

    def __post_init__(self):
        if int(self.K) < 1:
            raise ValueError("K must be >= 1")
        if int(self.m) < 1:
            raise ValueError("m must be >= 1")

    @classmethod
    def for_variant(cls, variant: str, K: int = 2, m: int = 10) -> "ChainConfig":
        """``directed`` is a one-hop chain, ``unfiltered`` skips similarity ranking."""
        if variant == "directed":
            return cls(K=1, m=m, filtering=True)
        if variant == "unfiltered":
            return cls(K=K, m=m, filtering=False)
        if variant == "full":
            return cls(K=K, m=m, filtering=True)
        raise ValueError(f"unknown chain variant {variant!r}")


@dataclass(frozen=True)
class HopSet:
    hop: int
    raw: tuple[str, ...]
    filtered: tuple[str, ...]
    scores: dict = field(default_factory=dict, compare=True)


@dataclass(frozen=True)
class EvidenceChain:
    root_edge: str
    source: str
    claim: str
    hops: tuple[HopSet, ...]

    @property
    def k_eff(self) -> int:
        return len(self.hops)

    def to_dict(self) -> dict:
        return {
            "root_edge": self.root_edge,
            "source": self.source,
            "claim": self.claim,
            "hops": [
                {
                    "hop": h.hop,
                    "raw": list(h.raw),
                    "filtered": list(h.filtered),
                    "scores": {k: h.scores[k] for k in h.filtered},
                }
                for h in self.hops
            ],
        }


def _expand(graph: CitationGraph, frontier) -> tuple[str, ...]:
    nxt = set()
    for node in frontier:
        nxt.update(out_neighbors(graph, node))
    return tuple(sorted(nxt))


def expand_sources(graph: CitationGraph, edge: str, K: int) -> list[tuple[str, ...]]:
    """Unfiltered hop sets S_1..S_K for ``edge`` (stops at the first empty set)."""
    if K < 1:
        raise ValueError("K must be >= 1")
    root = graph.edge(edge)
    hops = [(root.target,)]
    while len(hops) < K:
        nxt = _expand(graph, hops[-1])
        if not nxt:
            break
        hops.append(nxt)
    return hops


def filter_hop(raw, claim_vec: Embedding, node_features: FeatureTables | dict, m: int):
    """Keep the ``m`` nodes most similar to the claim.

    Returns ``(filtered, scores)`` with ``filtered`` ordered by score
    descending, then node id ascending.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    lookup = node_features.nodes if isinstance(node_features, FeatureTables) else node_features
    scores = {}
    for node in raw:
        try:
            vec = lookup[node]
        except KeyError:
            raise KeyError(f"missing embedding for node {node}") from None
        scores[node] = cosine_sim(claim_vec, vec)
    ranked = sorted(raw, key=lambda n: (-scores[n], n))
    return tuple(ranked[:m]), scores


def build_chain(graph: CitationGraph, edge: str, config: ChainConfig, features: FeatureTables) -> EvidenceChain:
    root = graph.edge(edge)
    claim_vec = features.edges[edge]
    hops: list[HopSet] = []
    frontier = (root.target,)
    raw = frontier
    for h in range(1, config.K + 1):
        if h > 1:
            raw = _expand(graph, frontier)
            if not raw:
                break
        if config.filtering:
            filtered, scores = filter_hop(raw, claim_vec, features, config.m)
        else:
            _, scores = filter_hop(raw, claim_vec, features, len(raw))
            filtered = tuple(sorted(raw)[: config.m])
        hops.append(HopSet(hop=h, raw=tuple(sorted(raw)), filtered=filtered, scores=scores))
        frontier = filtered
    return EvidenceChain(root_edge=edge, source=root.source, claim=root.statement, hops=tuple(hops))


def chain_edges(graph: CitationGraph, chain: EvidenceChain, hop: int) -> list[str]:
    """Edges linking hop ``hop-1`` filtered nodes to hop ``hop`` filtered nodes.

    Hop 1 is the root edge itself.
    """
    if hop == 1:
        return [chain.root_edge]
    prev = chain.hops[hop - 2].filtered
    cur = set(chain.hops[hop - 1].filtered)
    out = []
    for u in sorted(prev):
        for v in out_neighbors(graph, u):
            if v in cur:
                out.extend(graph.edges_between(u, v))
    return out
