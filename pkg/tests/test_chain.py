import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from miscite.chain import ChainConfig, build_chain, chain_edges, expand_sources, filter_hop
from miscite.encoder import Embedding, EncoderSpec, encode_graph
from miscite.graph import CitationEdge, CitationGraph, Publication

from conftest import make_graph


def bfs_oracle(adj, start, K):
    hops = [{start}]
    while len(hops) < K:
        nxt = set()
        for u in hops[-1]:
            for a, b in adj:
                if a == u:
                    nxt.add(b)
        if not nxt:
            break
        hops.append(nxt)
    return hops


def test_expand_examples():
    g = make_graph([("i", "j"), ("j", "a"), ("j", "b"), ("a", "c")])
    assert expand_sources(g, "e0", 3) == [("j",), ("a", "b"), ("c",)]
    g2 = make_graph([("i", "j"), ("x", "i")])
    assert expand_sources(g2, "e0", 2) == [("j",)]
    g3 = make_graph([("i", "j"), ("j", "a"), ("a", "j")])
    assert expand_sources(g3, "e0", 3) == [("j",), ("a",), ("j",)]


@st.composite
def graph_and_edge(draw):
    n = draw(st.integers(2, 50))
    pairs = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)).filter(lambda p: p[0] != p[1]),
                          min_size=1, max_size=150, unique=True))
    k = draw(st.integers(1, 5))
    root = draw(st.integers(0, len(pairs) - 1))
    return n, pairs, k, root


@settings(max_examples=200, deadline=None)
@given(graph_and_edge())
def test_expand_matches_bfs_oracle(case):
    n, pairs, K, root = case
    nodes = [Publication(f"p{i}", f"t{i}") for i in range(n)]
    edges = [CitationEdge(f"e{k}", f"p{s}", f"p{t}", "s") for k, (s, t) in enumerate(pairs)]
    g = CitationGraph(nodes, edges)
    got = [set(h) for h in expand_sources(g, f"e{root}", K)]
    adj = [(f"p{s}", f"p{t}") for s, t in pairs]
    assert got == bfs_oracle(adj, f"p{pairs[root][1]}", K)


def feats(scores):
    # unit vectors at the requested cosine against claim (1, 0)
    return {k: Embedding([v, np.sqrt(max(0.0, 1 - v * v))]) for k, v in scores.items()}


def test_filter_examples():
    claim = Embedding([1.0, 0.0])
    kept, _ = filter_hop(("a", "b", "c"), claim, feats({"a": 0.9, "b": 0.5, "c": 0.7}), 2)
    assert kept == ("a", "c")
    kept, _ = filter_hop(("a", "b", "c"), claim, feats({"a": 0.9, "b": 0.5, "c": 0.7}), 10)
    assert set(kept) == {"a", "b", "c"}
    kept, _ = filter_hop(("b", "a"), claim, feats({"a": 0.5, "b": 0.5}), 1)
    assert kept == ("a",)


@settings(max_examples=200, deadline=None)
@given(st.dictionaries(st.sampled_from("abcdefgh"), st.sampled_from([0.1, 0.3, 0.5, 0.9]), min_size=1),
       st.integers(1, 8))
def test_filter_monotone_in_m(scores, m):
    claim = Embedding([1.0, 0.0])
    f = feats(scores)
    small, _ = filter_hop(tuple(scores), claim, f, m)
    big, _ = filter_hop(tuple(scores), claim, f, m + 1)
    assert set(small) <= set(big)
    oracle = sorted(scores, key=lambda k: (-round(scores[k], 12), k))[:m]
    assert set(small) == set(oracle)


def four_node():
    g = make_graph([("i", "j"), ("j", "a"), ("j", "b"), ("a", "c")])
    return g, encode_graph(EncoderSpec(), g)


def test_build_chain_variants():
    g, f = four_node()
    directed = build_chain(g, "e0", ChainConfig.for_variant("directed"), f)
    assert [h.filtered for h in directed.hops] == [("j",)]
    full = build_chain(g, "e0", ChainConfig(K=2, m=10), f)
    assert [set(h.filtered) for h in full.hops] == [{"j"}, {"a", "b"}]
    assert full.source == "i" and full.claim == g.edge("e0").statement
    unf = build_chain(g, "e0", ChainConfig(K=2, m=10, filtering=False), f)
    assert [set(h.filtered) for h in unf.hops] == [set(h.filtered) for h in full.hops]
    assert build_chain(g, "e0", ChainConfig(K=2, m=10), f).to_dict() == full.to_dict()


def test_frontier_expands_from_filtered_set():
    g = make_graph([("i", "j"), ("j", "a"), ("j", "b"), ("a", "c"), ("b", "d")],
                   texts={"a": "alpha words here", "b": "i cites j for result 0", "c": "c", "d": "d",
                          "i": "i", "j": "j"})
    f = encode_graph(EncoderSpec(), g)
    chain = build_chain(g, "e0", ChainConfig(K=3, m=1), f)
    assert chain.hops[1].filtered == ("b",)
    assert chain.hops[2].raw == ("d",)


def test_chain_edges():
    g, f = four_node()
    chain = build_chain(g, "e0", ChainConfig(K=2, m=10), f)
    assert chain_edges(g, chain, 1) == ["e0"]
    assert sorted(chain_edges(g, chain, 2)) == ["e1", "e2"]
