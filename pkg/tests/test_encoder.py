import httpx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from miscite import kernels
from miscite.encoder import (HASH_SEED, Embedding, EncoderError, EncoderSpec, cosine_sim, encode_graph,
                             encode_text, tokenize)

from conftest import make_graph


def fnv1a64_oracle(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) % 2 ** 64
    return h


def test_fnv_reference_vectors():
    assert kernels.fnv1a64(b"") == 0xCBF29CE484222325
    assert kernels.fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert kernels.fnv1a64(b"foobar") == 0x85944171F73967E8


def test_bucket_counts_by_hand():
    spec = EncoderSpec(d_enc=8, normalization="none")
    got = encode_text(spec, "graph neural network").values
    want = np.zeros(8)
    for tok in ("graph", "neural", "network"):
        want[fnv1a64_oracle(HASH_SEED + tok.encode()) % 8] += 1
    assert np.array_equal(got, want)


def test_determinism_and_scale_invariance():
    spec = EncoderSpec()
    assert encode_text(spec, "a b c") == encode_text(spec, "a b c")
    assert encode_text(spec, "a a") == encode_text(spec, "a")


def test_tokenize():
    assert tokenize("Graph-Neural  networks, 2024!") == ["graph", "neural", "networks", "2024"]


def test_cosine_examples():
    assert cosine_sim(Embedding([1, 0]), Embedding([1, 0])) == pytest.approx(1.0)
    assert cosine_sim(Embedding([1, 0]), Embedding([0, 1])) == pytest.approx(0.0)
    assert cosine_sim(Embedding([1, 1]), Embedding([1, 0])) == pytest.approx(0.70711, abs=1e-5)
    with pytest.raises(ValueError, match="dimension"):
        cosine_sim(Embedding([1, 0]), Embedding([1, 0, 0]))
    with pytest.raises(ValueError, match="zero-norm"):
        cosine_sim(Embedding([0, 0]), Embedding([1, 0]))


def test_encode_graph_shapes():
    g = make_graph([("a", "b")])
    spec = EncoderSpec()
    ft = encode_graph(spec, g)
    assert ft.node_matrix.shape == (2, 256) and ft.edge_matrix.shape == (1, 256)
    again = encode_graph(spec, g)
    assert np.array_equal(ft.node_matrix, again.node_matrix)
    assert np.array_equal(ft.edge_matrix, again.edge_matrix)


def test_whitespace_statement_names_edge():
    from miscite.graph import CitationEdge, CitationGraph, Publication
    g = CitationGraph([Publication("a", "x"), Publication("b", "y")], [CitationEdge("bad", "a", "b", "   ")])
    with pytest.raises(EncoderError, match="bad"):
        encode_graph(EncoderSpec(), g)


def test_external_encoder_with_retry():
    calls = []

    def handler(request):
        calls.append(request)
        if len(calls) == 1:
            return httpx.Response(503)
        texts = httpx.Request("POST", "x", content=request.content).read()
        n = len(__import__("json").loads(texts)["input"])
        return httpx.Response(200, json={"embeddings": [[3.0, 4.0]] * n})

    client = httpx.Client(transport=httpx.MockTransport(handler))
    spec = EncoderSpec(kind="external", d_enc=2, url="http://embed.test", retries=1)
    emb = encode_text(spec, "hello", client=client)
    assert np.allclose(emb.values, [0.6, 0.8])
    assert len(calls) == 2


def test_external_encoder_gives_up():
    client = httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(500)))
    spec = EncoderSpec(kind="external", d_enc=2, url="http://embed.test", retries=0)
    with pytest.raises(EncoderError, match="failed after 1"):
        encode_text(spec, "hello", client=client)


words = st.lists(st.sampled_from(["graph", "neural", "cite", "paper", "model", "x1"]), min_size=1, max_size=12)


@settings(max_examples=200, deadline=None)
@given(words, st.randoms(use_true_random=False))
def test_permutation_invariance(toks, rnd):
    shuffled = list(toks)
    rnd.shuffle(shuffled)
    spec = EncoderSpec()
    assert encode_text(spec, " ".join(toks)) == encode_text(spec, " ".join(shuffled))


vecs = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=3, max_size=3).filter(
    lambda v: np.linalg.norm(v) > 1e-6)


@settings(max_examples=2000, deadline=None)
@given(vecs, vecs)
def test_cosine_bounds_symmetry_identity(a, b):
    ea, eb = Embedding(a), Embedding(b)
    s = cosine_sim(ea, eb)
    assert -1.0 <= s <= 1.0
    assert s == pytest.approx(cosine_sim(eb, ea), abs=1e-12)
    assert cosine_sim(ea, ea) == pytest.approx(1.0, abs=1e-9)
