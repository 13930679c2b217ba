import numpy as np
import pytest

from miscite.encoder import EncoderSpec, cosine_sim, encode_text
from miscite.synthetic import SyntheticConfig, concept_of, generate_synthetic


def test_injection_counts():
    g = generate_synthetic(SyntheticConfig(n_papers=20, refs_per_paper=4, sample_fraction=0.5, injection_ratio=1.0))
    injected = [e for e in g.edges if e.label == 1]
    assert len({e.source for e in injected}) == 10
    assert len(injected) == 40
    assert sum(e.label == 0 for e in g.edges) == 80


def test_deterministic():
    cfg = SyntheticConfig(n_papers=40, seed=5)
    a, b = generate_synthetic(cfg), generate_synthetic(cfg)
    assert a.edges == b.edges
    assert [n.text for n in a.nodes.values()] == [n.text for n in b.nodes.values()]
    assert generate_synthetic(SyntheticConfig(n_papers=40, seed=6)).edges != a.edges


def test_collaborator_only_mix():
    g = generate_synthetic(SyntheticConfig(n_papers=40, type_mix=(1, 0, 0)))
    for e in g.edges:
        if e.label == 1:
            assert set(g.nodes[e.source].meta["authors"]) & set(g.nodes[e.target].meta["authors"])


def test_cross_domain_only_mix():
    g = generate_synthetic(SyntheticConfig(n_papers=40, type_mix=(0, 0, 1)))
    for e in g.edges:
        if e.label == 1:
            assert g.nodes[e.source].meta["field"] != g.nodes[e.target].meta["field"]


def test_infeasible_configs():
    with pytest.raises(ValueError, match="infeasible"):
        generate_synthetic(SyntheticConfig(n_papers=20, field_tags=["bio"], type_mix=(0, 0, 1)))
    with pytest.raises(ValueError):
        SyntheticConfig(type_mix=(0.5, 0.5, 0.5))


def test_miscitations_are_semantically_mismatched():
    g = generate_synthetic(SyntheticConfig(n_papers=120))
    spec = EncoderSpec()
    sims = {0: [], 1: []}
    for e in g.edges:
        sims[e.label].append(cosine_sim(encode_text(spec, e.statement), encode_text(spec, g.nodes[e.target].text)))
    assert np.mean(sims[0]) > np.mean(sims[1]) + 0.1


def test_concept_of():
    assert concept_of("biot2x7") == "biot2"
    assert concept_of("chemfx0") == "chemf"
    assert concept_of("method") == "method"
