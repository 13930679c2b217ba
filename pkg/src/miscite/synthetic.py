"""Synthetic citation graphs with injected miscitations.

Papers belong to a field and a topic within it; their text is sampled from
per-topic and per-field token pools so that the hashing encoder separates
topics. Legitimate references stay inside the citing paper's field and their
statements paraphrase the cited paper. A sampled fraction of papers receives
``injection_ratio`` times as many anomalous references as it has original
ones, of three kinds:

``collaborator``
    the target shares an author with the citing paper;
``self_journal``
    the target is in the same venue but on another topic;
``cross_domain``
    the target is in another field.

Anomalous statements describe the citing paper's own topic, so they are
semantically mismatched with their targets.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .graph import CitationEdge, CitationGraph, Publication

INJECTION_TYPES = ("collaborator", "self_journal", "cross_domain")
GENERIC = (
    "study results method analysis approach evidence data model shown reported "
    "we our this that previous work significant effect observed found propose"
).split()


@dataclass
class SyntheticConfig:
    n_papers: int = 400
    refs_per_paper: int = 3
    field_tags: list = field(default_factory=lambda: ["bio", "chem", "phys", "soc"])
    topics_per_field: int = 3
    venues_per_field: int = 3
    sample_fraction: float = 0.5
    injection_ratio: float = 1.0
    type_mix: tuple = (1 / 3, 1 / 3, 1 / 3)
    text_tokens: int = 24
    statement_tokens: int = 10
    statement_noise: float = 0.3  # fraction of statement tokens drawn from the generic pool
    topic_vocab: int = 8
    field_vocab: int = 8
    same_topic_refs: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.sample_fraction <= 1:
            raise ValueError("sample_fraction must lie in [0, 1]")
        if self.injection_ratio <= 0:
            raise ValueError("injection_ratio must be positive")
        mix = np.asarray(self.type_mix, dtype=float)
        if mix.shape != (3,) or np.any(mix < 0) or abs(mix.sum() - 1.0) > 1e-9:
            raise ValueError("type_mix must be three non-negative weights summing to 1")
        if not 0 <= self.statement_noise <= 1:
            raise ValueError("statement_noise must lie in [0, 1]")
        if self.n_papers < 2 or self.refs_per_paper < 1 or not self.field_tags:
            raise ValueError("need >= 2 papers, >= 1 reference per paper and >= 1 field")


def _vocab(prefix: str, n: int) -> list[str]:
    return [f"{prefix}x{i}" for i in range(n)]


def concept_of(token: str) -> str:
    """Concept a generated token belongs to: its topic or field pool, else itself.

    Serves as the mock teacher's lexicon for synthetic graphs.
    """
    return re.sub(r"(?<=[a-z0-9])x\d+$", "", token)


def generate_synthetic(cfg: SyntheticConfig) -> CitationGraph:
    mix = np.asarray(cfg.type_mix, dtype=float)
    n_fields = len(cfg.field_tags)
    if mix[2] > 0 and n_fields < 2:
        raise ValueError("config infeasible: cross_domain injections need at least two field tags")
    per_field = cfg.n_papers // n_fields
    if per_field - 1 < cfg.refs_per_paper:
        raise ValueError(
            f"config infeasible: {per_field} papers per field cannot supply {cfg.refs_per_paper} references"
        )
    rng = np.random.default_rng(cfg.seed)

    topic_pool = {(f, t): _vocab(f"{f}t{t}", cfg.topic_vocab)
                  for f in cfg.field_tags for t in range(cfg.topics_per_field)}
    field_pool = {f: _vocab(f"{f}f", cfg.field_vocab) for f in cfg.field_tags}

    # papers: balanced fields, random topic and venue within the field
    fields_of = [cfg.field_tags[i % n_fields] for i in range(cfg.n_papers)]
    topics_of = rng.integers(0, cfg.topics_per_field, size=cfg.n_papers)
    venues_of = [f"{fields_of[i]}-v{rng.integers(cfg.venues_per_field)}" for i in range(cfg.n_papers)]
    # a paper alone in its venue would have no self_journal target; move it to its field's largest venue
    for i in range(cfg.n_papers):
        if venues_of.count(venues_of[i]) == 1:
            peers = [venues_of[j] for j in range(cfg.n_papers) if j != i and fields_of[j] == fields_of[i]]
            if peers:
                venues_of[i] = max(sorted(set(peers)), key=peers.count)
    ids = [f"p{i:04d}" for i in range(cfg.n_papers)]

    # authors: each writes >= 2 papers so every paper has a collaborator paper
    n_authors = max(1, cfg.n_papers // 2)
    authors_of = [set() for _ in range(cfg.n_papers)]
    slots = rng.permutation(np.repeat(np.arange(n_authors), 2)[: cfg.n_papers * 2])
    for slot, a in enumerate(slots):
        authors_of[slot % cfg.n_papers].add(int(a))
    for i in range(cfg.n_papers):
        if rng.random() < 0.5:
            authors_of[i].add(int(rng.integers(n_authors)))
    by_author: dict[int, list[int]] = {}
    for i, auths in enumerate(authors_of):
        for a in auths:
            by_author.setdefault(a, []).append(i)

    def paper_text(i):
        f, t = fields_of[i], int(topics_of[i])
        n_topic = cfg.text_tokens // 2
        n_field = cfg.text_tokens // 4
        toks = list(rng.choice(topic_pool[(f, t)], n_topic))
        toks += list(rng.choice(field_pool[f], n_field))
        toks += list(rng.choice(GENERIC, cfg.text_tokens - n_topic - n_field))
        rng.shuffle(toks)
        return " ".join(toks)

    texts = [paper_text(i) for i in range(cfg.n_papers)]
    pubs = [
        Publication(ids[i], texts[i], {"field": fields_of[i], "topic": int(topics_of[i]),
                                       "venue": venues_of[i], "authors": sorted(authors_of[i])})
        for i in range(cfg.n_papers)
    ]

    def statement(about: int):
        """Citation sentence paraphrasing paper ``about``."""
        n_noise = int(round(cfg.statement_noise * cfg.statement_tokens))
        words = texts[about].split()
        toks = list(rng.choice(words, cfg.statement_tokens - n_noise)) + list(rng.choice(GENERIC, n_noise))
        rng.shuffle(toks)
        return " ".join(toks)

    edges: list[CitationEdge] = []
    triples = set()
    cited_by: list[set] = [set() for _ in range(cfg.n_papers)]

    def add_edge(src, dst, stmt, label):
        key = (src, dst, stmt)
        while key in triples:
            stmt = stmt + " " + str(rng.choice(GENERIC))
            key = (src, dst, stmt)
        triples.add(key)
        cited_by[src].add(dst)
        edges.append(CitationEdge(f"e{len(edges):05d}", ids[src], ids[dst], stmt, label))

    field_members = {f: [i for i in range(cfg.n_papers) if fields_of[i] == f] for f in cfg.field_tags}
    for i in range(cfg.n_papers):
        same_field = [j for j in field_members[fields_of[i]] if j != i]
        same_topic = [j for j in same_field if topics_of[j] == topics_of[i]]
        chosen: list[int] = []
        for _ in range(cfg.refs_per_paper):
            pool = same_topic if (same_topic and rng.random() < cfg.same_topic_refs) else same_field
            pool = [j for j in pool if j not in chosen] or [j for j in same_field if j not in chosen]
            chosen.append(int(rng.choice(pool)))
        for j in chosen:
            add_edge(i, j, statement(j), 0)

    n_sampled = int(round(cfg.sample_fraction * cfg.n_papers))
    sampled = sorted(rng.choice(cfg.n_papers, size=n_sampled, replace=False).tolist())
    for i in sampled:
        n_orig = len(cited_by[i])
        for _ in range(int(round(cfg.injection_ratio * n_orig))):
            kind = INJECTION_TYPES[int(rng.choice(3, p=mix))]
            if kind == "collaborator":
                cands = sorted({j for a in authors_of[i] for j in by_author[a]} - {i})
            elif kind == "self_journal":
                cands = [j for j in range(cfg.n_papers) if j != i and venues_of[j] == venues_of[i]]
            else:
                cands = [j for j in range(cfg.n_papers) if fields_of[j] != fields_of[i]]
            if not cands:
                raise ValueError(f"config infeasible: no {kind} target for paper {ids[i]}")
            off_topic = [j for j in cands if (fields_of[j], topics_of[j]) != (fields_of[i], topics_of[i])]
            j = int(rng.choice(off_topic or cands))
            add_edge(i, j, statement(i), 1)

    return CitationGraph(pubs, edges)
