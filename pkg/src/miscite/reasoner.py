"""Hop-wise verification, reasoning-state accumulation, judgment, teacher vectors."""

from __future__ import annotations

import json
import re
import string
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .chain import ChainConfig, EvidenceChain, build_chain, chain_edges
from .encoder import FeatureTables
from .graph import CitationGraph

VERDICTS = ("consistent", "inconsistent", "uncertain")
TEMPLATE_NAMES = ("verify", "cot", "judge", "direct")
JSON_ONLY = "\n\nYour previous reply could not be parsed. Reply with valid JSON only."


class ReasonerError(RuntimeError):
    pass


class PromptTemplate:
    def __init__(self, name: str, template: str):
        self.name = name
        self.template = template
        self.fields = {f for _, f, _, _ in string.Formatter().parse(template) if f}

    def render(self, **fill) -> str:
        missing = self.fields - fill.keys()
        if missing:
            raise ReasonerError(f"template {self.name!r} is missing fields: {sorted(missing)}")
        return self.template.format(**fill)

    def __repr__(self):
        return f"PromptTemplate({self.name!r}, fields={sorted(self.fields)})"


def load_templates(directory: str | Path | None = None) -> dict[str, PromptTemplate]:
    """Read ``verify/cot/judge/direct.txt`` from ``directory`` or the bundled set."""
    out = {}
    for name in TEMPLATE_NAMES:
        if directory is None:
            text = resources.files("miscite").joinpath("prompts", f"{name}.txt").read_text("utf-8")
        else:
            text = (Path(directory) / f"{name}.txt").read_text("utf-8")
        out[name] = PromptTemplate(name, text)
    return out


@dataclass(frozen=True)
class Verification:
    hop: int
    verdict: str
    rationale: str

    def __post_init__(self):
        if self.hop < 1:
            raise ValueError("verification hop must be >= 1")
        if self.verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {self.verdict!r}")


@dataclass(frozen=True)
class ReasoningState:
    hop: int
    text: str

    def __post_init__(self):
        if self.hop >= 1 and not self.text.strip():
            raise ValueError(f"empty reasoning state at hop {self.hop}")


EMPTY_STATE = ReasoningState(0, "")


@dataclass(frozen=True)
class Judgment:
    explanation: str
    level: float
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.level <= 1.0:
            raise ValueError(f"level out of range: {self.level}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of range: {self.confidence}")


@dataclass(frozen=True)
class TeacherTrace:
    edge: str
    verifications: tuple[Verification, ...]
    states: tuple[ReasoningState, ...]
    teacher_vectors: tuple[np.ndarray, ...] = field(compare=False)
    judgment: Judgment
    chain: EvidenceChain | None = field(default=None, compare=False)

    def __post_init__(self):
        n = len(self.verifications)
        if not (len(self.states) == n == len(self.teacher_vectors)):
            raise ValueError("trace lengths disagree")
        for v in self.teacher_vectors:
            if not np.all(np.isfinite(v)):
                raise ValueError(f"non-finite teacher vector for edge {self.edge}")

    @property
    def k_eff(self) -> int:
        return len(self.verifications)

    def to_dict(self) -> dict:
        return {
            "edge": self.edge,
            "verifications": [vars(v) for v in self.verifications],
            "states": [vars(s) for s in self.states],
            "teacher_vectors": [v.tolist() for v in self.teacher_vectors],
            "judgment": vars(self.judgment),
            "chain": self.chain.to_dict() if self.chain is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TeacherTrace":
        from .chain import HopSet

        chain = None
        if d.get("chain"):
            c = d["chain"]
            chain = EvidenceChain(
                root_edge=c["root_edge"], source=c["source"], claim=c["claim"],
                hops=tuple(HopSet(h["hop"], tuple(h["raw"]), tuple(h["filtered"]), dict(h["scores"]))
                           for h in c["hops"]),
            )
        return cls(
            edge=d["edge"],
            verifications=tuple(Verification(**v) for v in d["verifications"]),
            states=tuple(ReasoningState(**s) for s in d["states"]),
            teacher_vectors=tuple(np.asarray(v, dtype=np.float64) for v in d["teacher_vectors"]),
            judgment=Judgment(**d["judgment"]),
            chain=chain,
        )

    def same_as(self, other: "TeacherTrace") -> bool:
        return self == other and all(
            np.array_equal(a, b) for a, b in zip(self.teacher_vectors, other.teacher_vectors)
        )


# ---------------------------------------------------------------- hop texts

def _join_texts(graph: CitationGraph, nodes) -> str:
    return "\n".join(f"[{n}] {graph.nodes[n].text}" for n in nodes)


def hop_texts(graph: CitationGraph, chain: EvidenceChain, h: int) -> dict[str, str]:
    """Cited text P^(h), citing text P^(h-1) and citation context between them."""
    if not 1 <= h <= chain.k_eff:
        raise ReasonerError(f"hop {h} outside chain of length {chain.k_eff}")
    cited = _join_texts(graph, chain.hops[h - 1].filtered)
    if h == 1:
        citing = _join_texts(graph, [chain.source])
        context = chain.claim
    else:
        citing = _join_texts(graph, chain.hops[h - 2].filtered)
        context = "\n".join(f"[{graph.edge(e).source} -> {graph.edge(e).target}] {graph.edge(e).statement}"
                            for e in chain_edges(graph, chain, h))
    return {"cited_text": cited, "citing_text": citing, "citing_context": context}


def chain_summary(graph: CitationGraph, chain: EvidenceChain) -> str:
    lines = [f"hop 0 (citing paper): {chain.source}"]
    for hs in chain.hops:
        lines.append(f"hop {hs.hop}: " + ", ".join(hs.filtered))
    return "\n".join(lines)


# ---------------------------------------------------------------- parsing

_JSON_BLOCK = re.compile(r"\{.*\}", re.DOTALL)


def _parse_json_reply(reply: str) -> dict | None:
    m = _JSON_BLOCK.search(reply or "")
    if not m:
        return None
    try:
        obj = json.loads(m.group(0))
    except json.JSONDecodeError:
        return None
    return obj if isinstance(obj, dict) else None


def _ask_json(backend, prompt: str, context: dict, check) -> object:
    """Generate, parse with ``check``; re-ask once with a JSON-only nudge."""
    for attempt in (0, 1):
        ctx = dict(context, attempt=attempt)
        reply = backend.generate(prompt if attempt == 0 else prompt + JSON_ONLY, ctx)
        parsed = check(_parse_json_reply(reply))
        if parsed is not None:
            return parsed
    return None


# ---------------------------------------------------------------- steps

def verify_hop(backend, graph: CitationGraph, chain: EvidenceChain, h: int, templates) -> Verification:
    texts = hop_texts(graph, chain, h)
    prompt = templates["verify"].render(claim=chain.claim, hop=h, hop_prev=h - 1, **texts)

    def check(obj):
        if obj is None:
            return None
        verdict = str(obj.get("verdict", "")).strip().lower()
        if verdict not in VERDICTS:
            return None
        return Verification(hop=h, verdict=verdict, rationale=str(obj.get("rationale", "")))

    ctx = {"stage": "verify", "edge": chain.root_edge, "hop": h, "k_eff": chain.k_eff}
    result = _ask_json(backend, prompt, ctx, check)
    if result is None:
        raise ReasonerError(f"unparseable verification for edge {chain.root_edge} hop {h}")
    return result


def advance_reasoning(backend, graph: CitationGraph, chain: EvidenceChain, prior: ReasoningState,
                      v: Verification, templates) -> ReasoningState:
    if prior.hop != v.hop - 1:
        raise ReasonerError(f"reasoning state at hop {prior.hop} cannot absorb verification of hop {v.hop}")
    texts = hop_texts(graph, chain, v.hop)
    prompt = templates["cot"].render(
        prior_state=prior.text or "(none yet)",
        verification=f"{v.verdict}: {v.rationale}",
        hop=v.hop,
        cited_text=texts["cited_text"],
        citing_context=texts["citing_context"],
    )
    ctx = {"stage": "cot", "edge": chain.root_edge, "hop": v.hop, "k_eff": chain.k_eff,
           "prior_state": prior.text, "attempt": 0}
    reply = backend.generate(prompt, ctx).strip()
    if not reply:
        raise ReasonerError(f"empty reasoning state for edge {chain.root_edge} hop {v.hop}")
    return ReasoningState(hop=v.hop, text=reply)


def _judgment_check(obj):
    if obj is None:
        return None
    try:
        level = float(obj["miscitation_level"])
        conf = float(obj["confidence"])
    except (KeyError, TypeError, ValueError):
        return None
    return (str(obj.get("explanation", "")), level, conf)


def _make_judgment(parsed, edge) -> Judgment:
    if parsed is None:
        raise ReasonerError(f"malformed judgment JSON for edge {edge}")
    explanation, level, conf = parsed
    if not 0.0 <= level <= 1.0:
        raise ReasonerError(f"level out of range for edge {edge}: {level}")
    if not 0.0 <= conf <= 1.0:
        raise ReasonerError(f"confidence out of range for edge {edge}: {conf}")
    return Judgment(explanation, level, conf)


def judge(backend, graph: CitationGraph, trajectory, chain: EvidenceChain, templates) -> Judgment:
    if not trajectory:
        raise ReasonerError("judgment needs a non-empty reasoning trajectory")
    prompt = templates["judge"].render(
        claim=chain.claim,
        chain_summary=chain_summary(graph, chain),
        trajectory="\n".join(f"R{s.hop}: {s.text}" for s in trajectory),
    )
    ctx = {"stage": "judge", "edge": chain.root_edge, "hop": chain.k_eff, "k_eff": chain.k_eff}
    return _make_judgment(_ask_json(backend, prompt, ctx, _judgment_check), chain.root_edge)


def judge_direct(backend, graph: CitationGraph, edge: str, templates) -> Judgment:
    """Single-call statement-versus-cited-paper judgment (no chain, no re-ask)."""
    e = graph.edge(edge)
    prompt = templates["direct"].render(claim=e.statement, cited_text=graph.nodes[e.target].text)
    reply = backend.generate(prompt, {"stage": "direct", "edge": edge, "hop": 1, "k_eff": 1, "attempt": 0})
    return _make_judgment(_judgment_check(_parse_json_reply(reply)), edge)


def teacher_vector(backend, state: ReasoningState, context: dict | None = None) -> np.ndarray:
    if not state.text.strip():
        raise ReasonerError("teacher vector of an empty reasoning state")
    toks = np.asarray(backend.embed_tokens(state.text, context), dtype=np.float64)
    if toks.ndim != 2 or toks.shape[0] == 0:
        raise ReasonerError(f"backend returned no token vectors for hop {state.hop}")
    return toks.mean(axis=0)


def reason_edge(backend, graph: CitationGraph, edge: str, chain_config: ChainConfig, templates,
                features: FeatureTables) -> TeacherTrace:
    chain = build_chain(graph, edge, chain_config, features)
    verifications, states, vectors = [], [], []
    state = EMPTY_STATE
    for h in range(1, chain.k_eff + 1):
        v = verify_hop(backend, graph, chain, h, templates)
        state = advance_reasoning(backend, graph, chain, state, v, templates)
        texts = hop_texts(graph, chain, h)
        vec = teacher_vector(backend, state, {"stage": "embed", "edge": edge, "hop": h, "k_eff": chain.k_eff,
                                              "claim": texts["citing_context"], "evidence": texts["cited_text"]})
        verifications.append(v)
        states.append(state)
        vectors.append(vec)
    judgment = judge(backend, graph, states, chain, templates)
    return TeacherTrace(edge, tuple(verifications), tuple(states), tuple(vectors), judgment, chain)


def reason_edges(backend, graph, edges, chain_config, templates, features, max_in_flight: int = 1) -> dict:
    """Traces for many edges; results are keyed by edge id, so completion order is irrelevant."""
    edges = list(edges)
    if max_in_flight <= 1 or len(edges) <= 1:
        return {e: reason_edge(backend, graph, e, chain_config, templates, features) for e in edges}
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        futures = {e: pool.submit(reason_edge, backend, graph, e, chain_config, templates, features)
                   for e in edges}
        return {e: futures[e].result() for e in edges}


class TraceStore:
    """Append-only JSONL cache of teacher traces keyed by a string key."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._mem: dict[str, TeacherTrace] = {}
        if self.path and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._mem[rec["key"]] = TeacherTrace.from_dict(rec["trace"])

    def __contains__(self, key):
        return key in self._mem

    def __len__(self):
        return len(self._mem)

    def get(self, key):
        return self._mem.get(key)

    def put(self, key: str, trace: TeacherTrace):
        self._mem[key] = trace
        if self.path:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"key": key, "trace": trace.to_dict()}, sort_keys=True) + "\n")
