"""LLM backends used by the reasoner.

Both backends expose ``generate(prompt, context)`` returning reply text and
``embed_tokens(text, context)`` returning an ``(n_tokens, d_T)`` array. The
``context`` dict carries call metadata (stage, edge, hop, k_eff, attempt) that
the HTTP backend ignores and the mock backend keys its rules on.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from typing import Callable, Protocol

import httpx
import numpy as np

from .encoder import EncoderSpec, encode_text, tokenize


class BackendError(RuntimeError):
    """A backend call failed (after its retries, where applicable)."""


class LLMBackend(Protocol):
    kind: str

    @property
    def fingerprint(self) -> str: ...

    def generate(self, prompt: str, context: dict | None = None) -> str: ...

    def embed_tokens(self, text: str, context: dict | None = None) -> np.ndarray: ...


def _unit_hash(*parts) -> float:
    """Deterministic uniform draw in [0, 1) from arbitrary key parts."""
    digest = hashlib.blake2b(repr(parts).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") / 2.0 ** 64


def _rng_for(*parts) -> np.random.Generator:
    digest = hashlib.blake2b(repr(parts).encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


class MockBackend:
    """Deterministic rule engine standing in for a hosted LLM.

    Replies are a pure function of ``(stage, edge, hop, seed)``. When
    ``labels`` is given, the mock "knows" those edges' ground truth: its
    belief matches the label except on a keyed fraction ``error_rate / k_eff``
    of edges (deeper chains make it more reliable), and a keyed fraction
    ``low_conf_rate`` of judgments report confidence below the usual
    filtering threshold. Edges without a known label get a coin-flip belief
    at confidence 0.5.

    Teacher token vectors are ``prototype[belief] + content + noise``: one
    fixed unit prototype per class (seeded), per-token Gaussian noise keyed by
    ``(edge, hop)``, and, when a ``lexicon`` is given, a content term standing
    in for what a language model knows about the words it read. The lexicon
    maps each token to a concept; the content term is
    ``concept_weight * (c(claim) + c(evidence))`` where ``c`` is the unit-norm
    sum of seeded concept vectors over a text's tokens, and claim and
    evidence come from the embed context. Without edge context, token vectors
    are keyed on the token text alone.

    ``script`` overrides replies: keys are ``(stage, edge, hop)``,
    ``(stage, edge)`` or ``stage``; values are a reply string or a list of
    replies consumed by attempt number.

    ``latency`` seconds are slept on every ``generate`` call.
    """

    kind = "mock"

    def __init__(
        self,
        seed: int = 0,
        d_T: int = 64,
        labels: dict | None = None,
        error_rate: float = 0.1,
        low_conf_rate: float = 0.1,
        noise: float = 0.2,
        latency: float = 0.0,
        script: dict | None = None,
        token_vectors: dict | None = None,
        lexicon: Callable[[str], str] | None = None,
        concept_weight: float = 2.0,
    ):
        self.seed = int(seed)
        self.d_T = int(d_T)
        self.labels = dict(labels or {})
        self.error_rate = float(error_rate)
        self.low_conf_rate = float(low_conf_rate)
        self.noise = float(noise)
        self.latency = float(latency)
        self.script = dict(script or {})
        self.token_vectors = dict(token_vectors or {})
        self.lexicon = lexicon
        self.concept_weight = float(concept_weight)
        self._concepts: dict[str, np.ndarray] = {}
        protos = _rng_for("prototypes", self.seed).standard_normal((2, self.d_T))
        self.prototypes = protos / np.linalg.norm(protos, axis=1, keepdims=True)
        self._lock = threading.Lock()
        self.calls = {"generate": 0, "embed_tokens": 0}

    @property
    def fingerprint(self) -> str:
        label_digest = hashlib.blake2b(
            json.dumps(sorted(self.labels.items())).encode(), digest_size=6
        ).hexdigest()
        return (
            f"mock:s{self.seed}:d{self.d_T}:e{self.error_rate}:c{self.low_conf_rate}"
            f":n{self.noise}:L{label_digest}"
            + (f":lex{self.concept_weight}" if self.lexicon is not None else "")
        )

    def _count(self, what):
        with self._lock:
            self.calls[what] += 1

    def concept_vector(self, text: str) -> np.ndarray:
        """Unit-norm sum of concept vectors over the tokens of ``text``."""
        acc = np.zeros(self.d_T)
        for tok in tokenize(text):
            c = self.lexicon(tok)
            with self._lock:
                vec = self._concepts.get(c)
                if vec is None:
                    vec = self._concepts[c] = _rng_for("concept", self.seed, c).standard_normal(self.d_T)
            acc += vec
        norm = np.linalg.norm(acc)
        return acc / norm if norm > 0 else acc

    def belief(self, edge: str, k_eff: int = 1) -> tuple[int, float]:
        """(believed label, confidence) for ``edge``."""
        if edge in self.labels:
            label = int(self.labels[edge])
            wrong = _unit_hash("err", self.seed, edge) < self.error_rate / max(1, k_eff)
            belief = 1 - label if wrong else label
            if _unit_hash("conf", self.seed, edge) < self.low_conf_rate:
                return belief, 0.6
            return belief, (0.8 if wrong else 0.95)
        return int(_unit_hash("coin", self.seed, edge) < 0.5), 0.5

    def _scripted(self, ctx: dict):
        stage, edge, hop = ctx.get("stage"), ctx.get("edge"), ctx.get("hop")
        for key in ((stage, edge, hop), (stage, edge), stage):
            if key in self.script:
                reply = self.script[key]
                if isinstance(reply, (list, tuple)):
                    return reply[min(ctx.get("attempt", 0), len(reply) - 1)]
                return reply
        return None

    def generate(self, prompt: str, context: dict | None = None) -> str:
        self._count("generate")
        if self.latency > 0:
            time.sleep(self.latency)
        ctx = context or {}
        scripted = self._scripted(ctx)
        if scripted is not None:
            return scripted
        stage = ctx.get("stage")
        edge = ctx.get("edge")
        if edge is None:
            edge = hashlib.blake2b(prompt.encode("utf-8"), digest_size=8).hexdigest()
        hop = ctx.get("hop", 1)
        belief, conf = self.belief(edge, ctx.get("k_eff", 1))
        verdict = "inconsistent" if belief else "consistent"
        if stage == "verify":
            return json.dumps({"verdict": verdict,
                               "rationale": f"hop {hop}: cited evidence is {verdict} with the claim"})
        if stage == "cot":
            prior = ctx.get("prior_state", "")
            step = f"Hop {hop}: the cited sources are {verdict} with the statement."
            return f"{prior} {step}".strip()
        if stage in ("judge", "direct"):
            level = 0.9 if belief else 0.1
            return json.dumps({
                "explanation": f"The evidence chain is {verdict} with the cited claim.",
                "miscitation_level": level,
                "confidence": conf,
            })
        return "I cannot help with that."

    def embed_tokens(self, text: str, context: dict | None = None) -> np.ndarray:
        self._count("embed_tokens")
        ctx = context or {}
        edge, hop = ctx.get("edge"), ctx.get("hop", 1)
        key = (edge, hop)
        if key in self.token_vectors:
            return np.asarray(self.token_vectors[key], dtype=np.float64)
        tokens = tokenize(text)
        if not tokens:
            return np.zeros((0, self.d_T))
        n = min(len(tokens), 32)
        if edge is None:
            return np.stack([_rng_for("tok", self.seed, t).standard_normal(self.d_T) for t in tokens[:n]])
        belief, _ = self.belief(edge, ctx.get("k_eff", 1))
        noise = _rng_for("tv", self.seed, edge, hop).standard_normal((n, self.d_T))
        center = self.prototypes[belief]
        if self.lexicon is not None and "claim" in ctx:
            content = self.concept_vector(ctx["claim"]) + self.concept_vector(ctx.get("evidence", ""))
            center = center + self.concept_weight * content
        return center + self.noise * noise


class HttpBackend:
    """Chat-completion client for OpenAI-compatible serving APIs.

    ``embed_tokens`` cannot reach transformer activations over HTTP; it
    encodes the text with ``encoder_spec`` and returns that single vector.
    """

    kind = "http"

    def __init__(
        self,
        base_url: str | None = None,
        model: str | None = None,
        api_key_env: str = "MISCITE_LLM_TOKEN",
        temperature: float = 0.1,
        retries: int = 2,
        timeout: float = 60.0,
        encoder_spec: EncoderSpec | None = None,
        client: httpx.Client | None = None,
    ):
        self.base_url = (base_url or os.environ.get("MISCITE_LLM_URL", "")).rstrip("/")
        if not self.base_url:
            raise BackendError("http backend needs a base url (config or MISCITE_LLM_URL)")
        self.model = model or os.environ.get("MISCITE_LLM_MODEL", "")
        self.api_key_env = api_key_env
        self.temperature = float(temperature)
        self.retries = int(retries)
        self.encoder_spec = encoder_spec or EncoderSpec()
        self._client = client or httpx.Client(timeout=timeout)

    @property
    def d_T(self) -> int:
        return self.encoder_spec.d_enc

    @property
    def fingerprint(self) -> str:
        return f"http:{self.base_url}:{self.model}:t{self.temperature}"

    def generate(self, prompt: str, context: dict | None = None) -> str:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.api_key_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
        }
        last = None
        for attempt in range(self.retries + 1):
            try:
                resp = self._client.post(f"{self.base_url}/chat/completions", json=payload, headers=headers)
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except (httpx.HTTPError, KeyError, IndexError, TypeError, ValueError) as exc:
                last = exc
                if attempt < self.retries:
                    time.sleep(min(4.0, 0.25 * 2 ** attempt))
        raise BackendError(f"chat completion failed after {self.retries + 1} attempts: {last}")

    def embed_tokens(self, text: str, context: dict | None = None) -> np.ndarray:
        if not text.strip():
            return np.zeros((0, self.encoder_spec.d_enc))
        return encode_text(self.encoder_spec, text).values[None, :]

    def close(self):
        self._client.close()
