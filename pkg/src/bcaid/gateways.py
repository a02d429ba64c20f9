"""Language-model and embedding gateways.

Every network dependency of the engine sits behind one of two small
interfaces so the whole pipeline can run offline against deterministic
mocks:

* an LM gateway exposes ``complete(messages) -> LmExchange``;
* an embedding gateway exposes ``embed(texts) -> list[vector]`` plus a
  ``dimension`` attribute.

Wire contracts (HTTP implementations):

* LM request ``{"model", "messages": [{"role", "content"}], "temperature",
  "max_tokens"}``; the generated text is read from a configurable path in
  the response JSON (default ``choices.0.message.content``).
* Embedding request ``{"model", "input": [text, ...]}``; response
  ``{"data": [{"embedding": [...]}, ...]}`` in input order.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
import time
import zlib
from dataclasses import dataclass
from typing import Protocol, Sequence

logger = logging.getLogger(__name__)

Message = dict[str, str]


class GatewayError(RuntimeError):
    """A gateway call failed after exhausting its retry budget."""


def prompt_sha256(messages: Sequence[Message]) -> str:
    canonical = json.dumps(list(messages), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class LmExchange:
    """One prompt/response pair, content-addressed for the audit trail."""

    messages: tuple[Message, ...]
    response: str
    latency_s: float = 0.0
    prompt_tokens: int | None = None
    completion_tokens: int | None = None

    @property
    def prompt_hash(self) -> str:
        return prompt_sha256(self.messages)

    @property
    def exchange_id(self) -> str:
        payload = self.prompt_hash + hashlib.sha256(self.response.encode("utf-8")).hexdigest()
        return hashlib.sha256(payload.encode("ascii")).hexdigest()[:16]


class LmGateway(Protocol):
    def complete(self, messages: Sequence[Message]) -> LmExchange: ...


class EmbeddingGateway(Protocol):
    dimension: int

    def embed(self, texts: Sequence[str]) -> list[list[float]]: ...


def _retrying(call, retries: int, backoff_s: float = 0.5):
    last: Exception | None = None
    for attempt in range(retries + 1):
        try:
            return call()
        except Exception as exc:  # noqa: BLE001 - wrapped below
            last = exc
            if attempt < retries:
                time.sleep(backoff_s * (2**attempt))
    raise GatewayError(f"gateway call failed after {retries + 1} attempts: {last}")


class HttpLmGateway:
    """Chat-completion client for any endpoint honoring the LM wire contract."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        temperature: float = 0.0,
        max_tokens: int = 512,
        retries: int = 2,
        timeout_s: float = 60.0,
        response_path: str = "choices.0.message.content",
    ):
        self.endpoint = endpoint
        self.model = model
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.retries = retries
        self.timeout_s = timeout_s
        self.response_path = response_path

    def complete(self, messages: Sequence[Message]) -> LmExchange:
        import httpx

        payload = {
            "model": self.model,
            "messages": list(messages),
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }

        def call() -> dict:
            resp = httpx.post(self.endpoint, json=payload, timeout=self.timeout_s)
            resp.raise_for_status()
            return resp.json()

        started = time.monotonic()
        body = _retrying(call, self.retries)
        text = _walk_path(body, self.response_path)
        usage = body.get("usage", {}) if isinstance(body, dict) else {}
        return LmExchange(
            messages=tuple(dict(m) for m in messages),
            response=str(text),
            latency_s=time.monotonic() - started,
            prompt_tokens=usage.get("prompt_tokens"),
            completion_tokens=usage.get("completion_tokens"),
        )


def _walk_path(body, path: str):
    node = body
    for part in path.split("."):
        if isinstance(node, list):
            node = node[int(part)]
        elif isinstance(node, dict):
            node = node[part]
        else:
            raise GatewayError(f"response path {path!r} not found")
    return node


class ReplayLmGateway:
    """Replays canned responses keyed by prompt hash (fully offline)."""

    def __init__(self, responses: dict[str, str]):
        self.responses = dict(responses)

    @classmethod
    def from_jsonl(cls, path) -> "ReplayLmGateway":
        responses: dict[str, str] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                responses[obj["prompt_sha256"]] = obj["response"]
        return cls(responses)

    def complete(self, messages: Sequence[Message]) -> LmExchange:
        key = prompt_sha256(messages)
        if key not in self.responses:
            raise GatewayError(f"no replay entry for prompt hash {key}")
        return LmExchange(tuple(dict(m) for m in messages), self.responses[key])


class RecordingLmGateway:
    """Wraps another gateway and captures a replay file of its exchanges."""

    def __init__(self, inner: LmGateway):
        self.inner = inner
        self.exchanges: list[LmExchange] = []

    def complete(self, messages: Sequence[Message]) -> LmExchange:
        exchange = self.inner.complete(messages)
        self.exchanges.append(exchange)
        return exchange

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            seen: set[str] = set()
            for ex in self.exchanges:
                key = ex.prompt_hash
                if key in seen:
                    continue
                seen.add(key)
                fh.write(
                    json.dumps(
                        {"prompt_sha256": key, "response": ex.response}, sort_keys=True
                    )
                    + "\n"
                )


class ScriptedLmGateway:
    """Test double that pops queued responses in order."""

    def __init__(self, responses: Sequence[str]):
        self.queue = list(responses)
        self.exchanges: list[LmExchange] = []

    def complete(self, messages: Sequence[Message]) -> LmExchange:
        if not self.queue:
            raise GatewayError("scripted gateway ran out of responses")
        exchange = LmExchange(tuple(dict(m) for m in messages), self.queue.pop(0))
        self.exchanges.append(exchange)
        return exchange


class FailingLmGateway:
    def complete(self, messages: Sequence[Message]) -> LmExchange:
        raise GatewayError("gateway unavailable")


_GENES_LINE = re.compile(r"^Genes: (.*)$", re.MULTILINE)
_PMID_MARK = re.compile(r"\[PMID:(\d+)\]")
_LOCATION = re.compile(r"anatomical location ([^;]+);")
_NT_TYPE = re.compile(r"neurotransmitter type ([^.\n]+)\.")
_TERM_NAME = re.compile(r"^Term name: (.*)$", re.MULTILINE)
_TERM_DEF = re.compile(r"^Term definition: (.*)$", re.MULTILINE)
_CLUSTER_LINE = re.compile(r"^Cluster: (.*)$", re.MULTILINE)


class CannedLmGateway:
    """Deterministic offline stand-in for a real language model.

    Responses are pure functions of the prompt text, so reruns are
    bit-identical. The heuristics recognise the shipped prompt templates and
    produce plausible, citation-bearing text for each pipeline stage.
    """

    def complete(self, messages: Sequence[Message]) -> LmExchange:
        user = ""
        for message in messages:
            if message.get("role") == "user":
                user = message.get("content", "")
        return LmExchange(tuple(dict(m) for m in messages), self._respond(user))

    def _respond(self, prompt: str) -> str:
        genes = self._first(_GENES_LINE, prompt)
        location = (self._first(_LOCATION, prompt) or "unspecified region").strip()
        nt_type = (self._first(_NT_TYPE, prompt) or "unspecified").strip()
        pmids = _PMID_MARK.findall(prompt)

        if "Rewrite this term" in prompt:
            name = self._first(_TERM_NAME, prompt) or "this process"
            definition = self._first(_TERM_DEF, prompt) or ""
            return f"Genes taking part in {name} act as follows: {definition}".strip()
        if "Write exactly two sentences" in prompt:
            cite1 = f" [PMID:{pmids[0]}]" if pmids else ""
            cite2 = f" [PMID:{pmids[1]}]" if len(pmids) > 1 else cite1
            return (
                f"The {genes} gene module marks a {nt_type} population in the "
                f"{location}, supporting its signaling program{cite1}. "
                f"Published evidence links these genes to synaptic function and "
                f"cell identity in this region{cite2}."
            )
        if "Write a brief summary" in prompt:
            cluster = self._first(_CLUSTER_LINE, prompt) or "this cluster"
            return (
                f"Cluster {cluster} is a {nt_type} cell type located in the "
                f"{location}. Its marker gene sets converge on neurotransmission "
                f"and regional identity. Literature evidence supports these "
                f"assignments."
            )
        if "Write a detailed annotation" in prompt:
            cluster = self._first(_CLUSTER_LINE, prompt) or "this cluster"
            return (
                f"Cluster {cluster} represents a {nt_type} population of the "
                f"{location}, defined by convergent marker gene signals across "
                f"modalities. The transcriptomic, regulatory, and spatial marker "
                f"sets each point to the same regional identity.\n\n"
                f"Reasoning: the marker set annotations above agree on the "
                f"anatomical context ({location}) and neurotransmitter profile "
                f"({nt_type}), and the cited literature ties individual markers "
                f"to this cell type's physiology."
            )
        # Initial annotation prompt (or anything unrecognised).
        return (
            f"The {genes or 'listed'} genes act together in neuronal signaling, "
            f"contributing to neurotransmission and to the identity of a "
            f"specific brain cell population."
        )

    @staticmethod
    def _first(pattern: re.Pattern[str], text: str) -> str | None:
        m = pattern.search(text)
        return m.group(1) if m else None


MOCK_EMBEDDING_DIMENSION = 256
_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")


class HashedEmbeddingGateway:
    """Hashed bag-of-words embedder (the normative deterministic mock).

    Tokenizes on non-alphanumerics after lowercasing, increments the bucket
    ``crc32(token) mod dimension`` per token, then L2-normalizes. Empty text
    maps to the zero vector. Scores between such vectors always land in
    ``[0, 1]``.
    """

    def __init__(self, dimension: int = MOCK_EMBEDDING_DIMENSION):
        self.dimension = dimension

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        return [self._one(t) for t in texts]

    def _one(self, text: str) -> list[float]:
        vec = [0.0] * self.dimension
        for token in _TOKEN_SPLIT.split(text.lower()):
            if token:
                vec[zlib.crc32(token.encode("utf-8")) % self.dimension] += 1.0
        norm = math.sqrt(sum(v * v for v in vec))
        if norm == 0.0:
            return vec
        return [v / norm for v in vec]


class HttpEmbeddingGateway:
    """Embedding client for any endpoint honoring the embedding wire contract."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        dimension: int,
        retries: int = 2,
        timeout_s: float = 60.0,
        batch_size: int = 64,
    ):
        self.endpoint = endpoint
        self.model = model
        self.dimension = dimension
        self.retries = retries
        self.timeout_s = timeout_s
        self.batch_size = batch_size

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        import httpx

        out: list[list[float]] = []
        for start in range(0, len(texts), self.batch_size):
            batch = list(texts[start : start + self.batch_size])

            def call() -> list[list[float]]:
                resp = httpx.post(
                    self.endpoint,
                    json={"model": self.model, "input": batch},
                    timeout=self.timeout_s,
                )
                resp.raise_for_status()
                data = resp.json()["data"]
                return [item["embedding"] for item in data]

            vectors = _retrying(call, self.retries)
            for vec in vectors:
                if len(vec) != self.dimension:
                    raise GatewayError(
                        f"embedding dimension {len(vec)} != declared {self.dimension}"
                    )
            out.extend(vectors)
        return out


def lm_gateway_from_spec(spec: str) -> LmGateway:
    """Build an LM gateway from a CLI-style spec string.

    ``mock:echo`` is the canned deterministic mock; ``mock:<path>`` replays a
    recorded JSONL file; anything else is treated as an HTTP endpoint of the
    form ``<url>#<model>`` (model defaults to ``default``).
    """
    if spec.startswith("mock:"):
        target = spec[len("mock:") :]
        if target == "echo":
            return CannedLmGateway()
        return ReplayLmGateway.from_jsonl(target)
    url, _, model = spec.partition("#")
    return HttpLmGateway(url, model or "default")


def embedding_gateway_from_spec(spec: str, dimension: int = MOCK_EMBEDDING_DIMENSION) -> EmbeddingGateway:
    """``mock:hash`` for the hashed mock, else ``<url>#<model>`` over HTTP."""
    if spec.startswith("mock:"):
        target = spec[len("mock:") :]
        if target in ("hash", ""):
            return HashedEmbeddingGateway(dimension)
        raise ValueError(f"unknown embedding mock {target!r}")
    url, _, model = spec.partition("#")
    return HttpEmbeddingGateway(url, model or "default", dimension)
