"""Generation, embedding and entailment clients.

HTTP clients speak the common chat-completions / embeddings JSON shapes and a
tiny ``POST /nli`` contract. Each has a caching wrapper and a seeded mock.
"""

from __future__ import annotations

import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import httpx
import numpy as np

from .dataset import (
    GenerationSet,
    Response,
    SamplingConfig,
    atomic_write_text,
    cache_key,
    digest,
    load_generations,
    store_generations,
)
from .entropy import EntailmentLabel
from .evaluation import tokenize
from .geometry import embedding

log = logging.getLogger(__name__)

API_KEY_ENV = "SEMUQ_API_KEY"
EMBED_BATCH = 64

PROMPT_PRESETS = {
    "llama": "Answer the following question as briefly as possible.\nQuestion: {question}\nAnswer:",
    "phi": "Answer the following question as briefly as possible.\nQuestion: {question}\nAnswer:",
    "mistral": "Answer the following question briefly using a few words.\nQuestion: {question}\nAnswer:",
    "llama-finetuned": "Give a short reply to the following question.\nQuestion: {question}\nAnswer:",
}


class ClientError(RuntimeError):
    pass


class TransportError(ClientError):
    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempts)")
        self.attempts = attempts


class LogprobsUnsupported(ClientError):
    pass


@dataclass
class EndpointConfig:
    base_url: str
    model: str = ""
    api_key: str | None = field(default_factory=lambda: os.environ.get(API_KEY_ENV))
    timeout: float = 30.0
    max_retries: int = 3
    max_concurrency: int = 4
    backoff_base: float = 1.0
    backoff_factor: float = 2.0

    def __post_init__(self):
        if not self.timeout > 0:
            raise ValueError("timeout must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")

    def __repr__(self) -> str:
        key = "***" if self.api_key else None
        return f"EndpointConfig(base_url={self.base_url!r}, model={self.model!r}, api_key={key})"


def _redact(headers: Mapping[str, str]) -> dict[str, str]:
    return {k: ("***" if k.lower() == "authorization" else v) for k, v in headers.items()}


class _HttpBackend:
    """JSON POST with bounded concurrency and exponential-backoff retries."""

    def __init__(
        self,
        cfg: EndpointConfig,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.cfg = cfg
        self._client = httpx.Client(base_url=cfg.base_url.rstrip("/"), timeout=cfg.timeout, transport=transport)
        self._slots = threading.BoundedSemaphore(cfg.max_concurrency)
        self._sleep = sleep
        self._lock = threading.Lock()
        self.calls = 0

    def post(self, path: str, payload: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.cfg.api_key:
            headers["Authorization"] = f"Bearer {self.cfg.api_key}"
        attempts = self.cfg.max_retries + 1
        last: str = ""
        for attempt in range(1, attempts + 1):
            log.debug("POST %s%s headers=%s body=%s", self.cfg.base_url, path, _redact(headers), payload)
            with self._lock:
                self.calls += 1
            try:
                with self._slots:
                    resp = self._client.post(path, json=payload, headers=headers)
            except httpx.TransportError as exc:
                last = f"{type(exc).__name__}: {exc}"
            else:
                log.debug("response %s %s", resp.status_code, resp.text[:2000])
                if resp.status_code < 400:
                    try:
                        return resp.json()
                    except json.JSONDecodeError as exc:
                        raise ClientError(f"{path}: response is not JSON: {exc}") from exc
                if resp.status_code != 429 and resp.status_code < 500:
                    raise ClientError(f"{path}: HTTP {resp.status_code}: {resp.text[:500]}")
                last = f"HTTP {resp.status_code}"
            if attempt < attempts:
                self._sleep(self.cfg.backoff_base * self.cfg.backoff_factor ** (attempt - 1))
        raise TransportError(f"{self.cfg.base_url}{path} failed: {last}", attempts)

    def close(self) -> None:
        self._client.close()


class GenerationClient(Protocol):
    def generate(self, prompt: str, sampling: SamplingConfig, record_id: str = "") -> GenerationSet: ...


class EmbeddingClient(Protocol):
    def embed(self, texts: Sequence[str]) -> list[np.ndarray]: ...


class HttpGenerationClient:
    """Samples ``m`` completions with per-token log-probabilities in one request.

    With ``require_logprobs=False`` a server without log-probabilities is
    tolerated and responses come back token-less; only SEU can score those.
    """

    def __init__(
        self,
        cfg: EndpointConfig,
        transport: httpx.BaseTransport | None = None,
        require_logprobs: bool = True,
        **kw,
    ):
        self.http = _HttpBackend(cfg, transport, **kw)
        self.require_logprobs = require_logprobs

    @property
    def calls(self) -> int:
        return self.http.calls

    def generate(self, prompt: str, sampling: SamplingConfig, record_id: str = "") -> GenerationSet:
        body = self.http.post(
            "/v1/chat/completions",
            {
                "model": sampling.model_id,
                "messages": [{"role": "user", "content": prompt}],
                "n": sampling.m,
                "temperature": sampling.temperature,
                "max_tokens": sampling.max_tokens,
                "logprobs": True,
            },
        )
        choices = sorted(body.get("choices") or [], key=lambda c: c.get("index", 0))
        if len(choices) != sampling.m:
            raise ClientError(f"expected {sampling.m} samples, received {len(choices)}")
        responses = []
        for c in choices:
            text = (c.get("message") or {}).get("content") or ""
            content = (c.get("logprobs") or {}).get("content")
            if not content and not self.require_logprobs:
                responses.append(Response(text.strip()))
                continue
            if not content:
                raise LogprobsUnsupported(
                    f"logprobs unsupported: endpoint returned no token log-probabilities for model {sampling.model_id!r}"
                )
            tokens = tuple(str(t["token"]) for t in content)
            # servers occasionally report tiny positive values from rounding
            lps = tuple(min(0.0, float(t["logprob"])) for t in content)
            responses.append(Response(text.strip(), tokens, lps))
        return GenerationSet(record_id, tuple(responses), sampling)


class HttpEmbeddingClient:
    def __init__(self, cfg: EndpointConfig, transport: httpx.BaseTransport | None = None, **kw):
        self.http = _HttpBackend(cfg, transport, **kw)
        self.model = cfg.model

    @property
    def calls(self) -> int:
        return self.http.calls

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            raise ValueError("nothing to embed")
        out: list[np.ndarray] = []
        for start in range(0, len(texts), EMBED_BATCH):
            batch = list(texts[start : start + EMBED_BATCH])
            body = self.http.post("/v1/embeddings", {"model": self.model, "input": batch})
            data = sorted(body.get("data") or [], key=lambda d: d.get("index", 0))
            if len(data) != len(batch):
                raise ClientError(f"expected {len(batch)} embeddings, received {len(data)}")
            out.extend(embedding(d["embedding"]) for d in data)
        _check_dims(out)
        return out


def _check_dims(vectors: Sequence[np.ndarray]) -> None:
    dims = {v.size for v in vectors}
    if len(dims) > 1:
        raise ClientError(f"embedding dimension disagreement within batch: {sorted(dims)}")


def nli_text(answer: str, question: str) -> str:
    return f"Question: {question} Answer: {answer}" if question else answer


class HttpEntailmentClient:
    def __init__(self, cfg: EndpointConfig, transport: httpx.BaseTransport | None = None, **kw):
        self.http = _HttpBackend(cfg, transport, **kw)

    @property
    def calls(self) -> int:
        return self.http.calls

    def judge(self, premise: str, hypothesis: str, question: str = "") -> EntailmentLabel:
        body = self.http.post(
            "/nli", {"premise": nli_text(premise, question), "hypothesis": nli_text(hypothesis, question)}
        )
        if "label" not in body:
            raise ClientError(f"/nli response has no 'label': {body}")
        return EntailmentLabel.parse(body["label"])


# -- caching wrappers ---------------------------------------------------------


class _Memo:
    """In-memory map mirrored to ``<dir>/<digest>.json`` when a directory is given."""

    def __init__(self, cache_dir: str | Path | None):
        self.dir = Path(cache_dir) if cache_dir is not None else None
        self.mem: dict[str, object] = {}
        self._lock = threading.Lock()

    def get(self, key: str):
        with self._lock:
            if key in self.mem:
                return self.mem[key]
        if self.dir is None:
            return None
        try:
            value = json.loads((self.dir / f"{key}.json").read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None
        except (ValueError, OSError) as exc:
            log.warning("ignoring corrupt cache entry %s: %s", key, exc)
            return None
        with self._lock:
            self.mem[key] = value
        return value

    def put(self, key: str, value) -> None:
        with self._lock:
            self.mem[key] = value
        if self.dir is not None:
            atomic_write_text(self.dir / f"{key}.json", json.dumps(value))


class CachedGenerator:
    """Serves generations from the content-addressed cache, sampling only on a miss."""

    def __init__(self, inner: GenerationClient, cache_dir: str | Path):
        self.inner = inner
        self.cache_dir = Path(cache_dir)

    def generate(self, prompt: str, sampling: SamplingConfig, record_id: str = "") -> GenerationSet:
        key = cache_key(record_id, sampling, prompt)
        hit = load_generations(key, self.cache_dir)
        if hit is not None:
            return hit
        gen = self.inner.generate(prompt, sampling, record_id)
        if len(gen.responses) != sampling.m:
            raise ClientError(f"expected {sampling.m} samples, received {len(gen.responses)}")
        store_generations(gen, self.cache_dir, key)
        return gen


class CachedEmbedder:
    def __init__(self, inner: EmbeddingClient, cache_dir: str | Path | None = None, namespace: str = ""):
        self.inner = inner
        self.namespace = namespace or getattr(inner, "model", "") or type(inner).__name__
        self.memo = _Memo(cache_dir)

    def _key(self, text: str) -> str:
        return digest({"embed": self.namespace, "text": text})

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            raise ValueError("nothing to embed")
        keys = [self._key(t) for t in texts]
        found = {k: self.memo.get(k) for k in set(keys)}
        missing = sorted({t for t, k in zip(texts, keys) if found[k] is None})
        if missing:
            for t, v in zip(missing, self.inner.embed(missing)):
                k = self._key(t)
                found[k] = [float(x) for x in v]
                self.memo.put(k, found[k])
        out = [embedding(found[k]) for k in keys]
        _check_dims(out)
        return out


class CachedEntailer:
    def __init__(self, inner, cache_dir: str | Path | None = None):
        self.inner = inner
        self.memo = _Memo(cache_dir)

    def judge(self, premise: str, hypothesis: str, question: str = "") -> EntailmentLabel:
        key = digest({"premise": premise, "hypothesis": hypothesis, "question": question})
        hit = self.memo.get(key)
        if hit is not None:
            return EntailmentLabel(hit)
        label = self.inner.judge(premise, hypothesis, question)
        self.memo.put(key, label.value)
        return label


# -- seeded mocks ---------------------------------------------------------------


def _seed_from(*parts) -> int:
    return int(digest([str(p) for p in parts])[:16], 16)


@lru_cache(maxsize=65536)
def _token_direction(tok: str, dim: int, seed: int) -> np.ndarray:
    v = np.random.default_rng(_seed_from(seed, tok)).standard_normal(dim)
    v.flags.writeable = False
    return v


def hashed_bag_embedding(tokens: Sequence[str], dim: int, seed: int) -> np.ndarray:
    """Unit vector from a sum of per-token Gaussian projections.

    Every token maps to a fixed random direction determined by ``(seed, token)``.
    """
    v = np.zeros(dim)
    for tok in tokens or ("<empty>",):
        v += _token_direction(tok, dim, seed)
    n = np.linalg.norm(v)
    return v / n if n > 0 else np.eye(dim)[0]


class MockEmbedder:
    def __init__(self, dim: int = 256, seed: int = 0):
        self.dim, self.seed = dim, seed
        self.model = f"mock-embedder-{dim}-{seed}"
        self.calls = 0

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            raise ValueError("nothing to embed")
        self.calls += 1
        return [hashed_bag_embedding(tokenize(t), self.dim, self.seed) for t in texts]


def containment_rule(premise: str, hypothesis: str) -> EntailmentLabel:
    """Entailment iff every hypothesis token also appears in the premise.

    Strict like a real NLI model on paraphrases: extra detail in the
    hypothesis makes the pair neutral.
    """
    p, h = set(tokenize(premise)), set(tokenize(hypothesis))
    return EntailmentLabel.ENTAILMENT if h <= p else EntailmentLabel.NEUTRAL


class MockEntailer:
    """Scripted pair rules with a fallback rule for unscripted pairs."""

    def __init__(
        self,
        rules: Mapping[tuple[str, str], EntailmentLabel | str] | None = None,
        default: Callable[[str, str], EntailmentLabel] = containment_rule,
    ):
        self.rules = {k: EntailmentLabel.parse(v) for k, v in (rules or {}).items()}
        self.default = default
        self.calls = 0

    def judge(self, premise: str, hypothesis: str, question: str = "") -> EntailmentLabel:
        self.calls += 1
        if (premise, hypothesis) in self.rules:
            return self.rules[(premise, hypothesis)]
        return self.default(premise, hypothesis)


class MockLlm:
    """Deterministic stand-in for a sampling LLM.

    ``table`` maps a prompt to candidate answers, optionally with weights.
    Each sample picks a candidate by weight and, with probability
    ``paraphrase_prob``, inserts a filler word. The first token's log-prob is
    the log of the candidate's weight; later tokens get small seeded
    penalties. Output depends only on (seed, prompt, sampling), never on
    call order.
    """

    FILLERS = ("indeed", "probably", "certainly", "actually", "basically")

    def __init__(
        self,
        table: Mapping[str, Sequence[str] | Sequence[tuple[str, float]]] | None = None,
        seed: int = 0,
        paraphrase_prob: float = 0.0,
        fail_prompts: Sequence[str] = (),
        default_answer: str = "unknown",
    ):
        self.table = dict(table or {})
        self.seed = seed
        self.paraphrase_prob = paraphrase_prob
        self.fail_prompts = set(fail_prompts)
        self.default_answer = default_answer
        self.calls = 0

    def _candidates(self, prompt: str) -> tuple[list[str], np.ndarray]:
        raw = self.table.get(prompt) or [self.default_answer]
        texts, weights = [], []
        for c in raw:
            if isinstance(c, str):
                texts.append(c)
                weights.append(1.0)
            else:
                texts.append(c[0])
                weights.append(float(c[1]))
        w = np.asarray(weights, dtype=np.float64)
        return texts, w / w.sum()

    def generate(self, prompt: str, sampling: SamplingConfig, record_id: str = "") -> GenerationSet:
        self.calls += 1
        if prompt in self.fail_prompts:
            raise ClientError(f"scripted failure for prompt {prompt[:40]!r}")
        rng = np.random.default_rng(
            _seed_from(self.seed, prompt, sampling.model_id, sampling.temperature, sampling.m, sampling.max_tokens)
        )
        texts, probs = self._candidates(prompt)
        responses = []
        for _ in range(sampling.m):
            j = int(rng.choice(len(texts), p=probs))
            words = texts[j].split()
            if rng.random() < self.paraphrase_prob:
                words.insert(int(rng.integers(0, len(words) + 1)), str(rng.choice(self.FILLERS)))
            words = words[: sampling.max_tokens] or ["."]
            lps = [math.log(probs[j])] + [-float(rng.uniform(0.0, 0.3)) for _ in words[1:]]
            responses.append(Response(" ".join(words), tuple(words), tuple(min(0.0, x) for x in lps)))
        return GenerationSet(record_id, tuple(responses), sampling)
