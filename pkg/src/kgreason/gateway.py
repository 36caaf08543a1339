"""Uniform text-generation interface with per-token log-probabilities.

Three backends: a deterministic mock (pure function of prompt, params, and
seed) for offline tests and reproducible runs, an HTTP adapter for
completion-style endpoints, and a replay cache that wraps either.
"""

from __future__ import annotations

import abc
import hashlib
import json
import math
import os
import random
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import requests


class GatewayError(Exception):
    """Base class for generation-backend failures."""


class TransportError(GatewayError):
    """Network failure or non-success HTTP status."""


class RateLimitError(TransportError):
    """Backend asked us to slow down (HTTP 429)."""


class ProtocolError(GatewayError):
    """Backend reply did not match the expected completion schema."""


class UnsupportedOperationError(GatewayError):
    """Backend cannot perform the requested operation (e.g. scoring)."""


@dataclass(frozen=True)
class GenParams:
    max_tokens: int = 64
    temperature: float = 0.0
    top_k_sequences: int = 1
    seed: int | None = None
    stop: tuple[str, ...] = ()

    def __post_init__(self):
        if self.top_k_sequences < 1:
            raise ValueError("top_k_sequences must be >= 1")
        if self.max_tokens < 0:
            raise ValueError("max_tokens must be >= 0")


@dataclass(frozen=True)
class GenerationTrace:
    text: str
    tokens: tuple[tuple[str, float], ...]
    prompt_echo: str | None = None
    params: GenParams | None = None

    @property
    def total_logprob(self) -> float:
        return sum(lp for _, lp in self.tokens)

    def to_json(self) -> dict:
        return {"text": self.text, "tokens": [[t, lp] for t, lp in self.tokens]}

    @classmethod
    def from_json(cls, data: Mapping) -> "GenerationTrace":
        return cls(text=data["text"], tokens=tuple((t, float(lp)) for t, lp in data["tokens"]))


def prompt_key(prompt: str) -> str:
    """Stable content key used by fixture replay and the trace cache."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class Gateway(abc.ABC):
    """Text-generation service with scoring support."""

    @abc.abstractmethod
    def generate(self, prompt: str, params: GenParams | None = None) -> GenerationTrace:
        ...

    @abc.abstractmethod
    def generate_topk(self, prompt: str, k: int, params: GenParams | None = None) -> list[GenerationTrace]:
        ...

    @abc.abstractmethod
    def score_sequence(self, prompt: str, continuation: str) -> tuple[float, list[tuple[str, float]]]:
        ...


def _tokenize(text: str) -> list[str]:
    """Whitespace-attached tokens whose concatenation reconstructs the text."""
    if not text:
        return []
    tokens = re.findall(r"\s*\S+", text)
    consumed = sum(len(t) for t in tokens)
    if consumed < len(text):
        tokens.append(text[consumed:])  # trailing whitespace
    return tokens


_DEFAULT_VOCAB = (
    "the", "a", "of", "and", "to", "in", "is", "path", "answer", "graph",
    "entity", "relation", "question", "step", "final", "reasoning",
)


class MockGateway(Gateway):
    """Deterministic offline backend.

    Generation is a weighted choice over a fixed vocabulary, seeded from a
    hash of (prompt, params, gateway seed), so every call is a pure function
    of its inputs. Canned outputs can be registered in ``fixtures``, keyed
    either by the exact prompt or by :func:`prompt_key`; a fixture value may
    be a list of texts to serve as ranked top-k candidates.

    Scoring assigns each whitespace token the log of its vocabulary
    probability; tokens outside the vocabulary score 1/len(vocab).
    """

    def __init__(
        self,
        vocab: Sequence[str] = _DEFAULT_VOCAB,
        weights: Sequence[float] | None = None,
        seed: int = 0,
        fixtures: Mapping[str, str | Sequence[str]] | None = None,
    ):
        if not vocab:
            raise ValueError("vocab must be non-empty")
        self._vocab = tuple(vocab)
        self._weights = tuple(weights) if weights is not None else (1.0,) * len(vocab)
        if len(self._weights) != len(self._vocab):
            raise ValueError("weights must match vocab length")
        self._total = sum(self._weights)
        self._probs = {w: wt / self._total for w, wt in zip(self._vocab, self._weights)}
        self._seed = seed
        self._fixtures = dict(fixtures or {})

    def _fixture_for(self, prompt: str) -> str | Sequence[str] | None:
        if prompt in self._fixtures:
            return self._fixtures[prompt]
        return self._fixtures.get(prompt_key(prompt))

    def _token_logprob(self, token: str) -> float:
        prob = self._probs.get(token.strip(), 1.0 / len(self._vocab))
        return math.log(prob)

    def _trace_from_text(self, text: str, params: GenParams, prompt: str) -> GenerationTrace:
        tokens = tuple((t, self._token_logprob(t)) for t in _tokenize(text))
        return GenerationTrace(text=text, tokens=tokens, prompt_echo=prompt, params=params)

    def _rng(self, prompt: str, params: GenParams, stream: int) -> random.Random:
        material = "|".join(
            [str(self._seed), str(params.seed), prompt, str(params.max_tokens), str(params.temperature), str(stream)]
        )
        digest = hashlib.sha256(material.encode("utf-8")).digest()
        return random.Random(int.from_bytes(digest[:8], "big"))

    def _sample(self, prompt: str, params: GenParams, stream: int) -> GenerationTrace:
        rng = self._rng(prompt, params, stream)
        words = rng.choices(self._vocab, weights=self._weights, k=params.max_tokens)
        tokens: list[tuple[str, float]] = []
        text = ""
        for i, word in enumerate(words):
            token = word if i == 0 else " " + word
            text += token
            tokens.append((token, self._token_logprob(token)))
            if any(s in text for s in params.stop):
                break
        return GenerationTrace(text=text, tokens=tuple(tokens), prompt_echo=prompt, params=params)

    def generate(self, prompt: str, params: GenParams | None = None) -> GenerationTrace:
        params = params or GenParams()
        fixture = self._fixture_for(prompt)
        if fixture is not None:
            text = fixture if isinstance(fixture, str) else fixture[0]
            return self._trace_from_text(text, params, prompt)
        return self._sample(prompt, params, stream=0)

    def generate_topk(self, prompt: str, k: int, params: GenParams | None = None) -> list[GenerationTrace]:
        if k < 1:
            raise ValueError("k must be >= 1")
        params = params or GenParams()
        fixture = self._fixture_for(prompt)
        if fixture is not None:
            texts = [fixture] if isinstance(fixture, str) else list(fixture)[:k]
            traces = [self._trace_from_text(t, params, prompt) for t in texts]
        else:
            traces = [self._sample(prompt, params, stream=i) for i in range(k)]
        unique: dict[str, GenerationTrace] = {}
        for trace in traces:
            unique.setdefault(trace.text, trace)
        return sorted(unique.values(), key=lambda t: -t.total_logprob)

    def score_sequence(self, prompt: str, continuation: str) -> tuple[float, list[tuple[str, float]]]:
        tokens = [(t, self._token_logprob(t)) for t in _tokenize(continuation)]
        return sum(lp for _, lp in tokens), tokens


@dataclass
class GatewayConfig:
    endpoint_url: str = ""
    model: str = ""
    timeout_s: float = 30.0
    max_retries: int = 3
    in_flight_cap: int = 4
    retry_backoff_s: float = 0.5
    api_key_env: str = "GATEWAY_API_KEY"
    backend: str = "http"  # http | mock
    seed: int = 0
    vocab: tuple[str, ...] = ()
    fixtures_path: str = ""
    cache_dir: str = ""
    extra: dict = field(default_factory=dict)


def load_gateway_config(path: str | Path) -> GatewayConfig:
    """Read a TOML or JSON gateway config file."""
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".toml":
        try:
            import tomllib  # Python >= 3.11
        except ModuleNotFoundError:
            import tomli as tomllib
        data = tomllib.loads(raw.decode("utf-8"))
    else:
        data = json.loads(raw)
    known = {f for f in GatewayConfig.__dataclass_fields__ if f != "extra"}
    kwargs = {k: v for k, v in data.items() if k in known}
    if "vocab" in kwargs:
        kwargs["vocab"] = tuple(kwargs["vocab"])
    extra = {k: v for k, v in data.items() if k not in known}
    return GatewayConfig(**kwargs, extra=extra)


def build_gateway(config: GatewayConfig) -> Gateway:
    if config.backend == "mock":
        fixtures = None
        if config.fixtures_path:
            fixtures = json.loads(Path(config.fixtures_path).read_text(encoding="utf-8"))
        vocab = config.vocab or _DEFAULT_VOCAB
        gateway: Gateway = MockGateway(vocab=vocab, seed=config.seed, fixtures=fixtures)
    elif config.backend == "http":
        gateway = CompletionHTTPGateway(config)
    else:
        raise ValueError(f"unknown gateway backend: {config.backend!r}")
    if config.cache_dir:
        gateway = ReplayCache(Path(config.cache_dir), gateway)
    return gateway


class CompletionHTTPGateway(Gateway):
    """Adapter for completion-style HTTP endpoints.

    Requests are JSON: {model, prompt, max_tokens, temperature, n,
    logprobs, seed, stop}; replies must carry choices[].text and
    choices[].logprobs.{tokens, token_logprobs}. Scoring uses the echo
    trick: the continuation is appended to the prompt, the backend echoes
    token logprobs with text offsets, and tokens at offsets past the prompt
    are kept.
    """

    def __init__(self, config: GatewayConfig, session: requests.Session | None = None):
        if not config.endpoint_url:
            raise ValueError("endpoint_url is required for the http backend")
        self._config = config
        self._session = session or requests.Session()
        self._slots = threading.Semaphore(config.in_flight_cap)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self._config.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, payload: dict) -> dict:
        last_error: GatewayError | None = None
        for attempt in range(self._config.max_retries + 1):
            if attempt:
                time.sleep(self._config.retry_backoff_s * 2 ** (attempt - 1))
            try:
                with self._slots:
                    resp = self._session.post(
                        self._config.endpoint_url,
                        json=payload,
                        headers=self._headers(),
                        timeout=self._config.timeout_s,
                    )
            except requests.RequestException as exc:
                last_error = TransportError(str(exc))
                continue
            if resp.status_code == 429:
                last_error = RateLimitError("rate limited by backend")
                continue
            if resp.status_code >= 500:
                last_error = TransportError(f"server error {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise TransportError(f"unexpected status {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as exc:
                raise ProtocolError(f"non-JSON reply: {exc}") from exc
        assert last_error is not None
        raise last_error

    @staticmethod
    def _trace_from_choice(choice: dict, prompt: str, params: GenParams) -> GenerationTrace:
        try:
            text = choice["text"]
        except (KeyError, TypeError) as exc:
            raise ProtocolError("choice without text field") from exc
        tokens: tuple[tuple[str, float], ...] = ()
        logprobs = choice.get("logprobs") or {}
        if logprobs.get("tokens") is not None:
            raw = list(zip(logprobs["tokens"], logprobs.get("token_logprobs") or []))
            if len(raw) != len(logprobs["tokens"]):
                raise ProtocolError("tokens and token_logprobs length mismatch")
            for tok, lp in raw:
                if lp is None or not math.isfinite(lp) or lp > 0:
                    raise ProtocolError(f"invalid token logprob {lp!r}")
            tokens = tuple((tok, float(lp)) for tok, lp in raw)
        return GenerationTrace(text=text, tokens=tokens, prompt_echo=prompt, params=params)

    def _request_payload(self, prompt: str, params: GenParams, n: int) -> dict:
        payload = {
            "model": self._config.model,
            "prompt": prompt,
            "max_tokens": params.max_tokens,
            "temperature": params.temperature,
            "n": n,
            "logprobs": True,
        }
        if params.seed is not None:
            payload["seed"] = params.seed
        if params.stop:
            payload["stop"] = list(params.stop)
        return payload

    def generate(self, prompt: str, params: GenParams | None = None) -> GenerationTrace:
        params = params or GenParams()
        data = self._post(self._request_payload(prompt, params, n=1))
        choices = data.get("choices")
        if not choices:
            raise ProtocolError("reply carries no choices")
        return self._trace_from_choice(choices[0], prompt, params)

    def generate_topk(self, prompt: str, k: int, params: GenParams | None = None) -> list[GenerationTrace]:
        if k < 1:
            raise ValueError("k must be >= 1")
        params = params or GenParams()
        data = self._post(self._request_payload(prompt, params, n=k))
        choices = data.get("choices")
        if not choices:
            raise ProtocolError("reply carries no choices")
        traces = [self._trace_from_choice(c, prompt, params) for c in choices]
        unique: dict[str, GenerationTrace] = {}
        for trace in traces:
            unique.setdefault(trace.text, trace)
        return sorted(unique.values(), key=lambda t: -t.total_logprob)[:k]

    def score_sequence(self, prompt: str, continuation: str) -> tuple[float, list[tuple[str, float]]]:
        if not continuation:
            return 0.0, []
        payload = {
            "model": self._config.model,
            "prompt": prompt + continuation,
            "max_tokens": 0,
            "echo": True,
            "logprobs": 0,
        }
        data = self._post(payload)
        choices = data.get("choices")
        if not choices:
            raise ProtocolError("reply carries no choices")
        logprobs = choices[0].get("logprobs")
        if not logprobs or "text_offset" not in logprobs:
            raise UnsupportedOperationError("backend does not support echo scoring")
        tokens = []
        for tok, lp, offset in zip(logprobs["tokens"], logprobs["token_logprobs"], logprobs["text_offset"]):
            if offset < len(prompt):
                continue
            if lp is None or not math.isfinite(lp) or lp > 0:
                raise ProtocolError(f"invalid token logprob {lp!r} in continuation")
            tokens.append((tok, float(lp)))
        return sum(lp for _, lp in tokens), tokens


class ReplayCache(Gateway):
    """Record-and-replay wrapper around another gateway.

    Responses are stored as JSON files keyed by a hash of the operation and
    its inputs. With ``inner=None`` the cache is replay-only and a miss
    raises :class:`GatewayError`.
    """

    def __init__(self, directory: Path | str, inner: Gateway | None = None):
        self._dir = Path(directory)
        self._dir.mkdir(parents=True, exist_ok=True)
        self._inner = inner

    def _path(self, kind: str, material: str) -> Path:
        return self._dir / f"{kind}-{prompt_key(material)}.json"

    def _load(self, path: Path):
        if path.exists():
            return json.loads(path.read_text(encoding="utf-8"))
        return None

    def _store(self, path: Path, data) -> None:
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(data, ensure_ascii=False), encoding="utf-8")
        os.replace(tmp, path)

    def _require_inner(self) -> Gateway:
        if self._inner is None:
            raise GatewayError("replay cache miss and no backend configured")
        return self._inner

    def generate(self, prompt: str, params: GenParams | None = None) -> GenerationTrace:
        params = params or GenParams()
        path = self._path("gen", f"{prompt}|{params}")
        cached = self._load(path)
        if cached is not None:
            return GenerationTrace.from_json(cached)
        trace = self._require_inner().generate(prompt, params)
        self._store(path, trace.to_json())
        return trace

    def generate_topk(self, prompt: str, k: int, params: GenParams | None = None) -> list[GenerationTrace]:
        params = params or GenParams()
        path = self._path("topk", f"{prompt}|{k}|{params}")
        cached = self._load(path)
        if cached is not None:
            return [GenerationTrace.from_json(item) for item in cached]
        traces = self._require_inner().generate_topk(prompt, k, params)
        self._store(path, [t.to_json() for t in traces])
        return traces

    def score_sequence(self, prompt: str, continuation: str) -> tuple[float, list[tuple[str, float]]]:
        path = self._path("score", f"{prompt}|{continuation}")
        cached = self._load(path)
        if cached is not None:
            return cached["total"], [(t, float(lp)) for t, lp in cached["tokens"]]
        total, tokens = self._require_inner().score_sequence(prompt, continuation)
        self._store(path, {"total": total, "tokens": [[t, lp] for t, lp in tokens]})
        return total, tokens
