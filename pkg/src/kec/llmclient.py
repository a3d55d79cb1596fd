"""Pluggable LLM access with a persistent cache and bounded concurrency.

Two backends: an OpenAI-compatible HTTP chat endpoint for live runs and a
deterministic mock that synthesizes parseable structured output offline.
Responses are cached content-addressed under ``cache_dir`` so reruns issue
zero live calls.
"""

import hashlib
import json
import os
import random
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import httpx

from . import prompts
from .errors import (
    BatchCompletionError,
    InvariantError,
    LLMRequestError,
    LLMRetryExhaustedError,
)

DEFAULT_API_KEY_ENV = "KEC_LLM_API_KEY"
BASE_URL_ENV = "KEC_LLM_BASE_URL"
MAX_TOKENS_DEFAULT = 512


@dataclass(frozen=True)
class PromptRequest:
    template_id: str  # concept | uni_attr | bi_attr
    rendered_prompt: str
    model: str = "gpt-4o"
    temperature: float = 0.1
    max_tokens: int = MAX_TOKENS_DEFAULT

    def __post_init__(self):
        if not self.rendered_prompt:
            raise InvariantError("rendered_prompt must be non-empty")
        if self.temperature < 0:
            raise InvariantError("temperature must be >= 0")

    def cache_key(self):
        payload = "\x1f".join(
            [
                self.template_id,
                self.model,
                repr(float(self.temperature)),
                self.rendered_prompt,
            ]
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class CompletionResponse:
    text: str
    cached: bool = False
    latency_ms: float = 0.0
    attempt: int = 1


@dataclass
class BackendConfig:
    base_url: str = "https://api.openai.com"
    api_key_env_name: str = DEFAULT_API_KEY_ENV
    max_concurrent: int = 20
    retry_limit: int = 3
    cache_dir: str = ""

    def __post_init__(self):
        if self.max_concurrent < 1:
            raise InvariantError("max_concurrent must be >= 1")


class MockBackend:
    """Deterministic backend: output is a pure function of the prompt.

    Synthesizes structured text that exercises every parser path, with
    digest-derived tokens so distinct inputs yield distinct knowledge.
    """

    def generate(self, request):
        digest = hashlib.sha256(
            request.rendered_prompt.encode("utf-8")
        ).hexdigest()[:8]
        if request.template_id == prompts.TEMPLATE_CONCEPT:
            m = re.search(r"Given nouns:\s*(.+)", request.rendered_prompt)
            first_noun = m.group(1).split(",")[0].strip() if m else "thing"
            return (
                f"Concept: {first_noun} group {digest}\n"
                f"Description: objects resembling {first_noun} "
                f"with shared trait {digest}"
            ), 1
        m = re.search(r"List (?:the )?(\d+)", request.rendered_prompt)
        count = int(m.group(1)) if m else 1
        lines = [
            f"{i + 1}. visible trait {digest}-{i}" for i in range(count)
        ]
        return "\n".join(lines), 1


class HTTPBackend:
    """OpenAI-compatible chat completions over HTTP with retry/backoff."""

    def __init__(self, config, sleep=time.sleep, transport=None):
        self.config = config
        self._sleep = sleep
        base_url = os.environ.get(BASE_URL_ENV) or config.base_url
        self._client = httpx.Client(
            base_url=base_url.rstrip("/"), timeout=60.0, transport=transport
        )
        self._rng = random.Random(0x5EED)

    def _api_key(self):
        return os.environ.get(self.config.api_key_env_name, "")

    def generate(self, request):
        body = {
            "model": request.model,
            "messages": [{"role": "user", "content": request.rendered_prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        headers = {}
        key = self._api_key()
        if key:
            headers["Authorization"] = f"Bearer {key}"
        last_error = None
        for attempt in range(1, self.config.retry_limit + 1):
            try:
                resp = self._client.post(
                    "/v1/chat/completions", json=body, headers=headers
                )
            except httpx.HTTPError as exc:
                last_error = exc
            else:
                if resp.status_code < 400:
                    data = resp.json()
                    text = data["choices"][0]["message"]["content"]
                    return text, attempt
                if 400 <= resp.status_code < 500:
                    raise LLMRequestError(
                        f"HTTP {resp.status_code}: {resp.text[:200]}",
                        status_code=resp.status_code,
                    )
                last_error = LLMRetryExhaustedError(
                    f"HTTP {resp.status_code}"
                )
            if attempt < self.config.retry_limit:
                self._sleep(0.25 * attempt + self._rng.random() * 0.25)
        raise LLMRetryExhaustedError(
            f"failed after {self.config.retry_limit} attempts: {last_error}"
        )


class ResponseCache:
    """Content-addressed response files; atomic write-then-rename."""

    def __init__(self, cache_dir):
        self.cache_dir = cache_dir
        os.makedirs(cache_dir, exist_ok=True)

    def _path(self, key):
        return os.path.join(self.cache_dir, key + ".json")

    def get(self, key):
        path = self._path(key)
        if not os.path.exists(path):
            return None
        try:
            with open(path, "r", encoding="utf-8") as fh:
                entry = json.load(fh)
            return entry["text"]
        except (ValueError, KeyError, OSError):
            # quarantine the corrupt entry and fall through to a live call
            try:
                os.replace(path, path + ".corrupt")
            except OSError:
                pass
            return None

    def put(self, key, text):
        path = self._path(key)
        tmp = path + f".tmp.{os.getpid()}.{threading.get_ident()}"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump({"text": text}, fh, ensure_ascii=False)
        os.replace(tmp, path)


class LLMClient:
    """Cache-first completion client with an in-flight admission bound."""

    def __init__(self, backend, config, cache=None):
        self.backend = backend
        self.config = config
        self.cache = cache
        if cache is None and config.cache_dir:
            self.cache = ResponseCache(config.cache_dir)
        self._lock = threading.Lock()
        self.live_calls = 0
        self.cache_hits = 0

    def complete(self, request):
        key = request.cache_key()
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                with self._lock:
                    self.cache_hits += 1
                return CompletionResponse(text=hit, cached=True)
        start = time.perf_counter()
        text, attempt = self.backend.generate(request)
        latency = (time.perf_counter() - start) * 1000.0
        with self._lock:
            self.live_calls += 1
        if self.cache is not None:
            self.cache.put(key, text)
        return CompletionResponse(
            text=text, cached=False, latency_ms=latency, attempt=attempt
        )

    def complete_batch(self, requests):
        """Run requests with at most max_concurrent in flight.

        Output order equals input order. Per-request failures are isolated;
        if any request fails, a BatchCompletionError aggregates the failed
        indices while keeping successful responses.
        """
        if not requests:
            return []
        responses = {}
        failures = {}

        def _one(idx_request):
            idx, request = idx_request
            return idx, self.complete(request)

        with ThreadPoolExecutor(
            max_workers=self.config.max_concurrent
        ) as pool:
            futures = [
                pool.submit(_one, (i, r)) for i, r in enumerate(requests)
            ]
            for i, fut in enumerate(futures):
                try:
                    idx, resp = fut.result()
                    responses[idx] = resp
                except Exception as exc:  # noqa: BLE001 - isolate per request
                    failures[i] = exc
        if failures:
            raise BatchCompletionError(failures, responses)
        return [responses[i] for i in range(len(requests))]
