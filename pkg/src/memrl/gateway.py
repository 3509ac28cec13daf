"""HTTP chat-completion client with retries, and a scripted offline stub.

This is the only module that talks to the network.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import httpx

from .exceptions import AuthFailure, GatewayError, RateLimited, StubMiss, Timeout

logger = logging.getLogger(__name__)

DEFAULT_MAX_TOKENS = 2048
DEFAULT_ATTEMPTS = 3
DEFAULT_BACKOFF = 0.5
DEFAULT_CONCURRENCY = 4


@dataclass(frozen=True)
class GatewayRequest:
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    max_tokens: int = DEFAULT_MAX_TOKENS
    endpoint_profile: str = "default"

    def __post_init__(self):
        messages = tuple((str(role), str(content)) for role, content in self.messages)
        if not messages:
            raise ValueError("a request needs at least one message")
        if not (math.isfinite(self.temperature) and self.temperature >= 0):
            raise ValueError("temperature must be finite and >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        object.__setattr__(self, "messages", messages)

    @classmethod
    def user(cls, prompt: str, **kwargs) -> "GatewayRequest":
        return cls((("user", prompt),), **kwargs)

    def rendered(self) -> str:
        return json.dumps([{"role": r, "content": c} for r, c in self.messages], ensure_ascii=False, sort_keys=True)

    def key(self) -> str:
        """Script key: sha256 of the rendered messages."""
        return hashlib.sha256(self.rendered().encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class GatewayResponse:
    text: str
    token_log_probs: tuple[float, ...] | None = None
    latency: float = 0.0
    attempt_count: int = 1


@dataclass(frozen=True)
class EndpointProfile:
    base_url: str
    model: str
    api_key: str | None = field(default=None, repr=False)
    path: str = "/chat/completions"
    timeout: float = 60.0
    name: str = "default"

    @classmethod
    def from_env(cls, env: Mapping[str, str] | None = None, **overrides) -> "EndpointProfile":
        env = os.environ if env is None else env
        values = {
            "base_url": env.get("GATEWAY_BASE_URL"),
            "model": env.get("GATEWAY_MODEL"),
            "api_key": env.get("GATEWAY_API_KEY"),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        missing = [k for k in ("base_url", "model") if not values.get(k)]
        if missing:
            raise GatewayError(f"endpoint profile incomplete, missing {missing} (set GATEWAY_BASE_URL / GATEWAY_MODEL)")
        return cls(**values)


class HttpGateway:
    """Chat-completion client.

    429, 5xx and timeouts are retried up to ``max_attempts`` in total with
    exponential backoff; 401/403 fail immediately. At most
    ``max_concurrency`` requests are in flight at once.
    """

    def __init__(
        self,
        profile: EndpointProfile,
        transport: httpx.BaseTransport | None = None,
        max_attempts: int = DEFAULT_ATTEMPTS,
        backoff_base: float = DEFAULT_BACKOFF,
        sleep: Callable[[float], None] = time.sleep,
        max_concurrency: int = DEFAULT_CONCURRENCY,
    ):
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        self.profile = profile
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.sleep = sleep
        self.max_concurrency = max_concurrency
        self._slots = threading.BoundedSemaphore(max_concurrency)
        headers = {"Authorization": f"Bearer {profile.api_key}"} if profile.api_key else {}
        self._client = httpx.Client(
            base_url=profile.base_url, headers=headers, timeout=profile.timeout, transport=transport
        )

    def close(self):
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _body(self, request: GatewayRequest) -> dict:
        return {
            "model": self.profile.model,
            "messages": [{"role": r, "content": c} for r, c in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }

    def chat_complete(self, request: GatewayRequest) -> GatewayResponse:
        with self._slots:
            return self._send(request)

    def _send(self, request: GatewayRequest) -> GatewayResponse:
        start = time.monotonic()
        last_error: GatewayError | None = None
        for attempt in range(1, self.max_attempts + 1):
            if attempt > 1:
                self.sleep(self.backoff_base * 2 ** (attempt - 2))
            try:
                reply = self._client.post(self.profile.path, json=self._body(request))
            except httpx.TimeoutException as exc:
                last_error = Timeout(f"request timed out: {exc}")
                logger.info("attempt %d timed out", attempt)
                continue
            except httpx.TransportError as exc:
                raise GatewayError(f"transport failure: {exc}") from exc
            status = reply.status_code
            if status in (401, 403):
                raise AuthFailure(f"endpoint rejected credentials (HTTP {status})")
            if status == 429:
                last_error = RateLimited("rate limited (HTTP 429)")
                logger.info("attempt %d rate limited", attempt)
                continue
            if status >= 500:
                last_error = GatewayError(f"server error (HTTP {status})")
                logger.info("attempt %d failed with HTTP %d", attempt, status)
                continue
            if status >= 400:
                raise GatewayError(f"request rejected (HTTP {status}): {reply.text[:200]}")
            return self._parse(reply, attempt, time.monotonic() - start)
        raise last_error

    @staticmethod
    def _parse(reply: httpx.Response, attempt: int, latency: float) -> GatewayResponse:
        try:
            choice = reply.json()["choices"][0]
            text = choice["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"unexpected response body: {exc}") from exc
        log_probs = None
        content = (choice.get("logprobs") or {}).get("content") if isinstance(choice.get("logprobs"), dict) else None
        if content:
            log_probs = tuple(float(tok["logprob"]) for tok in content)
        return GatewayResponse(text, log_probs, latency, attempt)

    def chat_many(self, requests: Sequence[GatewayRequest], workers: int | None = None) -> list[GatewayResponse]:
        workers = min(workers or self.max_concurrency, self.max_concurrency)
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            return list(pool.map(self.chat_complete, requests))


class StubGateway:
    """Offline gateway answering from scripts keyed by ``GatewayRequest.key()``."""

    def __init__(self, scripts: Mapping[str, str] | None = None):
        self.scripts: dict[str, str] = dict(scripts or {})
        self.calls: list[str] = []

    def script(self, request_or_prompt, text: str) -> str:
        request = request_or_prompt
        if isinstance(request, str):
            request = GatewayRequest.user(request)
        key = request.key()
        self.scripts[key] = text
        return key

    def chat_complete(self, request: GatewayRequest) -> GatewayResponse:
        key = request.key()
        self.calls.append(key)
        try:
            text = self.scripts[key]
        except KeyError:
            raise StubMiss(f"no script for prompt {key[:12]}") from None
        return GatewayResponse(text, None, 0.0, 1)

    def chat_many(self, requests: Sequence[GatewayRequest], workers: int | None = None) -> list[GatewayResponse]:
        return [self.chat_complete(r) for r in requests]

    @classmethod
    def load(cls, path) -> "StubGateway":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.scripts, fh, sort_keys=True, indent=2, ensure_ascii=False)
            fh.write("\n")


def chat_complete(request: GatewayRequest, gateway) -> GatewayResponse:
    return gateway.chat_complete(request)
