"""Uniform access to language-model completions for every agent role.

Two backends sit behind one `complete()` entry point: an HTTP chat-completion
client and a deterministic scripted provider used for desk-scale runs and
tests. Responses are cached content-addressed on (role, messages, params), so
a repeated request never touches the network. All network activity in the
package happens here.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import requests

ROLES = ("decide", "gradient", "integrate", "edit", "summarize", "merge")

DEFAULT_MODEL = "gpt-4o"
DEFAULT_TEMPERATURE = 0.0
DEFAULT_MAX_TOKENS = 512


class GatewayError(RuntimeError):
    """Base class for provider failures."""


class TransportError(GatewayError):
    """Network failure or retries exhausted."""


class ConfigurationError(GatewayError):
    """Invalid provider configuration or a non-retryable 4xx response."""


@dataclass(frozen=True)
class RoleRequest:
    """One completion request; the cache key is a pure function of its fields."""

    role: str
    messages: tuple[tuple[str, str], ...]
    params: dict[str, object] | None = field(default=None, hash=False)

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ConfigurationError(f"unknown role {self.role!r}; expected one of {ROLES}")
        if not self.messages:
            raise ConfigurationError("request messages must be non-empty")

    def cache_key(self) -> str:
        payload = json.dumps(
            {"role": self.role, "messages": list(self.messages), "params": self.params},
            sort_keys=True, ensure_ascii=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 4
    backoff_seconds: float = 0.5


@dataclass(frozen=True)
class ProviderConfig:
    backend: str = "scripted"
    endpoint_url: str | None = None
    api_key_env: str | None = None
    model_name: str = DEFAULT_MODEL
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    rate_limit_per_minute: int = 60
    retry: RetryPolicy = RetryPolicy()
    cache_dir: str | None = None
    seed: int | None = None
    timeout_seconds: float = 60.0

    def __post_init__(self) -> None:
        if self.backend not in ("http", "scripted"):
            raise ConfigurationError(f"unknown backend {self.backend!r}")
        if self.backend == "http" and (not self.endpoint_url or not self.api_key_env):
            raise ConfigurationError("http backend requires endpoint_url and api_key_env")
        if self.backend == "scripted" and self.seed is None:
            raise ConfigurationError("scripted backend requires a seed")


class ResponseCache:
    """One file per key under cache_dir; writers go through write-then-rename."""

    def __init__(self, cache_dir: str | Path):
        self.dir = Path(cache_dir)
        self.dir.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.dir / key

    def get(self, key: str) -> str | None:
        path = self._path(key)
        if not path.exists():
            return None
        raw = path.read_text("utf-8")
        _, _, body = raw.partition("\n\n")
        return body

    def put(self, key: str, request: RoleRequest, backend: str, text: str) -> None:
        header = f"role: {request.role}\nbackend: {backend}\nkey: {key}"
        payload = f"{header}\n\n{text}"
        fd, tmp_name = tempfile.mkstemp(dir=self.dir, prefix=".tmp-")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(payload)
            os.replace(tmp_name, self._path(key))
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise


class RateLimiter:
    """Sliding-window requests/minute limiter shared by the whole process."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._sent: deque[float] = deque()

    def acquire(self, per_minute: int, clock=time.monotonic, sleep=time.sleep) -> None:
        if per_minute <= 0:
            return
        while True:
            with self._lock:
                now = clock()
                while self._sent and now - self._sent[0] >= 60.0:
                    self._sent.popleft()
                if len(self._sent) < per_minute:
                    self._sent.append(now)
                    return
                wait = 60.0 - (now - self._sent[0])
            sleep(max(wait, 0.0))


GLOBAL_RATE_LIMITER = RateLimiter()


class HttpBackend:
    """Chat-completion client: JSON POST with a messages array, text taken from
    the first choice. 429 and 5xx retry with exponential backoff; other 4xx
    fail immediately as configuration errors."""

    def __init__(self, config: ProviderConfig, session: requests.Session | None = None,
                 sleep=time.sleep):
        self.config = config
        self.session = session or requests.Session()
        self._sleep = sleep
        api_key = os.environ.get(config.api_key_env or "")
        if not api_key:
            raise ConfigurationError(
                f"environment variable {config.api_key_env!r} is unset; it must hold the API key")
        self._headers = {"Authorization": f"Bearer {api_key}",
                         "Content-Type": "application/json"}

    def complete(self, request: RoleRequest) -> str:
        body = {
            "model": request.params["model_name"],
            "temperature": request.params["temperature"],
            "max_tokens": request.params["max_tokens"],
            "messages": [{"role": speaker, "content": text} for speaker, text in request.messages],
        }
        retry = self.config.retry
        last_error: Exception | None = None
        for attempt in range(retry.max_attempts):
            GLOBAL_RATE_LIMITER.acquire(self.config.rate_limit_per_minute)
            try:
                response = self.session.post(self.config.endpoint_url, json=body,
                                             headers=self._headers,
                                             timeout=self.config.timeout_seconds)
            except requests.RequestException as exc:
                last_error = exc
            else:
                if response.status_code == 200:
                    try:
                        return response.json()["choices"][0]["message"]["content"]
                    except (KeyError, IndexError, ValueError) as exc:
                        raise TransportError(f"malformed completion response: {exc}") from exc
                if response.status_code == 429 or response.status_code >= 500:
                    last_error = TransportError(f"HTTP {response.status_code} from provider")
                else:
                    raise ConfigurationError(
                        f"HTTP {response.status_code} from provider: {response.text[:200]}")
            if attempt + 1 < retry.max_attempts:
                self._sleep(retry.backoff_seconds * (2 ** attempt))
        raise TransportError(f"retries exhausted after {retry.max_attempts} attempts: {last_error}")


class LLMGateway:
    """Facade: resolve request params, consult the cache, dispatch to a backend."""

    def __init__(self, config: ProviderConfig, backend=None):
        self.config = config
        self.cache = ResponseCache(config.cache_dir) if config.cache_dir else None
        if backend is not None:
            self.backend = backend
        elif config.backend == "scripted":
            from .scripted import ScriptedBackend

            self.backend = ScriptedBackend(seed=config.seed or 0)
        else:
            self.backend = HttpBackend(config)
        self.calls_by_role: dict[str, int] = {role: 0 for role in ROLES}
        self.dispatches_by_role: dict[str, int] = {role: 0 for role in ROLES}

    def resolve(self, request: RoleRequest) -> RoleRequest:
        """Fill default sampling params so the cache key reflects actual settings."""
        if request.params is not None:
            return request
        params = {"model_name": self.config.model_name,
                  "temperature": self.config.temperature,
                  "max_tokens": self.config.max_tokens}
        return RoleRequest(role=request.role, messages=request.messages, params=params)

    def complete(self, request: RoleRequest) -> str:
        request = self.resolve(request)
        self.calls_by_role[request.role] += 1
        key = request.cache_key()
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return hit
        self.dispatches_by_role[request.role] += 1
        text = self.backend.complete(request)
        if self.cache is not None:
            self.cache.put(key, request, self.config.backend, text)
        return text

    @property
    def total_dispatches(self) -> int:
        return sum(self.dispatches_by_role.values())
