"""Provider-agnostic chat-completion client with routing, retries, and replay.

Every request is content-addressed: the resolved model id, temperature,
prompt, sample index, and agent turn are serialized in a fixed field order
and hashed. Record mode persists each live response under that key as one
JSON file per fixture plus an index manifest, so recorded experiments replay
bit-exactly offline and the fixture directory diffs cleanly in version
control.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Callable

import httpx


class GatewayError(Exception):
    """Base class for gateway failures."""


class FixtureMiss(GatewayError):
    """Replay mode found no fixture for the request key."""


class RateLimited(GatewayError):
    """Provider kept rate-limiting past the retry budget."""


class ProviderError(GatewayError):
    """Non-retryable provider failure; carries the HTTP status."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class MissingCredentials(GatewayError):
    """Live/record mode requires the API key environment variable."""


class ModelClass(str, Enum):
    AUTO = "auto"
    SMALL_CTX = "small_ctx"
    LARGE_CTX = "large_ctx"


class GatewayMode(str, Enum):
    LIVE = "live"
    RECORD = "record"
    REPLAY = "replay"


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    temperature: float = 0.0
    max_output_tokens: int = 1024
    sample_index: int = 0
    model_class: ModelClass = ModelClass.AUTO
    turn: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be in [0, 2]")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")
        if self.sample_index < 0 or self.turn < 0:
            raise ValueError("sample_index and turn must be non-negative")


@dataclass
class GatewayConfig:
    small_model: str = "gpt-3.5-turbo-0613"
    large_model: str = "gpt-3.5-turbo-16k-0613"
    token_threshold: int = 3584
    base_url: str = "https://api.openai.com/v1"
    api_key_env: str = "LLM_API_KEY"
    max_retries: int = 5
    backoff_base_s: float = 1.0
    max_in_flight: int = 4
    timeout_s: float = 120.0


def estimate_tokens(prompt: str) -> int:
    """Cheap token estimate: ceil(characters / 4)."""
    return math.ceil(len(prompt) / 4)


def route_model(req: CompletionRequest, config: GatewayConfig) -> str:
    """Resolve a model id; auto routes on prompt length, threshold inclusive."""
    if req.model_class is ModelClass.SMALL_CTX:
        return config.small_model
    if req.model_class is ModelClass.LARGE_CTX:
        return config.large_model
    if estimate_tokens(req.prompt) <= config.token_threshold:
        return config.small_model
    return config.large_model


def fixture_key(req: CompletionRequest, model_id: str) -> str:
    """Stable lowercase hex key over a canonical, field-ordered serialization."""
    material = json.dumps(
        {
            "model": model_id,
            "temperature": req.temperature,
            "prompt": req.prompt,
            "sample_index": req.sample_index,
            "turn": req.turn,
        },
        sort_keys=False,
        ensure_ascii=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(material.encode("utf-8")).hexdigest()


class FixtureStore:
    """Directory-backed fixture store: one JSON file per key plus a manifest.

    Safe for concurrent access from multiple threads within a process.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._lock = threading.Lock()

    @property
    def manifest_path(self) -> Path:
        return self.root / "index.json"

    def _fixture_path(self, key: str) -> Path:
        return self.root / f"{key}.json"

    def get(self, key: str) -> str:
        path = self._fixture_path(key)
        if not path.exists():
            raise FixtureMiss(f"no fixture for key {key}")
        return json.loads(path.read_text(encoding="utf-8"))["response"]

    def put(self, key: str, response: str) -> None:
        with self._lock:
            self.root.mkdir(parents=True, exist_ok=True)
            record = {
                "key": key,
                "response": response,
                "recorded_at": datetime.now(timezone.utc).isoformat(),
            }
            self._fixture_path(key).write_text(
                json.dumps(record, ensure_ascii=False, indent=2) + "\n",
                encoding="utf-8",
            )
            manifest = self.keys()
            if key not in manifest:
                manifest.append(key)
                manifest.sort()
            self.manifest_path.write_text(
                json.dumps(manifest, indent=2) + "\n", encoding="utf-8"
            )

    def keys(self) -> list[str]:
        if not self.manifest_path.exists():
            return []
        return json.loads(self.manifest_path.read_text(encoding="utf-8"))

    def verify(self) -> list[str]:
        """Return keys listed in the manifest whose fixture file is missing."""
        return [k for k in self.keys() if not self._fixture_path(k).exists()]


Transport = Callable[[dict], str]


class LlmGateway:
    """Chat-completion client with routing, retry, rate limiting, and replay.

    ``transport`` takes the provider payload dict and returns the completion
    text; the default posts to an OpenAI-style ``/chat/completions`` endpoint.
    A handle is shareable across threads; at most ``max_in_flight`` live
    requests run concurrently.
    """

    def __init__(
        self,
        config: GatewayConfig | None = None,
        store: FixtureStore | None = None,
        transport: Transport | None = None,
        mode: GatewayMode = GatewayMode.REPLAY,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config or GatewayConfig()
        self.store = store
        self.default_mode = mode
        self._transport = transport
        self._sleep = sleep
        self._semaphore = threading.Semaphore(self.config.max_in_flight)

    def complete(self, req: CompletionRequest, mode: GatewayMode | None = None) -> str:
        mode = GatewayMode(mode) if mode is not None else self.default_mode
        model_id = route_model(req, self.config)
        key = fixture_key(req, model_id)

        if mode is GatewayMode.REPLAY:
            if self.store is None:
                raise GatewayError("replay mode requires a fixture store")
            return self.store.get(key)

        response = self._live_call(req, model_id)
        if mode is GatewayMode.RECORD:
            if self.store is None:
                raise GatewayError("record mode requires a fixture store")
            self.store.put(key, response)
        return response

    def _live_call(self, req: CompletionRequest, model_id: str) -> str:
        payload = {
            "model": model_id,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        }
        transport = self._transport or self._http_transport
        last_error: Exception | None = None
        with self._semaphore:
            for attempt in range(self.config.max_retries):
                if attempt:
                    self._sleep(self.config.backoff_base_s * 2 ** (attempt - 1))
                try:
                    return transport(payload)
                except RateLimited as exc:
                    last_error = exc
                except ProviderError as exc:
                    if exc.status is not None and exc.status >= 500:
                        last_error = exc
                        continue
                    raise
        if isinstance(last_error, RateLimited):
            raise RateLimited(
                f"still rate-limited after {self.config.max_retries} attempts"
            )
        raise last_error  # type: ignore[misc]

    def _http_transport(self, payload: dict) -> str:
        api_key = os.environ.get(self.config.api_key_env)
        if not api_key:
            raise MissingCredentials(
                f"set {self.config.api_key_env} for live/record mode"
            )
        resp = httpx.post(
            f"{self.config.base_url.rstrip('/')}/chat/completions",
            json=payload,
            headers={"Authorization": f"Bearer {api_key}"},
            timeout=self.config.timeout_s,
        )
        if resp.status_code == 429:
            raise RateLimited("provider returned 429")
        if resp.status_code != 200:
            raise ProviderError(
                f"provider returned {resp.status_code}: {resp.text[:500]}",
                status=resp.status_code,
            )
        return resp.json()["choices"][0]["message"]["content"]
