"""OpenAI-compatible completion client with a persistent content-addressed cache.

Every request is keyed by a SHA-256 digest of (model_id, interface, prompt,
decode params). A cache hit never touches the network, so pipelines can be
replayed offline once the cache is warm.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Optional
from urllib.parse import urlparse

logger = logging.getLogger(__name__)

DEFAULT_CACHE_DIR = "./.chrono-cache"


class GatewayError(Exception):
    """Base class for gateway failures."""


class NetworkError(GatewayError):
    """Transport failure that persisted through every retry."""


class AuthError(GatewayError):
    """Credential missing from the environment or rejected by the server."""


class MalformedResponse(GatewayError):
    """Response body does not follow the OpenAI wire schema."""


class CacheMiss(GatewayError):
    """Offline mode and the request is not in the cache."""


class RetryableHTTPError(Exception):
    """HTTP 429/5xx; raised by transports so the retry loop can back off."""

    def __init__(self, status: int, body: str = ""):
        super().__init__(f"HTTP {status}: {body[:200]}")
        self.status = status


@dataclass(frozen=True)
class ModelEndpoint:
    base_url: str
    model_id: str
    api_key_env: str = "OPENAI_API_KEY"
    timeout: float = 60.0
    interface: str = "chat"  # "chat" or "completion"
    greedy_mode: str = "temperature"  # "temperature" or "top_k"

    def __post_init__(self):
        parsed = urlparse(self.base_url)
        if not (parsed.scheme and parsed.netloc):
            raise ValueError(f"base_url must be absolute, got {self.base_url!r}")
        if not self.model_id:
            raise ValueError("model_id must be non-empty")
        if self.interface not in ("chat", "completion"):
            raise ValueError(f"unknown interface {self.interface!r}")
        if self.greedy_mode not in ("temperature", "top_k"):
            raise ValueError(f"unknown greedy_mode {self.greedy_mode!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelEndpoint":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


@dataclass(frozen=True)
class DecodeParams:
    temperature: float = 0.0
    max_tokens: int = 256
    logprobs_requested: bool = False
    stop_sequences: tuple[str, ...] = ()

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        object.__setattr__(self, "stop_sequences", tuple(self.stop_sequences))

    @property
    def greedy(self) -> bool:
        return self.temperature == 0


@dataclass
class CompletionRecord:
    request_hash: str
    text: str
    token_logprobs: Optional[list[tuple[str, float]]] = None
    created_at: str = ""
    model_id: str = ""

    def to_json(self) -> dict:
        d = asdict(self)
        if self.token_logprobs is not None:
            d["token_logprobs"] = [list(t) for t in self.token_logprobs]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "CompletionRecord":
        lp = d.get("token_logprobs")
        return cls(
            request_hash=d["request_hash"],
            text=d["text"],
            token_logprobs=None if lp is None else [(str(t), float(v)) for t, v in lp],
            created_at=d.get("created_at", ""),
            model_id=d.get("model_id", ""),
        )

    @property
    def tokens(self) -> Optional[list[str]]:
        if self.token_logprobs is None:
            return None
        return [t for t, _ in self.token_logprobs]


def request_hash(endpoint: ModelEndpoint, prompt: str, params: DecodeParams, salt: str = "") -> str:
    """Digest of everything that determines the model output."""
    key = {
        "model_id": endpoint.model_id,
        "interface": endpoint.interface,
        "prompt": prompt,
        "temperature": params.temperature,
        "max_tokens": params.max_tokens,
        "logprobs": params.logprobs_requested,
        "stop": list(params.stop_sequences),
    }
    if salt:
        key["salt"] = salt
    blob = json.dumps(key, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def build_request(endpoint: ModelEndpoint, prompt: str, params: DecodeParams) -> tuple[str, dict]:
    """Return (path, json body) for the endpoint's interface."""
    body: dict[str, Any] = {"model": endpoint.model_id, "max_tokens": params.max_tokens}
    if params.greedy and endpoint.greedy_mode == "top_k":
        body["top_k"] = 1
    else:
        body["temperature"] = params.temperature
    if params.stop_sequences:
        body["stop"] = list(params.stop_sequences)
    if endpoint.interface == "chat":
        body["messages"] = [{"role": "user", "content": prompt}]
        if params.logprobs_requested:
            body["logprobs"] = True
        return "/v1/chat/completions", body
    body["prompt"] = prompt
    if params.logprobs_requested:
        body["logprobs"] = 1
    return "/v1/completions", body


def parse_response(endpoint: ModelEndpoint, payload: Any, want_logprobs: bool):
    """Extract (text, token_logprobs) from a chat or completion response."""
    try:
        choice = payload["choices"][0]
        if endpoint.interface == "chat":
            text = choice["message"]["content"]
        else:
            text = choice["text"]
    except (KeyError, IndexError, TypeError) as exc:
        raise MalformedResponse(f"missing choices/text in response: {exc!r}") from exc
    if not isinstance(text, str):
        raise MalformedResponse("completion text is not a string")

    token_logprobs = None
    lp = choice.get("logprobs") if isinstance(choice, dict) else None
    if lp:
        try:
            if isinstance(lp, dict) and "content" in lp:
                token_logprobs = [(str(t["token"]), float(t["logprob"])) for t in lp["content"]]
            else:
                token_logprobs = [(str(t), float(v)) for t, v in zip(lp["tokens"], lp["token_logprobs"])]
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponse(f"bad logprobs block: {exc!r}") from exc
    if want_logprobs and token_logprobs is None:
        raise MalformedResponse("logprobs requested but absent from response")
    if token_logprobs is not None and any(v > 0 for _, v in token_logprobs):
        raise MalformedResponse("positive logprob in response")
    return text, token_logprobs


Transport = Callable[[ModelEndpoint, str, dict, str], Any]


def http_transport(endpoint: ModelEndpoint, path: str, body: dict, api_key: str) -> Any:
    import httpx

    url = endpoint.base_url.rstrip("/") + path
    headers = {"Authorization": f"Bearer {api_key}"}
    try:
        resp = httpx.post(url, json=body, headers=headers, timeout=endpoint.timeout)
    except httpx.TransportError as exc:
        raise ConnectionError(str(exc)) from exc
    if resp.status_code in (401, 403):
        raise AuthError(f"credential rejected by {url} (HTTP {resp.status_code})")
    if resp.status_code == 429 or resp.status_code >= 500:
        raise RetryableHTTPError(resp.status_code, resp.text)
    if resp.status_code >= 400:
        raise MalformedResponse(f"HTTP {resp.status_code} from {url}: {resp.text[:200]}")
    try:
        return resp.json()
    except ValueError as exc:
        raise MalformedResponse("response body is not JSON") from exc


class ResponseCache:
    """Append-only on-disk store: one immutable JSON file per request hash."""

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str) -> Optional[CompletionRecord]:
        p = self._path(key)
        if not p.exists():
            return None
        with open(p, encoding="utf-8") as fh:
            return CompletionRecord.from_json(json.load(fh))

    def put(self, record: CompletionRecord) -> CompletionRecord:
        p = self._path(record.request_hash)
        with self._lock:
            if p.exists():
                # entries are immutable; the first writer wins
                return self.get(record.request_hash)
            p.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=p.parent, suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(record.to_json(), fh, ensure_ascii=False, sort_keys=True)
            os.replace(tmp, p)
        return record


@dataclass
class BatchResult:
    records: list[Optional[CompletionRecord]]
    errors: dict[int, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.errors


class Gateway:
    """Cached, retrying front door for every model call.

    Args:
        cache_dir: Directory of the response cache.
        transport: Callable ``(endpoint, path, body, api_key) -> json``. Defaults
            to an httpx POST. Tests pass fakes here.
        offline: Refuse network access; cache misses raise ``CacheMiss``.
        max_attempts: Attempts per request before ``NetworkError``.
        backoff: Initial sleep in seconds, doubled after each failure.
    """

    def __init__(
        self,
        cache_dir: str | os.PathLike = DEFAULT_CACHE_DIR,
        transport: Optional[Transport] = None,
        offline: bool = False,
        max_attempts: int = 5,
        backoff: float = 1.0,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.cache = ResponseCache(cache_dir)
        self.transport = transport or http_transport
        self.offline = offline
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._sleep = sleep
        self._stats_lock = threading.Lock()
        self._inflight: dict[str, threading.Lock] = {}
        self.hits = 0
        self.misses = 0
        self.network_calls = 0

    def _count(self, attr: str):
        with self._stats_lock:
            setattr(self, attr, getattr(self, attr) + 1)

    def _key_lock(self, key: str) -> threading.Lock:
        with self._stats_lock:
            return self._inflight.setdefault(key, threading.Lock())

    def complete(
        self, endpoint: ModelEndpoint, prompt: str, params: DecodeParams, salt: str = ""
    ) -> CompletionRecord:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        key = request_hash(endpoint, prompt, params, salt)
        # serialize identical requests so concurrent duplicates cost one call
        with self._key_lock(key):
            cached = self.cache.get(key)
            if cached is not None:
                self._count("hits")
                return cached
            self._count("misses")
            if self.offline:
                raise CacheMiss(f"offline and no cached response for {endpoint.model_id} ({key[:12]})")
            text, lps = self._call(endpoint, prompt, params)
            record = CompletionRecord(
                request_hash=key,
                text=text,
                token_logprobs=lps,
                created_at=datetime.now(timezone.utc).isoformat(),
                model_id=endpoint.model_id,
            )
            return self.cache.put(record)

    def _call(self, endpoint: ModelEndpoint, prompt: str, params: DecodeParams):
        api_key = os.environ.get(endpoint.api_key_env)
        if not api_key:
            raise AuthError(f"environment variable {endpoint.api_key_env} is not set")
        path, body = build_request(endpoint, prompt, params)
        delay = self.backoff
        last: Exception | None = None
        for attempt in range(1, self.max_attempts + 1):
            self._count("network_calls")
            try:
                payload = self.transport(endpoint, path, body, api_key)
                return parse_response(endpoint, payload, params.logprobs_requested)
            except (ConnectionError, TimeoutError, RetryableHTTPError) as exc:
                last = exc
                logger.warning("attempt %d/%d for %s failed: %s", attempt, self.max_attempts, endpoint.model_id, exc)
                if attempt < self.max_attempts:
                    self._sleep(delay)
                    delay *= 2
        raise NetworkError(f"{endpoint.model_id}: gave up after {self.max_attempts} attempts: {last}")

    def complete_batch(
        self,
        endpoint: ModelEndpoint,
        prompts: list[str],
        params: DecodeParams,
        max_in_flight: int = 4,
    ) -> BatchResult:
        """Complete many prompts; output[i] always answers prompts[i].

        Failures do not abort the batch. They are listed in ``errors`` by index
        and the corresponding record is None.
        """
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        records: list[Optional[CompletionRecord]] = [None] * len(prompts)
        errors: dict[int, str] = {}

        def one(i: int):
            try:
                records[i] = self.complete(endpoint, prompts[i], params)
            except (GatewayError, ValueError) as exc:
                errors[i] = f"{type(exc).__name__}: {exc}"

        if max_in_flight == 1:
            for i in range(len(prompts)):
                one(i)
        else:
            with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
                list(pool.map(one, range(len(prompts))))
        return BatchResult(records, dict(sorted(errors.items())))
