"""One generation interface over toy policies, scripted mocks and remote services.

Remote wire format: POST ``{url}/v1/generate`` with the request fields as a JSON
object (plus ``image_b64`` when the image file exists locally); the reply is
``{"texts": [...], "logprobs": [...] | null}``.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import httpx
import numpy as np

from .errors import BackendError, BackendUnavailable, BadRequest, GenTimeout

log = logging.getLogger(__name__)

ENV_URL = "R1_BACKEND_URL"
ENV_KEY = "R1_BACKEND_KEY"
ENV_MAX_IN_FLIGHT = "R1_MAX_IN_FLIGHT"


@dataclass(frozen=True)
class GenRequest:
    model: str
    system_prompt: str
    user_text: str
    image_ref: str | None = None
    temperature: float = 0.0
    n: int = 1
    max_tokens: int = 1024
    seed: int | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not self.temperature >= 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")

    def content_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @property
    def cacheable(self) -> bool:
        # sampled requests only repeat when the caller pins the seed
        return self.temperature == 0 or self.seed is not None


@dataclass(frozen=True)
class GenResponse:
    texts: tuple[str, ...]
    logprobs: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "texts", tuple(self.texts))
        if self.logprobs is not None:
            object.__setattr__(self, "logprobs", tuple(float(v) for v in self.logprobs))
            if len(self.logprobs) != len(self.texts):
                raise ValueError("logprobs must align with texts")

    @property
    def text(self) -> str:
        return self.texts[0]

    def to_json(self) -> dict:
        return {"texts": list(self.texts), "logprobs": None if self.logprobs is None else list(self.logprobs)}

    @classmethod
    def from_json(cls, d: Mapping) -> "GenResponse":
        return cls(tuple(d["texts"]), d.get("logprobs"))


class Backend(Protocol):
    def generate(self, request: GenRequest) -> GenResponse: ...


def _check_count(request: GenRequest, resp: GenResponse) -> GenResponse:
    if len(resp.texts) != request.n:
        raise BackendError(f"expected {request.n} completions, got {len(resp.texts)}")
    return resp


class ToyBackend:
    """Serves a toy policy. Temperature 0 is greedy decoding.

    ``query_fn`` maps a request to the policy's query object; by default the
    user text is the query.
    """

    def __init__(self, policy, query_fn: Callable[[GenRequest], object] | None = None):
        self.policy = policy
        self.query_fn = query_fn or (lambda r: r.user_text)

    def generate(self, request: GenRequest) -> GenResponse:
        q = self.query_fn(request)
        if request.temperature == 0:
            text = self.policy.greedy(q)
            lp = float(self.policy.logprobs(q, [text])[0])
            return GenResponse((text,) * request.n, (lp,) * request.n)
        rng = np.random.default_rng(request.seed)
        samples = self.policy.sample(q, request.n, request.temperature, rng)
        return GenResponse(tuple(t for t, _ in samples), tuple(lp for _, lp in samples))


class CallableBackend:
    """Adapts ``fn(request)`` returning a string, a list of strings or a GenResponse."""

    def __init__(self, fn: Callable[[GenRequest], "str | Sequence[str] | GenResponse"]):
        self.fn = fn

    def generate(self, request: GenRequest) -> GenResponse:
        out = self.fn(request)
        if isinstance(out, GenResponse):
            return _check_count(request, out)
        if isinstance(out, str):
            return GenResponse((out,) * request.n)
        return _check_count(request, GenResponse(tuple(out)))


class HttpBackend:
    """Client for the JSON generation endpoint with bounded retries.

    Timeouts, connection failures and 5xx replies are retried with exponential
    backoff and full jitter; 4xx replies fail immediately.
    """

    def __init__(
        self,
        url: str,
        api_key: str | None = None,
        *,
        timeout: float = 120.0,
        max_attempts: int = 3,
        base_delay: float = 1.0,
        max_delay: float = 30.0,
        image_root: Path | str | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        jitter: random.Random | None = None,
    ):
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self.url = url.rstrip("/")
        self.max_attempts = max_attempts
        self.base_delay = base_delay
        self.max_delay = max_delay
        self.image_root = Path(image_root) if image_root is not None else None
        self._sleep = sleep
        self._jitter = jitter or random.Random()
        self._client = httpx.Client(base_url=self.url, headers=headers, timeout=timeout, transport=transport)

    def close(self):
        self._client.close()

    def payload(self, request: GenRequest) -> dict:
        body = asdict(request)
        if request.image_ref:
            p = Path(request.image_ref)
            if self.image_root is not None and not p.is_absolute():
                p = self.image_root / p
            if p.is_file():
                body["image_b64"] = base64.b64encode(p.read_bytes()).decode("ascii")
        return body

    def backoff(self, attempt: int) -> float:
        return self._jitter.uniform(0.0, min(self.max_delay, self.base_delay * 2**attempt))

    def generate(self, request: GenRequest) -> GenResponse:
        body = self.payload(request)
        last: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                self._sleep(self.backoff(attempt - 1))
            try:
                r = self._client.post("/v1/generate", json=body)
            except httpx.TimeoutException as e:
                last = GenTimeout(f"request timed out: {e}")
                continue
            except httpx.TransportError as e:
                last = BackendUnavailable(f"connection failed: {e}")
                continue
            if r.status_code >= 500:
                last = BackendUnavailable(f"server error {r.status_code}")
                log.warning("backend returned %d (attempt %d/%d)", r.status_code, attempt + 1, self.max_attempts)
                continue
            if r.status_code >= 400:
                raise BadRequest(f"backend rejected request: {r.status_code} {r.text[:200]}")
            try:
                data = r.json()
                resp = GenResponse(tuple(data["texts"]), data.get("logprobs"))
            except (ValueError, KeyError, TypeError) as e:
                raise BackendError(f"malformed backend reply: {e}") from e
            return _check_count(request, resp)
        assert last is not None
        if isinstance(last, GenTimeout):
            raise GenTimeout(f"{last} after {self.max_attempts} attempts")
        raise BackendUnavailable(f"{last} after {self.max_attempts} attempts")


class CachingBackend:
    """Memoizes cacheable requests by content hash, optionally persisted as JSONL.

    A per-key lock makes concurrent identical requests wait for the first one
    instead of all reaching the inner backend.
    """

    def __init__(self, inner: Backend, path: Path | str | None = None):
        self.inner = inner
        self.path = Path(path) if path is not None else None
        self._store: dict[str, GenResponse] = {}
        self._lock = threading.Lock()
        self._key_locks: dict[str, threading.Lock] = {}
        self.hits = 0
        self.misses = 0
        if self.path is not None and self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._store[rec["key"]] = GenResponse.from_json(rec["response"])

    def __len__(self):
        return len(self._store)

    def _key_lock(self, key: str) -> threading.Lock:
        with self._lock:
            return self._key_locks.setdefault(key, threading.Lock())

    def generate(self, request: GenRequest) -> GenResponse:
        if not request.cacheable:
            return self.inner.generate(request)
        key = request.content_hash()
        with self._key_lock(key):
            with self._lock:
                hit = self._store.get(key)
                if hit is not None:
                    self.hits += 1
                    return hit
            resp = self.inner.generate(request)
            with self._lock:
                self._store[key] = resp
                self.misses += 1
                if self.path is not None:
                    self.path.parent.mkdir(parents=True, exist_ok=True)
                    with self.path.open("a", encoding="utf-8") as fh:
                        fh.write(json.dumps({"key": key, "response": resp.to_json()}, ensure_ascii=False) + "\n")
            return resp


def generate_batch(backend: Backend, requests: Sequence[GenRequest], max_in_flight: int = 4) -> list:
    """Index-aligned results; a failed slot holds its exception instead of a GenResponse."""
    if max_in_flight < 1:
        raise ValueError("max_in_flight must be >= 1")
    if not requests:
        return []

    def one(req):
        try:
            return backend.generate(req)
        except Exception as e:  # isolate per-slot failures
            return e

    with ThreadPoolExecutor(max_workers=min(max_in_flight, len(requests))) as pool:
        return list(pool.map(one, requests))


def max_in_flight_from_env(env: Mapping[str, str] | None = None, default: int = 4) -> int:
    env = os.environ if env is None else env
    raw = env.get(ENV_MAX_IN_FLIGHT)
    if not raw:
        return default
    n = int(raw)
    if n < 1:
        raise ValueError(f"{ENV_MAX_IN_FLIGHT} must be >= 1")
    return n


def backend_from_env(env: Mapping[str, str] | None = None, **kwargs) -> HttpBackend | None:
    env = os.environ if env is None else env
    url = env.get(ENV_URL)
    if not url:
        return None
    return HttpBackend(url, env.get(ENV_KEY) or None, **kwargs)
