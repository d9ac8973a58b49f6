"""Model backends with retry, rate limiting, and content-addressed caching.

Three backends share one calling convention: ``http_chat`` posts a
chat-completion request (system message plus a user message interleaving text
and base64 JPEG images), ``replay`` serves stored responses from a JSONL
fixture, and ``fixed_stub`` returns one canned string. The replay backend
makes the whole pipeline bit-deterministic, which the test suite leans on
heavily.

Rate limiting is a sliding-window log rather than a token bucket: the
guarantee is that admissions never exceed the configured budget in ANY
trailing 60 s window, and a bucket's burst allowance would break exactly
that. Time and randomness are injected (``Clock``, ``random.Random``) so
retry and rate behavior are testable without real sleeping.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import random
import re
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Protocol, Sequence

import requests

from .promptkit import PromptBundle

_WINDOW_S = 60.0
_BACKOFF_BASE_S = 1.0
_BACKOFF_FACTOR = 2.0


class GatewayError(Exception):
    """Base class for backend dispatch failures."""


class BackendUnavailable(GatewayError):
    """The backend could not serve the request (retries exhausted or hard miss)."""


class AuthError(GatewayError):
    """Credential rejected; never retried."""


class OversizedInput(GatewayError):
    """More images than the bundle allows; no request is sent."""


class _TransientError(GatewayError):
    """Internal marker for failures worth retrying (429, 5xx, timeouts)."""


class BackendKind(Enum):
    HTTP_CHAT = "http_chat"
    REPLAY = "replay"
    FIXED_STUB = "fixed_stub"


@dataclass(frozen=True)
class BackendConfig:
    backend_kind: BackendKind
    model_name: str
    endpoint_url: str | None = None
    api_key_env: str | None = None
    fixture_path: str | None = None
    fixed_text: str | None = None
    max_parallel: int = 1
    requests_per_minute: int = 60
    max_retries: int = 2
    timeout_s: float = 30.0
    cache_dir: str | None = None

    def __post_init__(self) -> None:
        if not self.model_name:
            raise ValueError("model_name must be non-empty")
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")
        if self.requests_per_minute < 1:
            raise ValueError("requests_per_minute must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")
        if self.backend_kind is BackendKind.HTTP_CHAT:
            if not self.endpoint_url or not self.api_key_env:
                raise ValueError("http_chat requires endpoint_url and api_key_env")
        elif self.backend_kind is BackendKind.REPLAY:
            if not self.fixture_path:
                raise ValueError("replay requires fixture_path")


@dataclass(frozen=True)
class RawInference:
    track_id: str
    variant: str
    raw_text: str
    latency_s: float
    attempt_count: int
    from_cache: bool
    provider_metadata: str | None = None


class Clock(Protocol):
    def now(self) -> float: ...

    def sleep(self, seconds: float) -> None: ...


class SystemClock:
    def now(self) -> float:
        return time.monotonic()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)


class SimulatedClock:
    """Deterministic clock for tests; sleeping advances time instantly."""

    def __init__(self, start: float = 0.0) -> None:
        self._now = start
        self._lock = threading.Lock()
        self.total_slept = 0.0

    def now(self) -> float:
        with self._lock:
            return self._now

    def sleep(self, seconds: float) -> None:
        if seconds <= 0:
            return
        with self._lock:
            self._now += seconds
            self.total_slept += seconds


class RateLimiter:
    """Caps admissions at ``per_minute`` within any trailing 60 s window.

    Thread-safe. ``acquire`` blocks (via the injected clock) until admission
    is allowed, then records the admission timestamp.
    """

    def __init__(self, per_minute: int, clock: Clock) -> None:
        if per_minute < 1:
            raise ValueError("per_minute must be >= 1")
        self._per_minute = per_minute
        self._clock = clock
        self._admissions: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> float:
        """Block until a request may be sent; returns the admission time."""
        while True:
            with self._lock:
                now = self._clock.now()
                cutoff = now - _WINDOW_S
                while self._admissions and self._admissions[0] <= cutoff:
                    self._admissions.popleft()
                if len(self._admissions) < self._per_minute:
                    self._admissions.append(now)
                    return now
                wait = self._admissions[0] + _WINDOW_S - now
            self._clock.sleep(max(wait, 1e-6))


def cache_key(bundle: PromptBundle, images: Sequence[bytes], model_name: str) -> str:
    """Content hash of everything that determines a model response.

    Each part is length-prefixed before hashing so distinct (prompt, image)
    splits can never collide by concatenation.
    """
    digest = hashlib.sha256()
    parts: list[bytes] = [
        bundle.system_text.encode("utf-8"),
        bundle.user_text.encode("utf-8"),
        model_name.encode("utf-8"),
    ]
    parts.extend(images)
    for part in parts:
        digest.update(len(part).to_bytes(8, "big"))
        digest.update(part)
    return digest.hexdigest()


def _sanitize_model_dir(model_name: str) -> str:
    safe = re.sub(r"[^A-Za-z0-9._-]+", "_", model_name)
    return safe or "model"


class ResponseCache:
    """Disk cache at ``<root>/<model>/<first-2-hex>/<key>.json``.

    Writes are serialized and atomic (temp file + rename); reads are
    lock-free.
    """

    def __init__(self, root: str | Path, model_name: str) -> None:
        self._dir = Path(root) / _sanitize_model_dir(model_name)
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self._dir / key[:2] / f"{key}.json"

    def get(self, key: str) -> dict | None:
        path = self._path(key)
        try:
            with path.open(encoding="utf-8") as fh:
                return json.load(fh)
        except FileNotFoundError:
            return None
        except (OSError, json.JSONDecodeError):
            # A torn or corrupt entry is treated as a miss and overwritten.
            return None

    def put(self, key: str, record: dict) -> None:
        path = self._path(key)
        with self._lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_text(json.dumps(record, sort_keys=True), encoding="utf-8")
            os.replace(tmp, path)


class _Backend(Protocol):
    def complete(
        self, bundle: PromptBundle, images: Sequence[bytes], track_id: str
    ) -> tuple[str, str | None]:
        """Return (raw_text, provider_metadata)."""
        ...


class ReplayBackend:
    """Serves stored responses from a JSONL fixture.

    Each line is ``{"key": ..., "raw_text": ...}`` where key is either a
    content cache key or the simpler ``<track_id>:<variant>`` form. Misses
    are hard errors; a replay run must never fall through to the network.
    """

    def __init__(self, fixture_path: str | Path, model_name: str = "replay") -> None:
        self._responses: dict[str, str] = {}
        self._model_name = model_name
        path = Path(fixture_path)
        with path.open(encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    row = json.loads(line)
                    self._responses[row["key"]] = row["raw_text"]
                except (json.JSONDecodeError, TypeError, KeyError) as exc:
                    raise ValueError(f"{path}:{line_no}: bad fixture line: {exc}") from exc

    def complete(
        self, bundle: PromptBundle, images: Sequence[bytes], track_id: str
    ) -> tuple[str, str | None]:
        for key in (
            cache_key(bundle, images, self._model_name),
            f"{track_id}:{bundle.variant.value}",
        ):
            if key in self._responses:
                return self._responses[key], "replay"
        raise BackendUnavailable(
            f"replay fixture has no entry for track {track_id!r} variant "
            f"{bundle.variant.value!r}"
        )


class FixedStubBackend:
    """Returns one canned string for every request; smoke-test plumbing."""

    _DEFAULT = '{"length_m": null, "width_m": null, "height_m": null}'

    def __init__(self, fixed_text: str | None) -> None:
        self._text = fixed_text if fixed_text is not None else self._DEFAULT

    def complete(
        self, bundle: PromptBundle, images: Sequence[bytes], track_id: str
    ) -> tuple[str, str | None]:
        return self._text, "fixed_stub"


class HttpChatBackend:
    """POSTs the chat-completion wire shape and extracts the text reply."""

    def __init__(self, cfg: BackendConfig, session: requests.Session | None = None) -> None:
        self._cfg = cfg
        self._session = session or requests.Session()
        key = os.environ.get(cfg.api_key_env or "")
        if not key:
            raise AuthError(f"environment variable {cfg.api_key_env!r} is empty or unset")
        self._api_key = key

    def _payload(self, bundle: PromptBundle, images: Sequence[bytes]) -> dict:
        content: list[dict] = [{"type": "text", "text": bundle.user_text}]
        for blob in images:
            b64 = base64.b64encode(blob).decode("ascii")
            content.append(
                {
                    "type": "image_url",
                    "image_url": {"url": f"data:image/jpeg;base64,{b64}"},
                }
            )
        return {
            "model": self._cfg.model_name,
            "messages": [
                {"role": "system", "content": bundle.system_text},
                {"role": "user", "content": content},
            ],
        }

    def complete(
        self, bundle: PromptBundle, images: Sequence[bytes], track_id: str
    ) -> tuple[str, str | None]:
        try:
            resp = self._session.post(
                self._cfg.endpoint_url,
                json=self._payload(bundle, images),
                headers={"Authorization": f"Bearer {self._api_key}"},
                timeout=self._cfg.timeout_s,
            )
        except (requests.Timeout, requests.ConnectionError) as exc:
            raise _TransientError(str(exc)) from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"backend rejected credentials (HTTP {resp.status_code})")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise _TransientError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise BackendUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
            text = body["choices"][0]["message"]["content"]
            if not isinstance(text, str):
                raise TypeError("content is not a string")
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendUnavailable(f"malformed completion body: {exc}") from exc
        metadata = json.dumps(
            {"model": body.get("model"), "usage": body.get("usage")}, sort_keys=True
        )
        return text, metadata


def make_backend(cfg: BackendConfig) -> _Backend:
    if cfg.backend_kind is BackendKind.HTTP_CHAT:
        return HttpChatBackend(cfg)
    if cfg.backend_kind is BackendKind.REPLAY:
        return ReplayBackend(cfg.fixture_path, cfg.model_name)
    return FixedStubBackend(cfg.fixed_text)


def _backoff_delay(attempt: int, rng: random.Random) -> float:
    # attempt is 1-based: first retry waits ~1 s, then ~2 s, ~4 s, ...
    span = _BACKOFF_BASE_S * _BACKOFF_FACTOR ** (attempt - 1)
    return span * rng.uniform(0.5, 1.0)


def infer(
    bundle: PromptBundle,
    images: Sequence[bytes],
    cfg: BackendConfig,
    *,
    track_id: str = "",
    backend: _Backend | None = None,
    clock: Clock | None = None,
    rng: random.Random | None = None,
    limiter: RateLimiter | None = None,
    cache: ResponseCache | None = None,
) -> RawInference:
    """Send one request, honoring cache, rate limit, and retry policy.

    Transient failures (429, 5xx, timeouts) retry with exponential backoff,
    base 1 s, factor 2, with multiplicative jitter in [0.5, 1.0). AuthError
    and replay misses are never retried.
    """
    if not images:
        raise ValueError("at least one image is required")
    if len(images) > bundle.max_images:
        raise OversizedInput(
            f"{len(images)} images exceeds the bundle limit of {bundle.max_images}"
        )
    clock = clock or SystemClock()
    rng = rng or random.Random()
    backend = backend or make_backend(cfg)
    if cache is None and cfg.cache_dir:
        cache = ResponseCache(cfg.cache_dir, cfg.model_name)
    limiter = limiter or RateLimiter(cfg.requests_per_minute, clock)

    key = cache_key(bundle, images, cfg.model_name)
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return RawInference(
                track_id=track_id,
                variant=bundle.variant.value,
                raw_text=hit["raw_text"],
                latency_s=0.0,
                attempt_count=int(hit.get("attempt_count", 1)),
                from_cache=True,
                provider_metadata=hit.get("provider_metadata"),
            )

    attempts = 0
    while True:
        attempts += 1
        limiter.acquire()
        started = clock.now()
        try:
            raw_text, metadata = backend.complete(bundle, images, track_id)
        except _TransientError as exc:
            if attempts > cfg.max_retries:
                raise BackendUnavailable(
                    f"gave up after {attempts} attempts: {exc}"
                ) from exc
            clock.sleep(_backoff_delay(attempts, rng))
            continue
        result = RawInference(
            track_id=track_id,
            variant=bundle.variant.value,
            raw_text=raw_text,
            latency_s=clock.now() - started,
            attempt_count=attempts,
            from_cache=False,
            provider_metadata=metadata,
        )
        if cache is not None:
            cache.put(
                key,
                {
                    "raw_text": result.raw_text,
                    "attempt_count": result.attempt_count,
                    "provider_metadata": result.provider_metadata,
                    "model_name": cfg.model_name,
                    "variant": result.variant,
                },
            )
        return result


@dataclass(frozen=True)
class InferJob:
    track_id: str
    bundle: PromptBundle
    images: tuple[bytes, ...]


@dataclass(frozen=True)
class JobResult:
    """Exactly one of ``inference`` or ``error`` is set."""

    track_id: str
    inference: RawInference | None = None
    error: GatewayError | None = None


def infer_batch(
    jobs: Sequence[InferJob],
    cfg: BackendConfig,
    *,
    backend: _Backend | None = None,
    clock: Clock | None = None,
    rng: random.Random | None = None,
    cache: ResponseCache | None = None,
) -> list[JobResult]:
    """Run jobs with bounded fan-out; results come back in input order.

    Per-job failures are embedded in the result list and never abort the
    batch. All jobs share one rate limiter and one cache.
    """
    if not jobs:
        raise ValueError("jobs must be non-empty")
    clock = clock or SystemClock()
    rng = rng or random.Random()
    backend = backend or make_backend(cfg)
    if cache is None and cfg.cache_dir:
        cache = ResponseCache(cfg.cache_dir, cfg.model_name)
    limiter = RateLimiter(cfg.requests_per_minute, clock)
    # One child rng per job, seeded up front, so jitter stays deterministic
    # under thread scheduling.
    seeds = [rng.getrandbits(64) for _ in jobs]

    def run(job: InferJob, seed: int) -> JobResult:
        try:
            result = infer(
                job.bundle,
                job.images,
                cfg,
                track_id=job.track_id,
                backend=backend,
                clock=clock,
                rng=random.Random(seed),
                limiter=limiter,
                cache=cache,
            )
            return JobResult(track_id=job.track_id, inference=result)
        except GatewayError as exc:
            return JobResult(track_id=job.track_id, error=exc)

    if cfg.max_parallel == 1:
        return [run(job, seed) for job, seed in zip(jobs, seeds)]
    with ThreadPoolExecutor(max_workers=cfg.max_parallel) as pool:
        return list(pool.map(run, jobs, seeds))
