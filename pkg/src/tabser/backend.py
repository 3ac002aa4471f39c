"""Language-model backends.

Two capabilities are needed elsewhere in the package:

``generate(prompt, max_tokens, temperature) -> str``
    free-text continuation, used by the model-assisted serializers;
``score_choices(prompt, choices) -> list[float]``
    log-probability of each choice string as a continuation of the prompt,
    used by :func:`tabser.prompt.classify`.

Mocks are deterministic and need no network. :class:`HttpBackend` speaks a
completions-style JSON API (``prompt``, ``max_tokens``, ``temperature``,
``logprobs``, ``echo``) and reads per-token log-probabilities from
``choices[0].logprobs``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import httpx

from tabser.errors import (
    BackendError,
    BackendTimeout,
    DataError,
    HttpStatus,
    MissingLogprobs,
    RateLimited,
)

log = logging.getLogger(__name__)


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class EchoBackend:
    """Returns the prompt as its own generation; every choice scores 0."""

    def generate(self, prompt, max_tokens=128, temperature=0.0):
        return prompt

    def score_choices(self, prompt, choices):
        return [0.0] * len(choices)


class TableBackend:
    """Replies looked up by the SHA-256 of the prompt; unknown prompts give ''."""

    def __init__(self, replies=None):
        self.replies = dict(replies or {})

    @classmethod
    def from_prompts(cls, mapping):
        return cls({prompt_hash(p): r for p, r in mapping.items()})

    def generate(self, prompt, max_tokens=128, temperature=0.0):
        return self.replies.get(prompt_hash(prompt), "")

    def score_choices(self, prompt, choices):
        return [0.0] * len(choices)


class LinearScorerBackend:
    """Scores choices linearly in substring indicators of the prompt.

    ``weights`` maps a substring to a list with one weight per choice
    position; ``bias`` gives a per-position offset. The score of choice
    ``i`` is ``bias[i] + sum(w[key][i] for key found in prompt)``.
    """

    def __init__(self, weights=None, bias=None):
        self.weights = {k: [float(x) for x in v] for k, v in (weights or {}).items()}
        for k, v in self.weights.items():
            if not all(math.isfinite(x) for x in v):
                raise DataError(f"non-finite weight for {k!r}")
        self.bias = [float(b) for b in bias] if bias else None

    def generate(self, prompt, max_tokens=128, temperature=0.0):
        return ""

    def score_choices(self, prompt, choices):
        n = len(choices)
        scores = list(self.bias) if self.bias else [0.0] * n
        if len(scores) != n:
            raise DataError(f"bias has {len(scores)} entries for {n} choices")
        # sorted keys keep float summation order stable
        for key in sorted(self.weights):
            if key in prompt:
                w = self.weights[key]
                if len(w) != n:
                    raise DataError(f"weight {key!r} has {len(w)} entries for {n} choices")
                scores = [s + x for s, x in zip(scores, w)]
        return scores


def mock_from_spec(spec):
    """Build a mock backend from a dict (or path to JSON) with a ``kind`` key."""
    if isinstance(spec, (str, Path)):
        with open(spec, encoding="utf-8") as fh:
            spec = json.load(fh)
    kind = spec.get("kind", "echo")
    if kind == "echo":
        return EchoBackend()
    if kind == "table":
        backend = TableBackend(spec.get("replies"))
        for p, r in (spec.get("prompts") or {}).items():
            backend.replies[prompt_hash(p)] = r
        return backend
    if kind == "linear_scorer":
        return LinearScorerBackend(spec.get("weights"), spec.get("bias"))
    raise DataError(f"unknown mock kind {kind!r}")


@dataclass
class BackendConfig:
    kind: str = "mock"
    endpoint: Optional[str] = None
    auth_token_env: Optional[str] = None
    max_concurrency: int = 4
    timeout: float = 30.0
    retries: int = 3
    cache_path: Optional[str] = None
    mock: dict = field(default_factory=dict)
    model: Optional[str] = None
    backoff: float = 1.0

    def __post_init__(self):
        if self.kind not in ("mock", "http"):
            raise DataError(f"unknown backend kind {self.kind!r}")
        if self.kind == "http" and not self.endpoint:
            raise DataError("http backend requires an endpoint")
        if self.max_concurrency < 1:
            raise DataError("max_concurrency must be >= 1")
        if self.retries < 0:
            raise DataError("retries must be >= 0")


def make_backend(config: BackendConfig, transport=None):
    if config.kind == "mock":
        return mock_from_spec(config.mock or {"kind": "echo"})
    return HttpBackend(
        config.endpoint,
        auth_token_env=config.auth_token_env,
        max_concurrency=config.max_concurrency,
        timeout=config.timeout,
        retries=config.retries,
        cache_path=config.cache_path,
        model=config.model,
        backoff=config.backoff,
        transport=transport,
    )


class ResponseCache:
    """Append-only JSONL cache of raw responses keyed by prompt hash and params."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries = {}
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        rec = json.loads(line)
                        self._entries[self._key(rec["prompt_sha256"], rec["params"])] = rec["reply"]

    @staticmethod
    def _key(digest, params):
        return digest + "|" + json.dumps(params, sort_keys=True)

    def get(self, prompt, params):
        with self._lock:
            return self._entries.get(self._key(prompt_hash(prompt), params))

    def put(self, prompt, params, reply):
        digest = prompt_hash(prompt)
        rec = {"prompt_sha256": digest, "params": params, "reply": reply}
        with self._lock:
            self._entries[self._key(digest, params)] = reply
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def choice_logprob(response, prompt_len):
    """Sum the log-probabilities of tokens that start at or after ``prompt_len``.

    ``response`` is a completions response produced with ``echo`` on, so the
    token list covers prompt + choice. Token offsets come from
    ``text_offset`` when present, else from cumulative token lengths.
    """
    try:
        lp = response["choices"][0]["logprobs"]
        tokens = lp["tokens"]
        token_logprobs = lp["token_logprobs"]
    except (KeyError, IndexError, TypeError):
        raise MissingLogprobs("response has no token log-probabilities") from None
    if tokens is None or token_logprobs is None or len(tokens) != len(token_logprobs):
        raise MissingLogprobs("token and log-probability arrays disagree")
    offsets = lp.get("text_offset")
    if offsets is None:
        offsets, pos = [], 0
        for t in tokens:
            offsets.append(pos)
            pos += len(t)
    total, found = 0.0, False
    for off, value in zip(offsets, token_logprobs):
        if off >= prompt_len:
            if value is None:
                raise MissingLogprobs("choice token without log-probability")
            total += value
            found = True
    if not found:
        raise MissingLogprobs("no tokens found after the prompt")
    return total


class HttpBackend:
    """Completions-style HTTP client with retries, a response cache and a concurrency cap."""


    def __init__(
        self,
        endpoint,
        auth_token_env=None,
        max_concurrency=4,
        timeout=30.0,
        retries=3,
        cache_path=None,
        model=None,
        backoff=1.0,
        transport=None,
    ):
        self.endpoint = endpoint
        self.retries = retries
        self.backoff = backoff
        self.model = model
        self.cache = ResponseCache(cache_path) if cache_path else None
        self._slots = threading.BoundedSemaphore(max_concurrency)
        headers = {"Content-Type": "application/json"}
        if auth_token_env:
            token = os.environ.get(auth_token_env)
            if token:
                headers["Authorization"] = f"Bearer {token}"
            else:
                log.warning("environment variable %s is not set", auth_token_env)
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)
        self.network_calls = 0
        self._count_lock = threading.Lock()

    def close(self):
        self._client.close()

    def _post(self, payload):
        attempt = 0
        while True:
            try:
                with self._slots:
                    with self._count_lock:
                        self.network_calls += 1
                    resp = self._client.post(self.endpoint, json=payload)
            except httpx.TimeoutException as e:
                err = BackendTimeout(f"request timed out: {e}")
            except httpx.HTTPError as e:
                raise BackendError(f"request failed: {e}") from e
            else:
                if resp.status_code == 200:
                    try:
                        return resp.json()
                    except ValueError as e:
                        raise BackendError("response is not JSON") from e
                if resp.status_code == 429:
                    err = RateLimited()
                else:
                    err = HttpStatus(resp.status_code, resp.text[:200])
                if not (resp.status_code == 429 or 500 <= resp.status_code < 600):
                    raise err
            if attempt >= self.retries:
                raise err
            delay = self.backoff * (2**attempt)
            log.info("retrying after %s (attempt %d, sleeping %.2fs)", err, attempt + 1, delay)
            time.sleep(delay)
            attempt += 1

    def _request(self, prompt, params):
        if self.cache is not None:
            hit = self.cache.get(prompt, params)
            if hit is not None:
                return hit
        payload = dict(params, prompt=prompt)
        if self.model:
            payload["model"] = self.model
        reply = self._post(payload)
        if self.cache is not None:
            self.cache.put(prompt, params, reply)
        return reply

    def generate(self, prompt, max_tokens=128, temperature=0.0):
        params = {"max_tokens": max_tokens, "temperature": temperature}
        reply = self._request(prompt, params)
        try:
            return reply["choices"][0]["text"] or ""
        except (KeyError, IndexError, TypeError):
            raise BackendError("response has no choices[0].text") from None

    def score_choices(self, prompt, choices):
        params = {"max_tokens": 0, "temperature": 0.0, "logprobs": True, "echo": True}
        out = []
        for choice in choices:
            reply = self._request(prompt + choice, params)
            out.append(choice_logprob(reply, len(prompt)))
        return out
