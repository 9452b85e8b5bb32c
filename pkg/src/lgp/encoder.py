"""Encoders for rendered prompts and the category-description provider.

Three encoder implementations share one duck-typed interface (``encode``,
``d``, ``m``):

* ``StubEncoder`` - a deterministic, trainable test vehicle.  Each mask row
  is the learnable mask vector plus the mean of hash-seeded context-token
  embeddings, which keeps the backward pass closed-form.
* ``StoreEncoder`` - serves precomputed mask hidden states from an embedding
  export file; lookup misses are hard errors, never silent fallbacks.
* anything else exposing the same surface.

``DescriptionProvider`` resolves category labels to description texts via a
write-once cache, an offline template, or a remote chat-completion endpoint.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    FormatError,
    InvalidArgumentError,
    LookupMissError,
    RemoteError,
    ShapeError,
)
from .prompts import PromptTemplateSet, RenderedPrompt, render_description_request

EMBED_FORMAT = "lgp-embed"
EMBED_VERSION = 1

TOKEN_STATE_FIXED = "fixed"
TOKEN_STATE_LEARNABLE = "learnable"


def _hash_generator(seed: int, tag: str, payload: str) -> np.random.Generator:
    """PRNG deterministically derived from (seed, tag, payload)."""
    digest = hashlib.sha256(f"{seed}|{tag}|{payload}".encode("utf-8")).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest[:16], "little")))


def hash_embedding(seed: int, tag: str, payload: str, d: int) -> np.ndarray:
    """Deterministic pseudo-random vector, components uniform in [-0.5, 0.5]/sqrt(d)."""
    gen = _hash_generator(seed, tag, payload)
    return (gen.random(d) - 0.5) / math.sqrt(d)


@dataclass
class StubGradients:
    """Gradients produced by StubEncoder.grad for one prompt."""

    mask_tokens: np.ndarray  # (m, d)
    token_table: dict  # token -> (d,) array; empty when token state is fixed


class StubEncoder:
    """Linear stand-in for a masked-language-model encoder.

    Row j of the output is ``u_j + mean(context token embeddings)`` (just
    ``u_j`` when the prompt has no context tokens).  Mask vectors ``u_j`` are
    always trainable; context-token embeddings become trainable too when
    ``token_state == "learnable"``.
    """

    def __init__(self, d: int, m: int, seed: int, token_state: str = TOKEN_STATE_FIXED):
        if d < 1 or m < 1:
            raise InvalidArgumentError(f"d and m must be positive, got d={d}, m={m}")
        if token_state not in (TOKEN_STATE_FIXED, TOKEN_STATE_LEARNABLE):
            raise InvalidArgumentError(f"unknown token_state {token_state!r}")
        self.d = d
        self.m = m
        self.seed = seed
        self.token_state = token_state
        self.mask_tokens = np.stack(
            [hash_embedding(seed, "mask", str(j), d) for j in range(1, m + 1)]
        )
        # trained token vectors shadow the hash-derived defaults
        self._trained: dict[str, np.ndarray] = {}
        self._hash_cache: dict[str, np.ndarray] = {}
        self._cache_lock = threading.Lock()

    def token_embedding(self, token: str) -> np.ndarray:
        trained = self._trained.get(token)
        if trained is not None:
            return trained
        cached = self._hash_cache.get(token)
        if cached is None:
            cached = hash_embedding(self.seed, "token", token, self.d)
            with self._cache_lock:
                self._hash_cache.setdefault(token, cached)
        return cached

    def _context_mean(self, prompt: RenderedPrompt):
        context = prompt.context_tokens()
        if not context:
            return None, context
        acc = np.zeros(self.d)
        for token in context:
            acc += self.token_embedding(token)
        return acc / len(context), context

    def encode(self, prompt: RenderedPrompt) -> np.ndarray:
        if prompt.mask_count != self.m:
            raise ShapeError(
                f"prompt has {prompt.mask_count} mask slots, encoder expects {self.m}"
            )
        mean, _ = self._context_mean(prompt)
        if mean is None:
            return self.mask_tokens.copy()
        return self.mask_tokens + mean[None, :]

    def grad(self, prompt: RenderedPrompt, dL_dh) -> StubGradients:
        """Backward of encode: exact because encode is linear in its parameters."""
        g = np.asarray(dL_dh, dtype=np.float64)
        if g.shape != (self.m, self.d):
            raise ShapeError(f"dL_dh must have shape {(self.m, self.d)}, got {g.shape}")
        token_grads: dict[str, np.ndarray] = {}
        if self.token_state == TOKEN_STATE_LEARNABLE:
            context = prompt.context_tokens()
            if context:
                row_sum = g.sum(axis=0)
                scale = 1.0 / len(context)
                for token in context:
                    prev = token_grads.get(token)
                    if prev is None:
                        token_grads[token] = scale * row_sum.copy()
                    else:
                        prev += scale * row_sum
        return StubGradients(mask_tokens=g.copy(), token_table=token_grads)

    # -- trainer hooks ------------------------------------------------------

    def trainable_token(self, token: str) -> np.ndarray:
        """Materialize a token vector for in-place training updates."""
        vec = self._trained.get(token)
        if vec is None:
            vec = self.token_embedding(token).copy()
            self._trained[token] = vec
        return vec

    @property
    def trained_tokens(self) -> dict:
        return self._trained

    def load_trained_tokens(self, table: dict) -> None:
        for token, vec in table.items():
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (self.d,):
                raise FormatError(f"token {token!r} has shape {arr.shape}, expected ({self.d},)")
            self._trained[token] = arr.copy()


# ---------------------------------------------------------------------------
# Embedding store
# ---------------------------------------------------------------------------


@dataclass
class EmbeddingStore:
    """Exact-key map from prompt key to an m x d mask-hidden matrix."""

    d: int
    m: int
    encoder_name: str
    records: dict = field(default_factory=dict)

    def lookup(self, key: str) -> np.ndarray:
        h = self.records.get(key)
        if h is None:
            raise LookupMissError(f"embedding store has no record for prompt key {key}", [key])
        return h

    def __contains__(self, key: str) -> bool:
        return key in self.records

    def __len__(self) -> int:
        return len(self.records)


def load_store(path) -> EmbeddingStore:
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise FormatError(f"{path}: empty embedding file")
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: bad header JSON: {exc}") from exc
        if header.get("format") != EMBED_FORMAT or header.get("version") != EMBED_VERSION:
            raise FormatError(
                f"{path}: expected header format={EMBED_FORMAT!r} version={EMBED_VERSION}, "
                f"got {header!r}"
            )
        d, m = int(header["d"]), int(header["m"])
        store = EmbeddingStore(d=d, m=m, encoder_name=str(header.get("encoder", "")))
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                key = rec["key"]
                h = np.asarray(rec["h"], dtype=np.float64)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: bad record: {exc}") from exc
            if h.shape != (m, d):
                raise FormatError(
                    f"{path}:{lineno}: record shape {h.shape} does not match header ({m}, {d})"
                )
            if key in store.records:
                raise FormatError(f"{path}:{lineno}: duplicate key {key}")
            store.records[key] = h
    return store


def write_store(path, d: int, m: int, encoder_name: str, records) -> None:
    """Write an embedding export file; values are stored at float32 precision."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "format": EMBED_FORMAT,
            "version": EMBED_VERSION,
            "d": d,
            "m": m,
            "encoder": encoder_name,
        }
        fh.write(json.dumps(header) + "\n")
        for key, h in records:
            arr = np.asarray(h, dtype=np.float32)
            if arr.shape != (m, d):
                raise ShapeError(f"record {key} has shape {arr.shape}, expected ({m}, {d})")
            rec = {"key": key, "h": [[float(v) for v in row] for row in arr]}
            fh.write(json.dumps(rec) + "\n")


class StoreEncoder:
    """Encoder serving mask hidden states from an embedding store."""

    def __init__(self, store: EmbeddingStore):
        self.store = store
        self.d = store.d
        self.m = store.m

    def encode(self, prompt: RenderedPrompt) -> np.ndarray:
        if prompt.mask_count != self.m:
            raise ShapeError(
                f"prompt has {prompt.mask_count} mask slots, store expects {self.m}"
            )
        return self.store.lookup(prompt.key)


# ---------------------------------------------------------------------------
# Description provider
# ---------------------------------------------------------------------------

MODE_OFFLINE = "offline"
MODE_REMOTE = "remote"


@dataclass(frozen=True)
class RemoteEndpoint:
    """Minimal chat-completion endpoint configuration.

    ``reply_path`` is a dot-separated path into the response JSON; list
    indices are written as integers, e.g. "choices.0.message.content".
    """

    url: str
    model: str
    auth_env: str | None = None
    reply_path: str = "choices.0.message.content"
    temperature: float = 0.0
    timeout: float = 30.0


def offline_description(label: str) -> str:
    spaced = label.replace("_", " ").strip()
    return f"Category {spaced}: opinions concerning {spaced}."


def _extract_reply(payload, path: str):
    node = payload
    for part in path.split("."):
        if isinstance(node, list):
            node = node[int(part)]
        elif isinstance(node, dict):
            node = node[part]
        else:
            raise KeyError(part)
    return node


class DescriptionProvider:
    """Resolves labels to description texts with a write-once cache.

    A label, once resolved, is always served verbatim from the cache.  Cache
    misses use the offline template or one remote chat-completion request,
    depending on ``mode``.  Remote fetches are serialized per label.
    """

    def __init__(
        self,
        templates: PromptTemplateSet,
        mode: str = MODE_OFFLINE,
        cache: dict | None = None,
        endpoint: RemoteEndpoint | None = None,
    ):
        if mode not in (MODE_OFFLINE, MODE_REMOTE):
            raise InvalidArgumentError(f"unknown description mode {mode!r}")
        if mode == MODE_REMOTE and endpoint is None:
            raise InvalidArgumentError("remote description mode requires an endpoint")
        self.templates = templates
        self.mode = mode
        self.endpoint = endpoint
        self.cache: dict[str, str] = dict(cache or {})
        self._lock = threading.Lock()
        self.remote_requests = 0

    def get(self, label: str) -> str:
        if not label:
            raise InvalidArgumentError("empty label")
        hit = self.cache.get(label)
        if hit is not None:
            return hit
        with self._lock:
            hit = self.cache.get(label)
            if hit is not None:
                return hit
            if self.mode == MODE_OFFLINE:
                text = offline_description(label)
            else:
                text = self._fetch_remote(label)
            self.cache[label] = text
            return text

    def resolve_all(self, labels) -> dict:
        return {label: self.get(label) for label in labels}

    def _fetch_remote(self, label: str) -> str:
        import requests

        ep = self.endpoint
        request_text = render_description_request(self.templates, label)
        body = {
            "model": ep.model,
            "messages": [{"role": "user", "content": request_text}],
            "temperature": ep.temperature,
        }
        headers = {"Content-Type": "application/json"}
        if ep.auth_env:
            token = os.environ.get(ep.auth_env)
            if not token:
                raise RemoteError(f"auth env var {ep.auth_env} is not set")
            headers["Authorization"] = f"Bearer {token}"
        self.remote_requests += 1
        try:
            resp = requests.post(ep.url, json=body, headers=headers, timeout=ep.timeout)
        except requests.RequestException as exc:
            raise RemoteError(f"description request for {label!r} failed: {exc}") from exc
        if resp.status_code != 200:
            raise RemoteError(
                f"description request for {label!r} returned HTTP {resp.status_code}: "
                f"{resp.text[:200]}"
            )
        try:
            reply = _extract_reply(resp.json(), ep.reply_path)
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise RemoteError(
                f"description reply for {label!r} lacks field path {ep.reply_path!r}: {exc}"
            ) from exc
        if not isinstance(reply, str) or not reply.strip():
            raise RemoteError(f"description reply for {label!r} is empty")
        return reply


def load_description_cache(path) -> dict:
    """Read a JSONL description cache: {"label": ..., "description": ...} per line."""
    cache: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                label, text = rec["label"], rec["description"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise FormatError(f"{path}:{lineno}: bad cache record: {exc}") from exc
            cache[str(label)] = str(text)
    return cache


def save_description_cache(path, cache: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for label in sorted(cache):
            fh.write(json.dumps({"label": label, "description": cache[label]}) + "\n")
