"""Base (frozen) text and image embeddings behind pluggable backends.

The engine never runs a neural network itself: embeddings come from a remote
inference endpoint, from a precomputed embedding file, or from a deterministic
mock used by tests and demo pipelines. Text tower output is 512-d, image
tower output is 768-d; projection into the shared space happens downstream.
"""

from __future__ import annotations

import hashlib
import os
import time
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmbeddingNotFoundError,
    EncoderBackendUnavailable,
    EncoderError,
    NonFiniteVectorError,
)
from .storage import read_binary, take_matrix, write_binary

TEXT_DIM = 512
IMAGE_DIM = 768

AUTH_TOKEN_ENV = "SHAPESEARCH_ENCODER_TOKEN"
_RETRY_BASE_SECONDS = 0.2


@dataclass(frozen=True)
class BaseTextEmbedding:
    object_or_query_id: str
    vector: np.ndarray  # (512,) float32

    def __post_init__(self):
        _check_vector(self.vector, TEXT_DIM, self.object_or_query_id)


@dataclass(frozen=True)
class BaseImageEmbedding:
    object_id: str
    vector: np.ndarray  # (768,) float32

    def __post_init__(self):
        _check_vector(self.vector, IMAGE_DIM, self.object_id)


def _check_vector(vec: np.ndarray, dim: int, context: str) -> None:
    if vec.ndim != 1 or vec.shape[0] != dim:
        raise DimensionMismatchError(dim, int(vec.size), context)
    if not np.isfinite(vec).all():
        raise NonFiniteVectorError(f"{context}: embedding contains NaN or Inf")


@dataclass(frozen=True)
class EncoderBackendConfig:
    """Which backend serves embeddings and how to reach it."""

    kind: str = "mock"  # mock | precomputed | remote
    endpoint_url: str | None = None
    embedding_file: str | None = None
    timeout: float = 10.0
    max_retries: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("mock", "precomputed", "remote"):
            raise EncoderError(f"unknown backend kind {self.kind!r}")
        if self.timeout <= 0:
            raise EncoderError("timeout must be positive")
        if self.kind == "remote" and not self.endpoint_url:
            raise EncoderError("remote backend requires endpoint_url")
        if self.kind == "precomputed" and not self.embedding_file:
            raise EncoderError("precomputed backend requires embedding_file")

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderBackendConfig":
        return cls(
            kind=d.get("kind", "mock"),
            endpoint_url=d.get("endpoint_url"),
            embedding_file=d.get("embedding_file"),
            timeout=float(d.get("timeout", 10.0)),
            max_retries=int(d.get("max_retries", 3)),
            seed=int(d.get("seed", 0)),
        )


# --- deterministic mock ----------------------------------------------------

def _hash_normals(key: bytes, n: int) -> np.ndarray:
    """Pseudo-normal draws from a SHA-256 counter stream.

    Each value is a sum of 12 uniform draws minus 6 (Irwin-Hall), which keeps
    the whole pipeline in exact IEEE arithmetic: no libm transcendentals, so
    outputs are bit-stable across platforms.
    """
    n_words = n * 12
    blocks = []
    for i in range((n_words * 4 + 31) // 32):
        blocks.append(hashlib.sha256(key + i.to_bytes(8, "little")).digest())
    words = np.frombuffer(b"".join(blocks)[: n_words * 4], dtype="<u4")
    uniforms = words.astype(np.float64) / 4294967296.0
    return uniforms.reshape(n, 12).sum(axis=1) - 6.0


def mock_vector(namespace: str, payload: str, dim: int, seed: int = 0) -> np.ndarray:
    """Unit-norm float32 vector that is a pure function of its inputs."""
    key = hashlib.sha256(
        b"shapesearch-mock\x00" + namespace.encode() + b"\x00"
        + seed.to_bytes(8, "little", signed=True) + b"\x00" + payload.encode("utf-8")
    ).digest()
    raw = _hash_normals(key, dim)
    norm = float(np.linalg.norm(raw))
    if norm == 0.0:  # astronomically unlikely, but keep the contract total
        raw[0] = 1.0
        norm = 1.0
    return (raw / norm).astype(np.float32)


# --- precomputed store -----------------------------------------------------

def write_embedding_file(path: str | Path, ids: list[str], matrix: np.ndarray,
                         meta: dict | None = None) -> None:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] != len(ids):
        raise EncoderError("matrix must be (len(ids), dim)")
    header = {
        "kind": "embeddings",
        "count": len(ids),
        "dimension": int(matrix.shape[1]),
        "ids": list(ids),
    }
    if meta:
        header["meta"] = meta
    write_binary(path, header, [matrix])


def read_embedding_file(path: str | Path) -> tuple[list[str], np.ndarray, dict]:
    header, payload = read_binary(path)
    count, dim = int(header["count"]), int(header["dimension"])
    matrix, _ = take_matrix(payload, 0, count, dim)
    matrix = matrix.copy()
    matrix.setflags(write=False)
    return list(header["ids"]), matrix, header.get("meta", {})


class EmbeddingStore:
    """Read-only id -> vector table loaded from an embedding file.

    Lookups return views of the loaded buffer, so vectors are byte-identical
    to what was stored; nothing is ever fabricated.
    """

    def __init__(self, ids: list[str], matrix: np.ndarray):
        self._pos = {key: i for i, key in enumerate(ids)}
        self._matrix = matrix
        self.ids = list(ids)

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingStore":
        ids, matrix, _ = read_embedding_file(path)
        return cls(ids, matrix)

    @property
    def dimension(self) -> int:
        return int(self._matrix.shape[1])

    def __contains__(self, key: str) -> bool:
        return key in self._pos

    def __len__(self) -> int:
        return len(self._pos)

    def get(self, key: str) -> np.ndarray:
        try:
            return self._matrix[self._pos[key]]
        except KeyError:
            raise EmbeddingNotFoundError(key) from None

    def as_arrays(self) -> tuple[list[str], np.ndarray]:
        return list(self.ids), self._matrix


@lru_cache(maxsize=8)
def _store_for(path: str, mtime_ns: int) -> EmbeddingStore:
    return EmbeddingStore.load(path)


def _load_store(config: EncoderBackendConfig) -> EmbeddingStore:
    path = config.embedding_file
    assert path is not None
    return _store_for(str(path), os.stat(path).st_mtime_ns)


# --- remote protocol -------------------------------------------------------

def _remote_vector(config: EncoderBackendConfig, payload: str, dim: int,
                   sleep: Callable[[float], None] = time.sleep) -> np.ndarray:
    import requests

    headers = {}
    token = os.environ.get(AUTH_TOKEN_ENV)
    if token:
        headers["Authorization"] = f"Bearer {token}"
    last_error: Exception | None = None
    for attempt in range(config.max_retries + 1):
        if attempt:
            sleep(_RETRY_BASE_SECONDS * (2 ** (attempt - 1)))
        try:
            resp = requests.post(
                config.endpoint_url,
                json={"inputs": payload},
                timeout=config.timeout,
                headers=headers,
            )
        except Exception as exc:  # connection errors, timeouts
            last_error = exc
            continue
        if resp.status_code >= 500:  # transient server trouble: retry
            last_error = EncoderError(f"endpoint returned {resp.status_code}")
            continue
        if resp.status_code >= 400:  # our request is wrong: retrying won't help
            raise EncoderError(f"endpoint rejected the request: {resp.status_code}")
        try:
            body = resp.json()
        except Exception as exc:
            last_error = exc
            continue
        if not isinstance(body, list):
            raise EncoderError(f"expected a JSON array of floats, got {type(body).__name__}")
        vec = np.asarray(body, dtype=np.float32)
        if vec.ndim != 1 or vec.shape[0] != dim:
            raise DimensionMismatchError(dim, int(vec.size), "remote response")
        return vec
    raise EncoderBackendUnavailable(
        f"{config.endpoint_url}: gave up after {config.max_retries} retries: {last_error}"
    )


# --- public gateway --------------------------------------------------------

def encode_text(text: str, backend: EncoderBackendConfig,
                sleep: Callable[[float], None] = time.sleep) -> BaseTextEmbedding:
    """Embed a text string into the 512-d base text space."""
    if not text:
        raise EncoderError("cannot encode empty text")
    vec = _encode(text, TEXT_DIM, "text", backend, sleep)
    return BaseTextEmbedding(object_or_query_id=text, vector=vec)


def encode_image(image_ref: str, backend: EncoderBackendConfig,
                 sleep: Callable[[float], None] = time.sleep) -> BaseImageEmbedding:
    """Embed an image (by asset reference) into the 768-d base image space."""
    if not image_ref:
        raise EncoderError("cannot encode empty image_ref")
    vec = _encode(image_ref, IMAGE_DIM, "image", backend, sleep)
    return BaseImageEmbedding(object_id=image_ref, vector=vec)


def _encode(payload: str, dim: int, namespace: str, backend: EncoderBackendConfig,
            sleep: Callable[[float], None]) -> np.ndarray:
    if backend.kind == "mock":
        vec = mock_vector(namespace, payload, dim, seed=backend.seed)
    elif backend.kind == "precomputed":
        store = _load_store(backend)
        if store.dimension != dim:
            raise DimensionMismatchError(dim, store.dimension, backend.embedding_file or "")
        vec = store.get(payload)
    else:
        vec = _remote_vector(backend, payload, dim, sleep=sleep)
    if not np.isfinite(vec).all():
        raise NonFiniteVectorError(f"{namespace} embedding for {payload!r} is not finite")
    return vec
