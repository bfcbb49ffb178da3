"""Exact top-k cosine retrieval over projected embeddings.

The index stores base and shared-space vectors for every object. Scoring is
a full scan: float32 elementwise products reduced in float64, which is
deterministic and plenty fast at the dataset sizes this engine targets (a
6,778-entry scan answers well under the service's latency budget). Fused
scores blend image-space and text-space similarity under the visual-focus
weight alpha: ``alpha * image_score + (1 - alpha) * text_score``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .catalog import DatasetCatalog
from .encoders import EncoderBackendConfig, encode_text
from .errors import (
    EmptyIndexError,
    HeadsVersionMismatchError,
    IndexBuildError,
    MissingEmbeddingsError,
    NotLabeledError,
    StorageFormatError,
    UnknownObjectError,
)
from .projection import ProjectionHeads, SHARED_DIM
from .storage import read_binary, take_matrix, write_binary
from .training import EmbeddingBases

_DEGENERATE_NORM = 1e-12


@dataclass(frozen=True)
class EmbeddingPair:
    object_id: str
    base_image: np.ndarray
    base_text: np.ndarray
    shared_image: np.ndarray
    shared_text: np.ndarray
    heads_version: str


@dataclass(frozen=True)
class SearchQuery:
    """A text query at the API boundary: k capped at 10, alpha in [0, 1]."""

    text: str
    k: int = 8
    visual_focus: float = 0.5

    def __post_init__(self):
        if not isinstance(self.k, int) or not (1 <= self.k <= 10):
            raise ValueError(f"k must be an integer in [1, 10], got {self.k!r}")
        if not (0.0 <= self.visual_focus <= 1.0):
            raise ValueError(f"visual_focus must be in [0, 1], got {self.visual_focus!r}")


@dataclass(frozen=True)
class RankedResult:
    object_id: str
    score: float
    rank: int  # 1-based
    image_score: float
    text_score: float


class SearchIndex:
    """Immutable store of embedding pairs; safe for concurrent readers."""

    def __init__(self, ids: list[str], base_images: np.ndarray, base_texts: np.ndarray,
                 shared_images: np.ndarray, shared_texts: np.ndarray, heads_version: str):
        self.ids = list(ids)
        self.base_images = np.asarray(base_images, dtype=np.float32)
        self.base_texts = np.asarray(base_texts, dtype=np.float32)
        self.shared_images = np.asarray(shared_images, dtype=np.float32)
        self.shared_texts = np.asarray(shared_texts, dtype=np.float32)
        self.heads_version = heads_version
        self._pos = {oid: i for i, oid in enumerate(self.ids)}
        if len(self._pos) != len(self.ids):
            raise IndexBuildError("duplicate object ids in index")
        for arr in (self.base_images, self.base_texts, self.shared_images, self.shared_texts):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, object_id: str) -> bool:
        return object_id in self._pos

    def position(self, object_id: str) -> int:
        try:
            return self._pos[object_id]
        except KeyError:
            raise UnknownObjectError(object_id) from None

    def pair(self, object_id: str) -> EmbeddingPair:
        i = self.position(object_id)
        return EmbeddingPair(
            object_id=object_id,
            base_image=self.base_images[i],
            base_text=self.base_texts[i],
            shared_image=self.shared_images[i],
            shared_text=self.shared_texts[i],
            heads_version=self.heads_version,
        )


def _project_f32(matrix: np.ndarray, weights: np.ndarray, ids: list[str],
                 what: str) -> np.ndarray:
    """Project and unit-normalize in float32, the index's storage precision."""
    projected = matrix.astype(np.float32) @ weights.astype(np.float32)
    norms = np.linalg.norm(projected, axis=1)
    bad = np.nonzero(norms < _DEGENERATE_NORM)[0]
    if bad.size:
        names = ", ".join(ids[i] for i in bad.tolist()[:5])
        raise IndexBuildError(f"degenerate {what} projection for: {names}")
    return projected / norms[:, None]


def build_index(catalog: DatasetCatalog, bases: EmbeddingBases,
                heads: ProjectionHeads) -> SearchIndex:
    """Project every object's base vectors and freeze them into an index."""
    ids = list(catalog.manifest.object_ids)
    missing = bases.missing_for(ids)
    if missing:
        raise MissingEmbeddingsError(missing)
    base_images = np.stack([np.asarray(bases.images[i], dtype=np.float32) for i in ids])
    base_texts = np.stack([np.asarray(bases.texts[i], dtype=np.float32) for i in ids])
    shared_images = _project_f32(base_images, heads.w_img, ids, "image")
    shared_texts = _project_f32(base_texts, heads.w_txt, ids, "text")
    return SearchIndex(ids, base_images, base_texts, shared_images, shared_texts,
                       heads_version=heads.version)


def _scores(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    # float32 products, float64 reduction: deterministic and cheap
    return np.sum(matrix * query, axis=1, dtype=np.float64)


def rank_all(index: SearchIndex, query_vec: np.ndarray, visual_focus: float):
    """Scores and the full deterministic ordering for a shared-space query.

    Returns (order, fused, image_scores, text_scores); ties break by
    ascending object id so results are reproducible across runs.
    """
    q = np.asarray(query_vec, dtype=np.float32)
    image_scores = _scores(index.shared_images, q)
    text_scores = _scores(index.shared_texts, q)
    fused = visual_focus * image_scores + (1.0 - visual_focus) * text_scores
    order = sorted(range(len(index)), key=lambda i: (-fused[i], index.ids[i]))
    return order, fused, image_scores, text_scores


def project_query_text(text: str, heads: ProjectionHeads,
                       backend: EncoderBackendConfig) -> np.ndarray:
    """Encode query text and project it into the shared space (float32 path)."""
    base = encode_text(text, backend).vector.astype(np.float32)
    projected = base @ heads.w_txt.astype(np.float32)
    norm = float(np.linalg.norm(projected))
    if norm < _DEGENERATE_NORM:
        raise IndexBuildError("query text projected to the zero vector")
    return (projected / norm).astype(np.float32)


def _results_from_order(index: SearchIndex, order: list[int], fused: np.ndarray,
                        image_scores: np.ndarray, text_scores: np.ndarray,
                        k: int, skip: set[int] | None = None) -> list[RankedResult]:
    results: list[RankedResult] = []
    for i in order:
        if skip and i in skip:
            continue
        results.append(RankedResult(
            object_id=index.ids[i],
            score=float(fused[i]),
            rank=len(results) + 1,
            image_score=float(image_scores[i]),
            text_score=float(text_scores[i]),
        ))
        if len(results) == k:
            break
    return results


def search_text(index: SearchIndex, query: SearchQuery, heads: ProjectionHeads,
                backend: EncoderBackendConfig, k: int | None = None) -> list[RankedResult]:
    """Exact fused-score retrieval for a text query.

    ``k`` overrides the query's (UI-capped) result count for library callers
    that need deeper rankings; it may be as large as the index.
    """
    if len(index) == 0:
        raise EmptyIndexError("search over an empty index")
    if heads.version != index.heads_version:
        raise HeadsVersionMismatchError(index.heads_version, heads.version)
    effective_k = query.k if k is None else k
    if not (1 <= effective_k <= len(index)):
        raise ValueError(f"k must be in [1, {len(index)}], got {effective_k}")
    q = project_query_text(query.text, heads, backend)
    order, fused, image_scores, text_scores = rank_all(index, q, query.visual_focus)
    return _results_from_order(index, order, fused, image_scores, text_scores, effective_k)


def search_similar(index: SearchIndex, object_id: str, k: int) -> list[RankedResult]:
    """Image-space nearest neighbours of an indexed object, excluding itself."""
    if len(index) == 0:
        raise EmptyIndexError("search over an empty index")
    pos = index.position(object_id)
    if not (1 <= k <= len(index) - 1):
        raise ValueError(f"k must be in [1, {len(index) - 1}], got {k}")
    q = index.shared_images[pos]
    image_scores = _scores(index.shared_images, q)
    text_scores = _scores(index.shared_texts, q)
    fused = image_scores  # similar-item search ranks purely in image space
    order = sorted(range(len(index)), key=lambda i: (-fused[i], index.ids[i]))
    return _results_from_order(index, order, fused, image_scores, text_scores, k,
                               skip={pos})


def describe(catalog: DatasetCatalog, object_id: str, kind: str | None = None):
    """Stored descriptions for an object, with prompt-kind provenance."""
    if catalog.manifest.get(object_id) is None:
        raise UnknownObjectError(object_id)
    descs = catalog.descriptions_for(object_id, kind=kind)
    if not descs:
        raise NotLabeledError(object_id)
    return descs


# --- persistence -------------------------------------------------------------

_ARRAYS = ("base_image", "base_text", "shared_image", "shared_text")


def save_index(index: SearchIndex, path: str | Path) -> None:
    header = {
        "kind": "index",
        "count": len(index),
        "ids": index.ids,
        "heads_version": index.heads_version,
        "arrays": list(_ARRAYS),
        "dims": {
            "base_image": int(index.base_images.shape[1]),
            "base_text": int(index.base_texts.shape[1]),
            "shared_image": SHARED_DIM,
            "shared_text": SHARED_DIM,
        },
    }
    write_binary(path, header, [index.base_images, index.base_texts,
                                index.shared_images, index.shared_texts])


def load_index(path: str | Path) -> SearchIndex:
    header, payload = read_binary(path)
    if header.get("kind") != "index":
        raise StorageFormatError(f"{path}: not a search index file")
    count = int(header["count"])
    dims = header["dims"]
    offset = 0
    mats = {}
    for name in header.get("arrays", _ARRAYS):
        mats[name], offset = take_matrix(payload, offset, count, int(dims[name]))
    return SearchIndex(
        ids=list(header["ids"]),
        base_images=mats["base_image"],
        base_texts=mats["base_text"],
        shared_images=mats["shared_image"],
        shared_texts=mats["shared_text"],
        heads_version=header.get("heads_version", ""),
    )
