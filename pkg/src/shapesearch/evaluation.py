"""Closed-pool retrieval evaluation: MRR, top-1/top-10 accuracy, heatmaps.

The protocol queries every object's own stored description and checks where
the object itself lands in the ranking over the whole pool (self-retrieval).
Scoring defaults to the cross-modal direction, text query against stored
image vectors, which is the objective the projection heads were trained on;
the visual-focus weight is configurable for other mixes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .catalog import DatasetCatalog
from .encoders import EncoderBackendConfig
from .errors import (
    EmptySplitError,
    EvaluationError,
    UnlabeledObjectsError,
)
from .index import SearchIndex, project_query_text, rank_all
from .projection import ProjectionHeads
from .storage import atomic_write_bytes, atomic_write_text

TOP_K = 10


@dataclass(frozen=True)
class MetricsReport:
    split: str  # train | test | complete
    n: int
    mrr: float
    top1_accuracy: float   # percent
    top10_accuracy: float  # percent
    model_tag: str = ""

    def __post_init__(self):
        if not (0.0 <= self.mrr <= 1.0):
            raise EvaluationError(f"mrr out of range: {self.mrr}")
        if self.top1_accuracy > self.top10_accuracy + 1e-9:
            raise EvaluationError("top-1 accuracy cannot exceed top-10 accuracy")

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "n": self.n,
            "mrr": self.mrr,
            "top1_accuracy": self.top1_accuracy,
            "top10_accuracy": self.top10_accuracy,
            "model_tag": self.model_tag,
        }


@dataclass(frozen=True)
class SimilarityMatrix:
    row_ids: tuple[str, ...]  # texts
    col_ids: tuple[str, ...]  # images
    values: np.ndarray

    def diagonal_margin(self) -> float:
        """Mean diagonal similarity minus mean off-diagonal similarity."""
        v = self.values
        n = min(v.shape)
        if v.shape[0] != v.shape[1]:
            raise EvaluationError("diagonal margin needs a square matrix")
        if n == 1:
            return 0.0
        diag = float(np.trace(v) / n)
        off = float((v.sum() - np.trace(v)) / (n * n - n))
        return diag - off


def reciprocal_rank(results, true_id: str) -> float:
    """1/rank of the true id in a ranked list, 0.0 when absent."""
    if not results:
        raise EvaluationError("reciprocal_rank needs a non-empty result list")
    for position, item in enumerate(results, start=1):
        candidate = getattr(item, "object_id", item)
        if candidate == true_id:
            return 1.0 / position
    return 0.0


def metrics_from_ranks(ranks: list[int]) -> tuple[float, float, float]:
    """Aggregate (mrr, top1 %, top10 %) from 1-based ranks; 0 means absent."""
    if not ranks:
        raise EmptySplitError("no ranks to aggregate")
    rr = [0.0 if r == 0 else 1.0 / r for r in ranks]
    n = len(ranks)
    top1 = sum(1 for r in ranks if r == 1)
    top10 = sum(1 for r in ranks if 0 < r <= TOP_K)
    return sum(rr) / n, 100.0 * top1 / n, 100.0 * top10 / n


_SPLIT_TO_CATALOG = {"train": "train", "test": "validation", "complete": "complete"}


def evaluate(
    index: SearchIndex,
    catalog: DatasetCatalog,
    split: str,
    heads: ProjectionHeads,
    backend: EncoderBackendConfig,
    visual_focus: float = 1.0,
    description_kind: str = "template",
    model_tag: str = "",
) -> MetricsReport:
    """Self-retrieval metrics for one split, ranked over the whole index.

    ``split`` is one of train/test/complete; "test" selects the catalog's
    validation-assigned objects, matching the usual report naming.
    """
    if split not in _SPLIT_TO_CATALOG:
        raise EvaluationError(f"unknown split {split!r}")
    ids = catalog.ids_in_split(_SPLIT_TO_CATALOG[split])
    if not ids:
        raise EmptySplitError(f"split {split!r} selects no objects")
    unlabeled = [i for i in ids if not catalog.descriptions_for(i, kind=description_kind)]
    if unlabeled:
        raise UnlabeledObjectsError(unlabeled)

    ranks: list[int] = []
    for oid in ids:
        desc = catalog.descriptions_for(oid, kind=description_kind)[0]
        q = project_query_text(desc.text, heads, backend)
        order, _, _, _ = rank_all(index, q, visual_focus)
        ranks.append(order.index(index.position(oid)) + 1)

    mrr, top1, top10 = metrics_from_ranks(ranks)
    return MetricsReport(
        split=split,
        n=len(ids),
        mrr=mrr,
        top1_accuracy=top1,
        top10_accuracy=top10,
        model_tag=model_tag,
    )


def similarity_matrix(index: SearchIndex, subset_ids: list[str]) -> SimilarityMatrix:
    """cos(shared_text_i, shared_image_j) over a subset, rows/cols sorted by id."""
    ordered = sorted(subset_ids)
    positions = [index.position(i) for i in ordered]  # raises on unknown ids
    texts = index.shared_texts[positions].astype(np.float64)
    images = index.shared_images[positions].astype(np.float64)
    return SimilarityMatrix(
        row_ids=tuple(ordered),
        col_ids=tuple(ordered),
        values=texts @ images.T,
    )


def export_heatmap(matrix: SimilarityMatrix, path: str | Path) -> tuple[Path, Path]:
    """Write a grayscale PGM image plus a JSON value dump.

    Similarities are affine-mapped from [-1, 1] to pixel values [0, 255].
    Returns (image_path, dump_path).
    """
    path = Path(path)
    values = np.asarray(matrix.values, dtype=np.float64)
    pixels = np.clip(np.rint((values + 1.0) * 127.5), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    atomic_write_bytes(path, f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())
    dump_path = path.with_suffix(path.suffix + ".json")
    atomic_write_text(dump_path, json.dumps({
        "row_ids": list(matrix.row_ids),
        "col_ids": list(matrix.col_ids),
        "values": values.tolist(),
    }))
    return path, dump_path


def load_heatmap_dump(path: str | Path) -> SimilarityMatrix:
    with open(path, "r", encoding="utf-8") as fh:
        d = json.load(fh)
    return SimilarityMatrix(
        row_ids=tuple(d["row_ids"]),
        col_ids=tuple(d["col_ids"]),
        values=np.asarray(d["values"], dtype=np.float64),
    )


def read_pgm(path: str | Path) -> np.ndarray:
    """Minimal P5 reader, enough to verify exported heatmaps."""
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise EvaluationError(f"{path}: not a binary PGM file")
    parts = raw.split(b"\n", 3)
    w, h = (int(x) for x in parts[1].split())
    maxval = int(parts[2])
    if maxval != 255:
        raise EvaluationError(f"{path}: unsupported max value {maxval}")
    return np.frombuffer(parts[3][: w * h], dtype=np.uint8).reshape(h, w)


def render_report_table(reports: list[MetricsReport]) -> str:
    """Aligned console table with the familiar benchmark column names."""
    headers = ["Split", "Size", "MRR (0-1)", "Top-1 Acc (%)", "Top-10 Acc (%)", "Model"]
    rows = [
        [r.split, str(r.n), f"{r.mrr:.4f}", f"{r.top1_accuracy:.2f}",
         f"{r.top10_accuracy:.2f}", r.model_tag or "-"]
        for r in reports
    ]
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(headers)]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
        "  ".join("-" * widths[i] for i in range(len(headers))),
    ]
    for row in rows:
        lines.append("  ".join(row[i].ljust(widths[i]) for i in range(len(headers))))
    return "\n".join(lines)
