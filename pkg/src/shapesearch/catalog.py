"""Dataset manifest and catalog: the single source of truth for object identity.

A manifest is a line-delimited JSON file, one record per line. An optional
first line without an ``object_id`` key carries manifest metadata
(``dataset_name``, ``source_note``). The catalog wraps a manifest together
with generated descriptions and a train/validation split; it is immutable,
and every mutation helper returns a new catalog version.
"""

from __future__ import annotations

import io
import json
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, TYPE_CHECKING, Iterable, Mapping

from .errors import (
    DuplicateObjectIdError,
    EmptyManifestError,
    ManifestError,
    SplitFractionError,
)
from .storage import atomic_write_text

if TYPE_CHECKING:
    from .labeler import Description

TRAIN = "train"
VALIDATION = "validation"
HOLDOUT = "holdout"
SPLITS = (TRAIN, VALIDATION, HOLDOUT)


@dataclass(frozen=True)
class ObjectRecord:
    """One 3D object: identity, rendered-view asset, model asset, category."""

    object_id: str
    image_ref: str
    model_ref: str = ""
    category: str = ""
    display_name: str | None = None

    def __post_init__(self):
        if not self.object_id:
            raise ManifestError("object_id must be non-empty")
        if not self.image_ref:
            raise ManifestError(f"record {self.object_id!r}: image_ref must be non-empty")

    def to_dict(self) -> dict:
        d = {
            "object_id": self.object_id,
            "image_ref": self.image_ref,
            "model_ref": self.model_ref,
            "category": self.category,
        }
        if self.display_name is not None:
            d["display_name"] = self.display_name
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ObjectRecord":
        return cls(
            object_id=str(d.get("object_id", "")),
            image_ref=str(d.get("image_ref", "")),
            model_ref=str(d.get("model_ref", "")),
            category=str(d.get("category", "")),
            display_name=d.get("display_name"),
        )


@dataclass(frozen=True)
class CaptureManifest:
    """Validated list of capture records for one dataset."""

    records: tuple[ObjectRecord, ...]
    dataset_name: str = "unnamed"
    source_note: str = ""

    def __post_init__(self):
        if not self.records:
            raise EmptyManifestError("manifest contains no records")
        seen: set[str] = set()
        dups: list[str] = []
        for rec in self.records:
            if rec.object_id in seen and rec.object_id not in dups:
                dups.append(rec.object_id)
            seen.add(rec.object_id)
        if dups:
            raise DuplicateObjectIdError(dups)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def object_ids(self) -> list[str]:
        return [r.object_id for r in self.records]

    def get(self, object_id: str) -> ObjectRecord | None:
        return self._by_id().get(object_id)

    def _by_id(self) -> dict[str, ObjectRecord]:
        return {r.object_id: r for r in self.records}


@dataclass(frozen=True)
class DatasetCatalog:
    """Manifest plus attachments: descriptions and split assignment.

    Read-only by convention; ``with_*`` helpers return new versions so the
    catalog can be shared across concurrent searchers.
    """

    manifest: CaptureManifest
    descriptions: Mapping[str, tuple["Description", ...]] = field(default_factory=dict)
    split_assignment: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        known = set(self.manifest.object_ids)
        for key in self.descriptions:
            if key not in known:
                raise ManifestError(f"description attached to unknown object {key!r}")
        for key, split in self.split_assignment.items():
            if key not in known:
                raise ManifestError(f"split assigned to unknown object {key!r}")
            if split not in SPLITS:
                raise ManifestError(f"unknown split {split!r} for object {key!r}")

    def descriptions_for(self, object_id: str, kind: str | None = None) -> list["Description"]:
        out = list(self.descriptions.get(object_id, ()))
        if kind is not None:
            out = [d for d in out if d.kind == kind]
        return out

    def ids_in_split(self, split: str) -> list[str]:
        if split == "complete":
            return list(self.manifest.object_ids)
        return [i for i in self.manifest.object_ids if self.split_assignment.get(i) == split]

    def with_description(self, desc: "Description") -> "DatasetCatalog":
        if desc.object_id not in set(self.manifest.object_ids):
            raise ManifestError(f"description for unknown object {desc.object_id!r}")
        merged = dict(self.descriptions)
        merged[desc.object_id] = tuple(merged.get(desc.object_id, ())) + (desc,)
        return replace(self, descriptions=merged)

    def with_split_assignment(self, assignment: Mapping[str, str]) -> "DatasetCatalog":
        return replace(self, split_assignment=dict(assignment))

    def to_dict(self) -> dict:
        return {
            "dataset_name": self.manifest.dataset_name,
            "source_note": self.manifest.source_note,
            "records": [r.to_dict() for r in self.manifest.records],
            "descriptions": {
                oid: [d.to_dict() for d in descs]
                for oid, descs in sorted(self.descriptions.items())
            },
            "split_assignment": dict(sorted(self.split_assignment.items())),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DatasetCatalog":
        from .labeler import Description  # deferred: labeler imports this module

        manifest = CaptureManifest(
            records=tuple(ObjectRecord.from_dict(r) for r in d.get("records", [])),
            dataset_name=d.get("dataset_name", "unnamed"),
            source_note=d.get("source_note", ""),
        )
        descriptions = {
            oid: tuple(Description.from_dict(x) for x in descs)
            for oid, descs in d.get("descriptions", {}).items()
        }
        return cls(
            manifest=manifest,
            descriptions=descriptions,
            split_assignment=dict(d.get("split_assignment", {})),
        )


def _iter_lines(source: str | Path | IO[str]) -> Iterable[str]:
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            yield from fh
    else:
        yield from source


def ingest_manifest(source: str | Path | IO[str]) -> CaptureManifest:
    """Parse and validate a line-delimited manifest document.

    Reports all duplicate ids at once rather than stopping at the first.
    """
    dataset_name = "unnamed"
    source_note = ""
    if isinstance(source, (str, Path)):
        dataset_name = Path(source).stem or dataset_name
    records: list[ObjectRecord] = []
    for lineno, line in enumerate(_iter_lines(source), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"line {lineno}: invalid record: {exc}") from exc
        if not isinstance(obj, dict):
            raise ManifestError(f"line {lineno}: expected an object, got {type(obj).__name__}")
        if "object_id" not in obj:
            if lineno == 1:
                dataset_name = str(obj.get("dataset_name", dataset_name))
                source_note = str(obj.get("source_note", source_note))
                continue
            raise ManifestError(f"line {lineno}: record missing object_id")
        try:
            records.append(ObjectRecord.from_dict(obj))
        except ManifestError as exc:
            raise ManifestError(f"line {lineno}: {exc}") from exc
    return CaptureManifest(
        records=tuple(records), dataset_name=dataset_name, source_note=source_note
    )


def serialize_manifest(manifest: CaptureManifest) -> str:
    buf = io.StringIO()
    header = {"dataset_name": manifest.dataset_name, "source_note": manifest.source_note}
    buf.write(json.dumps(header, sort_keys=True) + "\n")
    for rec in manifest.records:
        buf.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
    return buf.getvalue()


def write_manifest(manifest: CaptureManifest, path: str | Path) -> None:
    atomic_write_text(path, serialize_manifest(manifest))


def assign_splits(
    catalog: DatasetCatalog, train_fraction: float, seed: int
) -> DatasetCatalog:
    """Deterministically split the catalog into train and validation ids.

    Ids are sorted lexicographically before the seeded shuffle so the result
    does not depend on manifest row order. ``train_fraction=1.0`` puts every
    object in the train split (the closed-pool regime).
    """
    if not (0.0 < train_fraction <= 1.0):
        raise SplitFractionError(
            f"train_fraction must be in (0, 1], got {train_fraction}"
        )
    ids = sorted(catalog.manifest.object_ids)
    rng = random.Random(seed)
    rng.shuffle(ids)
    n_train = int(round(train_fraction * len(ids)))
    assignment = {oid: TRAIN for oid in ids[:n_train]}
    assignment.update({oid: VALIDATION for oid in ids[n_train:]})
    return catalog.with_split_assignment(assignment)


def save_catalog(catalog: DatasetCatalog, path: str | Path) -> None:
    atomic_write_text(path, json.dumps(catalog.to_dict(), indent=2, sort_keys=True))


def load_catalog(path: str | Path) -> DatasetCatalog:
    with open(path, "r", encoding="utf-8") as fh:
        return DatasetCatalog.from_dict(json.load(fh))
