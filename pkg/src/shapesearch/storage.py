"""On-disk binary formats for embeddings, projection heads, and search indexes.

Every file starts with a magic line, then a single JSON header line, then the
raw payload: little-endian 32-bit floats packed in the order the header's
``arrays`` list declares. Writes go to a temp file in the same directory and
are renamed into place, so readers never observe partial artifacts.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import StorageFormatError

MAGIC = b"SHAPESEARCH-BIN-1\n"


def config_digest(payload: dict) -> str:
    """Stable short digest of a config-like mapping (sorted-key JSON, sha256)."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


def array_digest(*arrays: np.ndarray) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return h.hexdigest()[:12]


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_binary(path: str | Path, header: dict, arrays: Iterable[np.ndarray]) -> None:
    """Write ``header`` (JSON line) followed by the arrays as float32 LE blocks."""
    header = dict(header)
    header["byte_order"] = "little"
    blocks = [np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays]
    payload = MAGIC + json.dumps(header, sort_keys=True).encode("utf-8") + b"\n"
    atomic_write_bytes(path, payload + b"".join(blocks))


def read_binary(path: str | Path) -> tuple[dict, bytes]:
    """Read the header and the raw payload bytes; slicing is the caller's job."""
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise StorageFormatError(f"{path}: not a shapesearch binary file")
    rest = raw[len(MAGIC):]
    nl = rest.find(b"\n")
    if nl < 0:
        raise StorageFormatError(f"{path}: missing header line")
    try:
        header = json.loads(rest[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise StorageFormatError(f"{path}: bad header: {exc}") from exc
    if header.get("byte_order") != "little":
        raise StorageFormatError(f"{path}: unsupported byte order")
    return header, rest[nl + 1:]


def take_matrix(payload: bytes, offset: int, count: int, dim: int) -> tuple[np.ndarray, int]:
    """Slice one (count, dim) float32 block out of the payload."""
    nbytes = count * dim * 4
    chunk = payload[offset:offset + nbytes]
    if len(chunk) != nbytes:
        raise StorageFormatError(
            f"truncated payload: wanted {nbytes} bytes at offset {offset}, got {len(chunk)}"
        )
    mat = np.frombuffer(chunk, dtype="<f4").reshape(count, dim)
    return mat, offset + nbytes
