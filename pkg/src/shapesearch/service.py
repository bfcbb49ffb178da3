"""HTTP search service: JSON endpoints over a loaded index.

Out-of-range parameters are rejected with 400 rather than clamped so client
bugs surface early; every error body carries a machine-readable code plus a
human message. The loaded artifacts live behind a single handle that can be
swapped atomically for hot reloads while searches are in flight; encoder
calls are bounded by a configurable in-flight limit. Requests are logged as
structured JSON lines.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .catalog import DatasetCatalog, load_catalog
from .encoders import EncoderBackendConfig
from .errors import (
    EncoderError,
    PrerequisiteMissingError,
    ShapeSearchError,
    UnknownObjectError,
)
from .index import SearchIndex, SearchQuery, load_index, search_similar, search_text
from .projection import ProjectionHeads
from .training import load_heads

API_VERSION = "1"

request_log = logging.getLogger("shapesearch.requests")


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    index_path: str = "index.bin"
    heads_path: str = "heads.bin"
    catalog_path: str = "catalog.json"
    asset_base_url: str = ""
    description_kind: str = "template"
    max_inflight_encodes: int = 8
    encoder_backend: EncoderBackendConfig = field(default_factory=EncoderBackendConfig)

    @classmethod
    def from_file(cls, path: str | Path) -> "ServiceConfig":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "ServiceConfig":
        cfg = cls(
            host=raw.get("host", "127.0.0.1"),
            port=int(raw.get("port", 8080)),
            index_path=raw.get("index_path", "index.bin"),
            heads_path=raw.get("heads_path", "heads.bin"),
            catalog_path=raw.get("catalog_path", "catalog.json"),
            asset_base_url=raw.get("asset_base_url", ""),
            description_kind=raw.get("description_kind", "template"),
            max_inflight_encodes=int(raw.get("max_inflight_encodes", 8)),
            encoder_backend=EncoderBackendConfig.from_dict(raw.get("encoder_backend", {})),
        )
        return cfg.with_env_overrides()

    def with_env_overrides(self) -> "ServiceConfig":
        env = os.environ
        self.host = env.get("SHAPESEARCH_HOST", self.host)
        self.port = int(env.get("SHAPESEARCH_PORT", self.port))
        self.asset_base_url = env.get("SHAPESEARCH_ASSET_BASE_URL", self.asset_base_url)
        self.index_path = env.get("SHAPESEARCH_INDEX", self.index_path)
        self.heads_path = env.get("SHAPESEARCH_HEADS", self.heads_path)
        self.catalog_path = env.get("SHAPESEARCH_CATALOG", self.catalog_path)
        return self


@dataclass(frozen=True)
class _Artifacts:
    index: SearchIndex
    heads: ProjectionHeads
    catalog: DatasetCatalog


class EngineState:
    """Holds the loaded artifacts behind one atomically swappable handle."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self._handle: _Artifacts | None = None
        self.encode_gate = threading.BoundedSemaphore(max(1, config.max_inflight_encodes))

    @property
    def loaded(self) -> bool:
        return self._handle is not None

    def load(self) -> None:
        for label, p in (("index", self.config.index_path),
                         ("heads", self.config.heads_path),
                         ("catalog", self.config.catalog_path)):
            if not Path(p).exists():
                raise PrerequisiteMissingError(f"{label} artifact not found: {p}")
        self.swap(
            index=load_index(self.config.index_path),
            heads=load_heads(self.config.heads_path),
            catalog=load_catalog(self.config.catalog_path),
        )

    def swap(self, index: SearchIndex, heads: ProjectionHeads,
             catalog: DatasetCatalog) -> None:
        self._handle = _Artifacts(index=index, heads=heads, catalog=catalog)

    def artifacts(self) -> _Artifacts:
        handle = self._handle
        if handle is None:
            raise PrerequisiteMissingError("index not loaded")
        return handle


class SearchRequest(BaseModel):
    query: str = Field(min_length=1)
    k: int = Field(default=8, ge=1, le=10)
    visual_focus: float = Field(default=0.5, ge=0.0, le=1.0)


def _error_body(code: str, message: str) -> dict:
    return {"api_version": API_VERSION, "error": {"code": code, "message": message}}


def _asset_url(base: str, ref: str) -> str:
    if not ref:
        return ""
    if "://" in ref or not base:
        return ref
    return base.rstrip("/") + "/" + ref.lstrip("/")


def create_app(state: EngineState) -> FastAPI:
    app = FastAPI(title="shapesearch", version=API_VERSION)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"],
    )

    @app.middleware("http")
    async def log_requests(request: Request, call_next):
        started = time.perf_counter()
        response = await call_next(request)
        request_log.info(json.dumps({
            "method": request.method,
            "path": request.url.path,
            "status": response.status_code,
            "elapsed_ms": round((time.perf_counter() - started) * 1000.0, 3),
        }))
        return response

    @app.exception_handler(RequestValidationError)
    async def validation_error(_req: Request, exc: RequestValidationError):
        first = exc.errors()[0] if exc.errors() else {}
        loc = ".".join(str(x) for x in first.get("loc", []) if x != "body")
        message = f"{loc}: {first.get('msg', 'invalid request')}" if loc else "invalid request"
        return JSONResponse(status_code=400, content=_error_body("invalid_parameter", message))

    @app.exception_handler(ShapeSearchError)
    async def engine_error(_req: Request, exc: ShapeSearchError):
        if isinstance(exc, UnknownObjectError):
            status = 404
        elif isinstance(exc, EncoderError):
            status = 502
        elif isinstance(exc, PrerequisiteMissingError):
            status = 503
        else:
            status = 500
        return JSONResponse(status_code=status, content=_error_body(exc.code, str(exc)))

    def _result_payload(artifacts: _Artifacts, results) -> list[dict]:
        base = state.config.asset_base_url
        out = []
        for r in results:
            record = artifacts.catalog.manifest.get(r.object_id)
            descs = artifacts.catalog.descriptions_for(
                r.object_id, kind=state.config.description_kind)
            out.append({
                "object_id": r.object_id,
                "score": r.score,
                "rank": r.rank,
                "image_url": _asset_url(base, record.image_ref if record else ""),
                "model_download_url": _asset_url(base, record.model_ref if record else ""),
                "description": descs[0].text if descs else None,
            })
        return out

    @app.get("/health")
    def health():
        if not state.loaded:
            return JSONResponse(status_code=503, content={
                "api_version": API_VERSION, "status": "loading",
                "index_size": 0, "heads_version": None,
            })
        artifacts = state.artifacts()
        return {
            "api_version": API_VERSION,
            "status": "ok",
            "index_size": len(artifacts.index),
            "heads_version": artifacts.index.heads_version,
        }

    @app.post("/api/search")
    def api_search(req: SearchRequest):
        started = time.perf_counter()
        artifacts = state.artifacts()
        query = SearchQuery(text=req.query, k=req.k, visual_focus=req.visual_focus)
        effective_k = min(req.k, len(artifacts.index))  # small pools return fewer
        with state.encode_gate:  # bounds concurrent encoder-backend calls
            results = search_text(artifacts.index, query, artifacts.heads,
                                  state.config.encoder_backend, k=effective_k)
        return {
            "api_version": API_VERSION,
            "results": _result_payload(artifacts, results),
            "elapsed_ms": (time.perf_counter() - started) * 1000.0,
        }

    @app.get("/api/similar/{object_id}")
    def api_similar(object_id: str, k: int = 8):
        started = time.perf_counter()
        artifacts = state.artifacts()
        if not (1 <= k <= 10):
            return JSONResponse(status_code=400, content=_error_body(
                "invalid_parameter", f"k: must be in [1, 10], got {k}"))
        effective_k = min(k, len(artifacts.index) - 1)
        if effective_k < 1:  # a one-object index has no neighbours to offer
            artifacts.index.position(object_id)  # still 404 on unknown ids
            results = []
        else:
            results = search_similar(artifacts.index, object_id, effective_k)
        return {
            "api_version": API_VERSION,
            "results": _result_payload(artifacts, results),
            "elapsed_ms": (time.perf_counter() - started) * 1000.0,
        }

    @app.get("/api/objects/{object_id}")
    def api_object(object_id: str):
        artifacts = state.artifacts()
        record = artifacts.catalog.manifest.get(object_id)
        if record is None:
            raise UnknownObjectError(object_id)
        base = state.config.asset_base_url
        descs = artifacts.catalog.descriptions_for(object_id)
        return {
            "api_version": API_VERSION,
            "record": record.to_dict(),
            "descriptions": [d.to_dict() for d in descs],
            "image_url": _asset_url(base, record.image_ref),
            "model_download_url": _asset_url(base, record.model_ref),
        }

    return app


def build_service(config: ServiceConfig, load: bool = True) -> tuple[FastAPI, EngineState]:
    state = EngineState(config)
    if load:
        state.load()
    return create_app(state), state
