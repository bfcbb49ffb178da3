"""Pipeline CLI: ingest, split, label, encode, train, index, eval, serve.

Each stage reads its prerequisites from disk, writes its artifact atomically,
and refuses to run when inputs are missing (exit 4) or were produced under an
incompatible configuration digest (exit 2). Stages skip work when their
output already exists unless --force is given.

Exit codes: 0 success, 2 validation error, 3 backend failure, 4 missing
prerequisite.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import click
import numpy as np

from . import catalog as cat
from . import evaluation, labeler
from .encoders import EncoderBackendConfig, encode_image, encode_text, write_embedding_file
from .encoders import EmbeddingStore
from .errors import (
    EncoderError,
    LabelError,
    PrerequisiteMissingError,
    ShapeSearchError,
)
from .index import SearchQuery, build_index, load_index, save_index, search_similar, search_text
from .projection import TrainConfig
from .storage import config_digest
from .training import EmbeddingBases, load_heads, save_heads, save_history, train

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_BACKEND = 3
EXIT_PREREQ = 4

DEFAULT_PATHS = {
    "manifest": "manifest.jsonl",
    "catalog": "catalog.json",
    "image_embeddings": "images.emb",
    "text_embeddings": "texts.emb",
    "heads": "heads.bin",
    "history": "history.json",
    "index": "index.bin",
    "heatmap": "heatmap.pgm",
}


@dataclass
class PipelineContext:
    config: dict = field(default_factory=dict)
    seed: int | None = None
    dry_run: bool = False
    force: bool = False

    def path(self, name: str, override: str | None = None) -> Path:
        if override:
            return Path(override)
        return Path(self.config.get("paths", {}).get(name, DEFAULT_PATHS[name]))

    def section(self, name: str) -> dict:
        return dict(self.config.get(name, {}))

    def encoder_backend(self) -> EncoderBackendConfig:
        return EncoderBackendConfig.from_dict(self.section("encoder_backend"))

    def vlm_backend_config(self) -> labeler.VlmBackendConfig:
        return labeler.VlmBackendConfig.from_dict(self.section("vlm_backend"))

    def train_config(self) -> TrainConfig:
        section = self.section("train")
        if self.seed is not None and "seed" not in section:
            section["seed"] = self.seed
        return TrainConfig.from_dict(section)


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _run_stage(fn):
    """Map engine errors onto the documented exit codes."""
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except PrerequisiteMissingError as exc:
            _fail(EXIT_PREREQ, str(exc))
        except (EncoderError, LabelError) as exc:
            _fail(EXIT_BACKEND, str(exc))
        except (ShapeSearchError, ValueError) as exc:
            _fail(EXIT_VALIDATION, str(exc))
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise PrerequisiteMissingError(f"{path} not found; {hint}")
    return path


def _skip_if_fresh(ctx: PipelineContext, output: Path, what: str) -> bool:
    if output.exists() and not ctx.force:
        click.echo(f"{what} already exists at {output} (use --force to rebuild)")
        return True
    return False


def _load_catalog(ctx: PipelineContext, override: str | None = None) -> cat.DatasetCatalog:
    path = _require(ctx.path("catalog", override), "run `ingest` first")
    return cat.load_catalog(path)


def _encoder_digest(backend: EncoderBackendConfig) -> str:
    return config_digest({
        "kind": backend.kind,
        "endpoint_url": backend.endpoint_url,
        "embedding_file": backend.embedding_file,
        "seed": backend.seed,
    })


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="JSON config file with paths, backends, and stage settings.")
@click.option("--seed", type=int, default=None, help="Fallback seed for seeded stages.")
@click.option("--dry-run", is_flag=True, help="Validate inputs, write nothing.")
@click.option("--force", is_flag=True, help="Rebuild outputs that already exist.")
@click.pass_context
def main(ctx, config_path, seed, dry_run, force):
    """Text-driven 3D object retrieval pipeline."""
    config = {}
    if config_path:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                config = json.load(fh)
        except FileNotFoundError:
            _fail(EXIT_PREREQ, f"config file {config_path} not found")
        except json.JSONDecodeError as exc:
            _fail(EXIT_VALIDATION, f"config file {config_path}: {exc}")
    ctx.obj = PipelineContext(config=config, seed=seed, dry_run=dry_run, force=force)


@main.command()
@click.option("--manifest", "manifest_path", type=click.Path(), default=None)
@click.option("--catalog", "catalog_path", type=click.Path(), default=None)
@click.pass_obj
@_run_stage
def ingest(ctx: PipelineContext, manifest_path, catalog_path):
    """Validate a manifest and create the catalog artifact."""
    src = _require(ctx.path("manifest", manifest_path), "provide --manifest")
    out = ctx.path("catalog", catalog_path)
    if _skip_if_fresh(ctx, out, "catalog"):
        return
    manifest = cat.ingest_manifest(src)
    if ctx.dry_run:
        click.echo(f"dry-run: would write catalog of {len(manifest)} records to {out}")
        return
    cat.save_catalog(cat.DatasetCatalog(manifest=manifest), out)
    click.echo(f"ingested {len(manifest)} records -> {out}")


@main.command()
@click.option("--train-fraction", type=float, default=None)
@click.option("--seed", "stage_seed", type=int, default=None)
@click.option("--catalog", "catalog_path", type=click.Path(), default=None)
@click.pass_obj
@_run_stage
def split(ctx: PipelineContext, train_fraction, stage_seed, catalog_path):
    """Assign train/validation splits with a seeded shuffle."""
    section = ctx.section("split")
    fraction = train_fraction if train_fraction is not None else float(
        section.get("train_fraction", 0.8))
    seed = stage_seed if stage_seed is not None else int(
        section.get("seed", ctx.seed if ctx.seed is not None else 0))
    catalog = _load_catalog(ctx, catalog_path)
    if catalog.split_assignment and not ctx.force:
        click.echo("split already assigned (use --force to reassign)")
        return
    updated = cat.assign_splits(catalog, fraction, seed)
    n_train = len(updated.ids_in_split(cat.TRAIN))
    if ctx.dry_run:
        click.echo(f"dry-run: would assign {n_train} train / "
                   f"{len(updated.manifest) - n_train} validation")
        return
    cat.save_catalog(updated, ctx.path("catalog", catalog_path))
    click.echo(f"assigned splits: {n_train} train, "
               f"{len(updated.manifest) - n_train} validation (seed {seed})")


@main.command()
@click.option("--template", "template_kind", default=None,
              type=click.Choice(list(labeler.PROMPT_KINDS)))
@click.option("--backend", "backend_kind", default=None,
              type=click.Choice(["mock", "remote"]),
              help="Override the configured VLM backend kind.")
@click.option("--catalog", "catalog_path", type=click.Path(), default=None)
@click.pass_obj
@_run_stage
def label(ctx: PipelineContext, template_kind, backend_kind, catalog_path):
    """Generate descriptions for unlabeled records via the VLM backend."""
    kind = template_kind or ctx.section("label").get("template_kind", labeler.TEMPLATE)
    template = labeler.template_by_kind(kind)
    catalog = _load_catalog(ctx, catalog_path)
    section = ctx.section("vlm_backend")
    if backend_kind:
        section["kind"] = backend_kind
    config = labeler.VlmBackendConfig.from_dict(section)
    todo = [r.object_id for r in catalog.manifest.records
            if not catalog.descriptions_for(r.object_id, kind=kind)]
    if ctx.dry_run:
        click.echo(f"dry-run: would label {len(todo)} of {len(catalog.manifest)} records "
                   f"with the {kind} template")
        return
    result = labeler.batch_label(catalog, template, config, config=config)
    if result.failures:
        for oid, msg in sorted(result.failures.items()):
            click.echo(f"failed {oid}: {msg}", err=True)
    cat.save_catalog(result.catalog, ctx.path("catalog", catalog_path))
    click.echo(f"labeled {result.calls_made - len(result.failures)} records "
               f"({result.skipped} already labeled, {len(result.failures)} failed)")
    if result.failures:
        sys.exit(EXIT_BACKEND)


@main.command()
@click.option("--catalog", "catalog_path", type=click.Path(), default=None)
@click.pass_obj
@_run_stage
def encode(ctx: PipelineContext, catalog_path):
    """Produce base image and text embeddings for every record."""
    catalog = _load_catalog(ctx, catalog_path)
    kind = ctx.section("label").get("template_kind", labeler.TEMPLATE)
    unlabeled = [r.object_id for r in catalog.manifest.records
                 if not catalog.descriptions_for(r.object_id, kind=kind)]
    if unlabeled:
        raise PrerequisiteMissingError(
            f"catalog has no {kind!r} description for: "
            f"{', '.join(unlabeled[:5])}; run `label` first")
    img_out = ctx.path("image_embeddings")
    txt_out = ctx.path("text_embeddings")
    if img_out.exists() and txt_out.exists() and not ctx.force:
        click.echo("embeddings already exist (use --force to re-encode)")
        return
    backend = ctx.encoder_backend()
    if ctx.dry_run:
        click.echo(f"dry-run: would encode {len(catalog.manifest)} records "
                   f"-> {img_out}, {txt_out}")
        return
    ids, img_rows, txt_rows = [], [], []
    for record in catalog.manifest.records:
        desc = catalog.descriptions_for(record.object_id, kind=kind)[0]
        img_rows.append(encode_image(record.image_ref, backend).vector)
        txt_rows.append(encode_text(desc.text, backend).vector)
        ids.append(record.object_id)
    meta = {"backend_digest": _encoder_digest(backend), "description_kind": kind}
    write_embedding_file(img_out, ids, np.stack(img_rows), meta=dict(meta, modality="image"))
    write_embedding_file(txt_out, ids, np.stack(txt_rows), meta=dict(meta, modality="text"))
    click.echo(f"encoded {len(ids)} records -> {img_out}, {txt_out}")


def _load_bases(ctx: PipelineContext) -> tuple[EmbeddingBases, str]:
    from .encoders import read_embedding_file

    img_path = _require(ctx.path("image_embeddings"), "run `encode` first")
    txt_path = _require(ctx.path("text_embeddings"), "run `encode` first")
    img_ids, img_mat, img_meta = read_embedding_file(img_path)
    txt_ids, txt_mat, txt_meta = read_embedding_file(txt_path)
    if img_meta.get("backend_digest") != txt_meta.get("backend_digest"):
        raise ShapeSearchError(
            "image and text embeddings were produced by different encoder "
            "configurations; re-run `encode`")
    bases = EmbeddingBases.from_stores(EmbeddingStore(img_ids, img_mat),
                                       EmbeddingStore(txt_ids, txt_mat))
    return bases, img_meta.get("backend_digest", "")


@main.command(name="train")
@click.option("--select", type=click.Choice(["final", "best-train", "best-val"]),
              default="final", help="Which checkpoint to save.")
@click.pass_obj
@_run_stage
def train_cmd(ctx: PipelineContext, select):
    """Fit projection heads on the train split."""
    catalog = _load_catalog(ctx)
    kind = ctx.section("label").get("template_kind", labeler.TEMPLATE)
    unlabeled = [r.object_id for r in catalog.manifest.records
                 if not catalog.descriptions_for(r.object_id, kind=kind)]
    if unlabeled:
        raise PrerequisiteMissingError(
            f"catalog is missing descriptions for {len(unlabeled)} records "
            f"(e.g. {', '.join(unlabeled[:3])}); run `label` first")
    bases, _ = _load_bases(ctx)
    heads_out = ctx.path("heads")
    if _skip_if_fresh(ctx, heads_out, "heads checkpoint"):
        return
    config = ctx.train_config()
    if ctx.dry_run:
        click.echo(f"dry-run: would train {config.epochs} epochs and write {heads_out}")
        return
    result = train(catalog, bases, config)
    heads = {
        "final": result.heads,
        "best-train": result.best_train_heads or result.heads,
        "best-val": result.best_val_heads or result.heads,
    }[select]
    save_heads(heads, heads_out, config=config)
    save_history(result.history, ctx.path("history"))
    click.echo(
        f"trained {config.epochs} epochs: loss {result.initial_loss:.4f} -> "
        f"{result.final_loss:.4f}; saved {select} heads ({heads.version}) -> {heads_out}")


@main.command(name="index")
@click.pass_obj
@_run_stage
def index_cmd(ctx: PipelineContext):
    """Project all embeddings with the trained heads and freeze the index."""
    catalog = _load_catalog(ctx)
    bases, backend_digest = _load_bases(ctx)
    heads_path = _require(ctx.path("heads"), "run `train` first")
    out = ctx.path("index")
    if _skip_if_fresh(ctx, out, "index"):
        return
    heads = load_heads(heads_path)
    if ctx.dry_run:
        click.echo(f"dry-run: would index {len(catalog.manifest)} objects -> {out}")
        return
    idx = build_index(catalog, bases, heads)
    save_index(idx, out)
    click.echo(f"indexed {len(idx)} objects (heads {heads.version}) -> {out}")


@main.command(name="eval")
@click.option("--split", "split_name", default=None,
              type=click.Choice(["train", "test", "complete"]))
@click.option("--model-tag", default=None)
@click.option("--visual-focus", type=float, default=None)
@click.option("--output", "output_path", type=click.Path(), default=None,
              help="Also write the report as JSON.")
@click.pass_obj
@_run_stage
def eval_cmd(ctx: PipelineContext, split_name, model_tag, visual_focus, output_path):
    """Self-retrieval metrics (MRR, top-1, top-10) over a split."""
    section = ctx.section("eval")
    split_name = split_name or section.get("split", "complete")
    model_tag = model_tag if model_tag is not None else section.get("model_tag", "")
    alpha = visual_focus if visual_focus is not None else float(
        section.get("visual_focus", 1.0))
    catalog = _load_catalog(ctx)
    idx = load_index(_require(ctx.path("index"), "run `index` first"))
    heads = load_heads(_require(ctx.path("heads"), "run `train` first"))
    backend = ctx.encoder_backend()
    kind = ctx.section("label").get("template_kind", labeler.TEMPLATE)
    if ctx.dry_run:
        click.echo(f"dry-run: would evaluate split {split_name!r}")
        return
    report = evaluation.evaluate(idx, catalog, split_name, heads, backend,
                                 visual_focus=alpha, description_kind=kind,
                                 model_tag=model_tag)
    click.echo(evaluation.render_report_table([report]))
    if output_path:
        from .storage import atomic_write_text
        atomic_write_text(output_path, json.dumps(report.to_dict(), indent=2))


@main.command()
@click.option("--subset-size", type=int, default=100)
@click.option("--output", "output_path", type=click.Path(), default=None)
@click.pass_obj
@_run_stage
def heatmap(ctx: PipelineContext, subset_size, output_path):
    """Export the text/image similarity matrix as a grayscale image."""
    idx = load_index(_require(ctx.path("index"), "run `index` first"))
    out = ctx.path("heatmap", output_path)
    ids = sorted(idx.ids)
    size = min(subset_size, len(ids))
    start = max(0, (len(ids) - size) // 2)  # middle of the sorted pool
    subset = ids[start:start + size]
    if ctx.dry_run:
        click.echo(f"dry-run: would export a {size}x{size} heatmap -> {out}")
        return
    matrix = evaluation.similarity_matrix(idx, subset)
    img_path, dump_path = evaluation.export_heatmap(matrix, out)
    click.echo(f"heatmap ({size}x{size}, diagonal margin "
               f"{matrix.diagonal_margin():.4f}) -> {img_path}, {dump_path}")


def _print_results(results) -> None:
    click.echo(f"{'rank':>4}  {'object_id':<24}  {'score':>9}  {'image':>9}  {'text':>9}")
    for r in results:
        click.echo(f"{r.rank:>4}  {r.object_id:<24}  {r.score:>9.5f}  "
                   f"{r.image_score:>9.5f}  {r.text_score:>9.5f}")


@main.command()
@click.option("--query", required=True)
@click.option("--k", type=int, default=8)
@click.option("--visual-focus", type=float, default=0.5)
@click.pass_obj
@_run_stage
def search(ctx: PipelineContext, query, k, visual_focus):
    """One-shot text search against the stored index."""
    idx = load_index(_require(ctx.path("index"), "run `index` first"))
    heads = load_heads(_require(ctx.path("heads"), "run `train` first"))
    q = SearchQuery(text=query, k=min(k, 10), visual_focus=visual_focus)
    results = search_text(idx, q, heads, ctx.encoder_backend(), k=min(k, len(idx)))
    _print_results(results)


@main.command(name="search-similar")
@click.option("--object-id", required=True)
@click.option("--k", type=int, default=8)
@click.pass_obj
@_run_stage
def search_similar_cmd(ctx: PipelineContext, object_id, k):
    """Similar-item search using a stored object as the query."""
    idx = load_index(_require(ctx.path("index"), "run `index` first"))
    results = search_similar(idx, object_id, min(k, len(idx) - 1))
    _print_results(results)


@main.command()
@click.option("--check", is_flag=True, help="Load artifacts, print health, exit.")
@click.pass_obj
@_run_stage
def serve(ctx: PipelineContext, check):
    """Run the HTTP search service."""
    from .service import ServiceConfig, build_service

    section = ctx.section("service")
    section.setdefault("index_path", str(ctx.path("index")))
    section.setdefault("heads_path", str(ctx.path("heads")))
    section.setdefault("catalog_path", str(ctx.path("catalog")))
    if "encoder_backend" not in section and "encoder_backend" in ctx.config:
        section["encoder_backend"] = ctx.config["encoder_backend"]
    config = ServiceConfig.from_dict(section)
    app, state = build_service(config, load=True)
    artifacts = state.artifacts()
    click.echo(f"loaded index of {len(artifacts.index)} objects "
               f"(heads {artifacts.index.heads_version})")
    if check or ctx.dry_run:
        return
    import uvicorn

    uvicorn.run(app, host=config.host, port=config.port, log_level="info")


if __name__ == "__main__":
    main()
