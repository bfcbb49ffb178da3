"""Projection-head training loop and checkpoint I/O.

Plain gradient descent with decoupled weight decay, seeded epoch shuffles,
and a linear-warmup/cosine-decay schedule. Deterministic for a fixed seed
and fixed base embeddings: run it twice, get the same history bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .catalog import DatasetCatalog
from .errors import (
    MissingEmbeddingsError,
    StorageFormatError,
    TrainingDivergedError,
    TrainingError,
)
from .projection import (
    EpochRecord,
    LossGradients,
    ProjectionHeads,
    StepRecord,
    TrainConfig,
    TrainingBatch,
    TrainingHistory,
    init_heads,
    loss_gradients,
    lr_at_step,
)
from .storage import atomic_write_text, config_digest, read_binary, take_matrix, write_binary


@dataclass
class EmbeddingBases:
    """Base image and text vectors keyed by object id."""

    images: Mapping[str, np.ndarray]
    texts: Mapping[str, np.ndarray]

    @classmethod
    def from_stores(cls, image_store, text_store) -> "EmbeddingBases":
        images = {k: image_store.get(k) for k in image_store.ids}
        texts = {k: text_store.get(k) for k in text_store.ids}
        return cls(images=images, texts=texts)

    def missing_for(self, ids: list[str]) -> list[str]:
        return [i for i in ids if i not in self.images or i not in self.texts]


@dataclass
class TrainResult:
    heads: ProjectionHeads
    history: TrainingHistory
    initial_loss: float
    final_loss: float
    best_train_heads: ProjectionHeads | None = None
    best_val_heads: ProjectionHeads | None = None


def _chunks(order: np.ndarray, size: int) -> list[np.ndarray]:
    out = []
    for start in range(0, len(order), size):
        chunk = order[start:start + size]
        if len(chunk) >= 2:  # in-batch negatives need at least a pair
            out.append(chunk)
    return out


def _dataset_loss(v: np.ndarray, u: np.ndarray, ids: list[str],
                  heads: ProjectionHeads, config: TrainConfig) -> float:
    """Mean loss over fixed-order batches, weighted by batch size."""
    from .projection import contrastive_loss

    order = np.arange(len(ids))
    total = 0.0
    count = 0
    for chunk in _chunks(order, config.batch_size):
        batch = TrainingBatch(v[chunk], u[chunk], tuple(ids[i] for i in chunk))
        total += contrastive_loss(batch, heads, config.temperature).value * len(chunk)
        count += len(chunk)
    if count == 0:
        raise TrainingError("need at least 2 objects to evaluate the loss")
    return total / count


def train(
    catalog: DatasetCatalog,
    bases: EmbeddingBases,
    config: TrainConfig,
    start_heads: ProjectionHeads | None = None,
) -> TrainResult:
    """Fit projection heads on the catalog's train split.

    When the catalog carries no split assignment every object trains (the
    closed-pool regime). Aborts with the last epoch's heads attached if the
    loss ever goes non-finite.
    """
    if catalog.split_assignment:
        train_ids = sorted(catalog.ids_in_split("train"))
    else:
        train_ids = sorted(catalog.manifest.object_ids)
    if len(train_ids) < 2:
        raise TrainingError("training needs at least 2 objects")
    missing = bases.missing_for(train_ids)
    if missing:
        raise MissingEmbeddingsError(missing)

    val_ids = sorted(catalog.ids_in_split("validation"))
    val_ids = [i for i in val_ids if i not in set(bases.missing_for(val_ids))]

    v = np.stack([np.asarray(bases.images[i], dtype=np.float64) for i in train_ids])
    u = np.stack([np.asarray(bases.texts[i], dtype=np.float64) for i in train_ids])
    if val_ids:
        v_val = np.stack([np.asarray(bases.images[i], dtype=np.float64) for i in val_ids])
        u_val = np.stack([np.asarray(bases.texts[i], dtype=np.float64) for i in val_ids])

    heads = (start_heads or init_heads(config.seed)).copy()
    rng = np.random.default_rng(config.seed)
    n = len(train_ids)
    steps_per_epoch = len(_chunks(np.arange(n), config.batch_size))
    if steps_per_epoch == 0:
        raise TrainingError("batch layout produced no usable batches")
    total_steps = config.epochs * steps_per_epoch

    history = TrainingHistory()
    try:
        initial_loss = _dataset_loss(v, u, train_ids, heads, config)
    except TrainingError as exc:
        raise TrainingDivergedError(0, last_good=heads.copy()) from exc
    best_train = (initial_loss, heads.copy())
    best_val: tuple[float, ProjectionHeads] | None = None
    last_good = heads.copy()

    global_step = 0
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n)
        epoch_total = 0.0
        epoch_count = 0
        for chunk in _chunks(perm, config.batch_size):
            global_step += 1
            lr = lr_at_step(global_step, config, total_steps)
            batch = TrainingBatch(v[chunk], u[chunk], tuple(train_ids[i] for i in chunk))
            try:
                grads: LossGradients = loss_gradients(batch, heads, config.temperature)
            except TrainingError as exc:
                raise TrainingDivergedError(global_step, last_good=last_good) from exc
            if not np.isfinite(grads.loss):
                raise TrainingDivergedError(global_step, last_good=last_good)
            heads.w_img = heads.w_img - lr * grads.d_w_img - lr * config.weight_decay * heads.w_img
            heads.w_txt = heads.w_txt - lr * grads.d_w_txt - lr * config.weight_decay * heads.w_txt
            history.steps.append(StepRecord(step=global_step, lr=lr, loss=grads.loss))
            epoch_total += grads.loss * len(chunk)
            epoch_count += len(chunk)

        epoch_train = epoch_total / epoch_count
        epoch_val = None
        if val_ids:
            epoch_val = _dataset_loss(v_val, u_val, val_ids, heads, config)
            if best_val is None or epoch_val < best_val[0]:
                best_val = (epoch_val, heads.copy())
        history.epochs.append(EpochRecord(epoch=epoch, train_loss=epoch_train,
                                          val_loss=epoch_val))
        if epoch_train < best_train[0]:
            best_train = (epoch_train, heads.copy())
        last_good = heads.copy()

    final_loss = _dataset_loss(v, u, train_ids, heads, config)
    heads.refresh_version()
    best_train[1].refresh_version()
    if best_val is not None:
        best_val[1].refresh_version()
    return TrainResult(
        heads=heads,
        history=history,
        initial_loss=initial_loss,
        final_loss=final_loss,
        best_train_heads=best_train[1],
        best_val_heads=best_val[1] if best_val else None,
    )


# --- checkpoint and history files -------------------------------------------

def save_heads(heads: ProjectionHeads, path: str | Path,
               config: TrainConfig | None = None) -> None:
    header = {
        "kind": "heads",
        "shapes": heads.shapes,
        "version": heads.version,
        "config_digest": config_digest(config.to_dict()) if config else "",
    }
    write_binary(path, header, [heads.w_img, heads.w_txt])


def load_heads(path: str | Path) -> ProjectionHeads:
    header, payload = read_binary(path)
    if header.get("kind") != "heads":
        raise StorageFormatError(f"{path}: not a heads checkpoint")
    img_shape = header["shapes"]["image"]
    txt_shape = header["shapes"]["text"]
    w_img, offset = take_matrix(payload, 0, img_shape[0], img_shape[1])
    w_txt, _ = take_matrix(payload, offset, txt_shape[0], txt_shape[1])
    return ProjectionHeads(w_img.astype(np.float64), w_txt.astype(np.float64),
                           version=header.get("version", ""))


def heads_config_digest(path: str | Path) -> str:
    header, _ = read_binary(path)
    return header.get("config_digest", "")


def save_history(history: TrainingHistory, path: str | Path) -> None:
    import json

    atomic_write_text(path, json.dumps(history.to_dict(), indent=2))
