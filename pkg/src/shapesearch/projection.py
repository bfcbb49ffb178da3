"""Shared-space projection math: heads, similarity, loss, and gradients.

Two bias-free linear maps take frozen encoder outputs into a common 512-d
space: images 768 -> 512, texts 512 -> 512. Projected vectors are always
L2-normalized, so similarity is a plain dot product. Training minimizes the
symmetric contrastive objective

    L = -(1/N) sum_i [ log softmax_j(sim(x_i, y_j))[i]
                     + log softmax_j(sim(y_i, x_j))[i] ]

over in-batch positives (i, i) and negatives (i, j != i), with natural logs
and no temperature by default. Gradients through softmax, cosine similarity,
normalization, and the linear maps are computed analytically and are checked
against central finite differences in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateProjectionError, TrainingError
from .storage import array_digest

IMAGE_IN_DIM = 768
TEXT_IN_DIM = 512
SHARED_DIM = 512

_DEGENERATE_NORM = 1e-12


@dataclass
class ProjectionHeads:
    """The trainable parameters: one projection matrix per modality."""

    w_img: np.ndarray  # (768, 512)
    w_txt: np.ndarray  # (512, 512)
    version: str = ""

    def __post_init__(self):
        self.w_img = np.asarray(self.w_img, dtype=np.float64)
        self.w_txt = np.asarray(self.w_txt, dtype=np.float64)
        if not np.isfinite(self.w_img).all() or not np.isfinite(self.w_txt).all():
            raise TrainingError("projection heads contain non-finite entries")
        if not self.version:
            self.version = array_digest(self.w_img, self.w_txt)

    @property
    def shapes(self) -> dict:
        return {"image": list(self.w_img.shape), "text": list(self.w_txt.shape)}

    def copy(self) -> "ProjectionHeads":
        return ProjectionHeads(self.w_img.copy(), self.w_txt.copy(), version=self.version)

    def refresh_version(self) -> None:
        self.version = array_digest(self.w_img, self.w_txt)


def init_heads(seed: int, image_in: int = IMAGE_IN_DIM, text_in: int = TEXT_IN_DIM,
               shared: int = SHARED_DIM) -> ProjectionHeads:
    """Seeded near-orthogonal random initialization, scaled by 1/sqrt(fan-in)."""
    rng = np.random.default_rng(seed)
    w_img = rng.standard_normal((image_in, shared)) / math.sqrt(image_in)
    w_txt = rng.standard_normal((text_in, shared)) / math.sqrt(text_in)
    return ProjectionHeads(w_img, w_txt)


def identity_heads(image_in: int = IMAGE_IN_DIM, text_in: int = TEXT_IN_DIM,
                   shared: int = SHARED_DIM) -> ProjectionHeads:
    """Identity-like heads: first ``shared`` input axes pass through unchanged.

    Stands in for externally supplied pretrained projections when none exist,
    e.g. for untuned-baseline evaluation.
    """
    w_img = np.zeros((image_in, shared))
    np.fill_diagonal(w_img, 1.0)
    w_txt = np.zeros((text_in, shared))
    np.fill_diagonal(w_txt, 1.0)
    return ProjectionHeads(w_img, w_txt)


def _project_rows(vectors: np.ndarray, weights: np.ndarray, what: str) -> np.ndarray:
    projected = vectors @ weights
    norms = np.linalg.norm(projected, axis=1)
    bad = np.nonzero(norms < _DEGENERATE_NORM)[0]
    if bad.size:
        raise DegenerateProjectionError(
            f"{what}: projection collapsed to zero for row(s) {bad.tolist()}"
        )
    return projected / norms[:, None]


def project_image(vector: np.ndarray, heads: ProjectionHeads) -> np.ndarray:
    """Project one 768-d base image vector to the shared unit sphere."""
    v = np.asarray(vector, dtype=np.float64)
    return _project_rows(v[None, :], heads.w_img, "image")[0]


def project_text(vector: np.ndarray, heads: ProjectionHeads) -> np.ndarray:
    """Project one 512-d base text vector to the shared unit sphere."""
    v = np.asarray(vector, dtype=np.float64)
    return _project_rows(v[None, :], heads.w_txt, "text")[0]


def project_images(matrix: np.ndarray, heads: ProjectionHeads) -> np.ndarray:
    return _project_rows(np.asarray(matrix, dtype=np.float64), heads.w_img, "image")


def project_texts(matrix: np.ndarray, heads: ProjectionHeads) -> np.ndarray:
    return _project_rows(np.asarray(matrix, dtype=np.float64), heads.w_txt, "text")


def cosine_sim(x: np.ndarray, y: np.ndarray) -> float:
    """Dot product of two unit vectors; symmetric, in [-1, 1]."""
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return float(np.dot(x, y))


@dataclass(frozen=True)
class TrainingBatch:
    """Aligned image/text base vectors; position i is the positive pair."""

    image_vectors: np.ndarray  # (N, 768)
    text_vectors: np.ndarray   # (N, 512)
    object_ids: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "image_vectors",
                           np.asarray(self.image_vectors, dtype=np.float64))
        object.__setattr__(self, "text_vectors",
                           np.asarray(self.text_vectors, dtype=np.float64))
        n = len(self.object_ids)
        if self.image_vectors.shape[0] != n or self.text_vectors.shape[0] != n:
            raise TrainingError("batch arrays and id list must have equal counts")

    def __len__(self) -> int:
        return len(self.object_ids)


@dataclass(frozen=True)
class LossValue:
    value: float
    n: int


def _check_finite_sims(sims: np.ndarray) -> None:
    if not np.isfinite(sims).all():
        i, j = np.argwhere(~np.isfinite(sims))[0]
        raise TrainingError(f"non-finite similarity for pair ({int(i)}, {int(j)})")


def _log_softmax(logits: np.ndarray, axis: int) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def loss_from_similarity(sims: np.ndarray, temperature: float = 1.0) -> float:
    """Evaluate the objective given the (N, N) matrix sim(x_i, y_j)."""
    sims = np.asarray(sims, dtype=np.float64)
    n = sims.shape[0]
    if sims.shape != (n, n) or n < 2:
        raise TrainingError("similarity matrix must be square with N >= 2")
    _check_finite_sims(sims)
    logits = sims / temperature
    log_rows = _log_softmax(logits, axis=1)  # image i against every text j
    log_cols = _log_softmax(logits, axis=0)  # text i against every image j
    diag = np.arange(n)
    return float(-(log_rows[diag, diag] + log_cols[diag, diag]).mean())


def _projected_pair(batch: TrainingBatch, heads: ProjectionHeads):
    p = batch.image_vectors @ heads.w_img
    q = batch.text_vectors @ heads.w_txt
    p_norm = np.linalg.norm(p, axis=1)
    q_norm = np.linalg.norm(q, axis=1)
    for name, norms in (("image", p_norm), ("text", q_norm)):
        bad = np.nonzero(norms < _DEGENERATE_NORM)[0]
        if bad.size:
            raise DegenerateProjectionError(
                f"{name}: projection collapsed to zero for row(s) {bad.tolist()}"
            )
    x = p / p_norm[:, None]
    y = q / q_norm[:, None]
    return x, y, p_norm, q_norm


def contrastive_loss(batch: TrainingBatch, heads: ProjectionHeads,
                     temperature: float = 1.0) -> LossValue:
    """The symmetric in-batch objective over projected, normalized pairs."""
    if len(batch) < 2:
        raise TrainingError("contrastive loss needs at least 2 samples for negatives")
    x, y, _, _ = _projected_pair(batch, heads)
    value = loss_from_similarity(x @ y.T, temperature=temperature)
    return LossValue(value=value, n=len(batch))


@dataclass
class LossGradients:
    loss: float
    d_w_img: np.ndarray
    d_w_txt: np.ndarray


def loss_gradients(batch: TrainingBatch, heads: ProjectionHeads,
                   temperature: float = 1.0) -> LossGradients:
    """Loss plus analytic gradients with respect to both projection matrices.

    Chain: loss -> softmax over similarities -> dot products of unit vectors
    -> L2 normalization -> linear projection. With A = row-softmax,
    B = column-softmax of S/t, dL/dS = (A + B - 2I) / (N t); the rest is
    matrix calculus through x = p/|p| and P = V W.
    """
    n = len(batch)
    if n < 2:
        raise TrainingError("contrastive loss needs at least 2 samples for negatives")
    x, y, p_norm, q_norm = _projected_pair(batch, heads)
    sims = x @ y.T
    _check_finite_sims(sims)
    logits = sims / temperature

    log_rows = _log_softmax(logits, axis=1)
    log_cols = _log_softmax(logits, axis=0)
    diag = np.arange(n)
    loss = float(-(log_rows[diag, diag] + log_cols[diag, diag]).mean())

    a = np.exp(log_rows)
    b = np.exp(log_cols)
    g = (a + b) / (n * temperature)
    g[diag, diag] -= 2.0 / (n * temperature)

    d_x = g @ y
    d_y = g.T @ x
    # through x = p / |p|: tangent projection scaled by 1/|p|
    d_p = (d_x - (d_x * x).sum(axis=1, keepdims=True) * x) / p_norm[:, None]
    d_q = (d_y - (d_y * y).sum(axis=1, keepdims=True) * y) / q_norm[:, None]
    d_w_img = batch.image_vectors.T @ d_p
    d_w_txt = batch.text_vectors.T @ d_q
    return LossGradients(loss=loss, d_w_img=d_w_img, d_w_txt=d_w_txt)


def lr_at_step(step: int, config, total_steps: int) -> float:
    """Learning rate at a global step: linear warmup then cosine decay to 0.

    When total_steps never leaves the warmup window the whole run is a
    partial linear ramp; the cosine branch would divide by zero and is
    unreachable in that regime.
    """
    warmup = config.warmup_steps
    peak = config.peak_lr
    if total_steps <= 0:
        raise TrainingError("total_steps must be positive")
    if step < 0 or step > total_steps:
        raise TrainingError(f"step {step} outside [0, {total_steps}]")
    if warmup > 0 and step <= warmup:
        return peak * step / warmup
    progress = (step - warmup) / (total_steps - warmup)
    return peak * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class TrainConfig:
    """Optimization schedule for the projection heads."""

    batch_size: int = 32
    epochs: int = 5
    weight_decay: float = 0.01
    warmup_steps: int = 50
    peak_lr: float = 2e-5
    schedule: str = "cosine"
    seed: int = 0
    temperature: float = 1.0

    def __post_init__(self):
        if self.batch_size < 2:
            raise TrainingError("batch_size must be >= 2 (in-batch negatives)")
        if self.epochs < 1:
            raise TrainingError("epochs must be >= 1")
        if self.peak_lr <= 0:
            raise TrainingError("peak_lr must be positive")
        if self.schedule != "cosine":
            raise TrainingError(f"unsupported schedule {self.schedule!r}")
        if self.temperature <= 0:
            raise TrainingError("temperature must be positive")

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "weight_decay": self.weight_decay,
            "warmup_steps": self.warmup_steps,
            "peak_lr": self.peak_lr,
            "schedule": self.schedule,
            "seed": self.seed,
            "temperature": self.temperature,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f: d[f] for f in (
            "batch_size", "epochs", "weight_decay", "warmup_steps",
            "peak_lr", "schedule", "seed", "temperature",
        ) if f in d}
        return cls(**known)


@dataclass
class StepRecord:
    step: int
    lr: float
    loss: float


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float | None = None


@dataclass
class TrainingHistory:
    steps: list[StepRecord] = field(default_factory=list)
    epochs: list[EpochRecord] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "steps": [{"step": s.step, "lr": s.lr, "loss": s.loss} for s in self.steps],
            "epochs": [
                {"epoch": e.epoch, "train_loss": e.train_loss, "val_loss": e.val_loss}
                for e in self.epochs
            ],
        }
