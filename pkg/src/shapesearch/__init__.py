"""Text-driven retrieval engine for 3D object datasets.

Pipeline: ingest a capture manifest, label object images through a
vision-language backend, embed both modalities with frozen encoders, train
projection heads into a shared space with a symmetric contrastive loss, then
serve exact cosine retrieval with tunable image/text weighting.
"""

from .catalog import (
    CaptureManifest,
    DatasetCatalog,
    ObjectRecord,
    assign_splits,
    ingest_manifest,
    load_catalog,
    save_catalog,
)
from .encoders import (
    BaseImageEmbedding,
    BaseTextEmbedding,
    EncoderBackendConfig,
    encode_image,
    encode_text,
)
from .evaluation import MetricsReport, evaluate, reciprocal_rank, similarity_matrix
from .index import (
    RankedResult,
    SearchIndex,
    SearchQuery,
    build_index,
    describe,
    load_index,
    save_index,
    search_similar,
    search_text,
)
from .labeler import (
    Description,
    PromptTemplate,
    VlmBackendConfig,
    batch_label,
    builtin_templates,
    count_tokens,
    request_description,
)
from .projection import (
    ProjectionHeads,
    TrainConfig,
    TrainingBatch,
    contrastive_loss,
    cosine_sim,
    init_heads,
    loss_gradients,
    lr_at_step,
    project_image,
    project_text,
)
from .training import EmbeddingBases, TrainResult, load_heads, save_heads, train

__version__ = "0.1.0"

__all__ = [
    "BaseImageEmbedding",
    "BaseTextEmbedding",
    "CaptureManifest",
    "DatasetCatalog",
    "Description",
    "EmbeddingBases",
    "EncoderBackendConfig",
    "MetricsReport",
    "ObjectRecord",
    "ProjectionHeads",
    "PromptTemplate",
    "RankedResult",
    "SearchIndex",
    "SearchQuery",
    "TrainConfig",
    "TrainResult",
    "TrainingBatch",
    "VlmBackendConfig",
    "assign_splits",
    "batch_label",
    "build_index",
    "builtin_templates",
    "contrastive_loss",
    "cosine_sim",
    "count_tokens",
    "describe",
    "encode_image",
    "encode_text",
    "evaluate",
    "ingest_manifest",
    "init_heads",
    "load_catalog",
    "load_heads",
    "load_index",
    "loss_gradients",
    "lr_at_step",
    "project_image",
    "project_text",
    "reciprocal_rank",
    "request_description",
    "save_catalog",
    "save_heads",
    "save_index",
    "search_similar",
    "search_text",
    "similarity_matrix",
    "train",
]
