import numpy as np
import pytest

from shapesearch.catalog import CaptureManifest, DatasetCatalog, ObjectRecord
from shapesearch.encoders import EncoderBackendConfig
from shapesearch.projection import TrainConfig
from shapesearch.training import EmbeddingBases


def make_records(n: int, prefix: str = "obj") -> tuple[ObjectRecord, ...]:
    return tuple(
        ObjectRecord(
            object_id=f"{prefix}{i:04d}",
            image_ref=f"renders/{prefix}{i:04d}.png",
            model_ref=f"models/{prefix}{i:04d}.obj",
            category="chair",
        )
        for i in range(n)
    )


def make_catalog(n: int, prefix: str = "obj") -> DatasetCatalog:
    manifest = CaptureManifest(records=make_records(n, prefix), dataset_name="fixture")
    return DatasetCatalog(manifest=manifest)


def synthetic_corpus(n: int = 200, seed: int = 11, sigma: float = 0.05):
    """Corpus where the text base is a fixed random linear map of the image
    base plus Gaussian noise: learnable by construction."""
    rng = np.random.default_rng(seed)
    imgs = rng.standard_normal((n, 768))
    imgs /= np.linalg.norm(imgs, axis=1, keepdims=True)
    linear_map = rng.standard_normal((768, 512)) / np.sqrt(512)
    txts = imgs @ linear_map + sigma * rng.standard_normal((n, 512))
    catalog = make_catalog(n)
    ids = catalog.manifest.object_ids
    bases = EmbeddingBases(
        images={oid: imgs[i] for i, oid in enumerate(ids)},
        texts={oid: txts[i] for i, oid in enumerate(ids)},
    )
    return catalog, bases, ids


# A training recipe that actually converges on desk-scale synthetic corpora
# (the published-schedule defaults are tuned for fine-tuning a pretrained
# encoder stack and barely move freshly initialized heads).
WORKABLE_RECIPE = dict(
    peak_lr=0.5, epochs=60, temperature=0.05, weight_decay=0.0, warmup_steps=20,
)


def workable_config(seed: int = 0, **overrides) -> TrainConfig:
    params = dict(WORKABLE_RECIPE, seed=seed)
    params.update(overrides)
    return TrainConfig(**params)


@pytest.fixture
def mock_backend() -> EncoderBackendConfig:
    return EncoderBackendConfig(kind="mock", seed=0)
