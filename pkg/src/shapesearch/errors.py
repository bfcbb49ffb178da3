"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class ShapeSearchError(Exception):
    """Base class for all engine errors."""

    code = "error"


class ManifestError(ShapeSearchError):
    code = "invalid_manifest"


class DuplicateObjectIdError(ManifestError):
    code = "duplicate_object_id"

    def __init__(self, duplicates: list[str]):
        self.duplicates = list(duplicates)
        super().__init__(f"duplicate object_id(s): {', '.join(self.duplicates)}")


class EmptyManifestError(ManifestError):
    code = "empty_manifest"


class SplitFractionError(ShapeSearchError):
    code = "invalid_split_fraction"


class EncoderError(ShapeSearchError):
    code = "encoder_error"


class EncoderBackendUnavailable(EncoderError):
    """Remote encoder failed after exhausting retries."""

    code = "encoder_backend_unavailable"


class DimensionMismatchError(EncoderError):
    code = "dimension_mismatch"

    def __init__(self, expected: int, actual: int, context: str = ""):
        self.expected = expected
        self.actual = actual
        msg = f"expected {expected} components, got {actual}"
        if context:
            msg = f"{context}: {msg}"
        super().__init__(msg)


class EmbeddingNotFoundError(EncoderError):
    code = "embedding_not_found"

    def __init__(self, key: str):
        self.key = key
        super().__init__(f"no stored embedding for key {key!r}")


class NonFiniteVectorError(EncoderError):
    code = "non_finite_vector"


class LabelError(ShapeSearchError):
    code = "label_error"


class VlmBackendError(LabelError):
    code = "vlm_backend_error"


class EmptyResponseError(LabelError):
    code = "empty_vlm_response"


class BudgetViolationError(LabelError):
    """Description still over the token budget after the over-budget policy ran."""

    code = "token_budget_violation"


class TrainingError(ShapeSearchError):
    code = "training_error"


class MissingEmbeddingsError(TrainingError):
    code = "missing_embeddings"

    def __init__(self, missing: list[str]):
        self.missing = list(missing)
        super().__init__(f"objects without embeddings: {', '.join(self.missing)}")


class TrainingDivergedError(TrainingError):
    code = "training_diverged"

    def __init__(self, step: int, last_good=None):
        self.step = step
        self.last_good = last_good
        super().__init__(f"non-finite loss at step {step}; aborted")


class DegenerateProjectionError(ShapeSearchError):
    code = "degenerate_projection"


class IndexBuildError(ShapeSearchError):
    code = "index_build_error"


class UnknownObjectError(ShapeSearchError):
    code = "unknown_object"

    def __init__(self, object_id: str):
        self.object_id = object_id
        super().__init__(f"unknown object_id {object_id!r}")


class NotLabeledError(ShapeSearchError):
    code = "no_description"

    def __init__(self, object_id: str):
        self.object_id = object_id
        super().__init__(f"object {object_id!r} has no stored description")


class HeadsVersionMismatchError(ShapeSearchError):
    code = "heads_version_mismatch"

    def __init__(self, index_version: str, heads_version: str):
        super().__init__(
            f"index was built with heads {index_version!r} but got {heads_version!r}"
        )


class EmptyIndexError(ShapeSearchError):
    code = "empty_index"


class EvaluationError(ShapeSearchError):
    code = "evaluation_error"


class UnlabeledObjectsError(EvaluationError):
    code = "unlabeled_objects"

    def __init__(self, object_ids: list[str]):
        self.object_ids = list(object_ids)
        super().__init__(f"objects without descriptions: {', '.join(self.object_ids)}")


class EmptySplitError(EvaluationError):
    code = "empty_split"


class StorageFormatError(ShapeSearchError):
    code = "storage_format_error"


class PrerequisiteMissingError(ShapeSearchError):
    """A pipeline stage was invoked before its input artifacts exist."""

    code = "prerequisite_missing"
