"""Description generation for object images via a vision-language backend.

Ships three built-in prompt designs (purpose-focused, structure-focused, and
a compressed template combining both) and enforces the 77-token budget the
downstream text encoder imposes. The default token rule is a whitespace word
count held to a conservative 60-word cap; swap in a model-specific tokenizer
through the ``TokenRule`` hook when one is available.
"""

from __future__ import annotations

import hashlib
import re
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable, Mapping

from .catalog import DatasetCatalog, ObjectRecord
from .errors import (
    BudgetViolationError,
    EmptyResponseError,
    LabelError,
    VlmBackendError,
)

DESIGN_PURPOSE = "design_purpose"
STRUCTURE = "structure"
TEMPLATE = "template"
PROMPT_KINDS = (DESIGN_PURPOSE, STRUCTURE, TEMPLATE)

DEFAULT_TOKEN_BUDGET = 77
# Whitespace words run shorter than encoder tokens; hold word-counted text to
# 60 words so a 77-token encoder never truncates it.
WORDS_PER_TOKEN_BUDGET = 60 / 77

_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")


def count_tokens(text: str) -> int:
    """Whitespace-delimited token count; the default counting rule."""
    return len(text.split())


@dataclass(frozen=True)
class TokenRule:
    """A counting rule plus the fraction of the encoder budget it may fill."""

    count: Callable[[str], int] = count_tokens
    budget_scale: float = WORDS_PER_TOKEN_BUDGET

    def cap_for(self, token_budget: int) -> int:
        return max(1, int(token_budget * self.budget_scale))


WHITESPACE_RULE = TokenRule()


@dataclass(frozen=True)
class PromptTemplate:
    kind: str
    body: str
    max_description_tokens: int = DEFAULT_TOKEN_BUDGET

    def __post_init__(self):
        if self.kind not in PROMPT_KINDS:
            raise LabelError(f"unknown prompt kind {self.kind!r}")
        if not self.body:
            raise LabelError("template body must be non-empty")
        if self.max_description_tokens <= 0:
            raise LabelError("max_description_tokens must be positive")


@dataclass(frozen=True)
class Description:
    object_id: str
    kind: str
    text: str
    token_count: int
    backend_id: str
    created_at: str
    truncated: bool = False

    def __post_init__(self):
        if not self.text:
            raise LabelError("description text must be non-empty")

    def to_dict(self) -> dict:
        return {
            "object_id": self.object_id,
            "kind": self.kind,
            "text": self.text,
            "token_count": self.token_count,
            "backend_id": self.backend_id,
            "created_at": self.created_at,
            "truncated": self.truncated,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Description":
        return cls(
            object_id=d["object_id"],
            kind=d["kind"],
            text=d["text"],
            token_count=int(d["token_count"]),
            backend_id=d.get("backend_id", ""),
            created_at=d.get("created_at", ""),
            truncated=bool(d.get("truncated", False)),
        )


@dataclass(frozen=True)
class VlmBackendConfig:
    kind: str = "mock"  # mock | remote
    endpoint_url: str | None = None
    rate_limit: float = 6000.0  # requests per minute; mocks are not throttled in practice
    max_retries: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("mock", "remote"):
            raise LabelError(f"unknown VLM backend kind {self.kind!r}")
        if self.rate_limit <= 0:
            raise LabelError("rate_limit must be positive")
        if self.kind == "remote" and not self.endpoint_url:
            raise LabelError("remote VLM backend requires endpoint_url")

    @classmethod
    def from_dict(cls, d: dict) -> "VlmBackendConfig":
        return cls(
            kind=d.get("kind", "mock"),
            endpoint_url=d.get("endpoint_url"),
            rate_limit=float(d.get("rate_limit", 6000.0)),
            max_retries=int(d.get("max_retries", 3)),
            seed=int(d.get("seed", 0)),
        )


# --- built-in prompt designs -------------------------------------------------

_STRUCTURE_BODY = (
    "Please describe the provided object within 5 sentences. "
    "Please focus on the SHAPE, PROPORTION, and UNIQUENESS of the object."
)

# Reconstructions of the purpose-focused and compressed designs; treat these
# as editable starting points rather than canonical wording.
_DESIGN_PURPOSE_BODY = (
    "Please describe the provided object within 5 sentences. "
    "Focus on its intended PURPOSE and USE CASE: what problem the design solves, "
    "where it would be used, and what type of user it suits best. "
    "The texture, material, shadowing and color are not important."
)

_TEMPLATE_BODY = (
    "Describe the provided object in a compact template of 3 sentences: "
    "first its design purpose and intended user, then its overall shape and "
    "proportion, then its single most unique feature. Keep every sentence "
    "short and specific. The texture, material, shadowing and color are not "
    "important."
)


def builtin_templates() -> list[PromptTemplate]:
    """The three shipped prompt designs, one per focus."""
    return [
        PromptTemplate(kind=DESIGN_PURPOSE, body=_DESIGN_PURPOSE_BODY),
        PromptTemplate(kind=STRUCTURE, body=_STRUCTURE_BODY),
        PromptTemplate(kind=TEMPLATE, body=_TEMPLATE_BODY),
    ]


def template_by_kind(kind: str) -> PromptTemplate:
    for tpl in builtin_templates():
        if tpl.kind == kind:
            return tpl
    raise LabelError(f"no builtin template of kind {kind!r}")


class _SlotDict(dict):
    def __missing__(self, key):
        return "{" + key + "}"


def render_prompt(template: PromptTemplate, record: ObjectRecord) -> str:
    """Fill optional placeholder slots ({category}, {display_name}, ...)."""
    return template.body.format_map(_SlotDict(
        category=record.category,
        display_name=record.display_name or record.category,
        object_id=record.object_id,
    ))


# --- backends ----------------------------------------------------------------

_ADJECTIVES = ["sturdy", "curved", "minimalist", "ornate", "angular", "tall",
               "compact", "reclined", "wide", "slender", "sculpted", "boxy",
               "tapered", "plush", "rigid", "airy"]
_USES = ["reading", "office work", "dining", "lounging", "gaming",
         "outdoor rest", "studying", "waiting rooms", "conferences",
         "quick meals", "long work sessions", "relaxing", "children's play",
         "bar seating"]
_FEATURES = ["armrests that sweep forward", "a slatted backrest",
             "a cantilevered base", "four splayed legs", "a swivel column",
             "crossed rear supports", "a perforated shell", "rocker runners",
             "a high headrest", "an open lattice back", "nested side panels",
             "a ring footrest", "wing-like sides", "a split seat pan",
             "folding joints", "a pedestal foot"]
_SHAPES = ["rounded", "rectilinear", "organic", "trapezoidal", "cylindrical",
           "shell-like", "geometric", "sweeping", "stacked", "asymmetric",
           "low-slung", "upright"]
_DETAILS = ["stitched seam lines", "a cutout handle", "ribbed edges",
            "a floating seat", "exposed joinery", "a woven panel",
            "contrast piping", "a sculpted lumbar ridge", "notched corners",
            "an extended footbar", "twin spindles", "a cantilever curve",
            "scalloped edging", "a tilted crest rail", "flared feet",
            "an hourglass waist"]
_USERS = ["a busy professional", "a growing family", "students", "designers",
          "frequent readers", "guests", "remote workers", "children",
          "cafe patrons", "collectors"]
_PROPORTIONS = ["balanced", "seat-heavy", "back-dominant", "low and wide",
                "tall and narrow", "evenly squared", "ground-hugging",
                "top-weighted"]


class MockVlmBackend:
    """Deterministic description generator for tests and demo pipelines.

    Output is a pure function of (seed, prompt kind, object identity), so
    repeated runs produce byte-identical labels.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.backend_id = f"mock-vlm/seed{seed}"
        self.calls = 0

    def describe(self, prompt: str, record: ObjectRecord, template: PromptTemplate) -> str:
        self.calls += 1
        digest = hashlib.sha256(
            f"{self.seed}|{template.kind}|{record.object_id}|{record.image_ref}".encode()
        ).digest()

        def pick(idx: int, options: list[str]) -> str:
            return options[digest[idx] % len(options)]

        noun = record.category or "object"
        adj = pick(0, _ADJECTIVES)
        use = pick(1, _USES)
        feature = pick(2, _FEATURES)
        shape = pick(3, _SHAPES)
        detail = pick(4, _DETAILS)
        user = pick(5, _USERS)
        proportion = pick(6, _PROPORTIONS)
        if template.kind == DESIGN_PURPOSE:
            return (f"A {adj} {noun} intended for {use}. It suits {user} best. "
                    f"The design favors {proportion} proportions for comfort.")
        if template.kind == STRUCTURE:
            return (f"A {adj} {noun} with {feature}. The silhouette is {shape} "
                    f"with {proportion} proportions. Its most unique element is {detail}.")
        return (f"A {adj} {noun} for {use}. {shape.capitalize()} silhouette with "
                f"{feature}. Unique detail: {detail}.")


class RemoteVlmBackend:
    """HTTP endpoint speaking {prompt, image} -> {"text": ...}."""

    def __init__(self, config: VlmBackendConfig,
                 sleep: Callable[[float], None] = time.sleep):
        self.config = config
        self.backend_id = config.endpoint_url or "remote-vlm"
        self._sleep = sleep
        self.calls = 0

    def describe(self, prompt: str, record: ObjectRecord, template: PromptTemplate) -> str:
        import requests

        self.calls += 1
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self._sleep(0.2 * (2 ** (attempt - 1)))
            try:
                resp = requests.post(
                    self.config.endpoint_url,
                    json={"prompt": prompt, "image": record.image_ref},
                    timeout=30.0,
                )
            except Exception as exc:
                last_error = exc
                continue
            if resp.status_code >= 500:
                last_error = VlmBackendError(f"endpoint returned {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise VlmBackendError(f"endpoint rejected the request: {resp.status_code}")
            try:
                return str(resp.json().get("text", ""))
            except Exception as exc:
                last_error = exc
        raise VlmBackendError(
            f"{self.config.endpoint_url}: gave up after {self.config.max_retries} retries: "
            f"{last_error}"
        )


def vlm_backend_for(config: VlmBackendConfig):
    if config.kind == "mock":
        return MockVlmBackend(seed=config.seed)
    return RemoteVlmBackend(config)


# --- description generation ---------------------------------------------------

def truncate_to_budget(text: str, cap: int, rule: TokenRule = WHITESPACE_RULE) -> str | None:
    """Longest prefix of whole sentences within ``cap`` tokens, or None."""
    sentences = _SENTENCE_SPLIT.split(text.strip())
    kept: list[str] = []
    for sentence in sentences:
        candidate = " ".join(kept + [sentence])
        if rule.count(candidate) <= cap:
            kept.append(sentence)
        else:
            break
    if not kept:
        return None
    return " ".join(kept)


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def request_description(
    record: ObjectRecord,
    template: PromptTemplate,
    backend,
    rule: TokenRule = WHITESPACE_RULE,
    clock: Callable[[], str] = _now_iso,
) -> Description:
    """Generate one description for a record, enforcing the token budget.

    Over-budget responses are truncated at the last sentence boundary that
    fits; if not even one sentence fits, the backend is asked once more with
    an explicit brevity instruction before giving up.
    """
    if isinstance(backend, VlmBackendConfig):
        backend = vlm_backend_for(backend)
    cap = rule.cap_for(template.max_description_tokens)
    prompt = render_prompt(template, record)
    raw = backend.describe(prompt, record, template).strip()
    if not raw:
        raise EmptyResponseError(f"backend returned no text for {record.object_id!r}")

    truncated = False
    text = raw
    if rule.count(text) > cap:
        clipped = truncate_to_budget(text, cap, rule)
        if clipped is None:
            brief_prompt = f"{prompt} Answer in one short sentence of at most {cap} words."
            text = backend.describe(brief_prompt, record, template).strip()
            if not text:
                raise EmptyResponseError(f"backend returned no text for {record.object_id!r}")
            if rule.count(text) > cap:
                clipped = truncate_to_budget(text, cap, rule)
                if clipped is None:
                    raise BudgetViolationError(
                        f"{record.object_id!r}: response cannot fit the "
                        f"{template.max_description_tokens}-token budget"
                    )
                text = clipped
            truncated = True
        else:
            text = clipped
            truncated = True

    return Description(
        object_id=record.object_id,
        kind=template.kind,
        text=text,
        token_count=rule.count(text),
        backend_id=getattr(backend, "backend_id", "unknown"),
        created_at=clock(),
        truncated=truncated,
    )


@dataclass
class BatchLabelResult:
    catalog: DatasetCatalog
    failures: dict[str, str] = field(default_factory=dict)
    calls_made: int = 0
    skipped: int = 0


def batch_label(
    catalog: DatasetCatalog,
    template: PromptTemplate,
    backend,
    rule: TokenRule = WHITESPACE_RULE,
    config: VlmBackendConfig | None = None,
    clock: Callable[[], float] = time.monotonic,
    sleep: Callable[[float], None] = time.sleep,
) -> BatchLabelResult:
    """Label every record lacking a description of the template's kind.

    Resumable (already-labeled records are skipped), rate-limited, and
    failure-tolerant: individual backend errors are collected per object and
    the run continues.
    """
    if isinstance(backend, VlmBackendConfig):
        config = backend
        backend = vlm_backend_for(backend)
    interval = 60.0 / config.rate_limit if config is not None else 0.0

    result = BatchLabelResult(catalog=catalog)
    updated = catalog
    last_call: float | None = None
    for record in catalog.manifest.records:
        if any(d.kind == template.kind for d in updated.descriptions_for(record.object_id)):
            result.skipped += 1
            continue
        if last_call is not None:
            wait = interval - (clock() - last_call)
            if wait > 0:
                sleep(wait)
        last_call = clock()
        result.calls_made += 1
        try:
            desc = request_description(record, template, backend, rule=rule)
        except LabelError as exc:
            result.failures[record.object_id] = str(exc)
            continue
        updated = updated.with_description(desc)
    result.catalog = updated
    return result
