"""Prompt templates and deterministic rendering.

Three template kinds exist: a support template carrying the sentence, mask
slots, and the category label; a query template without the label; and a
description-request template sent to the description generator.  Rendering is
a pure function of its inputs, and the canonical text (hence its SHA-256 key)
must be reproducible byte-for-byte by any external embedding exporter.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass

from .errors import InvalidArgumentError, ValidationError

PLACEHOLDER_X = "{x}"
PLACEHOLDER_MASK = "{MASK}"
PLACEHOLDER_LABEL = "{L}"
PLACEHOLDER_CATEGORY = "{c}"

_PLACEHOLDER_RE = re.compile(r"\{x\}|\{MASK\}|\{L\}")
_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, and detach punctuation as its own tokens."""
    return _TOKEN_RE.findall(text.lower())


def normalize_label(label: str) -> str:
    """Canonical natural-language form of a label key: underscores become spaces."""
    return " ".join(tokenize(label.replace("_", " ")))


def mask_sentinel(j: int) -> str:
    """Token marking the j-th (1-based) mask slot."""
    return f"[mask_{j}]"


def prompt_key(canonical_text: str) -> str:
    return hashlib.sha256(canonical_text.encode("utf-8")).hexdigest()


def _require_once(template: str, placeholder: str, where: str) -> None:
    n = template.count(placeholder)
    if n != 1:
        raise ValidationError(
            f"{where} must contain {placeholder} exactly once, found {n}: {template!r}"
        )


@dataclass(frozen=True)
class PromptTemplateSet:
    """The three templates plus the number of mask slots m."""

    support_template: str
    query_template: str
    description_request_template: str
    mask_count: int = 3

    def __post_init__(self):
        if self.mask_count < 1:
            raise ValidationError(f"mask_count must be >= 1, got {self.mask_count}")
        _require_once(self.support_template, PLACEHOLDER_X, "support template")
        _require_once(self.support_template, PLACEHOLDER_MASK, "support template")
        _require_once(self.support_template, PLACEHOLDER_LABEL, "support template")
        _require_once(self.query_template, PLACEHOLDER_X, "query template")
        _require_once(self.query_template, PLACEHOLDER_MASK, "query template")
        if PLACEHOLDER_LABEL in self.query_template:
            raise ValidationError("query template must not contain {L}")
        _require_once(
            self.description_request_template, PLACEHOLDER_CATEGORY, "description request template"
        )


@dataclass(frozen=True)
class RenderedPrompt:
    """A rendered prompt: lowercase tokens, mask slot positions, and a stable key."""

    tokens: tuple[str, ...]
    mask_positions: tuple[int, ...]
    kind: str  # "support" | "query" | "description"
    canonical_text: str
    key: str

    @property
    def mask_count(self) -> int:
        return len(self.mask_positions)

    def context_tokens(self) -> list[str]:
        """Tokens other than the mask sentinels, in order."""
        masked = set(self.mask_positions)
        return [t for i, t in enumerate(self.tokens) if i not in masked]


def _render(template: str, mask_count: int, kind: str, substitutions: dict) -> RenderedPrompt:
    """Expand a template into canonical text and a token sequence.

    ``substitutions`` maps placeholder -> raw text; substituted text is
    normalized through the tokenizer so canonical text is casing- and
    spacing-insensitive to the raw inputs.  Literal template text keeps its
    casing in the canonical form but is lowercased in the token stream.
    """
    canonical_parts: list[str] = []
    tokens: list[str] = []
    mask_positions: list[int] = []
    pos = 0
    for match in _PLACEHOLDER_RE.finditer(template):
        literal = template[pos : match.start()]
        canonical_parts.append(literal)
        tokens.extend(tokenize(literal))
        placeholder = match.group(0)
        if placeholder == PLACEHOLDER_MASK:
            canonical_parts.append(" ".join(f"[MASK_{j}]" for j in range(1, mask_count + 1)))
            for j in range(1, mask_count + 1):
                mask_positions.append(len(tokens))
                tokens.append(mask_sentinel(j))
        else:
            substituted = substitutions[placeholder]
            canonical_parts.append(substituted)
            tokens.extend(substituted.split(" ") if substituted else [])
        pos = match.end()
    tail = template[pos:]
    canonical_parts.append(tail)
    tokens.extend(tokenize(tail))

    canonical_text = "".join(canonical_parts)
    return RenderedPrompt(
        tokens=tuple(tokens),
        mask_positions=tuple(mask_positions),
        kind=kind,
        canonical_text=canonical_text,
        key=prompt_key(canonical_text),
    )


def render_support(templates: PromptTemplateSet, x: str, label: str) -> RenderedPrompt:
    """Render a support sentence with its category label into the support template."""
    return _render_with_label(templates, x, label, kind="support")


def render_description(templates: PromptTemplateSet, description: str, label: str) -> RenderedPrompt:
    """Render a category description through the support template.

    The description plays the sentence role and the category's own label
    fills the label slot.
    """
    return _render_with_label(templates, description, label, kind="description")


def _render_with_label(templates: PromptTemplateSet, x: str, label: str, kind: str) -> RenderedPrompt:
    x_norm = " ".join(tokenize(x))
    if not x_norm:
        raise InvalidArgumentError(f"empty sentence text for {kind} prompt")
    label_norm = normalize_label(label)
    if not label_norm:
        raise InvalidArgumentError("empty label")
    return _render(
        templates.support_template,
        templates.mask_count,
        kind,
        {PLACEHOLDER_X: x_norm, PLACEHOLDER_LABEL: label_norm},
    )


def render_query(templates: PromptTemplateSet, x: str) -> RenderedPrompt:
    x_norm = " ".join(tokenize(x))
    if not x_norm:
        raise InvalidArgumentError("empty sentence text for query prompt")
    return _render(templates.query_template, templates.mask_count, "query", {PLACEHOLDER_X: x_norm})


def render_description_request(templates: PromptTemplateSet, label: str) -> str:
    """The natural-language request asking the generator to describe a category."""
    label_norm = normalize_label(label)
    if not label_norm:
        raise InvalidArgumentError("empty label")
    return templates.description_request_template.replace(PLACEHOLDER_CATEGORY, label_norm)


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

DESCRIPTION_REQUEST = "Provide a comprehensive description of {c}."

# Hard support/query template pairs; "about-category" performed best in the
# template study and is the default.
_PRESET_PAIRS = {
    "about-category": (
        "About {x} Category {MASK} are : {L}.",
        "About {x} Category {MASK}.",
    ),
    "opinions-about": (
        "In {x}, the opinions about {L} are {MASK}.",
        "In {x}, the opinion that exists are {MASK}.",
    ),
    "aspects-of": (
        "{L} The aspects of {x} are {MASK}.",
        "The aspects of {x} are {MASK}.",
    ),
    "what-aspects": (
        "{L} What are the aspects of {x} {MASK}.",
        "What are the aspects of {x} {MASK}.",
    ),
    "this-means": (
        "This {x} means : {L} {MASK}.",
        "This {x} means : {MASK}.",
    ),
}

DEFAULT_PRESET = "about-category"
PRESET_NAMES = tuple(_PRESET_PAIRS)


def preset_templates(name: str = DEFAULT_PRESET, mask_count: int = 3) -> PromptTemplateSet:
    if name not in _PRESET_PAIRS:
        raise ValidationError(f"unknown template preset {name!r}; known: {', '.join(PRESET_NAMES)}")
    support, query = _PRESET_PAIRS[name]
    return PromptTemplateSet(support, query, DESCRIPTION_REQUEST, mask_count)


def load_template_file(path) -> PromptTemplateSet:
    """Load a template set from JSON: {"support", "query", "description_request", "mask_count"}."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValidationError(f"template file {path} must hold a JSON object")
    known = {"support", "query", "description_request", "mask_count"}
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(f"template file {path} has unknown keys: {sorted(unknown)}")
    missing = {"support", "query", "description_request"} - set(raw)
    if missing:
        raise ValidationError(f"template file {path} is missing keys: {sorted(missing)}")
    return PromptTemplateSet(
        support_template=raw["support"],
        query_template=raw["query"],
        description_request_template=raw["description_request"],
        mask_count=int(raw.get("mask_count", 3)),
    )
