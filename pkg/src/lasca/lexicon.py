"""Fixed feature-to-description lexicons and deterministic template texts.

A lexicon maps feature names to short affect-aware labels. It is loaded once
from JSON and never mutated, so identical masks always produce byte-identical
template strings. The alternative feature_name mode replaces every label with
the feature name itself while keeping the template structure intact, which is
the ablation axis between label styles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import LexiconError
from .salience import SalienceMask

__all__ = [
    "SemanticLexicon",
    "TemplateText",
    "CoverageReport",
    "load_lexicon",
    "validate_coverage",
    "compose_template",
    "compose_multimodal",
]

END_MARKER = " <|endoftext|>"
MULTIMODAL_DELIMITER = " | "

_PREFIXES = {"facial": "facial: ", "audio": "audio: Acoustic markers indicate "}
_SUFFIXES = {"facial": "", "audio": "."}
_EMPTY_TEXTS = {
    "facial": "facial: no salient cues",
    "audio": "audio: no salient acoustic cues.",
}

MODALITIES = ("facial", "audio")
LEXICON_MODES = ("affect_aware", "feature_name")


@dataclass(frozen=True)
class SemanticLexicon:
    """Ordered mapping from feature name to label for one modality."""

    entries: tuple[tuple[str, str], ...]
    modality: str
    mode: str

    @property
    def features(self) -> tuple[str, ...]:
        return tuple(f for f, _ in self.entries)

    def label_for(self, feature: str) -> str | None:
        for f, label in self.entries:
            if f == feature:
                return label
        return None


@dataclass(frozen=True)
class TemplateText:
    """Deterministic text rendering of one window's active features."""

    text: str
    active_features: tuple[str, ...]
    modality: str


@dataclass(frozen=True)
class CoverageReport:
    """Advisory mismatch report between a lexicon and a feature column set."""

    uncovered_features: tuple[str, ...]
    unused_labels: tuple[str, ...]

    @property
    def clean(self) -> bool:
        return not self.uncovered_features and not self.unused_labels

    def warnings(self) -> list[str]:
        out = []
        for name in self.uncovered_features:
            out.append(f"feature '{name}' has no lexicon label")
        for name in self.unused_labels:
            out.append(f"lexicon entry '{name}' matches no feature column")
        return out


def _check_label(feature: str, label: str) -> None:
    if not label or not label.strip():
        raise LexiconError(f"empty label for feature '{feature}'")
    if MULTIMODAL_DELIMITER in label or "<|endoftext|>" in label:
        raise LexiconError(
            f"label for feature '{feature}' contains reserved template syntax"
        )


def load_lexicon(path: str | Path, mode: str = "affect_aware") -> SemanticLexicon:
    """Load a lexicon JSON file, preserving entry order.

    The file holds `{"modality": ..., "entries": [{"feature","label"}, ...]}`.
    In feature_name mode each label is replaced by the feature name verbatim.
    """
    if mode not in LEXICON_MODES:
        raise LexiconError(f"unknown lexicon mode '{mode}'")
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise LexiconError(f"cannot read lexicon {path}: {exc}") from exc

    modality = doc.get("modality")
    if modality not in MODALITIES:
        raise LexiconError(f"{path}: modality must be one of {MODALITIES}")
    raw = doc.get("entries")
    if not isinstance(raw, list):
        raise LexiconError(f"{path}: 'entries' must be an array")

    entries: list[tuple[str, str]] = []
    seen: set[str] = set()
    for item in raw:
        feature = item.get("feature")
        label = item.get("label")
        if not feature or not isinstance(feature, str):
            raise LexiconError(f"{path}: entry with missing feature name")
        if feature in seen:
            raise LexiconError(f"{path}: duplicate feature '{feature}'")
        seen.add(feature)
        if not isinstance(label, str):
            raise LexiconError(f"{path}: label for '{feature}' must be a string")
        if mode == "feature_name":
            label = feature
        _check_label(feature, label)
        entries.append((feature, label))
    return SemanticLexicon(entries=tuple(entries), modality=modality, mode=mode)


def validate_coverage(
    lexicon: SemanticLexicon, feature_names: list[str] | tuple[str, ...]
) -> CoverageReport:
    """Report features without labels and labels without features (warnings only)."""
    lex = set(lexicon.features)
    cols = set(feature_names)
    return CoverageReport(
        uncovered_features=tuple(n for n in feature_names if n not in lex),
        unused_labels=tuple(f for f in lexicon.features if f not in cols),
    )


def compose_template(
    mask: SalienceMask,
    feature_names: list[str] | tuple[str, ...],
    lexicon: SemanticLexicon,
    strict: bool = False,
) -> TemplateText:
    """Render a unimodal template from a mask over named features.

    Labels of active features are joined with ", " in lexicon entry order,
    wrapped in the modality's surface form, and closed with the terminal
    marker. An empty mask yields the modality's fallback text.

    Args:
        mask: bits aligned with feature_names.
        feature_names: column names of the masked vector.
        lexicon: the modality's lexicon.
        strict: raise when an active feature has no lexicon entry instead of
            skipping it.
    """
    if len(mask.bits) != len(feature_names):
        raise ValueError(
            f"mask dimension {len(mask.bits)} != {len(feature_names)} features"
        )
    active = {feature_names[i] for i in mask.active_indices()}
    unlabeled = active - set(lexicon.features)
    if unlabeled and strict:
        raise LexiconError(
            "active features without lexicon entries: "
            + ", ".join(sorted(unlabeled))
        )

    ordered = [(f, label) for f, label in lexicon.entries if f in active]
    modality = lexicon.modality
    if ordered:
        joined = ", ".join(label for _, label in ordered)
        body = _PREFIXES[modality] + joined + _SUFFIXES[modality]
    else:
        body = _EMPTY_TEXTS[modality]
    return TemplateText(
        text=body + END_MARKER,
        active_features=tuple(f for f, _ in ordered),
        modality=modality,
    )


def compose_multimodal(facial: TemplateText, audio: TemplateText) -> TemplateText:
    """Join unimodal templates with the delimiter and a single terminal marker."""
    if facial.modality != "facial" or audio.modality != "audio":
        raise ValueError("expected a facial and an audio template, in that order")
    parts = (
        facial.text.removesuffix(END_MARKER),
        audio.text.removesuffix(END_MARKER),
    )
    return TemplateText(
        text=MULTIMODAL_DELIMITER.join(parts) + END_MARKER,
        active_features=facial.active_features + audio.active_features,
        modality="multimodal",
    )
