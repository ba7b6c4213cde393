"""Sentence-encoder registry and loading.

Only the published models below are accepted; their embedding dimensions and
pooling heads are fixed by their releases. The loader returns the model's own
encode function (the published pooling head is trusted rather than
reimplemented) together with a snapshot revision string for provenance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

# name -> (embedding dim, pooling)
MODEL_TABLE: dict[str, tuple[int, str]] = {
    "all-mpnet-base-v2": (768, "mean"),
    "multi-qa-mpnet-base-dot-v1": (768, "cls"),
    "all-distilroberta-v1": (768, "mean"),
    "all-MiniLM-L12-v2": (384, "mean"),
    "multi-qa-distilbert-cos-v1": (768, "mean"),
}


@dataclass(frozen=True)
class LoadedModel:
    name: str
    dim: int
    pooling: str
    revision: str
    encode: Callable[[list[str], int], np.ndarray]  # (texts, batch) -> (n, dim)


def declared_shape(name: str) -> tuple[int, str]:
    if name not in MODEL_TABLE:
        raise KeyError(
            f"unknown model '{name}'; expected one of {sorted(MODEL_TABLE)}"
        )
    return MODEL_TABLE[name]


def load_pretrained(name: str) -> LoadedModel:
    """Load a published sentence encoder through sentence-transformers.

    Raises ImportError when the optional dependency is missing and whatever
    the hub raises when the snapshot cannot be retrieved; export() wraps both
    into a model-unavailable error.
    """
    dim, pooling = declared_shape(name)
    from sentence_transformers import SentenceTransformer

    model = SentenceTransformer(f"sentence-transformers/{name}")
    model.eval()
    revision = getattr(model, "model_card_data", None)
    revision_str = getattr(revision, "base_model_revision", None) or "unpinned"

    def encode(texts: list[str], batch: int) -> np.ndarray:
        out = model.encode(
            texts,
            batch_size=batch,
            convert_to_numpy=True,
            show_progress_bar=False,
        )
        return np.asarray(out, dtype=np.float64)

    return LoadedModel(
        name=name, dim=dim, pooling=pooling, revision=revision_str, encode=encode
    )
