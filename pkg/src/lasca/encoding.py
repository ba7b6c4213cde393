"""Frozen text encoders and feature fusion.

Every backend maps a template string to a fixed-dimension vector and is
strictly read-only after construction: identical text yields identical
vectors across calls and runs, and nothing in the pipeline can mutate
encoder state. Embeddings are memoized by text digest, which is sound
precisely because of that frozen contract.

Backends:
  hashing      fully offline token-multiset encoder for tests and synthetic
               runs. Each lowercase whitespace token is mapped by a stable
               64-bit hash to a signed basis vector; the sum is L2-normalized,
               so the embedding depends only on the token multiset.
  precomputed  exact-string lookup into a JSON Lines store written offline
               (see the export tool).
  external     inference over a serialized model file; requires an ONNX
               runtime, which is optional and probed lazily.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BackendUnavailableError, EmbeddingLookupError, SchemaError
from .lexicon import TemplateText

__all__ = [
    "KNOWN_ENCODERS",
    "EncoderSpec",
    "SemanticEmbedding",
    "FusedRepresentation",
    "build_encoder",
    "encode",
    "batch_encode",
    "fuse",
    "text_digest",
    "load_embedding_store",
]

# Published sentence encoders usable through the precomputed/external
# backends: name -> (embedding dim, pooling).
KNOWN_ENCODERS: dict[str, tuple[int, str]] = {
    "all-mpnet-base-v2": (768, "mean"),
    "multi-qa-mpnet-base-dot-v1": (768, "cls"),
    "all-distilroberta-v1": (768, "mean"),
    "all-MiniLM-L12-v2": (384, "mean"),
    "multi-qa-distilbert-cos-v1": (768, "mean"),
}

BACKENDS = ("hashing", "precomputed", "external")
POOLINGS = ("mean", "cls")

DEFAULT_HASHING_DIM = 384


@dataclass(frozen=True)
class EncoderSpec:
    """Identity and shape of an encoder backend."""

    name: str
    dim: int = DEFAULT_HASHING_DIM
    pooling: str = "mean"
    backend: str = "hashing"

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError(f"dim must be positive, got {self.dim}")
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend '{self.backend}'")
        if self.pooling not in POOLINGS:
            raise ValueError(f"unknown pooling '{self.pooling}'")
        known = KNOWN_ENCODERS.get(self.name)
        if known is not None and known[0] != self.dim:
            raise ValueError(
                f"encoder '{self.name}' has dim {known[0]}, spec declares {self.dim}"
            )


@dataclass(frozen=True)
class SemanticEmbedding:
    """One encoded template text."""

    vector: np.ndarray
    source_text_hash: str

    def __post_init__(self):
        self.vector.setflags(write=False)

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])


@dataclass(frozen=True)
class FusedRepresentation:
    """Concatenation of normalized features with a semantic embedding."""

    z: np.ndarray
    d_features: int
    d_semantic: int

    def feature_part(self) -> np.ndarray:
        return self.z[: self.d_features]

    def semantic_part(self) -> np.ndarray:
        return self.z[self.d_features :]


def text_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _token_vector(token: str, dim: int) -> tuple[int, float]:
    h = int.from_bytes(
        hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "big"
    )
    sign = 1.0 if h & 1 == 0 else -1.0
    return (h >> 1) % dim, sign


class _EncoderBase:
    def __init__(self, spec: EncoderSpec):
        self.spec = spec
        self._cache: dict[str, SemanticEmbedding] = {}
        self._lock = threading.Lock()

    def _vector(self, text: str) -> np.ndarray:
        raise NotImplementedError

    def encode(self, text: TemplateText | str) -> SemanticEmbedding:
        raw = text.text if isinstance(text, TemplateText) else text
        if not raw or not raw.strip():
            raise ValueError("cannot encode empty text")
        digest = text_digest(raw)
        hit = self._cache.get(digest)
        if hit is not None:
            return hit
        vec = np.asarray(self._vector(raw), dtype=np.float64)
        if vec.shape != (self.spec.dim,):
            raise SchemaError(
                f"backend produced shape {vec.shape}, expected ({self.spec.dim},)"
            )
        emb = SemanticEmbedding(vector=vec, source_text_hash=digest)
        with self._lock:
            # Idempotent: concurrent writers store equal values for this key.
            self._cache.setdefault(digest, emb)
        return self._cache[digest]


class HashingEncoder(_EncoderBase):
    """Deterministic token-multiset encoder, unit L2 norm for non-empty text.

    Signed basis vectors can cancel exactly for adversarial token multisets;
    that case falls back to a unit basis vector keyed by the sorted multiset,
    so the embedding stays unit-norm and order-invariant for every input.
    """

    def _vector(self, text: str) -> np.ndarray:
        out = np.zeros(self.spec.dim, dtype=np.float64)
        tokens = text.lower().split()
        for token in tokens:
            idx, sign = _token_vector(token, self.spec.dim)
            out[idx] += sign
        norm = float(np.linalg.norm(out))
        if norm > 0.0:
            out /= norm
        else:
            idx, _ = _token_vector("\x00".join(sorted(tokens)), self.spec.dim)
            out[idx] = 1.0
        return out


class PrecomputedEncoder(_EncoderBase):
    """Exact-string lookup into an embedding store written offline."""

    def __init__(self, spec: EncoderSpec, store_path: str | Path):
        super().__init__(spec)
        self._store = load_embedding_store(
            store_path, expect_model=spec.name, expect_dim=spec.dim
        )

    def _vector(self, text: str) -> np.ndarray:
        vec = self._store.get(text)
        if vec is None:
            raise EmbeddingLookupError(text_digest(text))
        return vec

    def texts(self) -> set[str]:
        return set(self._store)


class ExternalEncoder(_EncoderBase):
    """Inference over a locally serialized sentence-encoder directory.

    The runtime dependency is optional; construction fails with a backend
    error when it is missing or the model path does not resolve.
    """

    def __init__(self, spec: EncoderSpec, model_path: str | Path):
        super().__init__(spec)
        self.model_path = Path(model_path)
        if not self.model_path.exists():
            raise BackendUnavailableError(f"model path not found: {model_path}")
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise BackendUnavailableError(
                "external backend requires the 'sentence-transformers' package"
            ) from exc
        try:
            self._model = SentenceTransformer(str(self.model_path))
        except Exception as exc:
            raise BackendUnavailableError(
                f"cannot load serialized model at {model_path}: {exc}"
            ) from exc

    def _vector(self, text: str) -> np.ndarray:
        vec = self._model.encode([text], convert_to_numpy=True, show_progress_bar=False)
        return np.asarray(vec[0], dtype=np.float64)


def build_encoder(
    spec: EncoderSpec,
    store_path: str | Path | None = None,
    model_path: str | Path | None = None,
) -> _EncoderBase:
    if spec.backend == "hashing":
        return HashingEncoder(spec)
    if spec.backend == "precomputed":
        if store_path is None:
            raise ValueError("precomputed backend needs a store path")
        return PrecomputedEncoder(spec, store_path)
    if store_path is None and model_path is None:
        raise ValueError("external backend needs a model path")
    return ExternalEncoder(spec, model_path or store_path)


def encode(encoder: _EncoderBase, text: TemplateText | str) -> SemanticEmbedding:
    return encoder.encode(text)


def batch_encode(
    encoder: _EncoderBase, texts: list[TemplateText] | list[str]
) -> list[SemanticEmbedding]:
    """Element-wise encode with order preserved; the first failure aborts."""
    out: list[SemanticEmbedding] = []
    for i, text in enumerate(texts):
        try:
            out.append(encoder.encode(text))
        except Exception as exc:
            exc.args = (f"batch item {i}: {exc}",)
            raise
    return out


def fuse(x_norm: np.ndarray, s: SemanticEmbedding) -> FusedRepresentation:
    """Concatenate normalized features with the semantic embedding, in that order."""
    x = np.asarray(x_norm, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a flat feature vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("feature vector must be finite")
    if not np.all(np.isfinite(s.vector)):
        raise ValueError("embedding must be finite")
    z = np.concatenate([x, s.vector])
    z.setflags(write=False)
    return FusedRepresentation(z=z, d_features=x.size, d_semantic=s.dim)


def load_embedding_store(
    path: str | Path,
    expect_model: str | None = None,
    expect_dim: int | None = None,
) -> dict[str, np.ndarray]:
    """Read a JSON Lines embedding store keyed by exact template string.

    Each record is `{"text", "model", "dim", "vector"}`. Records are checked
    against the expected model name and dimension when given.
    """
    path = Path(path)
    store: dict[str, np.ndarray] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            text = rec.get("text")
            vector = rec.get("vector")
            dim = rec.get("dim")
            model = rec.get("model")
            if not isinstance(text, str) or not isinstance(vector, list):
                raise SchemaError(f"{path}:{lineno}: record needs 'text' and 'vector'")
            if dim != len(vector):
                raise SchemaError(
                    f"{path}:{lineno}: declared dim {dim} != vector length {len(vector)}"
                )
            if expect_dim is not None and dim != expect_dim:
                raise SchemaError(
                    f"{path}:{lineno}: store dim {dim} != encoder dim {expect_dim}"
                )
            if expect_model is not None and model != expect_model:
                raise SchemaError(
                    f"{path}:{lineno}: store model '{model}' != encoder '{expect_model}'"
                )
            vec = np.asarray(vector, dtype=np.float64)
            vec.setflags(write=False)
            store[text] = vec
    return store
