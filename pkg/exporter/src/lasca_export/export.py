"""Template-dump to embedding-store export."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

from .models import LoadedModel, declared_shape, load_pretrained

DEFAULT_BATCH = 32


class ModelUnavailableError(RuntimeError):
    """The requested encoder cannot be loaded in this environment."""


@dataclass(frozen=True)
class ExportManifest:
    """Provenance record written alongside the embedding store."""

    model: str
    dim: int
    pooling: str
    revision: str
    templates_path: str
    output_path: str
    record_count: int


def read_template_dump(path: str | Path) -> list[str]:
    """Unique template texts from a dump, preserving first-seen order.

    Duplicate lines key the same exact string and collapse to one record.
    """
    texts: list[str] = []
    seen: set[str] = set()
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            text = rec.get("text")
            if not isinstance(text, str) or not text:
                raise ValueError(f"{path}:{lineno}: record lacks a 'text' string")
            if text not in seen:
                seen.add(text)
                texts.append(text)
    return texts


def export(
    templates_path: str | Path,
    model_name: str,
    output_path: str | Path,
    batch: int = DEFAULT_BATCH,
    loader: Callable[[str], LoadedModel] | None = None,
) -> ExportManifest:
    """Encode every unique template and write the embedding store.

    Args:
        templates_path: JSON Lines dump produced by the pipeline's template
            command.
        model_name: one of the published encoders in the model table.
        output_path: destination JSON Lines store.
        batch: inference batch size.
        loader: model-loading hook, replaceable in tests; defaults to the
            pretrained sentence-transformers loader.

    Raises:
        ModelUnavailableError: unknown model name or unretrievable snapshot.
        RuntimeError: the loaded model's output contradicts its declared dim.
    """
    try:
        dim, pooling = declared_shape(model_name)
    except KeyError as exc:
        raise ModelUnavailableError(str(exc)) from exc
    loader = loader or load_pretrained
    try:
        model = loader(model_name)
    except ModelUnavailableError:
        raise
    except Exception as exc:
        raise ModelUnavailableError(
            f"cannot load model '{model_name}': {exc}"
        ) from exc
    if model.dim != dim:
        raise RuntimeError(
            f"loader produced dim {model.dim} for '{model_name}', table says {dim}"
        )

    texts = read_template_dump(templates_path)
    records: list[str] = []
    for start in range(0, len(texts), batch):
        chunk = texts[start : start + batch]
        vectors = model.encode(chunk, batch)
        if vectors.shape != (len(chunk), dim):
            raise RuntimeError(
                f"model returned shape {vectors.shape}, expected ({len(chunk)}, {dim})"
            )
        for text, vec in zip(chunk, vectors):
            records.append(
                json.dumps(
                    {
                        "text": text,
                        "model": model_name,
                        "dim": dim,
                        "vector": [float(v) for v in vec],
                    },
                    sort_keys=True,
                )
            )

    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    tmp = output_path.with_name(output_path.name + ".tmp")
    tmp.write_text("\n".join(records) + ("\n" if records else ""), encoding="utf-8")
    os.replace(tmp, output_path)

    manifest = ExportManifest(
        model=model_name,
        dim=dim,
        pooling=pooling,
        revision=model.revision,
        templates_path=str(templates_path),
        output_path=str(output_path),
        record_count=len(records),
    )
    manifest_path = output_path.with_name(output_path.name + ".manifest.json")
    manifest_path.write_text(
        json.dumps(asdict(manifest), sort_keys=True, indent=1), encoding="utf-8"
    )
    return manifest
