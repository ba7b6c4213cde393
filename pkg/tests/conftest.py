from __future__ import annotations

from pathlib import Path

import pytest

from lasca import PACKAGED_LEXICONS
from lasca.lexicon import load_lexicon


@pytest.fixture(scope="session")
def facial_lexicon():
    return load_lexicon(PACKAGED_LEXICONS["facial"])


@pytest.fixture(scope="session")
def audio_lexicon():
    return load_lexicon(PACKAGED_LEXICONS["audio"])


@pytest.fixture
def write_csv(tmp_path):
    """Write rows (lists of cells) as a CSV file and return its path."""

    def _write(name: str, rows: list[list]) -> Path:
        path = tmp_path / name
        path.write_text(
            "\n".join(",".join(str(c) for c in row) for row in rows) + "\n",
            encoding="utf-8",
        )
        return path

    return _write
