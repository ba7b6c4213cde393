"""Exception types shared across the pipeline."""

from __future__ import annotations


class LascaError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(LascaError):
    """A data file contains a row or cell that cannot be parsed."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}:" if line is None else f"{path}:{line}:"
        super().__init__(f"{prefix} {message}" if prefix else message)


class SchemaError(LascaError):
    """A data file violates its declared schema (columns, ordering, ranges)."""


class LexiconError(LascaError):
    """A lexicon file is malformed or a template cannot be composed from it."""


class EmbeddingLookupError(LascaError):
    """A precomputed embedding store has no entry for the requested text."""

    def __init__(self, text_digest: str):
        self.text_digest = text_digest
        super().__init__(f"no stored embedding for text digest {text_digest}")


class BackendUnavailableError(LascaError):
    """An encoder backend cannot be constructed in this environment."""


class ConfigError(LascaError):
    """A run configuration file is unreadable or internally inconsistent."""
