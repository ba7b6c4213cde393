"""Offline embedding exporter.

Reads a template dump (JSON Lines of `{"text", "count"}`), runs a pretrained
sentence encoder over the unique texts in inference mode, and writes the
embedding store consumed by the prediction pipeline: one JSON Lines record
`{"text", "model", "dim", "vector"}` per unique template, keyed by the exact
string.
"""

from .export import ExportManifest, ModelUnavailableError, export

__version__ = "0.1.0"

__all__ = ["ExportManifest", "ModelUnavailableError", "export"]
