"""JSON model files.

A model file is a single JSON object::

    {"format": "survmtlr-model", "format_version": 1, "package_version": ...,
     "kind": "coxph" | "mtlr" | "nmtlr",
     "schema": {"time_column": ..., "event_column": ..., "categorical_columns": [...],
                "levels": {...}},
     "feature_names": [...],
     "grid": [...] | null, "scaler": {...}, "architecture": [...] | null,
     "model": {...}}

Floats are written with ``repr`` precision, so a reloaded model predicts
exactly what the in-memory one did.
"""

from __future__ import annotations

import json
from pathlib import Path

from .classic import CoxModel
from .mtlr import MtlrModel
from .nmtlr import NmtlrModel

FORMAT_TAG = "survmtlr-model"
FORMAT_VERSION = 1

_KINDS = {"coxph": CoxModel, "mtlr": MtlrModel, "nmtlr": NmtlrModel}


class ModelFormatError(ValueError):
    pass


def model_kind(model) -> str:
    for kind, cls in _KINDS.items():
        if isinstance(model, cls):
            return kind
    raise TypeError(f"not a survival model: {type(model).__name__}")


def model_to_document(model, schema: dict | None = None, feature_names=()) -> dict:
    from . import __version__

    kind = model_kind(model)
    body = model.to_dict()
    return {
        "format": FORMAT_TAG,
        "format_version": FORMAT_VERSION,
        "package_version": __version__,
        "kind": kind,
        "schema": dict(schema or {}),
        "feature_names": list(feature_names),
        "grid": body.get("grid"),
        "scaler": body["scaler"],
        "architecture": body["network"]["layers"] if kind == "nmtlr" else None,
        "model": body,
    }


def model_from_document(doc: dict):
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_TAG:
        raise ModelFormatError("not a model file (missing format tag)")
    if doc.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model file version {doc.get('format_version')!r}")
    kind = doc.get("kind")
    if kind not in _KINDS:
        raise ModelFormatError(f"unknown model kind {kind!r}")
    try:
        return _KINDS[kind].from_dict(doc["model"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"corrupt {kind} model: {exc}") from None


def save_model(model, path, schema: dict | None = None, feature_names=()) -> Path:
    path = Path(path)
    doc = model_to_document(model, schema, feature_names)
    path.write_text(json.dumps(doc) + "\n", encoding="utf-8")
    return path


def load_model(path):
    """Return ``(model, document)``."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: invalid JSON ({exc})") from None
    return model_from_document(doc), doc
