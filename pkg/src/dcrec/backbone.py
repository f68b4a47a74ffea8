"""Embedding + bi-interaction (EB) backbone producing the matching vector m.

m = 1/2 [(sum_i v_i)^2 - sum_i v_i^2], elementwise over the embedding
dimension; only second-order terms, no linear part or global bias.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import _kernels
from .data import InteractionRecord
from .model import Model

WITH_CONFOUNDER = "with_confounder"
WITHOUT_CONFOUNDER = "without_confounder"


def _with_conf(mode: str) -> bool:
    if mode == WITH_CONFOUNDER:
        return True
    if mode == WITHOUT_CONFOUNDER:
        return False
    raise ValueError(f"unknown backbone mode {mode!r}")


def default_mode(model: Model) -> str:
    return WITH_CONFOUNDER if model.uses_confounder else WITHOUT_CONFOUNDER


def embed_lookup(model: Model, record: InteractionRecord, active_fields: Sequence[int]) -> list[np.ndarray]:
    if not active_fields:
        raise ValueError("active_fields must be non-empty")
    return [model.table(f)[record.feature_values[f]].copy() for f in active_fields]


def bi_interaction(vectors: Sequence[np.ndarray]) -> np.ndarray:
    if len(vectors) == 0:
        raise ValueError("bi_interaction needs at least one vector")
    v = np.asarray(vectors, dtype=np.float64)
    s = v.sum(axis=0)
    return 0.5 * (s * s - (v * v).sum(axis=0))


def backbone_forward(model: Model, record: InteractionRecord, mode: str | None = None) -> np.ndarray:
    fields = model.backbone_fields(_with_conf(mode or default_mode(model)))
    return bi_interaction(embed_lookup(model, record, fields))


def backbone_backward(model: Model, record: InteractionRecord, mode: str | None, upstream) -> np.ndarray:
    """dm/d(embedding) contracted with ``upstream``; same shape as the table."""
    fields = model.backbone_fields(_with_conf(mode or default_mode(model)))
    feats = np.asarray(record.feature_values, dtype=np.int64)[None, :]
    rows = field_rows(model, feats, fields)
    emb = model.params["embedding"]
    _, s = _kernels.eb_forward(emb, rows)
    grad = np.zeros_like(emb)
    _kernels.eb_backward(emb, rows, s, np.asarray(upstream, dtype=np.float64)[None, :], grad)
    return grad


# ---------------------------------------------------------------- batched


def field_rows(model: Model, features: np.ndarray, fields: Sequence[int]) -> np.ndarray:
    """Global embedding row per (record, field)."""
    fields = np.asarray(fields, dtype=np.int64)
    return features[:, fields] + model.offsets[fields]


def forward_batch(model: Model, features: np.ndarray, with_confounder: bool | None = None, extra=None):
    """Returns ``(m, s, rows)`` for a (B, F) feature matrix."""
    rows = field_rows(model, features, model.backbone_fields(with_confounder))
    m, s = _kernels.eb_forward(model.params["embedding"], rows, extra)
    return m, s, rows
