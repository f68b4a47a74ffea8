"""Weighted BCE + L2 objective, adagrad, minibatch loop and early stopping."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels
from .backbone import forward_batch
from .data import Dataset, InteractionRecord
from .experts import HEAD_PARAMS, head_backward, head_forward
from .model import MODEL_KINDS, PARAM_NAMES, Model

logger = logging.getLogger(__name__)

CLAMP = 1e-12
ADAGRAD_EPS = 1e-10


class NumericalError(RuntimeError):
    """Non-finite loss or gradient during training."""


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    l2_embedding: float = 0.0
    l2_other: float = 0.0
    batch_size: int = 1024
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    model_kind: str = "dcr_moe"
    metric_n: int = 10

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.patience < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("patience, batch_size and max_epochs must be >= 1")
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"unknown model_kind {self.model_kind!r}")


@dataclass
class AdagradState:
    acc: dict[str, np.ndarray]
    eps: float = ADAGRAD_EPS

    @classmethod
    def zeros(cls, model: Model, eps: float = ADAGRAD_EPS) -> "AdagradState":
        return cls({k: np.zeros_like(v) for k, v in model.params.items()}, eps)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    valid_loss: list[float] = field(default_factory=list)
    valid_metric: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0


def bce_loss(prediction: float, label: int, weight: float = 1.0) -> float:
    p = min(max(prediction, CLAMP), 1.0 - CLAMP)
    return -weight * (label * math.log(p) + (1 - label) * math.log(1.0 - p))


def adagrad_step(state: AdagradState, params: dict, grads: dict, learning_rate: float):
    """In place: acc += g^2; param -= lr * g / sqrt(acc + eps)."""
    for name, g in grads.items():
        if params[name].shape != g.shape:
            raise ValueError(f"shape mismatch for {name}")
        _kernels.adagrad_update(params[name], g, state.acc[name], learning_rate, state.eps)
    return state, params


def expert_index(model: Model, features: np.ndarray) -> np.ndarray:
    if model.kind == "dcr_moe":
        return features[:, model.schema.confounder_field]
    return np.zeros(len(features), dtype=np.int64)


def forward_factual(model: Model, features: np.ndarray) -> np.ndarray:
    """Training-time prediction: the gated expert (or the single NFM head)."""
    m, _, _ = forward_batch(model, features)
    experts = expert_index(model, features)
    out = np.empty(len(features))
    for e in np.unique(experts):
        sel = np.flatnonzero(experts == e)
        out[sel], _ = head_forward(model, m[sel], int(e))
    return out


def loss_and_grads(
    model: Model,
    features: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray | None = None,
    l2_embedding: float = 0.0,
    l2_other: float = 0.0,
    row_mask: np.ndarray | None = None,
):
    """Mean weighted BCE over the batch plus L2; returns (data_loss, total_loss, grads).

    Predictions are clamped to [1e-12, 1 - 1e-12]; a clamped prediction has
    zero gradient.
    """
    if model.output_activation != "sigmoid":
        raise ValueError("training requires a sigmoid output")
    B = len(features)
    w = np.ones(B) if weights is None else np.asarray(weights, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    params = model.params
    grads = {k: np.zeros_like(v) for k, v in params.items()}

    m, s, rows = forward_batch(model, features)
    experts = expert_index(model, features)
    dm = np.zeros_like(m)
    data_loss = 0.0
    for e in np.unique(experts):
        e = int(e)
        sel = np.flatnonzero(experts == e)
        p, cache = head_forward(model, m[sel], e)
        pc = np.clip(p, CLAMP, 1.0 - CLAMP)
        ys, ws = y[sel], w[sel]
        data_loss += float(np.sum(-ws * (ys * np.log(pc) + (1.0 - ys) * np.log(1.0 - pc))))
        inside = (p > CLAMP) & (p < 1.0 - CLAMP)
        dz3 = np.where(inside, ws * (p - ys), 0.0) / B
        g, dm_e = head_backward(model, e, cache, dz3)
        for name in HEAD_PARAMS:
            grads[name][e] += g[name]
        dm[sel] = dm_e
    data_loss /= B
    _kernels.eb_backward(params["embedding"], rows, s, dm, grads["embedding"])

    if row_mask is None:
        row_mask = model.active_row_mask()
    emb = params["embedding"]
    reg = 0.0
    if l2_embedding:
        reg += l2_embedding * float(np.sum(emb[row_mask] ** 2))
        grads["embedding"] += 2.0 * l2_embedding * emb * row_mask[:, None]
    if l2_other:
        for name in HEAD_PARAMS:
            reg += l2_other * float(np.sum(params[name] ** 2))
            grads[name] += 2.0 * l2_other * params[name]
    return data_loss, data_loss + reg, grads


def validation_loss(model: Model, ds: Dataset) -> float:
    """Mean BCE of the factual prediction against train-type labels."""
    p = np.clip(forward_factual(model, ds.features), CLAMP, 1.0 - CLAMP)
    y = ds.train_labels
    return float(np.mean(-(y * np.log(p) + (1 - y) * np.log(1.0 - p))))


def default_engine(model: Model) -> str:
    return {"dcr_moe": "do", "nfm_wa": "nfm_wa", "nfm_woa": "nfm_woa", "ipw": "nfm_woa"}[model.kind]


def train(
    model: Model,
    train_set: Dataset,
    validation: Dataset,
    config: TrainConfig,
    weights=None,
    monitor: Callable[[Model], float] | None = None,
):
    """Adagrad minibatch training with early stopping on validation loss.

    ``monitor`` overrides the early-stopping signal (defaults to
    :func:`validation_loss`).  Returns (best-epoch model, history).
    """
    from .evaluation import evaluate
    from .data import estimate_confounder_prior

    if train_set.schema != model.schema or validation.schema != model.schema:
        raise ValueError("dataset schema does not match the model schema")
    if len(train_set) == 0:
        raise ValueError("empty training set")
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        if len(weights) != len(train_set):
            raise ValueError("weights must have one entry per training record")
    if monitor is None and len(validation) == 0:
        raise ValueError("empty validation set")

    model = model.copy()
    state = AdagradState.zeros(model)
    row_mask = model.active_row_mask()
    trainable = ("embedding",) + HEAD_PARAMS
    prior = estimate_confounder_prior(train_set)
    engine = default_engine(model)
    hist = TrainHistory()
    best_loss = math.inf
    best_params = {k: v.copy() for k, v in model.params.items()}
    n = len(train_set)

    for epoch in range(1, config.max_epochs + 1):
        perm = np.random.default_rng([config.seed, epoch]).permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            data_loss, _, grads = loss_and_grads(
                model,
                train_set.features[idx],
                train_set.train_labels[idx],
                None if weights is None else weights[idx],
                config.l2_embedding,
                config.l2_other,
                row_mask,
            )
            if not math.isfinite(data_loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch starting {start}")
            adagrad_step(state, model.params, {k: grads[k] for k in trainable}, config.learning_rate)
            total += data_loss * len(idx)
        hist.train_loss.append(total / n)
        vloss = monitor(model) if monitor is not None else validation_loss(model, validation)
        if not math.isfinite(vloss):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        hist.valid_loss.append(vloss)
        if len(validation):
            rep = evaluate(engine, model, prior, validation, [config.metric_n], diagnostics=False)
            hist.valid_metric.append(rep.metrics[config.metric_n]["ndcg"])
        else:
            hist.valid_metric.append(float("nan"))
        logger.info("epoch %d train %.5f valid %.5f", epoch, hist.train_loss[-1], vloss)
        hist.stopped_epoch = epoch
        if vloss < best_loss:
            best_loss = vloss
            hist.best_epoch = epoch
            best_params = {k: v.copy() for k, v in model.params.items()}
        elif epoch - hist.best_epoch >= config.patience:
            break

    model.params = best_params
    return model, hist


# ---------------------------------------------------------------- gradient check


def _as_features(sample) -> np.ndarray:
    if isinstance(sample, InteractionRecord):
        return np.asarray(sample.feature_values, dtype=np.int64)[None, :], np.array([sample.train_label])
    return sample.features, sample.train_labels


def gradient_check_full(model: Model, sample, config: TrainConfig, weight: float = 1.0, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Covers every trainable entry (active embedding rows and all head
    parameters) of the full BCE + L2 objective.  The relative error of an
    entry is |g - g_fd| / max(|g|, |g_fd|, 1e-6); the floor keeps
    float64 round-off on near-zero gradients from dominating.
    """
    feats, labels = _as_features(sample)
    w = np.full(len(feats), float(weight))
    row_mask = model.active_row_mask()
    _, _, grads = loss_and_grads(model, feats, labels, w, config.l2_embedding, config.l2_other, row_mask)

    def loss() -> float:
        return loss_and_grads(model, feats, labels, w, config.l2_embedding, config.l2_other, row_mask)[1]

    worst = 0.0
    for name in PARAM_NAMES:
        param = model.params[name]
        flat = param.reshape(-1)
        if name == "embedding":
            entries = np.flatnonzero(np.repeat(row_mask, model.d))
        else:
            entries = range(flat.size)
        gflat = grads[name].reshape(-1)
        for i in entries:
            orig = flat[i]
            flat[i] = orig + step
            up = loss()
            flat[i] = orig - step
            down = loss()
            flat[i] = orig
            fd = (up - down) / (2.0 * step)
            err = abs(gflat[i] - fd) / max(abs(gflat[i]), abs(fd), 1e-6)
            worst = max(worst, err)
    return worst
