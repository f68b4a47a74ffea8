"""Scoring engines and EB/MLP cost accounting.

Engines (per candidate EB, MLP evaluations):

=============  =========  ==========================================
do             (1, K)     backdoor adjustment over the MoE experts
conditional    (1, 1)     the expert of the candidate's own A value
dcr_nfm        (K, K)     NFM-WA rerun once per forced A, prior-weighted
nwgm           (1, 1)     NFM-WA on the prior-blended A embedding
nfm_wa         (1, 1)     plain NFM with A as input
nfm_woa        (1, 1)     plain NFM without A (also scores IPW models)
=============  =========  ==========================================
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import field_rows, forward_batch
from . import _kernels
from .data import ConfounderPrior, Dataset, InteractionRecord
from .experts import head_forward
from .model import Model

ENGINES = ("do", "conditional", "dcr_nfm", "nwgm", "nfm_wa", "nfm_woa")
_REQUIRED_KIND = {
    "do": ("dcr_moe",),
    "conditional": ("dcr_moe",),
    "dcr_nfm": ("nfm_wa",),
    "nwgm": ("nfm_wa",),
    "nfm_wa": ("nfm_wa",),
    "nfm_woa": ("nfm_woa", "ipw"),
}
# rows per scoring pass; small enough that the (rows, h1) temporaries stay in cache
CHUNK = 1024


@dataclass
class CostCounter:
    eb_evaluations: int = 0
    mlp_evaluations: int = 0

    def add(self, eb: int, mlp: int) -> None:
        self.eb_evaluations += int(eb)
        self.mlp_evaluations += int(mlp)

    def merge(self, other: "CostCounter") -> "CostCounter":
        return CostCounter(self.eb_evaluations + other.eb_evaluations, self.mlp_evaluations + other.mlp_evaluations)

    def as_tuple(self) -> tuple[int, int]:
        return self.eb_evaluations, self.mlp_evaluations


def check_engine(engine: str, model: Model) -> None:
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}; choose from {ENGINES}")
    if model.kind not in _REQUIRED_KIND[engine]:
        raise ValueError(f"engine {engine!r} needs a model of kind {_REQUIRED_KIND[engine]}, got {model.kind!r}")


def _prior_array(prior: ConfounderPrior | np.ndarray, K: int) -> np.ndarray:
    p = prior.array if isinstance(prior, ConfounderPrior) else np.asarray(prior, dtype=np.float64)
    if p.shape != (K,):
        raise ValueError(f"prior has {p.shape} entries, model expects {K}")
    return p


def _score_chunk(engine: str, model: Model, prior: np.ndarray, feats: np.ndarray, counter: CostCounter) -> np.ndarray:
    n = len(feats)
    K = model.schema.K
    conf = model.schema.confounder_field
    if engine == "do":
        m, _, _ = forward_batch(model, feats, with_confounder=False)
        score = np.zeros(n)
        for e in range(K):
            p, _ = head_forward(model, m, e)
            score += prior[e] * p
        counter.add(n, n * K)
        return score
    if engine == "conditional":
        m, _, _ = forward_batch(model, feats, with_confounder=False)
        a = feats[:, conf]
        score = np.empty(n)
        for e in np.unique(a):
            sel = np.flatnonzero(a == e)
            score[sel], _ = head_forward(model, m[sel], int(e))
        counter.add(n, n)
        return score
    if engine == "dcr_nfm":
        score = np.zeros(n)
        forced = feats.copy()
        for a in range(K):
            forced[:, conf] = a
            m, _, _ = forward_batch(model, forced, with_confounder=True)
            p, _ = head_forward(model, m, 0)
            score += prior[a] * p
        counter.add(n * K, n * K)
        return score
    if engine == "nwgm":
        blended = prior @ model.table(conf)
        rows = field_rows(model, feats, model.backbone_fields(with_confounder=False))
        m, _ = _kernels.eb_forward(model.params["embedding"], rows, blended)
        p, _ = head_forward(model, m, 0)
        counter.add(n, n)
        return p
    # plain single-head NFM
    m, _, _ = forward_batch(model, feats)
    p, _ = head_forward(model, m, 0)
    counter.add(n, n)
    return p


def score_features(engine: str, model: Model, prior, features: np.ndarray, counter: CostCounter | None = None) -> np.ndarray:
    """Score a (n, F) feature matrix; counter is updated in place."""
    check_engine(engine, model)
    counter = CostCounter() if counter is None else counter
    prior = _prior_array(prior, model.schema.K)
    features = np.asarray(features, dtype=np.int64)
    out = np.empty(len(features))
    for start in range(0, len(features), CHUNK):
        out[start : start + CHUNK] = _score_chunk(engine, model, prior, features[start : start + CHUNK], counter)
    return out


def score_dataset(engine: str, model: Model, prior, ds: Dataset, counter: CostCounter | None = None) -> np.ndarray:
    return score_features(engine, model, prior, ds.features, counter)


def score_candidates(engine: str, model: Model, prior, candidates) -> tuple[list[tuple[InteractionRecord, float]], CostCounter]:
    """Scores in input order, with the cost of producing them."""
    candidates = list(candidates)
    counter = CostCounter()
    if not candidates:
        check_engine(engine, model)
        return [], counter
    feats = np.array([r.feature_values for r in candidates], dtype=np.int64)
    scores = score_features(engine, model, prior, feats, counter)
    return list(zip(candidates, scores.tolist())), counter


def _one(engine, model, prior, record, counter):
    feats = np.asarray(record.feature_values, dtype=np.int64)[None, :]
    return float(score_features(engine, model, prior, feats, counter)[0])


def do_inference(model: Model, prior, record: InteractionRecord, counter: CostCounter | None = None) -> float:
    """P(y=1 | u, do(x)) = sum_a P(a) f(u, x, a) with one backbone pass."""
    return _one("do", model, prior, record, counter)


def conditional_inference(model: Model, record: InteractionRecord, counter: CostCounter | None = None) -> float:
    if not 0 <= record.a < model.schema.K:
        raise IndexError(f"confounder value {record.a} out of range")
    uniform = np.full(model.schema.K, 1.0 / model.schema.K)
    return _one("conditional", model, uniform, record, counter)


def dcr_nfm_inference(model: Model, prior, record: InteractionRecord, counter: CostCounter | None = None) -> float:
    return _one("dcr_nfm", model, prior, record, counter)


def nwgm_inference(model: Model, prior, record: InteractionRecord, counter: CostCounter | None = None) -> float:
    return _one("nwgm", model, prior, record, counter)
