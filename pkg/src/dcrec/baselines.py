"""NFM-WA / NFM-WOA constructors and inverse-propensity weights."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .data import DataError, Dataset, FeatureSchema
from .model import Model, init_model


@dataclass(frozen=True)
class PropensityTable:
    positive: tuple[float, ...]
    negative: tuple[float, ...]


def _group_weights(rates: list[Fraction]) -> np.ndarray:
    # [ (rate / max rate) ** 0.5 ] ** -1, evaluated as sqrt(max / rate) on an
    # exact ratio so that perfect-square ratios give exact integer weights
    top = max(rates)
    return np.array([math.sqrt(top / r) for r in rates])


def compute_ipw_weights(train: Dataset, smoothing: float = 0.0) -> PropensityTable:
    """Per-group weights from empirical P(Y=1|A=a) and P(Y=0|A=a).

    ``smoothing`` adds that many pseudo-counts per label per group; with the
    default 0 a group lacking positives or negatives is an error.
    """
    K = train.schema.K
    a = train.a
    pos = np.bincount(a, weights=train.train_labels, minlength=K).astype(np.float64)
    tot = np.bincount(a, minlength=K).astype(np.float64)
    neg = tot - pos
    present = tot > 0
    if not present.any():
        raise DataError("empty training set")
    if smoothing:
        pos = pos + smoothing * present
        neg = neg + smoothing * present
        tot = tot + 2.0 * smoothing * present
    bad = present & ((pos == 0) | (neg == 0))
    if bad.any():
        raise DataError(
            f"confounder groups {np.flatnonzero(bad).tolist()} lack positive or negative samples; enable smoothing"
        )
    w_pos = np.ones(K)
    w_neg = np.ones(K)
    groups = np.flatnonzero(present)
    w_pos[groups] = _group_weights([_ratio(pos[g], tot[g]) for g in groups])
    w_neg[groups] = _group_weights([_ratio(neg[g], tot[g]) for g in groups])
    return PropensityTable(tuple(w_pos.tolist()), tuple(w_neg.tolist()))


def _ratio(num: float, den: float) -> Fraction:
    return Fraction(num) / Fraction(den)


def ipw_weights_from_rates(rates) -> list[float]:
    """Positive-sample weights for given per-group positive rates.

    Rates are read through their decimal representation, so 0.36 means 9/25.
    """
    return _group_weights([Fraction(str(r)) for r in rates]).tolist()


def expand_weights(table: PropensityTable, train: Dataset) -> np.ndarray:
    K = len(table.positive)
    a = train.a
    if len(a) and a.max() >= K:
        raise DataError(f"confounder value {int(a.max())} not covered by the propensity table")
    w_pos = np.asarray(table.positive)
    w_neg = np.asarray(table.negative)
    return np.where(train.train_labels == 1, w_pos[a], w_neg[a])


def make_baseline(kind: str, schema: FeatureSchema, d: int = 16, h1: int = 256, h2: int = 128, seed: int = 0, **kw) -> Model:
    """NFM-WA feeds the confounder embedding into the backbone; NFM-WOA (and
    IPW, which reuses its architecture) leaves it out."""
    if kind not in ("nfm_wa", "nfm_woa", "ipw"):
        raise ValueError(f"unknown baseline {kind!r}")
    return init_model(kind, schema, d, h1, h2, seed, **kw)
