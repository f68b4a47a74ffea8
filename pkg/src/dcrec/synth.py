"""Synthetic interaction data from a structural causal model.

Per item, a hidden factor Z (a ``latent_dim`` vector) drives the content
fields X, which are quantised projections of Z.  The item's matching
embedding is a fixed function of X, and the user-item matching logit is
``m = <user_latent, item_latent>``.  The confounder A relates to X
according to ``mode``:

* ``confounded_z``  Z -> A (A buckets a noisy projection of Z)
* ``a_to_x``        A -> X (A uniform, shifts the mean of Z)
* ``x_to_a``        X -> A (A buckets a noisy projection of X)
* ``independent``   A uniform, independent of everything

Labels: ``train ~ Bernoulli(sigmoid(b + m + direct_effect[a] + eps))`` and
``test ~ Bernoulli(sigmoid(b + m + eps))`` with ``eps ~ N(0, noise_sd^2)``
shared by both and ``b = base_logit`` setting the overall positive rate.
All random draws happen in a fixed order that does not depend on
``direct_effect``, so changing it leaves test labels untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from scipy.stats import chi2_contingency, norm

from .data import Dataset, FeatureSchema, Field

MODES = ("confounded_z", "a_to_x", "x_to_a", "independent")


def default_direct_effect(K: int, strength: float = 1.5) -> tuple[float, ...]:
    """Linearly decreasing effect from +strength (a=0) to -strength (a=K-1)."""
    return tuple(np.linspace(strength, -strength, K).tolist())


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 2000
    n_items: int = 5000
    n_records: int = 200_000
    K: int = 6
    n_content_fields: int = 4
    content_cardinality: int = 16
    mode: str = "confounded_z"
    latent_dim: int = 8
    direct_effect: tuple[float, ...] | None = None
    link_strength: float = 1.0
    noise_sd: float = 0.5
    # mean of the user latents along the A-linked direction of Z; nonzero
    # values make genuine preference vary with A through the backdoor
    preference_shift: float = 0.0
    match_scale: float = 1.0
    base_logit: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.direct_effect is None:
            object.__setattr__(self, "direct_effect", default_direct_effect(self.K))
        object.__setattr__(self, "direct_effect", tuple(float(x) for x in self.direct_effect))
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {MODES}")
        for name in ("n_users", "n_items", "n_content_fields", "content_cardinality", "latent_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_records < 0:
            raise ValueError("n_records must be non-negative")
        if self.K < 2:
            raise ValueError("K must be >= 2")
        if len(self.direct_effect) != self.K:
            raise ValueError(f"direct_effect needs {self.K} entries, got {len(self.direct_effect)}")
        if self.link_strength < 0 or self.noise_sd < 0:
            raise ValueError("link_strength and noise_sd must be >= 0")
        if self.n_records > self.n_users * self.n_items:
            raise ValueError("n_records exceeds the number of distinct user-item pairs")

    def schema(self) -> FeatureSchema:
        fields = [Field("user_id", self.n_users, "user"), Field("item_id", self.n_items, "item")]
        fields += [Field(f"content_{j}", self.content_cardinality, "item") for j in range(self.n_content_fields)]
        fields.append(Field("a", self.K, "item"))
        return FeatureSchema(tuple(fields), len(fields) - 1)


@dataclass
class GroundTruth:
    user_latents: np.ndarray
    item_latents: np.ndarray
    item_confounders: np.ndarray
    item_content: np.ndarray = field(repr=False)


def _bucket(x: np.ndarray, n_bins: int, scale: float = 1.0) -> np.ndarray:
    """Equal-probability bins of N(0, scale^2)."""
    cuts = norm.ppf(np.arange(1, n_bins) / n_bins) * scale
    return np.searchsorted(cuts, x).astype(np.int64)


def _bin_means(n_bins: int) -> np.ndarray:
    """E[g | g in bin] for g ~ N(0, 1) and equal-probability bins."""
    edges = norm.ppf(np.arange(n_bins + 1) / n_bins)
    return (norm.pdf(edges[:-1]) - norm.pdf(edges[1:])) * n_bins


def _unit(rng, n, L):
    w = rng.standard_normal((n, L))
    return w / np.linalg.norm(w, axis=1, keepdims=True)


def generate(config: SynthConfig) -> tuple[Dataset, GroundTruth]:
    c = config
    rng = np.random.default_rng(c.seed)
    L, K = c.latent_dim, c.K

    # structure shared by all modes (fixed draw order)
    a_dir = _unit(rng, 1, L)[0]
    content_dirs = _unit(rng, c.n_content_fields, L)
    z = rng.standard_normal((c.n_items, L))
    a_noise = rng.standard_normal(c.n_items)
    a_uniform = rng.integers(0, K, size=c.n_items)
    user_raw = rng.standard_normal((c.n_users, L))

    if c.mode == "a_to_x":
        a = a_uniform
        offset = (2.0 * a / (K - 1) - 1.0) * c.link_strength
        z = z + offset[:, None] * a_dir[None, :]

    content = np.stack([_bucket(z @ w, c.content_cardinality) for w in content_dirs], axis=1)
    centers = _bin_means(c.content_cardinality)
    item_latents = (centers[content][:, :, None] * content_dirs[None, :, :]).sum(axis=1)
    item_latents /= np.sqrt(c.n_content_fields)

    if c.mode == "confounded_z":
        a = _bucket(c.link_strength * (z @ a_dir) + a_noise, K, np.sqrt(c.link_strength**2 + 1.0))
    elif c.mode == "x_to_a":
        proj = item_latents @ a_dir
        proj = proj / (proj.std() or 1.0)
        a = _bucket(c.link_strength * proj + a_noise, K, np.sqrt(c.link_strength**2 + 1.0))
    elif c.mode == "independent":
        a = a_uniform

    user_latents = c.match_scale * (user_raw + c.preference_shift * a_dir[None, :])

    # records: distinct user-item pairs
    pairs = rng.choice(c.n_users * c.n_items, size=c.n_records, replace=False)
    users = pairs // c.n_items
    items = pairs % c.n_items
    eps = c.noise_sd * rng.standard_normal(c.n_records)
    u_train = rng.random(c.n_records)
    u_test = rng.random(c.n_records)

    m = np.sum(user_latents[users] * item_latents[items], axis=1)
    effect = np.asarray(c.direct_effect)[a[items]]
    train_labels = (u_train < expit(c.base_logit + m + effect + eps)).astype(np.int64)
    test_labels = (u_test < expit(c.base_logit + m + eps)).astype(np.int64)

    schema = c.schema()
    feats = np.column_stack([users, items, content[items], a[items]]).astype(np.int64)
    ds = Dataset(schema, users, items, feats.reshape(c.n_records, len(schema.fields)), train_labels, test_labels)
    return ds, GroundTruth(user_latents, item_latents, a.astype(np.int64), content)


def true_matching(gt: GroundTruth, user_id: int, item_id: int) -> float:
    if not 0 <= user_id < len(gt.user_latents) or not 0 <= item_id < len(gt.item_latents):
        raise IndexError(f"id out of range: user {user_id}, item {item_id}")
    return float(np.sum(gt.user_latents[user_id] * gt.item_latents[item_id]))


def matching_for(gt: GroundTruth, ds: Dataset) -> np.ndarray:
    """True matching logit of every record, row-wise identical to true_matching."""
    return np.sum(gt.user_latents[ds.user_ids] * gt.item_latents[ds.item_ids], axis=1)


def format_ground_truth(gt: GroundTruth, ds: Dataset) -> str:
    m = matching_for(gt, ds)
    lines = ["user_id,item_id,m"]
    lines += [f"{u},{i},{v!r}" for u, i, v in zip(ds.user_ids.tolist(), ds.item_ids.tolist(), m.tolist())]
    return "\n".join(lines) + "\n"


def independence_pvalue(ds: Dataset, field_index: int) -> float:
    """Chi-square test of (A, field) independence over the records."""
    conf = ds.schema.confounder_field
    table = np.zeros((ds.schema.K, ds.schema.fields[field_index].cardinality))
    np.add.at(table, (ds.features[:, conf], ds.features[:, field_index]), 1)
    table = table[table.sum(axis=1) > 0][:, table.sum(axis=0) > 0]
    return float(chi2_contingency(table)[1])
