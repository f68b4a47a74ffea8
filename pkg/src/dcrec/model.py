"""Learnable state shared by DCR-MoE and the NFM baselines.

All field embedding tables live in one ``(total_rows, d)`` array; a field's
table is the slice starting at ``offsets[field]``.  The head is a stack of
``E`` identical MLPs (``E = K`` experts for DCR-MoE, ``E = 1`` for the NFM
variants), so a single-head NFM is just the MoE code path with gate 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import FeatureSchema

MODEL_KINDS = ("dcr_moe", "nfm_wa", "nfm_woa", "ipw")
PARAM_NAMES = ("embedding", "W1", "b1", "W2", "b2", "W3", "b3")
ACTIVATIONS = ("relu", "identity")
OUTPUTS = ("sigmoid", "identity")

EMBED_INIT = 0.01


@dataclass
class Model:
    kind: str
    schema: FeatureSchema
    d: int
    h1: int
    h2: int
    params: dict[str, np.ndarray]
    hidden_activation: str = "relu"
    output_activation: str = "sigmoid"
    offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.hidden_activation not in ACTIVATIONS or self.output_activation not in OUTPUTS:
            raise ValueError("unsupported activation")
        self.offsets = np.concatenate([[0], np.cumsum(self.schema.cardinalities)[:-1]]).astype(np.int64)
        expected = self.shapes()
        for name in PARAM_NAMES:
            if self.params[name].shape != expected[name]:
                raise ValueError(f"parameter {name} has shape {self.params[name].shape}, expected {expected[name]}")

    @property
    def n_experts(self) -> int:
        return self.schema.K if self.kind == "dcr_moe" else 1

    @property
    def uses_confounder(self) -> bool:
        """Whether the confounder embedding is a backbone input."""
        return self.kind == "nfm_wa"

    def backbone_fields(self, with_confounder: bool | None = None) -> tuple[int, ...]:
        if with_confounder is None:
            with_confounder = self.uses_confounder
        conf = self.schema.confounder_field
        return tuple(i for i in range(len(self.schema.fields)) if with_confounder or i != conf)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        E = self.n_experts
        rows = int(self.schema.cardinalities.sum())
        return {
            "embedding": (rows, self.d),
            "W1": (E, self.d, self.h1),
            "b1": (E, self.h1),
            "W2": (E, self.h1, self.h2),
            "b2": (E, self.h2),
            "W3": (E, self.h2),
            "b3": (E,),
        }

    def table(self, field_index: int) -> np.ndarray:
        start = self.offsets[field_index]
        return self.params["embedding"][start : start + self.schema.fields[field_index].cardinality]

    def active_row_mask(self) -> np.ndarray:
        """Embedding rows that belong to backbone input fields."""
        mask = np.zeros(self.params["embedding"].shape[0], dtype=bool)
        for f in self.backbone_fields():
            start = self.offsets[f]
            mask[start : start + self.schema.fields[f].cardinality] = True
        return mask

    def copy(self) -> "Model":
        return Model(
            self.kind,
            self.schema,
            self.d,
            self.h1,
            self.h2,
            {k: v.copy() for k, v in self.params.items()},
            self.hidden_activation,
            self.output_activation,
        )


def init_model(
    kind: str,
    schema: FeatureSchema,
    d: int = 16,
    h1: int = 256,
    h2: int = 128,
    seed: int = 0,
    hidden_activation: str = "relu",
    output_activation: str = "sigmoid",
) -> Model:
    """Embeddings ~ U[-0.01, 0.01]; head weights Glorot-uniform; biases 0."""
    if min(d, h1, h2) < 1:
        raise ValueError("layer sizes must be positive")
    rng = np.random.default_rng(seed)
    E = schema.K if kind == "dcr_moe" else 1
    rows = int(schema.cardinalities.sum())

    def glorot(shape, fan_in, fan_out):
        r = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-r, r, size=shape)

    params = {
        "embedding": rng.uniform(-EMBED_INIT, EMBED_INIT, size=(rows, d)),
        "W1": glorot((E, d, h1), d, h1),
        "b1": np.zeros((E, h1)),
        "W2": glorot((E, h1, h2), h1, h2),
        "b2": np.zeros((E, h2)),
        "W3": glorot((E, h2), h2, 1),
        "b3": np.zeros(E),
    }
    return Model(kind, schema, d, h1, h2, params, hidden_activation, output_activation)


def parameter_count(model: Model) -> int:
    """Number of parameters the model actually uses (inactive tables excluded)."""
    emb = int(model.active_row_mask().sum()) * model.d
    return emb + sum(model.params[n].size for n in PARAM_NAMES[1:])
