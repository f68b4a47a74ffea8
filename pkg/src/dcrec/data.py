"""Dataset schema, record files, splitting, confounder prior and Pearson
diagnostics."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

ID_FIELDS = ("user_id", "item_id")


class DataError(ValueError):
    """Malformed or out-of-range input data."""


class UndefinedCorrelation(ValueError):
    """Pearson correlation of a constant sequence."""


@dataclass(frozen=True)
class Field:
    name: str
    cardinality: int
    side: str  # "user" or "item"


@dataclass(frozen=True)
class FeatureSchema:
    fields: tuple[Field, ...]
    confounder_field: int

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))
        if not 0 <= self.confounder_field < len(self.fields):
            raise DataError("confounder_field out of range")
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise DataError("duplicate field names")
        for f in self.fields:
            if f.cardinality < 1:
                raise DataError(f"field {f.name!r}: cardinality must be >= 1")
            if f.side not in ("user", "item"):
                raise DataError(f"field {f.name!r}: side must be 'user' or 'item'")
        conf = self.fields[self.confounder_field]
        if conf.side != "item":
            raise DataError("the confounder must be an item-side field")
        if conf.cardinality < 2:
            raise DataError("confounder cardinality K must be >= 2")
        if conf.name in ID_FIELDS:
            raise DataError("an id field cannot be the confounder")

    @property
    def K(self) -> int:
        return self.fields[self.confounder_field].cardinality

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.fields]

    @property
    def cardinalities(self) -> np.ndarray:
        return np.array([f.cardinality for f in self.fields], dtype=np.int64)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def column_names(self) -> list[str]:
        """Header of the record file, in order."""
        extra = [n for n in self.names if n not in ID_FIELDS]
        return ["user_id", "item_id", *extra, "train_label", "test_label"]

    def to_text(self) -> str:
        lines = [
            f"{f.name},{f.cardinality},{f.side},{int(i == self.confounder_field)}"
            for i, f in enumerate(self.fields)
        ]
        return "\n".join(lines) + "\n"

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    @classmethod
    def from_text(cls, text: str) -> "FeatureSchema":
        fields, conf = [], []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise DataError(f"schema line {lineno}: expected 4 columns, got {len(parts)}")
            name, card, side, is_conf = (p.strip() for p in parts)
            try:
                card_i = int(card)
            except ValueError:
                raise DataError(f"schema line {lineno}: bad cardinality {card!r}") from None
            if is_conf not in ("0", "1"):
                raise DataError(f"schema line {lineno}: is_confounder must be 0 or 1")
            if is_conf == "1":
                conf.append(len(fields))
            fields.append(Field(name, card_i, side))
        if len(conf) != 1:
            raise DataError(f"schema must mark exactly one confounder, found {len(conf)}")
        return cls(tuple(fields), conf[0])


def load_schema(path: str | Path) -> FeatureSchema:
    return FeatureSchema.from_text(Path(path).read_text(encoding="utf-8"))


class InteractionRecord(NamedTuple):
    user_id: int
    item_id: int
    feature_values: tuple[int, ...]
    a: int
    train_label: int
    test_label: int


class Dataset:
    """Column-oriented, read-only store of interaction records.

    ``features`` has one column per schema field (ids included when the
    schema lists them), so ``features[:, schema.confounder_field]`` is A.
    """

    def __init__(self, schema: FeatureSchema, user_ids, item_ids, features, train_labels, test_labels, validate=True):
        self.schema = schema
        self.user_ids = _frozen(user_ids, np.int64)
        self.item_ids = _frozen(item_ids, np.int64)
        self.features = _frozen(features, np.int64).reshape(len(self.user_ids), len(schema.fields))
        self.train_labels = _frozen(train_labels, np.int64)
        self.test_labels = _frozen(test_labels, np.int64)
        if validate:
            self._validate()

    def _validate(self):
        n = len(self.user_ids)
        for name, arr in (("item_ids", self.item_ids), ("train_labels", self.train_labels), ("test_labels", self.test_labels)):
            if len(arr) != n:
                raise DataError(f"{name} has length {len(arr)}, expected {n}")
        if n == 0:
            return
        bad = (self.features < 0) | (self.features >= self.schema.cardinalities)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise DataError(f"record {i}: value {self.features[i, j]} out of range for field {self.schema.names[j]!r}")
        for lab in (self.train_labels, self.test_labels):
            if not np.isin(lab, (0, 1)).all():
                raise DataError("labels must be 0 or 1")
        if (self.user_ids < 0).any() or (self.item_ids < 0).any():
            raise DataError("ids must be non-negative")
        for name, ids in zip(ID_FIELDS, (self.user_ids, self.item_ids)):
            if name in self.schema.names and not np.array_equal(self.features[:, self.schema.index(name)], ids):
                raise DataError(f"{name} column disagrees with its feature field")

    @property
    def a(self) -> np.ndarray:
        return self.features[:, self.schema.confounder_field]

    def __len__(self) -> int:
        return len(self.user_ids)

    def __getitem__(self, i: int) -> InteractionRecord:
        feats = tuple(int(v) for v in self.features[i])
        return InteractionRecord(
            int(self.user_ids[i]),
            int(self.item_ids[i]),
            feats,
            feats[self.schema.confounder_field],
            int(self.train_labels[i]),
            int(self.test_labels[i]),
        )

    def __iter__(self) -> Iterator[InteractionRecord]:
        for i in range(len(self)):
            yield self[i]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return Dataset(
            self.schema,
            self.user_ids[index],
            self.item_ids[index],
            self.features[index],
            self.train_labels[index],
            self.test_labels[index],
            validate=False,
        )

    def with_confounder(self, values) -> "Dataset":
        """Copy with the confounder column replaced by ``values``."""
        feats = self.features.copy()
        feats[:, self.schema.confounder_field] = values
        return Dataset(self.schema, self.user_ids, self.item_ids, feats, self.train_labels, self.test_labels)

    @classmethod
    def from_records(cls, schema: FeatureSchema, records: Sequence[InteractionRecord]) -> "Dataset":
        nf = len(schema.fields)
        feats = np.array([r.feature_values for r in records], dtype=np.int64).reshape(len(records), nf)
        for i, r in enumerate(records):
            if r.a != r.feature_values[schema.confounder_field]:
                raise DataError(f"record {i}: a disagrees with the confounder feature value")
        return cls(
            schema,
            [r.user_id for r in records],
            [r.item_id for r in records],
            feats,
            [r.train_label for r in records],
            [r.test_label for r in records],
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.schema == other.schema
            and np.array_equal(self.user_ids, other.user_ids)
            and np.array_equal(self.item_ids, other.item_ids)
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.train_labels, other.train_labels)
            and np.array_equal(self.test_labels, other.test_labels)
        )

    __hash__ = None


def _frozen(x, dtype) -> np.ndarray:
    arr = np.array(x, dtype=dtype)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------- file I/O


def load_dataset(path: str | Path, schema: FeatureSchema) -> Dataset:
    """Parse a record file; errors name the offending line number."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.strip():
            raise DataError(f"{path}: missing header")
        cols = [c.strip() for c in header.strip().split(",")]
        expected = schema.column_names()
        if cols != expected:
            raise DataError(f"{path}: line 1: header {cols} does not match schema columns {expected}")
        ncol = len(cols)
        rows = []
        for lineno, line in enumerate(fh, 2):
            if not line.strip():
                continue
            parts = line.strip().split(",")
            if len(parts) != ncol:
                raise DataError(f"{path}: line {lineno}: expected {ncol} values, got {len(parts)}")
            try:
                rows.append([int(p) for p in parts])
            except ValueError:
                raise DataError(f"{path}: line {lineno}: non-integer value") from None
            _check_row(rows[-1], schema, cols, path, lineno)
    table = np.array(rows, dtype=np.int64).reshape(len(rows), ncol)
    return _from_table(table, schema, cols)


def _check_row(row, schema, cols, path, lineno):
    for col, v in zip(cols, row):
        if col in ("train_label", "test_label"):
            if v not in (0, 1):
                raise DataError(f"{path}: line {lineno}: {col} must be 0 or 1, got {v}")
            continue
        if v < 0:
            raise DataError(f"{path}: line {lineno}: {col} must be non-negative, got {v}")
        if col in schema.names:
            card = schema.fields[schema.index(col)].cardinality
            if v >= card:
                raise DataError(f"{path}: line {lineno}: {col}={v} out of range [0, {card})")


def _from_table(table: np.ndarray, schema: FeatureSchema, cols: list[str]) -> Dataset:
    pos = {c: i for i, c in enumerate(cols)}
    feats = np.stack([table[:, pos[n]] for n in schema.names], axis=1) if len(table) else np.zeros((0, len(schema.fields)), np.int64)
    return Dataset(schema, table[:, pos["user_id"]], table[:, pos["item_id"]], feats, table[:, pos["train_label"]], table[:, pos["test_label"]])


def format_dataset(ds: Dataset) -> str:
    cols = ds.schema.column_names()
    pos = {n: i for i, n in enumerate(ds.schema.names)}
    columns = []
    for c in cols:
        if c == "user_id":
            columns.append(ds.user_ids)
        elif c == "item_id":
            columns.append(ds.item_ids)
        elif c == "train_label":
            columns.append(ds.train_labels)
        elif c == "test_label":
            columns.append(ds.test_labels)
        else:
            columns.append(ds.features[:, pos[c]])
    lines = [",".join(cols)]
    if len(ds):
        table = np.stack(columns, axis=1)
        lines.extend(",".join(map(str, row)) for row in table.tolist())
    return "\n".join(lines) + "\n"


def save_dataset(ds: Dataset, path: str | Path) -> None:
    from .io import atomic_write_text

    atomic_write_text(path, format_dataset(ds))


# ---------------------------------------------------------------- splitting & prior


def split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    """Floor each share; the remainder goes to the last (test) split."""
    train = math.floor(n * ratios[0])
    valid = math.floor(n * ratios[1])
    return train, valid, n - train - valid


def split_dataset(ds: Dataset, ratios: Sequence[float] = (0.6, 0.2, 0.2), seed: int = 0) -> tuple[Dataset, Dataset, Dataset]:
    if len(ratios) != 3:
        raise ValueError("need three ratios")
    if any(r <= 0 for r in ratios):
        raise ValueError(f"ratios must be positive, got {tuple(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    perm = np.random.default_rng(seed).permutation(len(ds))
    n_tr, n_va, _ = split_sizes(len(ds), ratios)
    return ds.subset(perm[:n_tr]), ds.subset(perm[n_tr : n_tr + n_va]), ds.subset(perm[n_tr + n_va :])


@dataclass(frozen=True)
class ConfounderPrior:
    probs: tuple[float, ...]

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if (p < 0).any() or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"invalid prior {self.probs}")

    @property
    def array(self) -> np.ndarray:
        return np.array(self.probs, dtype=np.float64)

    @property
    def K(self) -> int:
        return len(self.probs)


def estimate_confounder_prior(train: Dataset) -> ConfounderPrior:
    """P(A=a) as the fraction of training samples with A=a."""
    if len(train) == 0:
        raise DataError("cannot estimate the confounder prior from an empty dataset")
    counts = np.bincount(train.a, minlength=train.schema.K)
    return ConfounderPrior(tuple((counts / len(train)).tolist()))


def pearson_correlation(xs, ys) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be 1-d sequences of equal length")
    if len(x) < 2:
        raise ValueError("need at least two observations")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelation("correlation is undefined for a constant sequence")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def confounder_label_correlations(ds: Dataset) -> tuple[float, float]:
    """(rho1, rho2): Pearson of A against the train and the test label.

    NaN marks an undefined coefficient (constant column).
    """
    out = []
    for labels in (ds.train_labels, ds.test_labels):
        try:
            out.append(pearson_correlation(ds.a, labels))
        except (UndefinedCorrelation, ValueError):
            out.append(float("nan"))
    return out[0], out[1]
