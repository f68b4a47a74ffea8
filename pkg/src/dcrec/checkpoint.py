"""Checkpoint files: a text header followed by raw little-endian float64 tensors.

Header layout (one ``key value`` pair per line, ASCII)::

    dcrec-checkpoint 1
    version 0.1.0
    kind dcr_moe
    K 6
    ...
    schema <n>          # followed by n schema lines
    config <n>          # followed by n resolved-config lines
    tensor <name> <ndim> <dim...>
    ...
    end

The payload holds the tensors back to back in header order, so a checkpoint
is readable with nothing more than a text editor and ``numpy.frombuffer``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .data import ConfounderPrior, DataError, FeatureSchema
from .io import atomic_write_bytes
from .model import PARAM_NAMES, Model

MAGIC = "dcrec-checkpoint 1"
DTYPE = np.dtype("<f8")


class CheckpointError(DataError):
    """Unreadable checkpoint or one that does not fit the data."""


@dataclass
class Checkpoint:
    model: Model
    prior: ConfounderPrior
    seed: int = 0
    best_epoch: int = 0
    config: list[str] = field(default_factory=list)


def encode_checkpoint(ck: Checkpoint) -> bytes:
    m = ck.model
    schema_lines = m.schema.to_text().splitlines()
    lines = [
        MAGIC,
        f"version {__version__}",
        f"kind {m.kind}",
        f"K {m.schema.K}",
        f"d {m.d}",
        f"h1 {m.h1}",
        f"h2 {m.h2}",
        f"hidden_activation {m.hidden_activation}",
        f"output_activation {m.output_activation}",
        f"uses_confounder {int(m.uses_confounder)}",
        f"seed {ck.seed}",
        f"best_epoch {ck.best_epoch}",
        f"schema_fingerprint {m.schema.fingerprint()}",
        f"schema {len(schema_lines)}",
        *schema_lines,
        f"config {len(ck.config)}",
        *ck.config,
    ]
    tensors = [(name, m.params[name]) for name in PARAM_NAMES]
    tensors.append(("prior", ck.prior.array))
    for name, arr in tensors:
        lines.append(f"tensor {name} {arr.ndim} {' '.join(str(s) for s in arr.shape)}".rstrip())
    lines.append("end")
    header = ("\n".join(lines) + "\n").encode("ascii")
    payload = b"".join(np.ascontiguousarray(arr, dtype=DTYPE).tobytes() for _, arr in tensors)
    return header + payload


def save_checkpoint(ck: Checkpoint, path: str | Path) -> None:
    atomic_write_bytes(path, encode_checkpoint(ck))


def decode_checkpoint(data: bytes, schema: FeatureSchema | None = None) -> Checkpoint:
    """Parse checkpoint bytes; ``schema`` (if given) must match the stored fingerprint."""
    pos = 0

    def line() -> str:
        nonlocal pos
        end = data.find(b"\n", pos)
        if end < 0:
            raise CheckpointError("truncated checkpoint header")
        text = data[pos:end].decode("ascii", errors="replace")
        pos = end + 1
        return text

    if line() != MAGIC:
        raise CheckpointError("not a dcrec checkpoint")
    meta: dict[str, str] = {}
    schema_text = config = None
    shapes: list[tuple[str, tuple[int, ...]]] = []
    while True:
        text = line()
        if text == "end":
            break
        key, _, value = text.partition(" ")
        if key == "schema":
            schema_text = "\n".join(line() for _ in range(int(value))) + "\n"
        elif key == "config":
            config = [line() for _ in range(int(value))]
        elif key == "tensor":
            parts = value.split()
            ndim = int(parts[1])
            shapes.append((parts[0], tuple(int(s) for s in parts[2 : 2 + ndim])))
        else:
            meta[key] = value

    if schema_text is None:
        raise CheckpointError("checkpoint has no schema block")
    stored = FeatureSchema.from_text(schema_text)
    if stored.fingerprint() != meta.get("schema_fingerprint"):
        raise CheckpointError("checkpoint schema block does not match its fingerprint")
    if schema is not None and schema.fingerprint() != stored.fingerprint():
        raise CheckpointError(
            f"schema fingerprint mismatch: checkpoint {stored.fingerprint()}, data {schema.fingerprint()}"
        )

    arrays = {}
    for name, shape in shapes:
        n = int(np.prod(shape, dtype=np.int64)) * DTYPE.itemsize
        if pos + n > len(data):
            raise CheckpointError(f"truncated payload in tensor {name}")
        arrays[name] = np.frombuffer(data, dtype=DTYPE, count=n // DTYPE.itemsize, offset=pos).reshape(shape).astype(np.float64)
        pos += n
    if pos != len(data):
        raise CheckpointError("trailing bytes after the last tensor")
    missing = [n for n in (*PARAM_NAMES, "prior") if n not in arrays]
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors {missing}")

    try:
        model = Model(
            meta["kind"],
            stored,
            int(meta["d"]),
            int(meta["h1"]),
            int(meta["h2"]),
            {n: arrays[n] for n in PARAM_NAMES},
            meta.get("hidden_activation", "relu"),
            meta.get("output_activation", "sigmoid"),
        )
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"inconsistent checkpoint header: {exc}") from None
    prior = ConfounderPrior(tuple(arrays["prior"].tolist()))
    return Checkpoint(model, prior, int(meta.get("seed", 0)), int(meta.get("best_epoch", 0)), config or [])


def load_checkpoint(path: str | Path, schema: FeatureSchema | None = None) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc.strerror}") from None
    return decode_checkpoint(data, schema)
