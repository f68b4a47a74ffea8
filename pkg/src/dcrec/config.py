"""Flat run configuration: ``key = value`` files, typed defaults, overrides.

Every key has a default; a config file or command-line flag may override
it.  Unknown keys are rejected.  :func:`format_config` renders the fully
resolved configuration, which is itself a valid config file.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any

from . import __version__


class ConfigError(ValueError):
    """Bad configuration key or value (a usage error)."""


# key -> (type, default, help)
SCHEMA: dict[str, tuple[type, Any, str]] = {
    "seed": (int, 0, "seed for generation, splitting, initialisation and shuffling"),
    # generator
    "n_users": (int, 2000, "number of users"),
    "n_items": (int, 5000, "number of items"),
    "n_records": (int, 200_000, "number of distinct user-item records"),
    "K": (int, 6, "confounder cardinality"),
    "n_content_fields": (int, 4, "number of item content fields"),
    "content_cardinality": (int, 16, "values per content field"),
    "mode": (str, "confounded_z", "causal structure: confounded_z, a_to_x, x_to_a, independent"),
    "latent_dim": (int, 8, "dimension of the hidden item factor"),
    "direct_effect": (list, None, "comma-separated effect of each A value on the train-label logit"),
    "effect_strength": (float, 1.5, "used when direct_effect is empty: linear effects from +s to -s"),
    "link_strength": (float, 1.0, "strength of the A-X dependence"),
    "noise_sd": (float, 0.5, "logit noise shared by both labels"),
    "preference_shift": (float, 0.0, "user preference mean along the A-linked direction"),
    "match_scale": (float, 1.0, "scale of the user latents"),
    "base_logit": (float, 0.0, "intercept of both label logits"),
    "split_ratios": (list, [0.6, 0.2, 0.2], "train,valid,test shares"),
    # model and training
    "model_kind": (str, "dcr_moe", "dcr_moe, nfm_wa, nfm_woa or ipw"),
    "d": (int, 16, "embedding size"),
    "h1": (int, 256, "first hidden layer width"),
    "h2": (int, 128, "second hidden layer width"),
    "learning_rate": (float, 0.01, "adagrad learning rate"),
    "l2_embedding": (float, 0.0, "L2 coefficient on embedding tables"),
    "l2_other": (float, 0.0, "L2 coefficient on head parameters"),
    "batch_size": (int, 1024, "minibatch size"),
    "max_epochs": (int, 100, "epoch limit"),
    "patience": (int, 10, "early-stopping patience in epochs"),
    "ipw_smoothing": (bool, False, "add 0.5 pseudo-counts per label and group to IPW rates"),
    # evaluation
    "engine": (str, "", "scoring engine; empty picks the model's natural engine"),
    "Ns": (list, [10], "cut-offs for Recall/MAP/NDCG"),
    "split": (str, "test", "which split file to evaluate"),
    "top_sample_frac": (float, 0.0, "active-user share by training samples (0 disables groups)"),
    "top_positive_frac": (float, 0.0, "active-user share by positive labels (0 disables groups)"),
    # gradcheck
    "gradcheck_instances": (int, 20, "random instances for the gradient check"),
    # paths
    "data_dir": (str, "data", "directory with schema.csv and the split files"),
    "out_dir": (str, "out", "directory for outputs"),
    "checkpoint": (str, "", "checkpoint path; empty means <out_dir>/model.ckpt"),
    "report_name": (str, "", "report file stem; empty means the engine name"),
}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_value(key: str, text: str) -> Any:
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    kind, default, _ = SCHEMA[key]
    text = text.strip()
    try:
        if kind is bool:
            return _parse_bool(text)
        if kind is list:
            if not text:
                return None if default is None else []
            elem = int if key == "Ns" else float
            return [elem(x) for x in text.split(",")]
        return kind(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


def defaults() -> dict[str, Any]:
    return {k: (list(v[1]) if isinstance(v[1], list) else v[1]) for k, v in SCHEMA.items()}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        out[key] = parse_value(key, value)
    return out


def load_config_file(path: str | Path) -> dict[str, Any]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, str(path))


def resolve(file_values: dict[str, Any] | None = None, overrides: dict[str, Any] | None = None) -> dict[str, Any]:
    cfg = defaults()
    for layer in (file_values or {}, overrides or {}):
        for key, value in layer.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            cfg[key] = value
    return cfg


def _render(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_lines(cfg: dict[str, Any]) -> list[str]:
    """``key = value`` lines in schema order."""
    return [f"{k} = {_render(cfg[k])}" for k in SCHEMA]


def format_config(cfg: dict[str, Any]) -> str:
    return "\n".join([f"# dcrec {__version__}", *config_lines(cfg)]) + "\n"


def header_lines(cfg: dict[str, Any]) -> list[str]:
    """Version line plus resolved config, for embedding as comments."""
    return [f"dcrec {__version__}", *config_lines(cfg)]
