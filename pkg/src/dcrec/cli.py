"""Command-line interface: generate, train, evaluate, analyze, gradcheck.

Exit codes: 0 success, 2 usage or configuration error, 3 data error
(missing or malformed files, schema mismatch), 4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .baselines import compute_ipw_weights, expand_weights
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import SCHEMA, ConfigError, format_config, header_lines, load_config_file, parse_value, resolve
from .data import DataError, estimate_confounder_prior, load_dataset, load_schema, save_dataset, split_dataset
from .evaluation import (
    METRICS,
    evaluate,
    format_profile_columns,
    format_report_kv,
    format_report_text,
    parse_report_kv,
    profile_variance,
    relative_improvement,
    split_user_groups,
)
from .io import atomic_write_text
from .model import init_model
from .synth import SynthConfig, default_direct_effect, format_ground_truth, generate
from .training import NumericalError, TrainConfig, default_engine, gradient_check_full, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
GRADCHECK_TOL = 1e-4

log = logging.getLogger("dcrec")


# ---------------------------------------------------------------- helpers


def _comment(lines: Sequence[str]) -> str:
    return "".join(f"# {line}\n" for line in lines)


def _synth_config(cfg: dict[str, Any]) -> SynthConfig:
    effect = cfg["direct_effect"]
    if not effect:
        effect = default_direct_effect(cfg["K"], cfg["effect_strength"])
    return SynthConfig(
        n_users=cfg["n_users"],
        n_items=cfg["n_items"],
        n_records=cfg["n_records"],
        K=cfg["K"],
        n_content_fields=cfg["n_content_fields"],
        content_cardinality=cfg["content_cardinality"],
        mode=cfg["mode"],
        latent_dim=cfg["latent_dim"],
        direct_effect=tuple(effect),
        link_strength=cfg["link_strength"],
        noise_sd=cfg["noise_sd"],
        preference_shift=cfg["preference_shift"],
        match_scale=cfg["match_scale"],
        base_logit=cfg["base_logit"],
        seed=cfg["seed"],
    )


def _train_config(cfg: dict[str, Any]) -> TrainConfig:
    return TrainConfig(
        learning_rate=cfg["learning_rate"],
        l2_embedding=cfg["l2_embedding"],
        l2_other=cfg["l2_other"],
        batch_size=cfg["batch_size"],
        max_epochs=cfg["max_epochs"],
        patience=cfg["patience"],
        seed=cfg["seed"],
        model_kind=cfg["model_kind"],
        metric_n=cfg["Ns"][0] if cfg["Ns"] else 10,
    )


def _checkpoint_path(cfg) -> Path:
    return Path(cfg["checkpoint"]) if cfg["checkpoint"] else Path(cfg["out_dir"]) / "model.ckpt"


def _require(path: Path) -> Path:
    if not path.is_file():
        raise DataError(f"missing input file: {path}")
    return path


def _load_split(cfg, name, schema):
    return load_dataset(_require(Path(cfg["data_dir"]) / f"{name}.csv"), schema)


def _schema(cfg):
    return load_schema(_require(Path(cfg["data_dir"]) / "schema.csv"))


# ---------------------------------------------------------------- commands


def cmd_generate(cfg: dict[str, Any]) -> int:
    synth = _synth_config(cfg)
    ds, gt = generate(synth)
    out = Path(cfg["data_dir"])
    atomic_write_text(out / "schema.csv", ds.schema.to_text())
    save_dataset(ds, out / "records.csv")
    atomic_write_text(out / "ground_truth.csv", format_ground_truth(gt, ds))
    for name, part in zip(("train", "valid", "test"), split_dataset(ds, cfg["split_ratios"], cfg["seed"])):
        save_dataset(part, out / f"{name}.csv")
    atomic_write_text(out / "config.resolved", format_config(cfg))
    print(f"wrote {len(ds)} records to {out}")
    return EXIT_OK


def cmd_train(cfg: dict[str, Any]) -> int:
    schema = _schema(cfg)
    tr = _load_split(cfg, "train", schema)
    va = _load_split(cfg, "valid", schema)
    tcfg = _train_config(cfg)
    model = init_model(cfg["model_kind"], schema, cfg["d"], cfg["h1"], cfg["h2"], cfg["seed"])
    out = Path(cfg["out_dir"])
    weights = None
    if cfg["model_kind"] == "ipw":
        table = compute_ipw_weights(tr, smoothing=0.5 if cfg["ipw_smoothing"] else 0.0)
        weights = expand_weights(table, tr)
        rows = [f"{a},{p!r},{n!r}" for a, (p, n) in enumerate(zip(table.positive, table.negative))]
        atomic_write_text(out / "ipw_weights.csv", _comment(header_lines(cfg)) + "a,w_pos,w_neg\n" + "\n".join(rows) + "\n")
    model, hist = train(model, tr, va, tcfg, weights=weights)
    prior = estimate_confounder_prior(tr)
    save_checkpoint(Checkpoint(model, prior, cfg["seed"], hist.best_epoch, header_lines(cfg)), _checkpoint_path(cfg))
    lines = [f"epoch,train_loss,valid_loss,valid_ndcg@{tcfg.metric_n}"]
    for e, (a, b, c) in enumerate(zip(hist.train_loss, hist.valid_loss, hist.valid_metric), 1):
        lines.append(f"{e},{a!r},{b!r},{c!r}")
    atomic_write_text(out / "history.csv", _comment(header_lines(cfg)) + "\n".join(lines) + "\n")
    atomic_write_text(out / "config.resolved", format_config(cfg))
    print(f"trained {cfg['model_kind']}: best epoch {hist.best_epoch}, stopped at {hist.stopped_epoch}")
    return EXIT_OK


def cmd_evaluate(cfg: dict[str, Any]) -> int:
    schema = _schema(cfg)
    ck = load_checkpoint(_require(_checkpoint_path(cfg)), schema)
    split = _load_split(cfg, cfg["split"], schema)
    engine = cfg["engine"] or default_engine(ck.model)
    groups = None
    if cfg["top_sample_frac"] > 0 and cfg["top_positive_frac"] > 0:
        tr = _load_split(cfg, "train", schema)
        active, inactive = split_user_groups(tr, split, cfg["top_sample_frac"], cfg["top_positive_frac"])
        groups = {"active": active, "inactive": inactive}
    rep = evaluate(engine, ck.model, ck.prior, split, cfg["Ns"], user_groups=groups)
    header = header_lines(cfg) + [f"checkpoint_schema {schema.fingerprint()}", f"model_kind {ck.model.kind}"]
    stem = Path(cfg["out_dir"]) / (cfg["report_name"] or engine)
    text = format_report_text(rep, header)
    atomic_write_text(stem.with_name(stem.name + ".report.txt"), text)
    atomic_write_text(stem.with_name(stem.name + ".report.csv"), format_report_kv(rep, header))
    atomic_write_text(stem.with_name(stem.name + ".profile.dat"), _comment(header) + format_profile_columns(rep))
    sys.stdout.write(format_report_text(rep))
    return EXIT_OK


def _profile(values: dict, key: str) -> np.ndarray:
    entries = sorted((n, v) for (k, n), v in values.items() if k == key)
    return np.array([v for _, v in entries])


def analyze_reports(paths: Sequence[str]) -> str:
    reports = []
    for p in paths:
        path = Path(p)
        if not path.is_file():
            raise DataError(f"missing report file: {path}")
        try:
            reports.append((path, parse_report_kv(path.read_text())))
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from None
    target_path, target = reports[0]
    Ns = sorted({n for (k, n) in target if k in METRICS})
    lines = [f"# dcrec {__version__}", f"target: {target_path}"]
    for path, base in reports[1:]:
        for N in Ns:
            try:
                ri = relative_improvement(target, base, N)
            except KeyError:
                continue
            lines.append(f"RI@{N} vs {path}: {100.0 * ri:+.2f}%")
    lines.append(f"{'report':<40} {'profile_var':>12} {'gt_var':>12} {'EB/cand':>8} {'MLP/cand':>8}")
    for path, rep in reports:
        cands = rep.get(("candidates", 0), 0.0)
        per = lambda key: rep.get((key, 0), 0.0) / cands if cands else float("nan")  # noqa: E731
        pv = profile_variance(_profile(rep, "profile")) if _profile(rep, "profile").size else float("nan")
        gv = profile_variance(_profile(rep, "gt_profile")) if _profile(rep, "gt_profile").size else float("nan")
        lines.append(f"{str(path):<40} {pv:>12.4e} {gv:>12.4e} {per('eb_evaluations'):>8.2f} {per('mlp_evaluations'):>8.2f}")
    return "\n".join(lines) + "\n"


def cmd_analyze(cfg: dict[str, Any], reports: Sequence[str]) -> int:
    text = analyze_reports(reports)
    atomic_write_text(Path(cfg["out_dir"]) / "analysis.txt", text)
    sys.stdout.write(text)
    return EXIT_OK


def run_gradcheck(n_instances: int, l2_embedding: float, l2_other: float, seed: int = 0) -> list[float]:
    """Max relative gradient error on random tiny instances of every model kind."""
    from .data import Dataset, FeatureSchema, Field

    errors = []
    kinds = ("dcr_moe", "nfm_wa", "nfm_woa")
    for i in range(n_instances):
        rng = np.random.default_rng([seed, i])
        K = int(rng.integers(2, 4))
        schema = FeatureSchema(
            (Field("user_id", 3, "user"), Field("item_id", 4, "item"), Field("c0", 2, "item"), Field("a", K, "item")), 3
        )
        d = int(rng.integers(1, 5))
        h = int(rng.integers(1, 5))
        model = init_model(kinds[i % 3], schema, d, h, h, seed=int(rng.integers(1 << 30)))
        for v in model.params.values():
            v[...] = rng.normal(size=v.shape)
        n = 3
        feats = np.stack([rng.integers(0, f.cardinality, n) for f in schema.fields], axis=1)
        sample = Dataset(schema, feats[:, 0], feats[:, 1], feats, rng.integers(0, 2, n), np.zeros(n, np.int64))
        tcfg = TrainConfig(l2_embedding=l2_embedding, l2_other=l2_other)
        errors.append(gradient_check_full(model, sample, tcfg, weight=float(rng.uniform(0.5, 2.0))))
    return errors


def cmd_gradcheck(cfg: dict[str, Any]) -> int:
    l2e = cfg["l2_embedding"] or 1e-2
    l2o = cfg["l2_other"] or 1e-2
    errors = run_gradcheck(cfg["gradcheck_instances"], l2e, l2o, cfg["seed"])
    for i, e in enumerate(errors):
        print(f"instance {i}: max relative error {e:.3e}")
    worst = max(errors) if errors else 0.0
    print(f"worst {worst:.3e} (tolerance {GRADCHECK_TOL:g})")
    if worst >= GRADCHECK_TOL:
        raise NumericalError(f"gradient check failed: {worst:.3e} >= {GRADCHECK_TOL:g}")
    return EXIT_OK


# ---------------------------------------------------------------- argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file; flags override it")
    common.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    for key, (_, _, helptext) in SCHEMA.items():
        names = [f"--{key}"]
        if "_" in key:
            names.append(f"--{key.replace('_', '-')}")
        common.add_argument(*names, dest=f"cfg_{key}", metavar="VALUE", default=None, help=helptext)

    parser = argparse.ArgumentParser(prog="dcrec", description="Deconfounded recommendation toolkit.")
    parser.add_argument("--version", action="version", version=f"dcrec {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="generate a synthetic dataset and its splits")
    sub.add_parser("train", parents=[common], help="train a model and write a checkpoint")
    sub.add_parser("evaluate", parents=[common], help="score a split and write reports")
    an = sub.add_parser("analyze", parents=[common], help="compare report files (first one is the target)")
    an.add_argument("reports", nargs="+", help="key/value report files")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference check of all gradients")
    return parser


def resolve_args(args: argparse.Namespace) -> dict[str, Any]:
    file_values = load_config_file(args.config) if args.config else {}
    overrides = {}
    for key in SCHEMA:
        raw = getattr(args, f"cfg_{key}")
        if raw is not None:
            overrides[key] = parse_value(key, raw)
    return resolve(file_values, overrides)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve_args(args)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "analyze":
            return cmd_analyze(cfg, args.reports)
        return cmd_gradcheck(cfg)
    except ConfigError as exc:
        print(f"dcrec: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"dcrec: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"dcrec: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"dcrec: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
