"""Command-line entry point.

Subcommands: gen (synthetic dataset), train, eval, sweep, selfcheck.
Options can come from a flat ``key = value`` config file; command-line
flags override file keys, and the fully resolved configuration is echoed
into the run manifest next to every artifact's checksum.

Exit codes: 0 success, 1 verification failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .data import load_dataset, save_dataset
from .errors import ConfigError, VerificationError
from .evaluation import (evaluate_checkpoint, lambda_grid_cells, loss_set_cells,
                         sweep)
from .losses import (COSINE_FORMS, MEAN_FORMS, PAIR_LOSSES, LossBreakdown,
                     LossWeights)
from .manifest import build_manifest, write_manifest
from .model import load_model, save_model
from .selfcheck import run_all
from .synth import SynthConfig, generate_dataset, save_ground_truth
from .training import TrainConfig, train


def _parse_int(v: str) -> int:
    return int(v)


def _parse_float(v: str) -> float:
    return float(v)


def _parse_bool(v: str) -> bool:
    lowered = v.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


def _parse_int_list(v: str) -> tuple[int, ...]:
    return tuple(int(p) for p in v.split(",") if p.strip() != "")


def _parse_float_list(v: str) -> tuple[float, ...]:
    return tuple(float(p) for p in v.split(",") if p.strip() != "")


def _choice(options):
    def parse(v: str) -> str:
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {v!r}")
        return v
    return parse


GEN_SCHEMA = {
    "num_identities": _parse_int,
    "samples_per_identity": _parse_int,
    "num_ages": _parse_int,
    "input_dim": _parse_int,
    "identity_dims": _parse_int,
    "age_dims": _parse_int,
    "noise_std": _parse_float,
    "age_bin_weights": _parse_float_list,
    "seed": _parse_int,
}

TRAIN_SCHEMA = {
    "learning_rate": _parse_float,
    "epochs": _parse_int,
    "batch_size": _parse_int,
    "seed": _parse_int,
    "lambda_m": _parse_float,
    "lambda_v": _parse_float,
    "lambda_c": _parse_float,
    "lambda_t": _parse_float,
    "alpha": _parse_float,
    "pair_loss": _choice(PAIR_LOSSES),
    "cosine_form": _choice(COSINE_FORMS),
    "mean_form": _choice(MEAN_FORMS),
    "hidden_widths": _parse_int_list,
    "feature_dim": _parse_int,
    "supervise_all_triplet_members": _parse_bool,
    "triplets_per_anchor": _parse_int,
}


def parse_config_file(path: Path) -> dict[str, str]:
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def resolve_config(schema: dict, file_values: dict[str, str],
                   flag_values: dict) -> dict:
    """Typed merge of config file keys and flag overrides."""
    resolved: dict = {}
    for key, raw in file_values.items():
        if key not in schema:
            raise ConfigError(
                f"unknown config key {key!r}; allowed keys: {', '.join(sorted(schema))}")
        try:
            resolved[key] = schema[key](raw)
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: {exc}") from exc
    for key, value in flag_values.items():
        if value is not None:
            resolved[key] = value
    return resolved


def _require_out_dir(out: str) -> Path:
    path = Path(out)
    if not path.is_dir():
        raise ConfigError(f"output directory does not exist: {path}")
    return path


def _weights_from(resolved: dict) -> LossWeights:
    kwargs = {k: resolved[k] for k in
              ("lambda_m", "lambda_v", "lambda_c", "lambda_t", "alpha",
               "pair_loss", "cosine_form", "mean_form") if k in resolved}
    return LossWeights(**kwargs)


def _train_config_from(resolved: dict) -> TrainConfig:
    kwargs = {k: resolved[k] for k in
              ("learning_rate", "epochs", "batch_size", "seed", "hidden_widths",
               "feature_dim", "supervise_all_triplet_members", "triplets_per_anchor")
              if k in resolved}
    return TrainConfig(weights=_weights_from(resolved), **kwargs)


def cmd_gen(args) -> int:
    # The output directory is validated before anything is generated or
    # written, so a bad invocation leaves no partial files.
    out = _require_out_dir(args.out)
    file_values = parse_config_file(Path(args.config)) if args.config else {}
    resolved = resolve_config(GEN_SCHEMA, file_values, {"seed": args.seed})
    seed = resolved.pop("seed", 0)
    try:
        cfg = SynthConfig(**resolved)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    started = time.perf_counter()
    ds, truth = generate_dataset(cfg, seed)

    csv_path = out / "dataset.csv"
    save_dataset(ds, csv_path)  # also writes dataset.meta.json
    truth_path = out / "dataset.truth.json"
    save_ground_truth(truth, truth_path)
    outputs = [csv_path, out / "dataset.meta.json", truth_path]
    manifest = build_manifest(
        "gen", {**cfg.to_dict(), "seed": seed}, {"seed": seed}, [], outputs,
        time.perf_counter() - started)
    write_manifest(out, manifest)
    print(f"wrote {len(ds)} samples to {csv_path}")
    return 0


def cmd_train(args) -> int:
    out = _require_out_dir(args.out)
    ds = load_dataset(args.dataset)
    file_values = parse_config_file(Path(args.config)) if args.config else {}
    flags = {
        "seed": args.seed, "lambda_c": args.lambda_c, "lambda_t": args.lambda_t,
        "alpha": args.alpha, "epochs": args.epochs, "batch_size": args.batch_size,
        "learning_rate": args.lr,
    }
    resolved = resolve_config(TRAIN_SCHEMA, file_values, flags)
    try:
        cfg = _train_config_from(resolved)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    started = time.perf_counter()
    model, history = train(ds, cfg)

    ckpt = out / "checkpoint.json"
    save_model(model, ckpt)
    log_lines = ["epoch," + ",".join(LossBreakdown.FIELDS)]
    for epoch, b in enumerate(history):
        log_lines.append(f"{epoch}," + ",".join(repr(v) for v in b.as_row()))
    log_path = out / "train_log.csv"
    log_path.write_text("\n".join(log_lines) + "\n", encoding="utf-8")

    manifest = build_manifest(
        "train", cfg.to_dict(), {"seed": cfg.seed}, [Path(args.dataset)],
        [ckpt, log_path], time.perf_counter() - started)
    write_manifest(out, manifest)
    print(f"trained {cfg.epochs} epochs; checkpoint at {ckpt}")
    return 0


def cmd_eval(args) -> int:
    out = _require_out_dir(args.out)
    ds = load_dataset(args.dataset)
    model = load_model(args.checkpoint)
    started = time.perf_counter()
    report = evaluate_checkpoint(model, ds, args.protocol, k=args.k, seed=args.seed,
                                 jobs=args.jobs)

    report_path = out / "eval_report.json"
    report_path.write_text(json.dumps(report.to_dict(), indent=1) + "\n", encoding="utf-8")
    fold_lines = ["fold,test_size,mae"]
    folds_meta = zip(report.fold_maes, _fold_sizes(ds, args.protocol, args.k, args.seed))
    for i, (mae, size) in enumerate(folds_meta):
        fold_lines.append(f"{i},{size},{repr(mae)}")
    csv_path = out / "eval_folds.csv"
    csv_path.write_text("\n".join(fold_lines) + "\n", encoding="utf-8")

    manifest = build_manifest(
        "eval", {"protocol": args.protocol, "k": args.k, "seed": args.seed},
        {"seed": args.seed}, [Path(args.dataset), Path(args.checkpoint)],
        [report_path, csv_path], time.perf_counter() - started)
    write_manifest(out, manifest)
    print(f"mean MAE {report.mean_mae:.4f} over {report.k} folds "
          f"(mu_vf {report.mu_vf:.4f}, mu_vs {report.mu_vs:.4f})")
    return 0


def _fold_sizes(ds, protocol, k, seed):
    from .evaluation import split_protocol
    return [len(f.test) for f in split_protocol(ds, protocol, k, seed)]


def cmd_sweep(args) -> int:
    out = _require_out_dir(args.out)
    ds = load_dataset(args.dataset)
    file_values = parse_config_file(Path(args.config)) if args.config else {}
    flags = {
        "seed": args.seed, "lambda_c": args.lambda_c, "lambda_t": args.lambda_t,
        "alpha": args.alpha, "epochs": args.epochs, "batch_size": args.batch_size,
        "learning_rate": args.lr,
    }
    resolved = resolve_config(TRAIN_SCHEMA, file_values, flags)
    try:
        base_cfg = _train_config_from(resolved)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    if args.loss_sets:
        lc = base_cfg.weights.lambda_c or 10.0
        lt = base_cfg.weights.lambda_t or 1.0
        cells = loss_set_cells(lc, lt)
    else:
        if not args.grid_lambda_c or not args.grid_lambda_t:
            raise ConfigError("sweep needs --loss-sets or both --grid-lambda-c and --grid-lambda-t")
        cells = lambda_grid_cells(args.grid_lambda_c, args.grid_lambda_t)
    if not cells:
        raise ConfigError("sweep grid is empty")

    started = time.perf_counter()
    rows = sweep(ds, base_cfg, cells, protocol=args.protocol, k=args.k,
                 split_seed=args.seed if args.seed is not None else 0, jobs=args.jobs)

    rows_path = out / "sweep_rows.jsonl"
    rows_path.write_text(
        "".join(json.dumps(r.to_dict()) + "\n" for r in rows), encoding="utf-8")
    csv_lines = ["label,lambda_c,lambda_t,pair_loss,mean_mae,mu_vf,mu_vs"]
    for r in rows:
        csv_lines.append(f"{r.label},{r.lambda_c!r},{r.lambda_t!r},{r.pair_loss},"
                         f"{r.mean_mae!r},{r.mu_vf!r},{r.mu_vs!r}")
    csv_path = out / "sweep.csv"
    csv_path.write_text("\n".join(csv_lines) + "\n", encoding="utf-8")

    manifest = build_manifest(
        "sweep", {**base_cfg.to_dict(), "protocol": args.protocol, "k": args.k,
                  "cells": [c.label for c in cells]},
        {"seed": base_cfg.seed}, [Path(args.dataset)], [rows_path, csv_path],
        time.perf_counter() - started)
    write_manifest(out, manifest)
    print(f"swept {len(rows)} cells; table at {csv_path}")
    return 0


def cmd_selfcheck(args) -> int:
    results = run_all(gradient_points=args.gradient_points)
    failed = [r for r in results if not r.passed]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        detail = f" ({r.detail})" if r.detail else ""
        print(f"{status} {r.name}{detail}")
    if failed:
        raise VerificationError(f"{len(failed)} of {len(results)} checks failed")
    print(f"all {len(results)} checks passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agecontrast",
        description="Contrastive age estimation on labeled vectors")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic dataset")
    gen.add_argument("--config", help="flat key=value config file")
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--out", required=True, help="existing output directory")
    gen.set_defaults(func=cmd_gen)

    def add_train_flags(p):
        p.add_argument("--dataset", required=True)
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--lambda-c", dest="lambda_c", type=float, default=None)
        p.add_argument("--lambda-t", dest="lambda_t", type=float, default=None)
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--out", required=True)

    tr = sub.add_parser("train", help="train a model on a dataset CSV")
    add_train_flags(tr)
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint under a protocol")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--protocol", choices=["rs", "se", "lopo"], default="rs")
    ev.add_argument("--k", type=int, default=5)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--jobs", type=int, default=1)
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_eval)

    sw = sub.add_parser("sweep", help="train/evaluate a weight grid or loss-set table")
    add_train_flags(sw)
    sw.add_argument("--protocol", choices=["rs", "se", "lopo"], default="se")
    sw.add_argument("--k", type=int, default=5)
    sw.add_argument("--jobs", type=int, default=1)
    sw.add_argument("--grid-lambda-c", dest="grid_lambda_c", type=_parse_float_list, default=None)
    sw.add_argument("--grid-lambda-t", dest="grid_lambda_t", type=_parse_float_list, default=None)
    sw.add_argument("--loss-sets", dest="loss_sets", action="store_true",
                    help="emit the six loss-combination rows instead of a grid")
    sw.set_defaults(func=cmd_sweep)

    sc = sub.add_parser("selfcheck", help="run the built-in verification suites")
    sc.add_argument("--gradient-points", dest="gradient_points", type=int, default=100)
    sc.set_defaults(func=cmd_selfcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VerificationError as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
