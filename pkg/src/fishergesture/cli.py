"""Command-line entry point: ``fishergesture {synth,train,eval,gradcheck,sweep}``.

Options not known to a subcommand are read as ``--key value`` config
overrides and take precedence over ``--preset`` and ``--config``.
"""

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import gradcheck as gc
from .config import PRESETS, ConfigError, RunConfig, load_config
from .data import DataFormatError, Dataset, generate_synthetic, load_directory, save_dataset, split
from .model import GestureModel, ModelFormatError, evaluate, evaluate_prepared, load_model, save_model
from .optim import NumericalError, train_prepared

log = logging.getLogger("fishergesture")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

MODEL_FILE = "model.fgm"
REPORT_FILE = "report.csv"
EVAL_FILE = "eval.json"

SWEEP_RANGES = {"theta": (0.0, 1.0), "alpha": (0.0, 1.0), "delta": (1e-5, 0.1)}


class DataError(Exception):
    pass


def resolve_dataset(cfg: RunConfig) -> Dataset:
    if cfg.dataset:
        try:
            return load_directory(cfg.dataset, cfg.channels or None)
        except DataFormatError as exc:
            raise DataError(str(exc)) from None
    return generate_synthetic(cfg.synth_config())


def cmd_synth(cfg: RunConfig) -> str:
    dataset = generate_synthetic(cfg.synth_config())
    root = os.path.join(cfg.output_dir, "dataset")
    try:
        save_dataset(dataset, root)
    except OSError as exc:
        raise DataError(f"cannot write dataset under {root}: {exc.strerror}") from None
    print(f"wrote {len(dataset)} samples in {dataset.n_classes} classes to {root}")
    return root


def run_training(cfg: RunConfig, dataset: Dataset | None = None):
    """Split, preprocess, train and evaluate. Returns (model, report, test EvalResult)."""
    dataset = dataset if dataset is not None else resolve_dataset(cfg)
    if len(dataset) == 0:
        raise DataError("dataset is empty")
    try:
        train_ds, test_ds = split(dataset, cfg.test_fraction, cfg.seed)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    model = GestureModel.create(
        cfg.cell_kind, dataset.channels, cfg.hidden_dim, dataset.n_classes, seed=cfg.seed,
        theta=cfg.theta, delta=cfg.delta, alpha=cfg.alpha, pooling=cfg.pooling,
        window=cfg.window, length=cfg.length, class_names=dataset.class_names,
    )
    X, y = model.prepare_dataset(train_ds)
    X_test, y_test = model.prepare_dataset(test_ds)
    model, report = train_prepared(model, X, y, cfg.train_config(), X_test, y_test)
    return model, report, evaluate_prepared(model, X_test, y_test)


def cmd_train(cfg: RunConfig):
    model, report, result = run_training(cfg)
    os.makedirs(cfg.output_dir, exist_ok=True)
    model_path = os.path.join(cfg.output_dir, MODEL_FILE)
    report_path = os.path.join(cfg.output_dir, REPORT_FILE)
    save_model(model, model_path)
    report.to_csv(report_path)
    with open(os.path.join(cfg.output_dir, EVAL_FILE), "w") as fh:
        json.dump(result.to_json(), fh, indent=2)
    with open(os.path.join(cfg.output_dir, "config.toml"), "w") as fh:
        fh.write(cfg.to_toml())
    variant = ("F-" if cfg.theta > 0 else "") + ("BLSTM" if cfg.cell_kind == "lstm" else "BGRU")
    print(f"{variant}: test overall accuracy {result.overall_accuracy:.4f} "
          f"({len(report)} logged iterations) -> {model_path}")
    return model_path, report_path, result


def print_eval(result) -> None:
    print(f"{'class':>10}  {'accuracy':>8}  {'count':>5}")
    for name, acc, count in zip(result.class_names, result.per_class_accuracy, result.confusion.sum(axis=1)):
        shown = "-" if np.isnan(acc) else f"{100 * acc:.2f}"
        print(f"{name:>10}  {shown:>8}  {count:>5}")
    print(f"{'overall':>10}  {100 * result.overall_accuracy:>8.2f}  {result.confusion.sum():>5}")
    if result.fisher_ratio is not None:
        print(f"fisher ratio of pooled features: {result.fisher_ratio:.4f}")


def cmd_eval(model_path, data_path, out_path, channels: int | None = None):
    try:
        model = load_model(model_path)
    except (OSError, ModelFormatError) as exc:
        raise DataError(str(exc)) from None
    try:
        dataset = load_directory(data_path, channels)
    except DataFormatError as exc:
        raise DataError(str(exc)) from None
    if len(dataset) == 0:
        raise DataError(f"{data_path}: dataset is empty")
    if dataset.channels != model.input_dim:
        raise DataError(f"model expects {model.input_dim} channels, {data_path} has {dataset.channels}")
    if dataset.n_classes != model.n_classes:
        raise DataError(f"model has {model.n_classes} classes, {data_path} has {dataset.n_classes}")
    result = evaluate(model, dataset)
    print_eval(result)
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    with open(out_path, "w") as fh:
        json.dump(result.to_json(), fh, indent=2)
    return result


def cmd_gradcheck(seeds=5, base_seed=0, theta=0.5):
    results = gc.summarize(gc.run_gradcheck(range(base_seed, base_seed + seeds), theta=theta))
    ok = True
    for r in results:
        status = "ok" if r.passed else "FAIL"
        ok &= r.passed
        print(f"{r.suite:<16} {r.block:<16} {r.max_rel_error:.3e}  {status}")
    print(f"gradcheck {'passed' if ok else 'FAILED'}: {len(results)} blocks, tolerance {gc.TOLERANCE:g}")
    return ok, results


def cmd_sweep(cfg: RunConfig, param: str, values):
    if param not in SWEEP_RANGES:
        raise ConfigError([f"sweep parameter must be one of {sorted(SWEEP_RANGES)}, got {param!r}"])
    lo, hi = SWEEP_RANGES[param]
    bad = [v for v in values if not lo <= v <= hi]
    if bad:
        raise ConfigError([f"{param}: sweep values {bad} outside [{lo:g}, {hi:g}]"])
    dataset = resolve_dataset(cfg)
    rows = []
    for value in values:
        model, _, result = run_training(replace(cfg, **{param: float(value)}), dataset)
        rows.append((value, result.overall_accuracy))
        print(f"{param}={value:g}: accuracy {result.overall_accuracy:.4f}")
    os.makedirs(cfg.output_dir, exist_ok=True)
    path = os.path.join(cfg.output_dir, f"sweep_{param}.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["value", "accuracy"])
        for value, acc in rows:
            w.writerow([format(value, ".17g"), format(acc, ".17g")])
    return path, rows


def parse_overrides(tokens):
    """``--key value`` / ``--key=value`` pairs -> dict; malformed tokens are config errors."""
    out, problems = {}, []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or len(tok) == 2:
            problems.append(f"unexpected argument {tok!r}")
            i += 1
            continue
        if "=" in tok:
            key, value = tok[2:].split("=", 1)
            i += 1
        elif i + 1 < len(tokens):
            key, value = tok[2:], tokens[i + 1]
            i += 2
        else:
            problems.append(f"{tok}: missing value")
            i += 1
            continue
        out[key] = value
    if problems:
        raise ConfigError(problems)
    return out


def _parse_values(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError([f"values: cannot parse {text!r} as comma-separated numbers"]) from None


def build_parser():
    parser = argparse.ArgumentParser(prog="fishergesture", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="flat TOML config file")
        p.add_argument("--preset", choices=PRESETS, help="start from a shipped preset")
        return p

    with_config(sub.add_parser("synth", help="write a synthetic CSV dataset"))
    with_config(sub.add_parser("train", help="train a model and write model, report and eval"))
    p = with_config(sub.add_parser("eval", help="evaluate a saved model on a dataset directory"))
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="JSON output path (default <output_dir>/eval.json)")
    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--theta", type=float, default=0.5, help="0 skips the Fisher suites")
    p = with_config(sub.add_parser("sweep", help="accuracy as one Fisher hyperparameter varies"))
    p.add_argument("--param", required=True, choices=sorted(SWEEP_RANGES))
    p.add_argument("--values", required=True, help="comma-separated values")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gradcheck":
            if rest:
                raise ConfigError([f"unexpected argument {t!r}" for t in rest])
            ok, _ = cmd_gradcheck(args.seeds, args.seed, args.theta)
            return EXIT_OK if ok else EXIT_NUMERIC
        cfg = load_config(args.config, args.preset, parse_overrides(rest))
        if args.command == "synth":
            cmd_synth(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "eval":
            cmd_eval(args.model, args.data, args.out or os.path.join(cfg.output_dir, EVAL_FILE),
                     cfg.channels or None)
        elif args.command == "sweep":
            cmd_sweep(cfg, args.param, _parse_values(args.values))
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
