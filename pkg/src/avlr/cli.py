"""Command line: generate, train, predict, evaluate, benchmark.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .dataset import DataError, read_csv_dataset, write_csv_dataset
from .datagen import KINDS, CalibrationError, make_benchmark_data
from .baselines import ConvergenceError
from .diffcore import NumericError
from .harness import ExperimentConfig, load_model, run_benchmark, save_model, write_report
from .metrics import evaluate_predictions
from .model import ConfigurationError
from .predictor import PredictConfig, classify, predict_dataset
from .trainer import fit

log = logging.getLogger("avlr")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--label", default=None, help="label column name (default y)")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _train_flags(p: argparse.ArgumentParser):
    p.add_argument("--mnar", action="store_true", help="model the missingness mechanism")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--k", type=int, help="importance samples in the training bound")
    p.add_argument("--s", type=int, help="draws per class at prediction")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="avlr", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic train/test pair as CSV")
    _common(g)
    g.add_argument("--mechanism", choices=KINDS)
    g.add_argument("--rate", type=float)
    g.add_argument("--n-train", type=int)
    g.add_argument("--n-test", type=int)

    t = sub.add_parser("train", help="fit on a CSV file and save the model as JSON")
    _common(t)
    _train_flags(t)
    t.add_argument("data")

    pr = sub.add_parser("predict", help="write P(y=1) for every row of a CSV file")
    _common(pr)
    _train_flags(pr)
    pr.add_argument("model")
    pr.add_argument("data")

    ev = sub.add_parser("evaluate", help="classification metrics of a model on labelled CSV")
    _common(ev)
    _train_flags(ev)
    ev.add_argument("model")
    ev.add_argument("data")

    b = sub.add_parser("benchmark", help="repeated synthetic (or CSV) benchmark")
    _common(b)
    _train_flags(b)
    b.add_argument("--reps", type=int)
    b.add_argument("--mechanism", choices=KINDS)
    b.add_argument("--rate", type=float)
    b.add_argument("--methods", help="comma separated subset of avlr,avlr_mnar,saem,mean")
    b.add_argument("--source", help='"synthetic" or a CSV path')
    return ap


def experiment_config(args) -> ExperimentConfig:
    """Config file (if any) with command-line flags applied on top."""
    base = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    over = {}
    for flag, key in [("seed", "base_seed"), ("out", "out"), ("label", "label"),
                      ("reps", "reps"), ("mechanism", "mechanism"), ("rate", "rate"),
                      ("source", "source"), ("n_train", "n_train"), ("n_test", "n_test")]:
        v = getattr(args, flag, None)
        if v is not None:
            over[key] = v
    if getattr(args, "methods", None):
        over["methods"] = [m.strip() for m in args.methods.split(",") if m.strip()]
    train_over = {k: getattr(args, f) for f, k in [("epochs", "epochs"),
                  ("batch_size", "batch_size"), ("lr", "learning_rate"), ("k", "K")]
                  if getattr(args, f, None) is not None}
    if getattr(args, "mnar", False):
        train_over["mnar"] = True
    pred_over = {"S": args.s} if getattr(args, "s", None) is not None else {}
    if getattr(args, "mnar", False):
        pred_over["mnar"] = True
    try:
        cfg = dataclasses.replace(base, **over)
        cfg.train = dataclasses.replace(cfg.train, **train_over)
        cfg.predict = dataclasses.replace(cfg.predict, **pred_over)
        if args.seed is not None:
            cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
            cfg.predict = dataclasses.replace(cfg.predict, seed=args.seed)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from exc
    return cfg


def cmd_generate(args, cfg: ExperimentConfig) -> int:
    out = Path(cfg.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    sd = make_benchmark_data(cfg.n_train, cfg.n_test, cfg.mechanism, cfg.rate, cfg.base_seed, cfg.d)
    for name, ds in (("train", sd.train), ("test", sd.test)):
        write_csv_dataset(ds, out / f"{name}.csv", cfg.label)
        write_csv_dataset(ds, out / f"{name}_complete.csv", cfg.label, complete=True)
    print(f"wrote {out}/train.csv ({sd.train.n} rows) and {out}/test.csv ({sd.test.n} rows); "
          f"missing rate {sd.train.missing_rate().mean():.3f}")
    return EXIT_OK


def cmd_train(args, cfg: ExperimentConfig) -> int:
    ds = read_csv_dataset(args.data, cfg.label)
    res = fit(ds, cfg.train)
    path = Path(cfg.out or "model.json")
    save_model(res, path)
    print(f"final loss {res.history.loss[-1]:.5f}" if res.history.loss else "no training epochs")
    print("beta", np.array2string(np.asarray(res.theta.beta), precision=4))
    print(f"model written to {path}")
    return EXIT_OK


def _predict_cfg(model, cfg: ExperimentConfig) -> PredictConfig:
    return dataclasses.replace(cfg.predict, mnar=model.config.mnar)


def cmd_predict(args, cfg: ExperimentConfig) -> int:
    model = load_model(args.model)
    ds = read_csv_dataset(args.data, cfg.label, require_label=False)
    pcfg = _predict_cfg(model, cfg)
    p = predict_dataset(ds, model, pcfg)
    lines = ["p1,class"] + [f"{v!r},{c}" for v, c in zip(p.tolist(), classify(p, pcfg.threshold))]
    text = "\n".join(lines) + "\n"
    if cfg.out:
        Path(cfg.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_evaluate(args, cfg: ExperimentConfig) -> int:
    model = load_model(args.model)
    ds = read_csv_dataset(args.data, cfg.label)
    pcfg = _predict_cfg(model, cfg)
    p = predict_dataset(ds, model, pcfg)
    rep = evaluate_predictions(p, ds.y, pcfg.threshold)
    text = json.dumps(rep, indent=2, default=float)
    if cfg.out:
        Path(cfg.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_benchmark(args, cfg: ExperimentConfig) -> int:
    table = run_benchmark(cfg, write=False)
    if cfg.out:
        jp, tp = write_report(table, cfg.out)
        log.info("wrote %s and %s", jp, tp)
    print(table.to_text())
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "predict": cmd_predict,
            "evaluate": cmd_evaluate, "benchmark": cmd_benchmark}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = experiment_config(args)
        return COMMANDS[args.command](args, cfg)
    except (ConfigurationError, CalibrationError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, ConvergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
