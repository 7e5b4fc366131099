"""Experiment configuration, repeated benchmark runs and report emission."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import platform
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import baselines as bl
from .dataset import DataError, Dataset, read_csv_dataset
from .datagen import KINDS, make_benchmark_data
from .encoder import EncoderParams
from .metrics import (METRIC_KEYS, aggregate, evaluate_predictions, parameter_errors,
                      rmse_imputation)
from .model import ConfigurationError, MissParams, ModelParams
from .objective import AVLRParams
from .predictor import PredictConfig, impute_with_labels, predict_dataset
from .trainer import FitResult, TrainConfig, TrainHistory, fit

log = logging.getLogger(__name__)

METHODS = ("avlr", "avlr_mnar", "saem", "mean")


@dataclass
class ExperimentConfig:
    """``source`` is "synthetic" or the path of a CSV file (split at random
    into train/test with ``test_fraction``)."""

    source: str = "synthetic"
    label: str = "y"
    n_train: int = 2000
    n_test: int = 500
    d: int = 5
    test_fraction: float = 0.2
    mechanism: str = "MCAR"
    rate: float = 0.5
    methods: list[str] = field(default_factory=lambda: ["avlr", "saem", "mean"])
    train: TrainConfig = field(default_factory=TrainConfig)
    predict: PredictConfig = field(default_factory=PredictConfig)
    saem: bl.SaemConfig = field(default_factory=bl.SaemConfig)
    reps: int = 5
    base_seed: int = 0
    out: str | None = None

    def __post_init__(self):
        if self.reps < 1:
            raise ConfigurationError("reps must be >= 1")
        if not self.methods:
            raise ConfigurationError("at least one method is required")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ConfigurationError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
        if self.mechanism not in KINDS:
            raise ConfigurationError(f"unknown mechanism {self.mechanism!r}")
        if not 0.0 < self.rate < 1.0:
            raise ConfigurationError("rate must lie in (0, 1)")
        if self.source == "synthetic" and (self.n_train < 2 or self.n_test < 1 or self.d < 1):
            raise ConfigurationError("invalid synthetic sizes")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        nested = {"train": TrainConfig, "predict": PredictConfig, "saem": bl.SaemConfig}
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(raw) - known
        if extra:
            raise ConfigurationError(f"unknown config keys {sorted(extra)}")
        try:
            for key, typ in nested.items():
                if key in raw and isinstance(raw[key], dict):
                    raw[key] = typ(**raw[key])
            return cls(**raw)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw)

    def digest(self) -> str:
        cfg = self.to_dict()
        cfg.pop("out")
        blob = json.dumps(cfg, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ResultsTable:
    methods: dict            # method -> metric -> {"mean", "std", "failed"}
    reps: list               # per-rep raw records
    provenance: dict

    def to_json(self) -> str:
        return json.dumps({"methods": self.methods, "reps": self.reps,
                           "provenance": self.provenance},
                          indent=2, sort_keys=True, default=_json_default)

    def to_text(self, digits: int = 4) -> str:
        cols = ["method"] + list(METRIC_KEYS)
        rows = []
        for m, rec in self.methods.items():
            cells = [m]
            for k in METRIC_KEYS:
                cell = rec[k]
                if cell["mean"] is None:
                    cells.append("failed" if cell["failed"] else "n/a")
                else:
                    cells.append(f"{cell['mean']:.{digits}f}±{cell['std']:.{digits}f}")
            rows.append(cells)
        widths = [max(len(r[i]) for r in rows + [cols]) for i in range(len(cols))]
        fmt = lambda r: "  ".join(c.ljust(w) for c, w in zip(r, widths))
        return "\n".join([fmt(cols), fmt(["-" * w for w in widths])] + [fmt(r) for r in rows])


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _clean(x):
    return None if x is None or (isinstance(x, float) and not math.isfinite(x)) else float(x)


# --- data ---------------------------------------------------------------------

@dataclass
class RepData:
    train: Dataset
    test: Dataset
    truth: ModelParams | None


def load_rep_data(cfg: ExperimentConfig, seed: int) -> RepData:
    if cfg.source == "synthetic":
        sd = make_benchmark_data(cfg.n_train, cfg.n_test, cfg.mechanism, cfg.rate, seed, cfg.d)
        spec = sd.spec
        return RepData(sd.train, sd.test, ModelParams.from_moments(spec.beta, spec.mu, spec.Sigma))
    ds = read_csv_dataset(cfg.source, cfg.label)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(ds.n)
    n_test = max(1, int(round(cfg.test_fraction * ds.n)))
    if n_test >= ds.n:
        raise DataError("dataset too small to split")
    return RepData(ds.subset(perm[n_test:]), ds.subset(perm[:n_test]), None)


# --- one method on one repetition ---------------------------------------------------

def run_method(method: str, data: RepData, cfg: ExperimentConfig, seed: int) -> dict:
    train, test = data.train, data.test
    imputed = None
    if method == "mean":
        t0 = time.perf_counter()
        fitted = bl.fit_mean_imputation(train)
        t1 = time.perf_counter()
        probs = bl.predict_mean_imputation(fitted, test)
        t2 = time.perf_counter()
        theta, Sigma, imputed = fitted.theta, fitted.theta.cov, fitted.imputed
    elif method == "saem":
        scfg = dataclasses.replace(cfg.saem, seed=seed)
        t0 = time.perf_counter()
        res = bl.saem_fit(train, scfg)
        t1 = time.perf_counter()
        probs = bl.saem_predict(res, test, n_draws=cfg.predict.S, seed=seed)
        t2 = time.perf_counter()
        theta, Sigma, imputed = res.theta, res.state.Sigma, bl.saem_imputation(res)
    else:
        mnar = method == "avlr_mnar"
        tcfg = dataclasses.replace(cfg.train, seed=seed, mnar=mnar)
        pcfg = dataclasses.replace(cfg.predict, seed=seed, mnar=mnar)
        t0 = time.perf_counter()
        res = fit(train, tcfg)
        t1 = time.perf_counter()
        probs = predict_dataset(test, res, pcfg)
        t2 = time.perf_counter()
        theta, Sigma = res.theta, res.theta.cov
        if (train.R == 0).any():
            imputed = impute_with_labels(train, res, pcfg)
    out = {k: math.nan for k in METRIC_KEYS}
    out.update(evaluate_predictions(probs, test.y, cfg.predict.threshold))
    out["train_seconds"], out["test_seconds"] = t1 - t0, t2 - t1
    if data.truth is not None:
        out.update(parameter_errors(theta.beta, theta.mu, Sigma, data.truth.beta,
                                    data.truth.mu, data.truth.cov))
        if imputed is not None and train.X_true is not None and (train.R == 0).any():
            out["rmse_imp"] = rmse_imputation(imputed, train.X_true, train.R)
    out["beta"] = np.asarray(theta.beta, dtype=np.float64).tolist()
    return out


def run_benchmark(cfg: ExperimentConfig, write: bool = True) -> ResultsTable:
    """Repetition r = 1..R uses seed base_seed + r. A failing method is
    recorded for that repetition; the others continue."""
    started = datetime.now(timezone.utc).isoformat()
    reps = []
    for r in range(1, cfg.reps + 1):
        seed = cfg.base_seed + r
        data = load_rep_data(cfg, seed)
        rec = {"rep": r, "seed": seed, "missing_rate": float(data.train.missing_rate().mean()),
               "methods": {}}
        for m in cfg.methods:
            try:
                rec["methods"][m] = {"status": "ok", **run_method(m, data, cfg, seed)}
            except (FloatingPointError, ArithmeticError, ValueError, RuntimeError,
                    np.linalg.LinAlgError) as exc:
                log.warning("rep %d method %s failed: %s", r, m, exc)
                rec["methods"][m] = {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}
        reps.append(rec)
        log.info("rep %d/%d done", r, cfg.reps)

    methods = {}
    for m in cfg.methods:
        row = {}
        for k in METRIC_KEYS:
            vals = [rec["methods"][m].get(k, math.nan) for rec in reps]
            failed = sum(rec["methods"][m]["status"] != "ok" for rec in reps)
            mean, std = aggregate(vals)
            row[k] = {"mean": _clean(mean), "std": _clean(std), "failed": failed}
        methods[m] = row
    for rec in reps:
        for m, mrec in rec["methods"].items():
            for k, v in list(mrec.items()):
                if isinstance(v, float):
                    mrec[k] = _clean(v)
    prov = {
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "seeds": [rec["seed"] for rec in reps],
        "versions": {"package": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
    }
    table = ResultsTable(methods, reps, prov)
    if write and cfg.out:
        write_report(table, cfg.out)
    return table


def write_report(table: ResultsTable, out) -> tuple[Path, Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    jp, tp = out / "report.json", out / "report.txt"
    jp.write_text(table.to_json() + "\n")
    tp.write_text(table.to_text() + "\n")
    return jp, tp


# --- model files -------------------------------------------------------------

def save_model(result: FitResult, path):
    p = result.params
    blob = {
        "format": "avlr-model/1",
        "config": dataclasses.asdict(result.config),
        "theta": {k: np.asarray(v).tolist() for k, v in p.theta.as_dict().items()},
        "phi": {k: np.asarray(v).tolist() for k, v in p.phi.weights().items()},
        "x_shift": None if p.phi.x_shift is None else np.asarray(p.phi.x_shift).tolist(),
        "x_scale": None if p.phi.x_scale is None else np.asarray(p.phi.x_scale).tolist(),
        "psi": None if p.psi is None else np.asarray(p.psi.coef).tolist(),
        "history": {"loss": result.history.loss},
    }
    Path(path).write_text(json.dumps(blob))


def load_model(path) -> FitResult:
    try:
        blob = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read model {path}: {exc}") from exc
    if blob.get("format") != "avlr-model/1":
        raise ConfigurationError(f"{path} is not a model file")
    arr = lambda v: None if v is None else np.asarray(v, dtype=np.float64)
    theta = ModelParams(*(arr(blob["theta"][k]) for k in ("beta", "mu", "sigma_chol")))
    phi = EncoderParams(**{k: arr(v) for k, v in blob["phi"].items()},
                        x_shift=arr(blob["x_shift"]), x_scale=arr(blob["x_scale"]))
    psi = None if blob["psi"] is None else MissParams(arr(blob["psi"]))
    cfg = TrainConfig(**blob["config"])
    hist = TrainHistory(loss=list(blob["history"]["loss"]))
    return FitResult(AVLRParams(theta, phi, psi), hist, cfg)


# --- ignorable vs selection-model comparison ---------------------------------------

def ignorable_vs_mnar(kind: str, rate: float, seeds, n_train: int = 5000, n_test: int = 1000,
                      train: TrainConfig | None = None, predict: PredictConfig | None = None,
                      eval_every: int = 0) -> list[dict]:
    """Fit the ignorable and the selection-model variant on the same data per
    seed. Returns per seed the final test AUC of each and, when ``eval_every``
    is positive, the test AUC every that many epochs."""
    from .metrics import auc
    train = train or TrainConfig(epochs=200)
    predict = predict or PredictConfig()
    out = []
    for seed in seeds:
        sd = make_benchmark_data(n_train, n_test, kind, rate, seed)
        rec = {"seed": seed}
        for name, mnar in (("ignorable", False), ("mnar", True)):
            pcfg = dataclasses.replace(predict, seed=seed, mnar=mnar)

            def track(epoch, params, pcfg=pcfg):
                if eval_every and (epoch + 1) % eval_every == 0:
                    return {"epoch": epoch + 1,
                            "auc": auc(predict_dataset(sd.test, params, pcfg), sd.test.y)}
                return None
            res = fit(sd.train, dataclasses.replace(train, seed=seed, mnar=mnar), callback=track)
            rec[name] = auc(predict_dataset(sd.test, res, pcfg), sd.test.y)
            rec[name + "_curve"] = [m for m in res.history.metrics if m]
        log.info("seed %d: ignorable %.4f, mnar %.4f", seed, rec["ignorable"], rec["mnar"])
        out.append(rec)
    return out
