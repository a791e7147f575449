"""End-to-end benchmark: prepare datasets, train every model per run, score.

Each (dataset, run) pair gets one split seed and one init seed shared by
all models, so variants see the same rows and, where the architectures
agree, start from the same weights.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import evaluation as E
from .models import EncoderSpec, canonical_variant, encode, init_model, pca_encode, pca_fit, pca_reconstruct, reconstruct
from .preprocess import PreprocessPlan, SchemaError, infer_schema, parse_number, read_csv, split_indices
from .train import TrainConfig, fit, successive_halving_search

log = logging.getLogger(__name__)

CONFIG_SCHEMA_VERSION = 1
REPORT_SCHEMA_VERSION = 1
BASELINE = "pca"
MODELS = ("pca", "standard", "deepcae", "stacked_cae")
TASKS = ("classification", "regression")
REPORT_COLUMNS = [
    "schema_version", "dataset", "model", "run", "seed", "task", "n_features", "embedding_dim",
    "raw_mse", "normalized_mse", "baseline", "learning_rate", "lambda", "epochs", "train_seconds",
    "seconds_per_epoch", "accuracy", "f1", "precision", "recall", "mae", "rmse",
    "accuracy_norm", "f1_norm", "precision_norm", "recall_norm", "mae_norm", "rmse_norm",
]


class ConfigError(ValueError):
    pass


def derive_seed(base: int, *keys) -> int:
    """Stable 32-bit seed from an experiment seed and cell keys."""
    digest = hashlib.sha256(repr((int(base),) + tuple(keys)).encode()).digest()
    return int.from_bytes(digest[:4], "little")


@dataclass
class DatasetEntry:
    name: str
    path: str
    target: str
    task: str
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"dataset {self.name!r}: task must be one of {TASKS}")


@dataclass
class SearchSpace:
    lr_grid: list[float] = field(default_factory=lambda: [1e-4, 3e-4, 1e-3, 3e-3])
    lambda_grid: list[float] = field(default_factory=lambda: [1e-8, 1e-4, 1e-2, 1e-1])
    rungs: int = 2
    budget_per_rung: int = 10
    eta: int = 3


@dataclass
class ExperimentConfig:
    datasets: list[DatasetEntry]
    models: list[str] = field(default_factory=lambda: list(MODELS))
    seed: int = 0
    runs: int = 3
    compression_rate: float = 0.5
    num_layers: int = 1
    test_fraction: float = 0.2
    val_fraction: float = 0.1
    train: TrainConfig = field(default_factory=TrainConfig)
    search: SearchSpace | None = None
    bootstrap_resamples: int = 1000
    out: str | None = None

    def __post_init__(self):
        if not 0.0 < self.compression_rate <= 1.0:
            raise ConfigError("compression_rate must be in (0, 1]")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        self.models = [m if m == BASELINE else canonical_variant(m) for m in self.models]
        if BASELINE not in self.models:
            self.models.insert(0, BASELINE)
        names = [d.name for d in self.datasets]
        if not names or len(set(names)) != len(names):
            raise ConfigError("datasets must be a non-empty list with unique names")

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | Path = ".") -> "ExperimentConfig":
        if d.get("schema_version") != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"config schema_version must be {CONFIG_SCHEMA_VERSION}")
        base_dir = Path(base_dir)
        try:
            datasets = []
            for ds in d["datasets"]:
                path = Path(ds["path"])
                datasets.append(DatasetEntry(ds["name"], str(path if path.is_absolute() else base_dir / path),
                                             ds["target"], ds["task"], ds.get("overrides", {})))
            t = d.get("train", {})
            train = TrainConfig(
                learning_rate=float(t.get("learning_rate", 1e-3)), lam=float(t.get("lambda", 1e-2)),
                batch_size=int(t.get("batch_size", 128)), max_epochs=int(t.get("max_epochs", 200)),
                early_stop_window=int(t.get("early_stop_window", 30)),
                early_stop_min_progress=float(t.get("early_stop_min_progress", 0.002)),
                penalty_reduction=str(t.get("penalty_reduction", "mean")))
            search = SearchSpace(**d["search"]) if d.get("search") else None
            return cls(datasets, list(d.get("models", MODELS)), int(d.get("seed", 0)), int(d.get("runs", 3)),
                       float(d.get("compression_rate", 0.5)), int(d.get("num_layers", 1)),
                       float(d.get("test_fraction", 0.2)), float(d.get("val_fraction", 0.1)), train, search,
                       int(d.get("bootstrap_resamples", 1000)), d.get("out"))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid experiment config: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh), path.parent)


@dataclass
class PreparedData:
    name: str
    task: str
    plan: PreprocessPlan
    X_train: np.ndarray
    X_val: np.ndarray
    X_test: np.ndarray
    y_fit: list
    y_test: list

    @property
    def X_fit(self) -> np.ndarray:
        return np.vstack([self.X_train, self.X_val])


def _targets(values: list[str], task: str):
    if task == "classification":
        return values
    out = [parse_number(v) for v in values]
    if any(v is None for v in out):
        raise SchemaError("regression target holds non-numeric values")
    return out


def prepare_dataset(entry: DatasetEntry, seed: int, test_fraction: float = 0.2,
                    val_fraction: float = 0.1) -> PreparedData:
    """Split rows (stratified for classification), fit the plan on the
    training part, carve a validation set off it and encode everything."""
    header, rows = read_csv(entry.path)
    schema = infer_schema(header, rows, entry.overrides, target=entry.target)
    j = header.index(entry.target)
    rows = [r for r in rows if r[j].strip() not in ("", "NA", "?")]
    labels = [r[j].strip() for r in rows] if entry.task == "classification" else None
    train_idx, test_idx = split_indices(len(rows), test_fraction, seed, labels)
    train_rows = [rows[i] for i in train_idx]
    test_rows = [rows[i] for i in test_idx]
    plan = PreprocessPlan.fit(header, schema, train_rows)
    train_rows, test_rows = plan.filter_rows(train_rows), plan.filter_rows(test_rows)
    fit_idx, val_idx = split_indices(len(train_rows), val_fraction, seed + 1)
    X_all, _ = plan.transform(train_rows)
    X_test, _ = plan.transform(test_rows)
    y_all = _targets(plan.target_values(train_rows), entry.task)
    order = np.concatenate([fit_idx, val_idx])
    return PreparedData(entry.name, entry.task, plan, X_all[fit_idx], X_all[val_idx], X_test,
                        [y_all[i] for i in order], _targets(plan.target_values(test_rows), entry.task))


def train_autoencoder(data: PreparedData, variant: str, cfg: ExperimentConfig, seed: int,
                      num_layers: int | None = None):
    """Optionally search (lr, lambda), then train with the configured budget."""
    spec = EncoderSpec(data.X_train.shape[1], cfg.compression_rate, num_layers or cfg.num_layers)
    base = TrainConfig(**{**asdict(cfg.train), "seed": seed})
    if cfg.search is not None:
        lam_grid = [0.0] if variant == "standard" else cfg.search.lambda_grid
        found = successive_halving_search(
            lambda c: init_model(spec, variant, c.lam, seed), data.X_train, data.X_val,
            cfg.search.lr_grid, lam_grid, base, cfg.search.rungs, cfg.search.budget_per_rung, cfg.search.eta)
        base = found.best
    model = init_model(spec, variant, base.lam, seed)
    return fit(model, data.X_train, data.X_val, base)


def run_cell(data: PreparedData, model_name: str, cfg: ExperimentConfig, run: int, seed: int,
             num_layers: int | None = None) -> dict:
    X_fit = data.X_fit
    d_h = EncoderSpec(X_fit.shape[1], cfg.compression_rate).embedding_dim
    row = {k: "" for k in REPORT_COLUMNS}
    row.update(schema_version=REPORT_SCHEMA_VERSION, dataset=data.name, model=model_name, run=run, seed=seed,
               task=data.task, n_features=X_fit.shape[1], embedding_dim=d_h, baseline=BASELINE)
    if model_name == BASELINE:
        t0 = time.perf_counter()
        base = pca_fit(X_fit, d_h)
        row["train_seconds"] = time.perf_counter() - t0
        row["raw_mse"] = E.reconstruction_score(lambda X: pca_reconstruct(base, X), data.X_test)
        emb_fit, emb_test = pca_encode(base, X_fit), pca_encode(base, data.X_test)
    else:
        res = train_autoencoder(data, model_name, cfg, seed, num_layers)
        model = res.model
        row.update(learning_rate=res.config.learning_rate, epochs=res.stopped_epoch,
                   train_seconds=res.wall_time, seconds_per_epoch=res.seconds_per_epoch)
        row["lambda"] = model.lam
        row["raw_mse"] = E.reconstruction_score(lambda X: reconstruct(model, X), data.X_test)
        emb_fit, emb_test = encode(model, X_fit)[0], encode(model, data.X_test)[0]
    row.update(E.downstream_eval(emb_fit, data.y_fit, emb_test, data.y_test, data.task, X_fit, data.X_test))
    return row


def _cell_job(args):
    data, model_name, cfg, run, seed, num_layers = args
    return run_cell(data, model_name, cfg, run, seed, num_layers)


def run_benchmark(cfg: ExperimentConfig, jobs: int = 1, num_layers: int | None = None) -> list[dict]:
    """One report row per dataset x model x run, ordered deterministically."""
    tasks = []
    for ds in cfg.datasets:
        for run in range(cfg.runs):
            seed = derive_seed(cfg.seed, ds.name, run)
            data = prepare_dataset(ds, seed, cfg.test_fraction, cfg.val_fraction)
            log.info("%s run %d: %d train / %d val / %d test rows, %d features", ds.name, run,
                     len(data.X_train), len(data.X_val), len(data.X_test), data.X_train.shape[1])
            for model_name in cfg.models:
                tasks.append((data, model_name, cfg, run, seed, num_layers))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_cell_job, tasks))
    else:
        rows = [_cell_job(t) for t in tasks]
    raw = {(r["dataset"], r["model"], r["run"]): r["raw_mse"] for r in rows}
    norm = E.normalize_scores(raw, BASELINE)
    for r in rows:
        r["normalized_mse"] = norm[(r["dataset"], r["model"], r["run"])]
    return rows


def aggregate(rows: Sequence[dict], resamples: int = 1000, seed: int = 0) -> dict[str, E.Aggregate]:
    raw = {(r["dataset"], r["model"], r["run"]): r["raw_mse"] for r in rows}
    return E.normalize_and_aggregate(raw, BASELINE, resamples, seed)


def summary_table(rows: Sequence[dict], aggregates: dict[str, E.Aggregate]) -> str:
    lines = [f"Reconstruction MSE normalized by linear PCA (baseline '{BASELINE}'), "
             "geometric mean over datasets with 95% bootstrap CI. Lower is better.", ""]
    lines.append(f"{'model':<14}{'geomean':>12}{'ci_low':>12}{'ci_high':>12}{'runs':>6}")
    for a in aggregates.values():
        lines.append(f"{a.model:<14}{a.geomean:>12.6f}{a.ci_low:>12.6f}{a.ci_high:>12.6f}{a.n_runs:>6}")
    lines += ["", "Per dataset (geometric mean over runs):"]
    datasets = sorted({r["dataset"] for r in rows})
    models = list(aggregates)
    lines.append(f"{'dataset':<20}" + "".join(f"{m:>14}" for m in models))
    for ds in datasets:
        lines.append(f"{ds:<20}" + "".join(f"{aggregates[m].per_dataset.get(ds, math.nan):>14.6f}" for m in models))
    return "\n".join(lines) + "\n"


# --- DeepCAE vs StackedCAE ------------------------------------------------

@dataclass
class ComparisonReport:
    cells: list[dict]
    per_dataset: dict[str, dict[str, float]]
    geomean: dict[str, float]
    ratio: float
    win_fraction: float
    runtime: dict[str, dict[str, float]]

    def to_text(self) -> str:
        lines = ["DeepCAE vs StackedCAE: reconstruction MSE normalized by linear PCA (lower is better)", ""]
        lines.append(f"{'dataset':<20}{'deepcae':>12}{'stacked_cae':>14}")
        for ds, v in self.per_dataset.items():
            lines.append(f"{ds:<20}{v['deepcae']:>12.6f}{v['stacked_cae']:>14.6f}")
        lines.append(f"{'geomean':<20}{self.geomean['deepcae']:>12.6f}{self.geomean['stacked_cae']:>14.6f}")
        lines += ["", f"deepcae / stacked_cae geomean ratio: {self.ratio:.4f}",
                  f"cells where deepcae <= stacked_cae: {self.win_fraction:.1%}", "",
                  f"{'training seconds':<20}{'mean':>10}{'median':>10}{'sum':>10}{'per epoch':>12}"]
        for v, t in self.runtime.items():
            lines.append(f"{v:<20}{t['mean']:>10.3f}{t['median']:>10.3f}{t['sum']:>10.3f}{t['per_epoch_mean']:>12.5f}")
        return "\n".join(lines) + "\n"


def compare_variants(cells: Sequence[dict]) -> ComparisonReport:
    """Build the comparison from per-(dataset, seed, variant) cells.

    Each cell needs ``dataset``, ``seed``, ``variant`` (deepcae or
    stacked_cae), ``normalized_mse``, ``train_seconds`` and
    ``seconds_per_epoch``. Both variants must cover the same seeds.
    """
    by = {}
    for c in cells:
        by.setdefault(c["dataset"], {}).setdefault(canonical_variant(c["variant"]), {})[c["seed"]] = c
    per_dataset, wins, total = {}, 0, 0
    for ds, variants in sorted(by.items()):
        deep, stacked = variants.get("deepcae", {}), variants.get("stacked_cae", {})
        if set(deep) != set(stacked) or not deep:
            raise ValueError(f"dataset {ds!r}: deepcae seeds {sorted(deep)} != stacked_cae seeds {sorted(stacked)}")
        for s in deep:
            wins += deep[s]["normalized_mse"] <= stacked[s]["normalized_mse"]
            total += 1
        per_dataset[ds] = {v: E.geometric_mean([c["normalized_mse"] for c in variants[v].values()])
                           for v in ("deepcae", "stacked_cae")}
    geomean = {v: E.geometric_mean([d[v] for d in per_dataset.values()]) for v in ("deepcae", "stacked_cae")}
    runtime = {}
    for v in ("deepcae", "stacked_cae"):
        secs = [c["train_seconds"] for c in cells if canonical_variant(c["variant"]) == v]
        per_epoch = [c["seconds_per_epoch"] for c in cells if canonical_variant(c["variant"]) == v]
        runtime[v] = {"mean": statistics.fmean(secs), "median": statistics.median(secs), "sum": math.fsum(secs),
                      "per_epoch_mean": statistics.fmean(per_epoch)}
    return ComparisonReport(list(cells), per_dataset, geomean, geomean["deepcae"] / geomean["stacked_cae"],
                            wins / total, runtime)


def deepcae_vs_stacked_report(datasets: Sequence[DatasetEntry], seeds: Sequence[int], cfg: ExperimentConfig,
                              num_layers: int = 2) -> ComparisonReport:
    """Train both variants with identical splits, inits and budgets."""
    cells = []
    for ds in datasets:
        for seed in seeds:
            data = prepare_dataset(ds, seed, cfg.test_fraction, cfg.val_fraction)
            base = pca_fit(data.X_fit, EncoderSpec(data.X_fit.shape[1], cfg.compression_rate).embedding_dim)
            base_mse = E.reconstruction_score(lambda X: pca_reconstruct(base, X), data.X_test)
            for variant in ("deepcae", "stacked_cae"):
                res = train_autoencoder(data, variant, cfg, seed, num_layers)
                mse = E.reconstruction_score(lambda X: reconstruct(res.model, X), data.X_test)
                cells.append({"dataset": ds.name, "seed": seed, "variant": variant, "raw_mse": mse,
                              "normalized_mse": mse / base_mse, "train_seconds": res.wall_time,
                              "seconds_per_epoch": res.seconds_per_epoch, "epochs": res.stopped_epoch,
                              "lambda": res.model.lam})
                log.info("%s seed %d %s: normalized mse %.5f (%d epochs, %.2fs)", ds.name, seed, variant,
                         mse / base_mse, res.stopped_epoch, res.wall_time)
    return compare_variants(cells)
