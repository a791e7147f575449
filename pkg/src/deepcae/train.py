"""Mini-batch Adam training, early stopping and successive-halving search."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .models import PENALTY_REDUCTIONS, AutoencoderModel, build_loss, effective_lambda, reconstruct

log = logging.getLogger(__name__)


class DivergedError(RuntimeError):
    def __init__(self, epoch: int, lam: float, penalty_term: float):
        self.epoch, self.lam, self.penalty_term = epoch, lam, penalty_term
        super().__init__(f"training diverged at epoch {epoch} (lambda={lam:g}, "
                         f"lambda*penalty={penalty_term:g})")


class SearchError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    lam: float = 0.0
    batch_size: int = 128
    max_epochs: int = 200
    early_stop_window: int = 30
    early_stop_min_progress: float = 0.002
    seed: int = 0
    penalty_reduction: str = "mean"

    def __post_init__(self):
        if self.learning_rate < 0 or not math.isfinite(self.learning_rate):
            raise ValueError("learning_rate must be a finite non-negative number")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.batch_size < 1 or self.max_epochs < 0 or self.early_stop_window < 1:
            raise ValueError("batch_size and early_stop_window must be >= 1, max_epochs >= 0")
        if self.penalty_reduction not in PENALTY_REDUCTIONS:
            raise ValueError(f"penalty_reduction must be one of {PENALTY_REDUCTIONS}")
        if self.early_stop_min_progress < 0:
            raise ValueError("early_stop_min_progress must be non-negative")


@dataclass(frozen=True)
class EpochRecord:
    train_recon: float
    train_penalty: float
    train_total: float
    val_recon: float


@dataclass
class TrainResult:
    model: AutoencoderModel
    history: list[EpochRecord]
    stopped_epoch: int
    best_epoch: int
    best_val_recon: float
    wall_time: float
    early_stopped: bool = False
    config: TrainConfig | None = None

    @property
    def seconds_per_epoch(self) -> float:
        return self.wall_time / max(self.stopped_epoch, 1)


class Adam:
    def __init__(self, params: Sequence[np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> list[np.ndarray]:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            out.append(p - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps))
        return out


def should_stop(val_history: Sequence[float], window: int, min_progress: float) -> bool:
    """True when the best validation loss improved by less than ``min_progress``
    (relative) over the trailing ``window`` epochs."""
    if len(val_history) <= window:
        return False
    before = min(val_history[:-window])
    now = min(val_history)
    if now == 0.0:
        return True
    return (before - now) < min_progress * before


def _recon_mse(model: AutoencoderModel, X: np.ndarray) -> float:
    d = reconstruct(model, X) - X
    return float(np.mean(d * d))


class Trainer:
    """Resumable training state: model, optimizer moments, shuffle RNG, history."""

    def __init__(self, model: AutoencoderModel, X_train: np.ndarray, X_val: np.ndarray, config: TrainConfig):
        self.model = model.copy()
        lam = effective_lambda(model.variant, config.lam, warn=False)
        if lam != model.lam:
            # the model was built with another lambda, so it has not warned about this one
            lam = effective_lambda(model.variant, config.lam)
        self.model.lam = lam
        self.X_train = np.asarray(X_train, dtype=np.float64)
        self.X_val = np.asarray(X_val, dtype=np.float64)
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.opt = Adam(self.model.parameters(), config.learning_rate)
        self.history: list[EpochRecord] = []
        self.best_val = math.inf
        self.best_epoch = 0
        self.best_params = [p.copy() for p in self.model.parameters()]
        self.wall_time = 0.0
        self.early_stopped = False

    @property
    def epoch(self) -> int:
        return len(self.history)

    def _epoch(self) -> EpochRecord:
        n = self.X_train.shape[0]
        bs = self.config.batch_size
        order = self.rng.permutation(n)
        sums = np.zeros(3)
        lam = self.model.lam
        # overflow shows up as non-finite values, which are checked explicitly
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, n, bs):
                X = self.X_train[order[start:start + bs]]
                g = build_loss(self.model, X, self.config.penalty_reduction)
                total = g.total.value[0, 0]
                pen = 0.0 if g.penalty is None else g.penalty.value[0, 0]
                if not math.isfinite(total):
                    raise DivergedError(self.epoch + 1, lam, lam * pen)
                grads = g.tape.backward(g.total)
                params = self.opt.step(self.model.parameters(), [grads[p] for p in g.params])
                if not all(np.isfinite(p).all() for p in params):
                    raise DivergedError(self.epoch + 1, lam, lam * pen)
                self.model.set_parameters(params)
                sums += X.shape[0] * np.array([g.recon.value[0, 0], pen, total])
        recon, pen, total = sums / n
        with np.errstate(over="ignore", invalid="ignore"):
            val = _recon_mse(self.model, self.X_val)
        if not math.isfinite(val):
            raise DivergedError(self.epoch + 1, lam, lam * pen)
        return EpochRecord(float(recon), float(pen), float(total), val)

    def run(self, epochs: int) -> bool:
        """Train up to ``epochs`` more epochs; returns True once early stopping fired."""
        cfg = self.config
        t0 = time.perf_counter()
        try:
            for _ in range(epochs):
                if self.early_stopped:
                    break
                rec = self._epoch()
                self.history.append(rec)
                if rec.val_recon < self.best_val:
                    self.best_val = rec.val_recon
                    self.best_epoch = self.epoch
                    self.best_params = [p.copy() for p in self.model.parameters()]
                vals = [h.val_recon for h in self.history]
                if should_stop(vals, cfg.early_stop_window, cfg.early_stop_min_progress):
                    self.early_stopped = True
        finally:
            self.wall_time += time.perf_counter() - t0
        return self.early_stopped

    def result(self) -> TrainResult:
        best = self.model.copy()
        best.set_parameters(self.best_params)
        return TrainResult(best, list(self.history), self.epoch, self.best_epoch,
                           self.best_val, self.wall_time, self.early_stopped, self.config)


def fit(model: AutoencoderModel, X_train, X_val, config: TrainConfig) -> TrainResult:
    """Train ``model`` (copied, not mutated) and return it at its best validation epoch."""
    trainer = Trainer(model, X_train, X_val, config)
    trainer.run(config.max_epochs)
    res = trainer.result()
    if res.history and res.history[-1].train_total >= res.history[0].train_total:
        log.warning("training loss did not decrease (%g -> %g)",
                    res.history[0].train_total, res.history[-1].train_total)
    return res


# --- successive halving ----------------------------------------------------

def halving_schedule(n_configs: int, rungs: int, eta: int = 3) -> list[int]:
    """Number of configs alive entering each rung, then the final survivor count."""
    if n_configs < 1 or rungs < 1 or eta < 2:
        raise ValueError("need n_configs >= 1, rungs >= 1, eta >= 2")
    sizes = [n_configs]
    for _ in range(rungs):
        sizes.append(max(1, sizes[-1] // eta))
    return sizes


@dataclass
class SearchResult:
    best: TrainConfig
    best_index: int
    configs: list[TrainConfig]
    rung_sizes: list[int]
    scores: list[dict[int, float]] = field(default_factory=list)
    failures: dict[int, str] = field(default_factory=dict)


def successive_halving_search(
    make_model: Callable[[TrainConfig], AutoencoderModel],
    X_train,
    X_val,
    lr_grid: Sequence[float],
    lambda_grid: Sequence[float],
    base_config: TrainConfig = TrainConfig(),
    rungs: int = 2,
    budget_per_rung: int = 10,
    eta: int = 3,
) -> SearchResult:
    """Synchronous successive halving over the (lambda, learning rate) grid.

    Every surviving config trains ``budget_per_rung`` more epochs per rung and
    the best ``1/eta`` by validation reconstruction advance. Ties break on
    lower lambda, then lower learning rate, then config index.
    """
    configs = [replace(base_config, learning_rate=lr, lam=lam) for lam in lambda_grid for lr in lr_grid]
    if not configs:
        raise ValueError("empty search space")
    sizes = halving_schedule(len(configs), rungs, eta)
    trainers = {i: Trainer(make_model(c), X_train, X_val, c) for i, c in enumerate(configs)}
    failures: dict[int, str] = {}
    alive = list(range(len(configs)))
    all_scores = []
    for rung in range(rungs):
        scores = {}
        for i in alive:
            if i in failures:
                scores[i] = math.inf
                continue
            try:
                trainers[i].run(budget_per_rung)
                scores[i] = trainers[i].best_val
            except DivergedError as exc:
                failures[i] = str(exc)
                scores[i] = math.inf
        all_scores.append(scores)
        if len(failures) == len(configs):
            detail = "; ".join(f"config {i} (lr={configs[i].learning_rate:g}, lambda={configs[i].lam:g}): {msg}"
                               for i, msg in sorted(failures.items()))
            raise SearchError(f"all configurations diverged: {detail}")
        ranked = sorted(alive, key=lambda i: (scores[i], configs[i].lam, configs[i].learning_rate, i))
        alive = ranked[:sizes[rung + 1]]
        log.info("rung %d: kept %s", rung, alive)
    best = alive[0]
    if best in failures:
        raise SearchError(f"all configurations diverged: {failures}")
    return SearchResult(configs[best], best, configs, sizes, all_scores, failures)
