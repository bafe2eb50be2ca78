"""Minibatch training of a :class:`~mpns.model.DecompModel` under one loss mode."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .diffcore import OptimState, adam_step
from .model import ArchConfig, DecompModel, init_model, predict
from .objectives import (MODES, TERM_NAMES, LossConfig, backward, forward_pass, total_loss,
                         zero_grad_nets)
from .synthgen import Dataset

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, terms: dict):
        self.step = step
        self.terms = terms
        super().__init__(f"non-finite loss at step {step}: {terms}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 1e-3
    seed: int = 0
    mode: str = "mpns"
    log_every: int = 50
    shuffle: bool = True
    loss: LossConfig | None = None
    max_grad_norm: float | None = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.log_every < 1:
            raise ValueError("log_every must be positive")

    @property
    def loss_config(self) -> LossConfig:
        if self.loss is None:
            return LossConfig(mode=self.mode)
        return LossConfig(**{**asdict(self.loss), "mode": self.mode})


@dataclass
class LogRecord:
    step: int
    epoch: int
    losses: dict
    train_accuracy: float
    wall_clock: float = field(default=0.0, compare=False)


@dataclass
class TrainHistory:
    records: list[LogRecord] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    shuffle_seeds: list[int] = field(default_factory=list)
    steps: int = 0

    def to_json(self) -> dict:
        return {
            "steps": self.steps,
            "epoch_losses": self.epoch_losses,
            "shuffle_seeds": self.shuffle_seeds,
            "records": [asdict(r) for r in self.records],
        }

    def deterministic_view(self) -> dict:
        out = self.to_json()
        for r in out["records"]:
            r.pop("wall_clock")
        return out

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([int(seed), 7919, epoch]).generate_state(1)[0])


def train(model: DecompModel, data: Dataset, cfg: TrainConfig) -> tuple[DecompModel, TrainHistory]:
    """Train a copy of ``model``; the input model is left untouched."""
    n = len(data)
    if cfg.batch_size > n:
        raise ValueError(f"batch_size {cfg.batch_size} exceeds dataset size {n}")
    if data.x1.shape[1] != model.arch.input_dim:
        raise ValueError("data dimensionality does not match the architecture")
    model = model.copy()
    loss_cfg = cfg.loss_config
    states = {k: OptimState.for_params(p, lr=cfg.learning_rate) for k, p in model.nets.items()}
    frozen = set(zero_grad_nets(cfg.mode))
    history = TrainHistory()
    t0 = time.perf_counter()
    step = 0
    y_all = data.y.astype(np.float64)
    window: list[np.ndarray] = []
    hits = 0
    seen = 0

    for epoch in range(cfg.epochs):
        if cfg.shuffle:
            eseed = _epoch_seed(cfg.seed, epoch)
            history.shuffle_seeds.append(eseed)
            order = np.random.default_rng(eseed).permutation(n)
        else:
            order = np.arange(n)
        epoch_total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            y = y_all[idx]
            bad = sorted(k for k, p in model.nets.items() if not p.is_finite())
            if bad:
                raise TrainingDiverged(step, {"non_finite_params": bad})
            fwd = forward_pass(model, data.x1[idx], data.x2[idx])
            bd, pred_grads = total_loss(cfg.mode, fwd, y, loss_cfg)
            vals = bd.values()
            if not (np.all(np.isfinite(vals)) and math.isfinite(bd.total)):
                raise TrainingDiverged(step, bd.as_dict())
            grads = backward(model, fwd, pred_grads, cfg.mode)
            if cfg.max_grad_norm is not None:
                norm = math.sqrt(sum(float(g.flat @ g.flat) for g in grads.values()))
                if norm > cfg.max_grad_norm:
                    for g in grads.values():
                        g.flat *= cfg.max_grad_norm / norm
            for name, params in model.nets.items():
                if name in frozen:
                    continue
                adam_step(params, grads[name], states[name])
            step += 1

            batch_total = bd.total
            epoch_total += batch_total * len(idx)
            window.append(np.append(vals, batch_total) * len(idx))
            hits += int(np.sum((fwd.preds["main"] >= 0.5) == (y == 1)))
            seen += len(idx)
            if step % cfg.log_every == 0:
                history.records.append(_record(step, epoch, cfg.mode, window, seen, hits,
                                               time.perf_counter() - t0))
                window, hits, seen = [], 0, 0
        history.epoch_losses.append(epoch_total / n)
        log.debug("epoch %d mode=%s loss=%.5f", epoch, cfg.mode, epoch_total / n)
    if window:
        history.records.append(_record(step, cfg.epochs - 1, cfg.mode, window, seen, hits,
                                       time.perf_counter() - t0))
    history.steps = step
    return model, history


def _record(step, epoch, mode, window, seen, hits, elapsed) -> LogRecord:
    mean = np.sum(window, axis=0) / seen
    names = ["task"] + [f"{k}_{m}" for m in (1, 2) for k in TERM_NAMES] + ["total"]
    losses = {"mode": mode, **{k: float(v) for k, v in zip(names, mean)}}
    return LogRecord(step, epoch, losses, hits / seen, elapsed)


def evaluate_accuracy(model: DecompModel, data: Dataset) -> float:
    """Fraction of samples where ``predict_main >= 0.5`` agrees with ``y``."""
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    p = predict(model, data.x1, data.x2)
    return float(np.mean((p >= 0.5) == (data.y == 1)))


def run_mode(mode: str, arch: ArchConfig, data_train: Dataset, data_eval: Dataset,
             cfg: TrainConfig, model_seed: int | None = None):
    """Init, train under ``mode`` and evaluate; returns ``(model, history, accuracy)``.

    The initial model depends only on ``model_seed`` (default ``cfg.seed``), so
    runs that differ only in ``mode`` start from identical parameters.
    """
    seed = cfg.seed if model_seed is None else model_seed
    model = init_model(arch, seed)
    cfg = TrainConfig(**{**asdict(cfg), "mode": mode, "loss": cfg.loss})
    trained, history = train(model, data_train, cfg)
    return trained, history, evaluate_accuracy(trained, data_eval)
