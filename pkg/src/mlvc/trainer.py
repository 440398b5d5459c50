"""Optimization loop: BCE-with-logits, momentum SGD, StepLR / ReduceLROnPlateau, finetuning modes."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from mlvc import tensor as T
from mlvc.metrics import binarize, evaluate
from mlvc.nn import Module
from mlvc.video import head_parameter_names
from mlvc.vit import ConfigError

logger = logging.getLogger(__name__)

PLATEAU_THRESHOLD = 1e-8


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; carries the last good weights."""

    def __init__(self, message: str, last_good_state=None, epoch: int = -1):
        super().__init__(message)
        self.last_good_state = last_good_state
        self.epoch = epoch


def sgd_step(params, grads, velocities, lr: float, momentum: float) -> None:
    """In-place momentum SGD: ``v = momentum * v + g``; ``w = w - lr * v``.

    No dampening and no Nesterov term. ``params``, ``grads`` and ``velocities``
    are parallel lists of numpy arrays.
    """
    for i, (w, g, v) in enumerate(zip(params, grads, velocities)):
        if w.shape != g.shape or w.shape != v.shape:
            raise ValueError(f"parameter {i}: shapes differ (w {w.shape}, g {g.shape}, v {v.shape})")
        if not np.all(np.isfinite(g)):
            bad = int((~np.isfinite(g)).sum())
            raise FloatingPointError(f"parameter {i} {w.shape}: {bad} non-finite gradient entries")
    for w, g, v in zip(params, grads, velocities):
        v *= momentum
        v += g
        w -= lr * v


class SGD:
    def __init__(self, params, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = [p for p in params if p.requires_grad]
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocities = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        grads = []
        for p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            grads.append(g)
        sgd_step([p.data for p in self.params], grads, self.velocities, lr, self.momentum)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class Adam:
    """Adam with coupled L2 weight decay; only used by the opt-in ablation preset."""

    def __init__(self, params, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = [p for p in params if p.requires_grad]
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {p.shape}")
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            mhat = m / (1 - self.b1 ** self.t)
            vhat = v / (1 - self.b2 ** self.t)
            p.data -= (lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def step_lr(epoch: int, lr0: float, step_size: int, gamma: float) -> float:
    if step_size < 1:
        raise ValueError(f"step_size must be >= 1, got {step_size}")
    return lr0 * gamma ** (epoch // step_size)


class ReduceLROnPlateau:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without improvement.

    Improvement means ``loss < best - 1e-8`` (mode ``min``) or ``loss > best + 1e-8``
    (mode ``max``). The bad-epoch counter resets on improvement and after every
    reduction.
    """

    def __init__(self, lr: float, factor: float = 0.1, patience: int = 10, mode: str = "min",
                 threshold: float = PLATEAU_THRESHOLD):
        if not 0.0 < factor < 1.0:
            raise ValueError(f"factor must be in (0, 1), got {factor}")
        if patience < 0:
            raise ValueError(f"patience must be >= 0, got {patience}")
        if mode not in ("min", "max"):
            raise ValueError(f"mode must be 'min' or 'max', got {mode!r}")
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.mode = mode
        self.threshold = threshold
        self.best = math.inf if mode == "min" else -math.inf
        self.bad_epochs = 0

    def step(self, value: float) -> float:
        improved = value < self.best - self.threshold if self.mode == "min" else value > self.best + self.threshold
        if improved:
            self.best = value
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        if self.bad_epochs > self.patience:
            self.lr *= self.factor
            self.bad_epochs = 0
        return self.lr


def plateau_lr(history, lr0: float, factor: float = 0.1, patience: int = 10, mode: str = "min") -> list[float]:
    """Learning rate in force after each epoch's validation loss is observed."""
    sched = ReduceLROnPlateau(lr0, factor, patience, mode)
    return [sched.step(v) for v in history]


@dataclass
class TrainConfig:
    lr: float = 0.001
    momentum: float = 0.9
    batch_size: int = 16
    epochs: int = 20
    scheduler: dict = field(default_factory=lambda: {"name": "step", "step_size": 20, "gamma": 0.1})
    finetune: str = "full"
    seed: int = 0
    optimizer: str = "sgd"
    weight_decay: float = 0.0
    threshold: float = 0.5

    def __post_init__(self):
        if not self.lr >= 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.finetune not in ("full", "partial"):
            raise ConfigError(f"finetune must be 'full' or 'partial', got {self.finetune!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        name = self.scheduler.get("name")
        if name == "step":
            allowed = {"name", "step_size", "gamma"}
            self.scheduler = {"name": "step", "step_size": 20, "gamma": 0.1, **self.scheduler}
        elif name == "plateau":
            allowed = {"name", "factor", "patience", "mode"}
            self.scheduler = {"name": "plateau", "factor": 0.1, "patience": 10, "mode": "min", **self.scheduler}
        else:
            raise ConfigError(f"scheduler name must be 'step' or 'plateau', got {name!r}")
        unknown = set(self.scheduler) - allowed
        if unknown:
            raise ConfigError(f"unknown scheduler keys: {sorted(unknown)}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        return cls(**d)


# Step-size ablation presets; the middle one is the default.
STEP_PRESETS = {5: {"name": "step", "step_size": 5, "gamma": 0.1},
                20: {"name": "step", "step_size": 20, "gamma": 0.1},
                50: {"name": "step", "step_size": 50, "gamma": 0.1}}
ADAM_ABLATION = {"optimizer": "adam", "weight_decay": 0.3}


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: Optional[float]
    lr_used: float
    metrics: dict

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    records: list
    best_state: dict
    best_epoch: int
    trainable: list


def apply_finetune_mode(model: Module, mode: str) -> list[str]:
    """Freeze per ``mode`` and return the names of trainable parameters."""
    if mode == "partial":
        heads = set(head_parameter_names(model))
        for name, p in model.named_parameters():
            p.requires_grad = name in heads
    return [name for name, p in model.named_parameters() if p.requires_grad]


def predict_logits(model: Module, inputs: np.ndarray, batch_size: int = 32) -> np.ndarray:
    was_training = model.training
    model.eval()
    out = []
    with T.no_grad():
        for start in range(0, len(inputs), batch_size):
            out.append(model(inputs[start:start + batch_size]).data)
    model.train(was_training)
    return np.concatenate(out, axis=0) if out else np.zeros((0, 0), np.float32)


def evaluate_split(model: Module, dataset, batch_size: int = 32, threshold: float = 0.5):
    """Mean BCE loss and metrics report over a whole dataset (eval mode)."""
    inputs = dataset.get_batch(np.arange(len(dataset)))
    logits = predict_logits(model, inputs, batch_size)
    loss = float(T.bce_with_logits(T.Tensor(logits), dataset.labels.astype(np.float32)).data)
    preds = binarize(T.sigmoid(T.Tensor(logits)).data, threshold)
    return loss, evaluate(dataset.labels, preds)


def train_model(model: Module, train_set, cfg: TrainConfig, val_set=None,
                on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Train ``model`` in place; returns per-epoch records and the best (lowest val loss) weights.

    ``train_set``/``val_set`` expose ``__len__``, ``labels`` and
    ``get_batch(indices, seed=None)``; a non-None seed requests training-time
    augmentation for that batch.
    """
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    trainable = apply_finetune_mode(model, cfg.finetune)
    params = [p for _, p in model.named_parameters() if p.requires_grad]
    if cfg.optimizer == "sgd":
        opt = SGD(params, cfg.momentum, cfg.weight_decay)
    else:
        opt = Adam(params, weight_decay=cfg.weight_decay)
    sched = cfg.scheduler
    plateau = None
    if sched["name"] == "plateau":
        plateau = ReduceLROnPlateau(cfg.lr, sched["factor"], sched["patience"], sched["mode"])

    n = len(train_set)
    labels = train_set.labels.astype(np.float32)
    records: list[EpochRecord] = []
    best_state = model.state_dict()
    best_loss = math.inf
    best_epoch = -1
    for epoch in range(cfg.epochs):
        lr = plateau.lr if plateau else step_lr(epoch, cfg.lr, sched["step_size"], sched["gamma"])
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        model.train()
        total, count = 0.0, 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            x = train_set.get_batch(idx, seed=(cfg.seed, epoch, b))
            logits = model(x)
            loss = T.bce_with_logits(logits, labels[idx])
            value = float(loss.data)
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}, batch {b}",
                                      best_state, epoch)
            opt.zero_grad()
            loss.backward()
            opt.step(lr)
            total += value * logits.size
            count += logits.size
        train_loss = total / count

        if val_set is not None and len(val_set):
            val_loss, report = evaluate_split(model, val_set, threshold=cfg.threshold)
        else:
            val_loss, report = None, None
        monitor = val_loss if val_loss is not None else train_loss
        if not math.isfinite(monitor):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}", best_state, epoch)
        if monitor < best_loss:
            best_loss, best_epoch = monitor, epoch
            best_state = model.state_dict()
        record = EpochRecord(epoch, train_loss, val_loss, lr, report.to_dict() if report else {})
        records.append(record)
        logger.info("epoch %d lr %.3g train %.5f val %s", epoch, lr, train_loss,
                    "n/a" if val_loss is None else f"{val_loss:.5f}")
        if on_epoch:
            on_epoch(record)
        if plateau:
            plateau.step(monitor)
    return TrainResult(records, best_state, best_epoch, trainable)
