"""Per-fold training: Nesterov SGD, linear learning-rate decay, early stopping."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .convnet import Architecture, Network, decode_model, encode_model
from .convnet.layers import cross_entropy
from .errors import ConfigurationError, LabelError, NumericError
from .mwfd import FeatureExample, StandardizationStats

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate_init: float = 0.02
    lr_decrement_per_epoch: float = 0.0001
    lr_floor: float = 1e-6
    momentum: float = 0.9
    batch_size: int = 128
    validation_fraction: float = 0.15
    early_stop_patience: int = 15
    max_epochs: int = 500
    restore_best: bool = True
    chunk_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.validation_fraction < 0.5:
            raise ConfigurationError(f"validation_fraction must lie in (0, 0.5), got {self.validation_fraction}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.early_stop_patience < 1 or self.chunk_size < 1:
            raise ConfigurationError("batch_size, max_epochs, early_stop_patience and chunk_size must be positive")
        if self.lr_floor <= 0:
            raise ConfigurationError("lr_floor must be positive")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def learning_rate(config: TrainConfig, epoch: int) -> float:
    """Affine decay per epoch (0-based), floored so it never reaches zero."""
    return max(config.learning_rate_init - config.lr_decrement_per_epoch * epoch, config.lr_floor)


def init_optimizer_state(params) -> list[np.ndarray]:
    return [np.zeros_like(p) for p in params]


def sgd_nesterov_step(params, grads, state, lr: float, momentum: float):
    """In-place Nesterov update: ``v <- m v - lr g``; ``p <- p + m v - lr g``."""
    for k, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter tensor {k}")
    for p, g, v in zip(params, grads, state):
        if p.shape != g.shape or p.shape != v.shape:
            raise ConfigurationError("parameter, gradient and velocity shapes disagree")
        step = g * p.dtype.type(lr)
        v *= p.dtype.type(momentum)
        v -= step
        p += v * p.dtype.type(momentum)
        p -= step
    return params, state


class EarlyStopping:
    """Stops after ``patience`` epochs without a strict decrease of the monitored loss."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = np.inf
        self.best_epoch = -1

    def update(self, epoch: int, loss: float) -> bool:
        """Record an epoch's loss; return True if it is a new best."""
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_epoch = epoch
            return True
        return False

    def should_stop(self, epoch: int) -> bool:
        return epoch - self.best_epoch >= self.patience


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    lr: float
    seconds: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    stop_reason: str = ""

    HEADER = ("epoch", "train_loss", "val_loss", "val_acc", "lr")

    def csv_rows(self) -> list[list[str]]:
        # wall time is kept out of the CSV so reruns are byte-identical
        return [[str(r.epoch), repr(r.train_loss), repr(r.val_loss), repr(r.val_acc), repr(r.lr)]
                for r in self.epochs]

    def write_csv(self, path, comment: Optional[str] = None):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(self.HEADER)
            out.writerows(self.csv_rows())

    def write_timing_log(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.epochs:
                fh.write(f"epoch={r.epoch} seconds={r.seconds:.3f}\n")


def label_indices(examples: Sequence[FeatureExample], classes: Sequence[str]) -> np.ndarray:
    lookup = {c: i for i, c in enumerate(classes)}
    try:
        return np.array([lookup[ex.scene_label] for ex in examples], dtype=np.int64)
    except KeyError as exc:
        raise LabelError(f"label {exc.args[0]!r} is not in the scene vocabulary") from exc


def stack_examples(examples: Sequence[FeatureExample]) -> np.ndarray:
    """Stack example matrices into a network batch ``[N, 1, time, freq]``."""
    return np.stack([np.asarray(ex.values, dtype=np.float32) for ex in examples])[:, None]


def split_validation(examples: Sequence[FeatureExample], fraction: float, rng: np.random.Generator):
    """Hold out a random ``fraction`` of windows; all variants of a window stay together."""
    keys = list(dict.fromkeys((ex.clip_id, ex.window_index) for ex in examples))
    if len(keys) < 2:
        raise ConfigurationError("need at least two windows to hold out validation data")
    n_val = min(max(1, int(round(fraction * len(keys)))), len(keys) - 1)
    held = {keys[i] for i in rng.choice(len(keys), size=n_val, replace=False)}
    train = [ex for ex in examples if (ex.clip_id, ex.window_index) not in held]
    val = [ex for ex in examples if (ex.clip_id, ex.window_index) in held]
    return train, val


def train_fold(config: TrainConfig, train_examples: Sequence[FeatureExample], classes: Sequence[str],
               seed: Optional[int] = None, arch: Optional[Architecture] = None,
               validation_examples: Optional[Sequence[FeatureExample]] = None,
               on_epoch: Optional[Callable[[EpochRecord, Network], bool]] = None) -> tuple[Network, TrainHistory]:
    """Train one network on standardised examples.

    Validation data is split off ``train_examples`` unless given explicitly.
    ``on_epoch`` is called after every epoch with the record and the current
    network; returning True stops training. A :class:`NumericError` raised
    during training carries the partial history as ``exc.history``.
    """
    if not train_examples:
        raise ConfigurationError("empty training set")
    seed = config.seed if seed is None else seed
    arch = arch or Architecture(n_classes=len(classes))
    if arch.n_classes != len(classes):
        raise ConfigurationError(f"architecture has {arch.n_classes} outputs for {len(classes)} classes")

    split_rng = np.random.default_rng([seed, 0])
    shuffle_rng = np.random.default_rng([seed, 2])
    dropout_rng = np.random.default_rng([seed, 3])
    if validation_examples is None:
        train_examples, validation_examples = split_validation(train_examples, config.validation_fraction, split_rng)
    x_train, y_train = stack_examples(train_examples), label_indices(train_examples, classes)
    x_val, y_val = stack_examples(validation_examples), label_indices(validation_examples, classes)

    net = Network(arch, seed=int(np.random.default_rng([seed, 1]).integers(2**31)), classes=classes)
    state = init_optimizer_state(net.params)
    stopper = EarlyStopping(config.early_stop_patience)
    history = TrainHistory()
    best_params = [p.copy() for p in net.params]
    n = x_train.shape[0]

    for epoch in range(config.max_epochs):
        started = time.perf_counter()
        lr = learning_rate(config, epoch)
        order = shuffle_rng.permutation(n)
        total = 0.0
        try:
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                loss, grads = net.loss_and_grads(x_train[idx], y_train[idx], dropout_rng, config.chunk_size)
                sgd_nesterov_step(net.params, grads, state, lr, config.momentum)
                total += loss * len(idx)
            probs = net.predict(x_val)
        except NumericError as exc:
            history.stop_reason = f"numeric failure in epoch {epoch}: {exc}"
            exc.history = history
            raise
        val_loss = cross_entropy(probs, y_val)
        val_acc = float(np.mean(probs.argmax(axis=1) == y_val))
        record = EpochRecord(epoch, total / n, val_loss, val_acc, lr, time.perf_counter() - started)
        history.epochs.append(record)
        log.info("epoch %d lr=%.5f train_loss=%.4f val_loss=%.4f val_acc=%.3f",
                 epoch, lr, record.train_loss, val_loss, val_acc)
        if stopper.update(epoch, val_loss):
            best_params = [p.copy() for p in net.params]
        history.best_epoch = stopper.best_epoch
        if on_epoch is not None and on_epoch(record, net):
            history.stop_reason = "stopped by callback"
            break
        if stopper.should_stop(epoch):
            history.stop_reason = f"no validation improvement for {config.early_stop_patience} epochs"
            break
    else:
        history.stop_reason = "max_epochs reached"

    if config.restore_best:
        net.params = best_params
    return net, history


def checkpoint(model: Network, stats: Optional[StandardizationStats], path):
    """Write the model and its standardisation statistics to one SCNM file."""
    blob = stats.to_bytes() if stats is not None else b""
    Path(path).write_bytes(encode_model(model, blob))


def restore(path) -> tuple[Network, Optional[StandardizationStats]]:
    net, blob = decode_model(Path(path).read_bytes())
    stats = StandardizationStats.from_bytes(blob, net.arch.input_freq) if blob else None
    return net, stats
