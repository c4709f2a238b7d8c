"""Supervised training with AdamW and a warmup + cosine schedule."""

import csv
import dataclasses
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .core import ops
from .core.rng import STREAM_DROPOUT, STREAM_SHUFFLE, make_rng
from .core.tensor import Tensor, no_grad
from .errors import ClassCountMismatch, ConfigError, DatasetEmpty, ShapeMismatch
from .metrics import compute_metrics
from .model import classify_forward, init_params, load_checkpoint, save_checkpoint

LOG_COLUMNS = ("epoch", "lr", "train_loss", "val_acc", "val_macro_f1", "wall_seconds")

# never decayed: embedding tables and the state-matrix logs
NO_DECAY = ("byte_table", "pos_table", "cls_vec", "A_log")


@dataclass
class TrainConfig:
    epochs: int = 120
    base_lr: float = 1e-3
    min_lr: float = 1e-6
    warmup_epochs: int = 10
    weight_decay: float = 0.05
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 128
    eval_batch_size: int = 64
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        self.validate()

    def validate(self):
        if self.epochs < 0:
            raise ConfigError("train.epochs", "must be >= 0")
        if self.warmup_epochs < 0 or (self.epochs > 0 and self.warmup_epochs >= self.epochs):
            raise ConfigError("train.warmup_epochs", "must be >= 0 and < epochs")
        if not self.base_lr > self.min_lr > 0:
            raise ConfigError("train.min_lr", "need base_lr > min_lr > 0")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ConfigError("train.betas", "need two values in [0, 1)")
        if self.eps <= 0:
            raise ConfigError("train.eps", "must be > 0")
        if self.weight_decay < 0:
            raise ConfigError("train.weight_decay", "must be >= 0")
        for key in ("batch_size", "eval_batch_size"):
            if getattr(self, key) < 1:
                raise ConfigError(f"train.{key}", "must be >= 1")

    def to_dict(self):
        return dataclasses.asdict(self)


def lr_at(epoch, cfg):
    """Linear warmup to ``base_lr`` over ``warmup_epochs`` (reaching it at
    ``warmup - 1``), then cosine annealing to ``min_lr``."""
    w = cfg.warmup_epochs
    if epoch < w:
        return cfg.base_lr * (epoch + 1) / w
    span = max(cfg.epochs - w, 1)
    return cfg.min_lr + 0.5 * (cfg.base_lr - cfg.min_lr) * (1.0 + math.cos(math.pi * (epoch - w) / span))


def decays(name, value):
    """Weight decay applies to weight matrices only."""
    base = name.rsplit(".", 1)[-1]
    return np.ndim(value) >= 2 and base not in NO_DECAY


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adamw_step(params, grads, state, lr, cfg, decay=None):
    """One AdamW update in place on the arrays of ``params`` (name -> ndarray
    or Tensor). ``decay`` maps name -> bool; default uses :func:`decays`."""
    b1, b2 = cfg.betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        theta = p.data if isinstance(p, Tensor) else p
        g = grads.get(name)
        if g is None:
            continue
        if np.shape(g) != theta.shape:
            raise ShapeMismatch(f"{name}: grad {np.shape(g)} vs param {theta.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        do_decay = decays(name, theta) if decay is None else decay.get(name, False)
        if do_decay and cfg.weight_decay:
            theta -= lr * cfg.weight_decay * theta
        theta -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


def _check_data(ds, config):
    if ds is None or len(ds) == 0:
        raise DatasetEmpty("dataset has no samples")
    if ds.seq_len != config.seq_len:
        raise ShapeMismatch(f"dataset seq_len {ds.seq_len} != model seq_len {config.seq_len}")
    if ds.num_classes != config.num_classes:
        raise ClassCountMismatch(f"dataset has {ds.num_classes} classes, model {config.num_classes}")


def predict(x, params, config, batch_size=64):
    """Eval-mode logits for uint8 bursts ``x`` [N, seq_len]."""
    out = []
    with no_grad():
        for i in range(0, len(x), batch_size):
            out.append(classify_forward(x[i:i + batch_size], params, config).data)
    return np.concatenate(out) if out else np.zeros((0, config.num_classes))


def evaluate(dataset, checkpoint, batch_size=64):
    """Metrics of a checkpoint (path or ``(config, params)``) on a dataset."""
    if isinstance(checkpoint, (str, os.PathLike)):
        config, params = load_checkpoint(checkpoint)
    else:
        config, params = checkpoint
    _check_data(dataset, config)
    pred = predict(dataset.x, params, config, batch_size).argmax(axis=1)
    return compute_metrics(dataset.labels, pred, config.num_classes)


def _snapshot(params):
    return {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in params.items()}


@dataclass
class TrainResult:
    config: object
    params: dict            # best-validation parameters
    last_params: dict
    log: list
    best_epoch: int
    best_f1: float


def train(train_ds, model_cfg, train_cfg, val_ds=None, out_dir=None, params=None, verbose=None):
    """Train and keep the epoch with the best validation macro-F1 (the last
    epoch when no validation set is given). Writes ``epoch_log.csv``,
    ``best.ckpt`` and ``last.ckpt`` into ``out_dir`` when set."""
    _check_data(train_ds, model_cfg)
    if val_ds is not None and len(val_ds):
        _check_data(val_ds, model_cfg)
    else:
        val_ds = None
    params = init_params(model_cfg) if params is None else params
    state = AdamState()
    n = len(train_ds)
    labels = train_ds.labels
    best = (_snapshot(params), -1, -1.0)
    log = []
    log_fh = writer = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_fh = open(os.path.join(out_dir, "epoch_log.csv"), "w", newline="")
        writer = csv.writer(log_fh)
        writer.writerow(LOG_COLUMNS)
    try:
        for epoch in range(train_cfg.epochs):
            t0 = time.perf_counter()
            lr = lr_at(epoch, train_cfg)
            order = (make_rng(train_cfg.seed, STREAM_SHUFFLE, epoch).permutation(n)
                     if train_cfg.shuffle else np.arange(n))
            loss_sum = 0.0
            for b, i in enumerate(range(0, n, train_cfg.batch_size)):
                idx = order[i:i + train_cfg.batch_size]
                rng = make_rng(train_cfg.seed, STREAM_DROPOUT, epoch, b)
                logits = classify_forward(train_ds.x[idx], params, model_cfg, training=True, rng=rng)
                loss, _ = ops.softmax_cross_entropy(logits, labels[idx])
                for p in params.values():
                    p.grad = None
                loss.backward()
                adamw_step(params, {k: p.grad for k, p in params.items()}, state, lr, train_cfg)
                loss_sum += float(loss.data) * len(idx)
            train_loss = loss_sum / n
            if val_ds is not None:
                m = evaluate(val_ds, (model_cfg, params), train_cfg.eval_batch_size)
                val_acc, val_f1 = m.accuracy, m.macro_f1
            else:
                val_acc = val_f1 = float("nan")
            wall = time.perf_counter() - t0
            row = dict(epoch=epoch, lr=lr, train_loss=train_loss, val_acc=val_acc,
                       val_macro_f1=val_f1, wall_seconds=wall)
            log.append(row)
            if writer is not None:
                writer.writerow([epoch, repr(lr), repr(train_loss), repr(val_acc), repr(val_f1), f"{wall:.3f}"])
                log_fh.flush()
            if verbose:
                verbose(f"epoch {epoch:3d} lr {lr:.3e} loss {train_loss:.4f} "
                        f"val_acc {val_acc:.4f} val_f1 {val_f1:.4f} ({wall:.1f}s)")
            score = val_f1 if val_ds is not None else float(epoch)
            if score > best[2]:
                best = (_snapshot(params), epoch, score)
    finally:
        if log_fh is not None:
            log_fh.close()
    best_params, best_epoch, best_score = best
    if val_ds is None:
        best_params, best_epoch, best_score = params, train_cfg.epochs - 1, float("nan")
    if out_dir is not None:
        save_checkpoint(os.path.join(out_dir, "best.ckpt"), model_cfg, best_params)
        save_checkpoint(os.path.join(out_dir, "last.ckpt"), model_cfg, params)
    return TrainResult(model_cfg, best_params, params, log, best_epoch, best_score)
