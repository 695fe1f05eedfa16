"""Quantization-aware training: AdamW with a cosine warm-restart schedule."""

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .numerics import DTYPE
from .topology import is_decayed, model_backward, model_forward, predict

log = logging.getLogger(__name__)


class TrainConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr_max: float = 1e-2
    lr_min: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 128
    epochs: int = 50
    restart_period: float = 10.0  # epochs until the first restart
    restart_mult: float = 2.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eval_train: bool = True

    def __post_init__(self):
        if not 0 <= self.lr_min < self.lr_max:
            raise TrainConfigError(f"need 0 <= lr_min < lr_max, got {self.lr_min}, {self.lr_max}")
        if self.batch_size < 2:
            raise TrainConfigError("batch_size must be >= 2 (batch norm needs batch statistics)")
        if self.epochs < 1:
            raise TrainConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.restart_mult < 1 or self.restart_period <= 0:
            raise TrainConfigError("restart_period must be > 0 and restart_mult >= 1")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float
    test_acc: float
    lr: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    best_epoch: int = -1

    def to_text(self):
        lines = ["epoch\tloss\ttrain_acc\ttest_acc\tlr"]
        for r in self.records:
            lines.append(f"{r.epoch}\t{r.loss:.6f}\t{r.train_acc:.6f}\t{r.test_acc:.6f}\t{r.lr:.6g}")
        return "\n".join(lines) + "\n"

    def as_dicts(self):
        return [asdict(r) for r in self.records]


def cosine_lr(t_cur, t_i, lr_min, lr_max):
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t_cur / t_i))


def lr_at(step, T0, T_mult, lr_min, lr_max):
    """Learning rate at ``step`` of a cosine schedule with warm restarts.

    Cycle ``k`` lasts ``T0 * T_mult**k`` steps.
    """
    if step < 0:
        raise ValueError("step must be >= 0")
    t_cur, t_i = float(step), float(T0)
    if T_mult == 1:
        t_cur = math.fmod(t_cur, t_i)
    else:
        while t_cur >= t_i:
            t_cur -= t_i
            t_i *= T_mult
    return cosine_lr(t_cur, t_i, lr_min, lr_max)


@dataclass
class AdamWState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adamw_step(params, grads, state, lr, weight_decay, beta1=0.9, beta2=0.999,
               eps=1e-8, decay=is_decayed):
    """In-place AdamW update of every array in ``params``.

    ``decay(name)`` selects the arrays that receive decoupled weight decay.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p, dtype=DTYPE)
            state.v[name] = np.zeros_like(p, dtype=DTYPE)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if weight_decay and decay(name):
            p -= lr * weight_decay * p
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def accuracy(model, X, y):
    if len(y) == 0:
        return float("nan")
    return float(np.mean(predict(model, X) == y))


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        if len(idx) >= 2:
            yield idx


def fit_standardization(model, X):
    X = np.asarray(X, dtype=DTYPE)
    model.input_mean = X.mean(axis=0)
    std = X.std(axis=0)
    model.input_std = np.where(std > 0, std, 1.0)


def train(model, train_set, test_set=None, cfg=None, callback=None):
    """Train ``model`` in place and return ``(best_model, history)``.

    ``train_set`` and ``test_set`` are :class:`neuralut.data.Dataset` objects
    (anything with ``X``, ``y`` and ``n_classes``). The returned model is the
    one with the best test accuracy (train accuracy when no test set is given).
    """
    cfg = cfg or TrainConfig()
    if train_set.n_classes != model.n_classes:
        raise TrainConfigError(
            f"dataset has {train_set.n_classes} classes, model outputs {model.n_classes}"
        )
    if test_set is not None and test_set.n_classes != model.n_classes:
        raise TrainConfigError("test set class count does not match the model")
    X = np.asarray(train_set.X, dtype=DTYPE)
    y = np.asarray(train_set.y)
    if getattr(train_set, "mean", None) is not None:
        model.input_mean = np.asarray(train_set.mean, dtype=DTYPE)
        model.input_std = np.asarray(train_set.std, dtype=DTYPE)
    else:
        fit_standardization(model, X)

    n = len(y)
    steps_per_epoch = max(1, sum(1 for _ in _batches(n, cfg.batch_size, np.random.default_rng(0))))
    T0 = cfg.restart_period * steps_per_epoch
    history = TrainHistory()
    opt = AdamWState()
    best = None
    best_score = -1.0
    step = 0
    with threadpool_limits(limits=1):
        warm = np.random.default_rng([cfg.seed, 2, 0]).permutation(n)[:cfg.batch_size]
        model_forward(model, X[warm], mode="train", init_scales=True, update_stats=False)
        for epoch in range(cfg.epochs):
            rng = np.random.default_rng([cfg.seed, 2, epoch + 1])
            losses = []
            lr = cfg.lr_max
            for idx in _batches(n, cfg.batch_size, rng):
                lr = lr_at(step, T0, cfg.restart_mult, cfg.lr_min, cfg.lr_max)
                loss, grads, _ = model_backward(model, X[idx], y[idx])
                params = model.parameters()
                adamw_step(params, grads, opt, lr, cfg.weight_decay,
                           cfg.beta1, cfg.beta2, cfg.eps)
                model.assign_scales(params)
                losses.append(loss)
                step += 1
            train_acc = accuracy(model, X, y) if cfg.eval_train else float("nan")
            test_acc = accuracy(model, test_set.X, test_set.y) if test_set is not None else float("nan")
            rec = EpochRecord(epoch, float(np.mean(losses)), train_acc, test_acc, lr)
            history.records.append(rec)
            score = test_acc if test_set is not None else train_acc
            if best is None or not score <= best_score:
                best_score = score
                best = model.copy()
                history.best_epoch = epoch
            log.info("epoch %d loss %.4f train %.4f test %.4f lr %.3g",
                     epoch, rec.loss, train_acc, test_acc, lr)
            if callback is not None:
                callback(rec)
    return best, history
