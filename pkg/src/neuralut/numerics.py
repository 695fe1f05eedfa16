"""Differentiable primitives with explicit forward/backward passes.

Everything here works on float64 numpy arrays. Affine maps accept an optional
stack of leading axes so that a whole layer of independent sub-networks can be
evaluated in one call: ``W`` has shape ``(..., out, in)``, ``b`` has shape
``(..., out)`` and ``X`` has shape ``(..., batch, in)``.

The affine forward pass accumulates the dot products term by term in a fixed
order using only elementwise operations. The value of one output element does
not depend on the batch size or on how many sub-networks are stacked, which is
what makes truth-table enumeration agree bit-for-bit with batched inference.
"""

from dataclasses import dataclass, field

import numpy as np

DTYPE = np.float64


BLOCK_ELEMENTS = 1 << 18


class DimensionError(ValueError):
    """Raised when array shapes are inconsistent."""


class StatisticsError(ValueError):
    """Raised when batch statistics cannot be computed."""


def affine_forward(W, b, X):
    """Compute ``X @ W.T + b`` with a fixed left-to-right reduction order."""
    W = np.asarray(W, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    X = np.asarray(X, dtype=DTYPE)
    if W.ndim < 2 or X.ndim < 2:
        raise DimensionError(f"W and X must be at least 2-D, got {W.shape} and {X.shape}")
    n_out, n_in = W.shape[-2:]
    if X.shape[-1] != n_in:
        raise DimensionError(f"X has {X.shape[-1]} columns, W expects {n_in}")
    if b.shape[-1] != n_out:
        raise DimensionError(f"b has length {b.shape[-1]}, W has {n_out} rows")
    lead = np.broadcast_shapes(W.shape[:-2], X.shape[:-2], b.shape[:-1])
    n = X.shape[-2]
    out = np.empty(lead + (n, n_out), dtype=DTYPE)
    # Row blocks keep the working set cache-sized; every output element still
    # sees the same sequence of operations.
    rows = max(1, BLOCK_ELEMENTS // max(1, int(np.prod(lead, dtype=np.int64)) * n_out))
    bb = b[..., None, :]
    for start in range(0, n, rows):
        Xs = X[..., start:start + rows, :]
        acc = out[..., start:start + rows, :]
        np.multiply(Xs[..., 0, None], W[..., None, :, 0], out=acc)
        tmp = np.empty_like(acc)
        for k in range(1, n_in):
            np.multiply(Xs[..., k, None], W[..., None, :, k], out=tmp)
            acc += tmp
        acc += bb
    return out


def affine_backward(W, b, X, dY):
    """Gradients of :func:`affine_forward`.

    Returns ``(dW, db, dX)`` where the weight and bias gradients are summed
    over the batch axis.
    """
    W = np.asarray(W, dtype=DTYPE)
    X = np.asarray(X, dtype=DTYPE)
    dY = np.asarray(dY, dtype=DTYPE)
    if dY.shape[-1] != W.shape[-2] or X.shape[-1] != W.shape[-1]:
        raise DimensionError(
            f"inconsistent shapes W{W.shape} X{X.shape} dY{dY.shape}"
        )
    if dY.shape[:-1] != X.shape[:-1]:
        raise DimensionError(f"dY{dY.shape} does not match X{X.shape}")
    dW = np.matmul(np.swapaxes(dY, -1, -2), X)
    db = dY.sum(axis=-2)
    dX = np.matmul(dY, W)
    return dW, db, dX


def relu_forward(x):
    return np.maximum(np.asarray(x, dtype=DTYPE), 0.0)


def relu_backward(x, dY):
    return np.where(np.asarray(x) > 0, dY, 0.0)


@dataclass
class BatchNormState:
    """Per-feature batch normalization parameters and running statistics."""

    gamma: np.ndarray
    beta_shift: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    epsilon: float = 1e-5

    @classmethod
    def create(cls, width, momentum=0.1, epsilon=1e-5):
        return cls(
            gamma=np.ones(width, dtype=DTYPE),
            beta_shift=np.zeros(width, dtype=DTYPE),
            running_mean=np.zeros(width, dtype=DTYPE),
            running_var=np.ones(width, dtype=DTYPE),
            momentum=momentum,
            epsilon=epsilon,
        )

    def __post_init__(self):
        n = len(self.gamma)
        for name in ("beta_shift", "running_mean", "running_var"):
            if len(getattr(self, name)) != n:
                raise DimensionError(f"{name} has length {len(getattr(self, name))}, expected {n}")
        if not 0.0 < self.momentum < 1.0:
            raise ValueError(f"momentum must lie in (0, 1), got {self.momentum}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")

    @property
    def width(self):
        return len(self.gamma)

    def slice(self, index):
        """State restricted to the features selected by ``index`` (no copy of scalars)."""
        sel = np.atleast_1d(np.arange(self.width)[index])
        return BatchNormState(
            self.gamma[sel], self.beta_shift[sel], self.running_mean[sel],
            self.running_var[sel], self.momentum, self.epsilon,
        )


@dataclass
class BatchNormCache:
    x_hat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray = field(repr=False)


def batchnorm_forward(x, state, mode="eval", update=True):
    """Normalize ``x`` of shape ``(batch, width)``.

    In ``"train"`` mode batch statistics are used and, when ``update`` is set,
    the running statistics are moved towards them. Returns ``(y, cache)``.
    """
    x = np.asarray(x, dtype=DTYPE)
    if x.shape[-1] != state.width:
        raise DimensionError(f"input width {x.shape[-1]} != state width {state.width}")
    if mode == "train":
        n = x.shape[0]
        if n < 2:
            raise StatisticsError(f"train-mode batch norm needs a batch of at least 2, got {n}")
        mean = x.mean(axis=0)
        var = ((x - mean) ** 2).mean(axis=0)
        if update:
            m = state.momentum
            state.running_mean[...] = (1 - m) * state.running_mean + m * mean
            state.running_var[...] = (1 - m) * state.running_var + m * var * (n / (n - 1))
    elif mode == "eval":
        mean = state.running_mean
        var = state.running_var
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    inv_std = 1.0 / np.sqrt(var + state.epsilon)
    x_hat = (x - mean) * inv_std
    y = state.gamma * x_hat + state.beta_shift
    return y, BatchNormCache(x_hat, inv_std, state.gamma)


def batchnorm_backward(cache, dY, mode="train"):
    """Return ``(dX, dgamma, dbeta)`` for :func:`batchnorm_forward`."""
    dY = np.asarray(dY, dtype=DTYPE)
    dgamma = (dY * cache.x_hat).sum(axis=0)
    dbeta = dY.sum(axis=0)
    dx_hat = dY * cache.gamma
    if mode == "eval":
        return dx_hat * cache.inv_std, dgamma, dbeta
    n = dY.shape[0]
    dX = (cache.inv_std / n) * (
        n * dx_hat - dx_hat.sum(axis=0) - cache.x_hat * (dx_hat * cache.x_hat).sum(axis=0)
    )
    return dX, dgamma, dbeta


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy loss and its gradient with respect to ``logits``."""
    logits = np.asarray(logits, dtype=DTYPE)
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c}), got range [{labels.min()}, {labels.max()}]")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - z[rows, labels]))
    grad = np.exp(z - log_norm[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / n
