"""Residual MLPs hidden inside each lookup table.

A sub-network with fan-in ``n_in``, depth ``L``, hidden width ``N`` and skip
period ``S`` is built from affine maps ``A_1 .. A_L`` with layer widths
``n_in, N, ..., N, n_out``. With ``S > 0`` the layers are grouped into ``L / S``
chunks; each chunk adds an affine shortcut ``R_i`` from its input to its
output. ReLU separates chunks (and layers within a chunk) but is not applied
after the final chunk.

Parameters may carry leading stack axes (one entry per lookup-table node), in
which case every function here evaluates all stacked sub-networks at once.
"""

from dataclasses import dataclass, field

import numpy as np

from .numerics import DTYPE, DimensionError, affine_backward, affine_forward


class SubnetConfigError(ValueError):
    """Raised for an invalid combination of depth, width and skip period."""


@dataclass(frozen=True)
class SubnetConfig:
    n_in: int
    n_out: int = 1
    L: int = 1
    N: int = 1
    S: int = 0

    def __post_init__(self):
        if self.n_in < 1 or self.n_out < 1:
            raise SubnetConfigError(f"n_in and n_out must be >= 1, got {self.n_in}, {self.n_out}")
        if self.L < 1 or self.N < 1:
            raise SubnetConfigError(f"L and N must be >= 1, got L={self.L}, N={self.N}")
        if self.S < 0 or (self.S and self.L % self.S):
            raise SubnetConfigError(f"skip period S={self.S} must be 0 or divide L={self.L}")

    @property
    def widths(self):
        """Layer widths ``n_0 .. n_L``."""
        return [self.n_in] + [self.N] * (self.L - 1) + [self.n_out]

    @property
    def n_chunks(self):
        return self.L // self.S if self.S else 0

    def affine_shapes(self):
        w = self.widths
        return [(w[i + 1], w[i]) for i in range(self.L)]

    def residual_shapes(self):
        w = self.widths
        S = self.S
        return [(w[S * (i + 1)], w[S * i]) for i in range(self.n_chunks)]


@dataclass
class SubnetParams:
    affines: list = field(default_factory=list)
    residuals: list = field(default_factory=list)

    def arrays(self):
        """All parameter arrays in a stable order."""
        out = []
        for W, b in self.affines + self.residuals:
            out += [W, b]
        return out

    def named_arrays(self):
        out = {}
        for i, (W, b) in enumerate(self.affines):
            out[f"A{i}.W"], out[f"A{i}.b"] = W, b
        for i, (W, b) in enumerate(self.residuals):
            out[f"R{i}.W"], out[f"R{i}.b"] = W, b
        return out

    def select(self, index):
        """Parameters of the stacked sub-network(s) at ``index`` on the leading axis."""
        return SubnetParams(
            [(W[index], b[index]) for W, b in self.affines],
            [(W[index], b[index]) for W, b in self.residuals],
        )

    def zeros_like(self):
        return SubnetParams(
            [(np.zeros_like(W), np.zeros_like(b)) for W, b in self.affines],
            [(np.zeros_like(W), np.zeros_like(b)) for W, b in self.residuals],
        )


def _check(cfg, params, x):
    if x.shape[-1] != cfg.n_in:
        raise DimensionError(f"input width {x.shape[-1]} != fan-in {cfg.n_in}")
    if len(params.affines) != cfg.L or len(params.residuals) != cfg.n_chunks:
        raise DimensionError("parameter list lengths do not match the configuration")
    for (W, _), shape in zip(params.affines + params.residuals,
                              cfg.affine_shapes() + cfg.residual_shapes()):
        if W.shape[-2:] != shape:
            raise DimensionError(f"weight shape {W.shape[-2:]} != expected {shape}")


def subnet_forward(cfg, params, x, return_cache=False):
    """Evaluate the sub-network on ``x`` of shape ``(..., batch, n_in)``."""
    x = np.asarray(x, dtype=DTYPE)
    _check(cfg, params, x)
    cache = []
    h = x
    if not cfg.S:
        for i, (W, b) in enumerate(params.affines):
            z = affine_forward(W, b, h)
            cache.append((h, z))
            h = z if i == cfg.L - 1 else np.maximum(z, 0.0)
        return (h, cache) if return_cache else h
    S = cfg.S
    for c in range(cfg.n_chunks):
        chunk_in = h
        steps = []
        for j in range(S):
            W, b = params.affines[c * S + j]
            z = affine_forward(W, b, h)
            steps.append((h, z))
            h = np.maximum(z, 0.0) if j < S - 1 else z
        Wr, br = params.residuals[c]
        out = h + affine_forward(Wr, br, chunk_in)
        cache.append((chunk_in, steps, out))
        h = out if c == cfg.n_chunks - 1 else np.maximum(out, 0.0)
    return (h, cache) if return_cache else h


def subnet_backward(cfg, params, x, dY, cache=None):
    """Reverse-mode gradients. Returns ``(grads, dX)`` with ``grads`` a :class:`SubnetParams`."""
    if cache is None:
        _, cache = subnet_forward(cfg, params, x, return_cache=True)
    dY = np.asarray(dY, dtype=DTYPE)
    grads = params.zeros_like()
    dh = dY
    if not cfg.S:
        for i in reversed(range(cfg.L)):
            h_in, z = cache[i]
            if i < cfg.L - 1:
                dh = np.where(z > 0, dh, 0.0)
            W, b = params.affines[i]
            dW, db, dh = affine_backward(W, b, h_in, dh)
            grads.affines[i] = (dW, db)
        return grads, dh
    S = cfg.S
    for c in reversed(range(cfg.n_chunks)):
        chunk_in, steps, out = cache[c]
        if c < cfg.n_chunks - 1:
            dh = np.where(out > 0, dh, 0.0)
        d_out = dh
        Wr, br = params.residuals[c]
        dWr, dbr, d_in = affine_backward(Wr, br, chunk_in, d_out)
        grads.residuals[c] = (dWr, dbr)
        dh = d_out
        for j in reversed(range(S)):
            h_in, z = steps[j]
            if j < S - 1:
                dh = np.where(z > 0, dh, 0.0)
            W, b = params.affines[c * S + j]
            dW, db, dh = affine_backward(W, b, h_in, dh)
            grads.affines[c * S + j] = (dW, db)
        dh = dh + d_in
    return grads, dh


def _chain_count(F, depth, N):
    if depth == 1:
        return F + 1
    if depth == 2:
        return (F + 2) * N + 1
    return (depth - 2) * N * N + (F + depth) * N + 1


def count_params(F, L, N, S):
    """Trainable parameter counts ``(T_A, T_R, T_N)`` of a single-output sub-network."""
    if L < 1 or N < 1 or F < 1:
        raise SubnetConfigError(f"F, L and N must be >= 1, got F={F}, L={L}, N={N}")
    if S < 0 or (S and L % S):
        raise SubnetConfigError(f"skip period S={S} must be 0 or divide L={L}")
    t_a = _chain_count(F, L, N)
    t_r = _chain_count(F, L // S, N) if S else 0
    return t_a, t_r, t_a + t_r


def init_params(cfg, rng, stack=()):
    """He-normal weights and zero biases, optionally for a stack of sub-networks."""
    stack = tuple(stack)

    def make(shape):
        n_out, n_in = shape
        W = rng.normal(0.0, np.sqrt(2.0 / n_in), size=stack + shape).astype(DTYPE)
        return W, np.zeros(stack + (n_out,), dtype=DTYPE)

    return SubnetParams(
        [make(s) for s in cfg.affine_shapes()],
        [make(s) for s in cfg.residual_shapes()],
    )
