"""Uniform quantizers with a learnable scale, and the table-index bit layout.

Unsigned quantizers have levels ``0 .. 2**bits - 1`` with step
``scale / (2**bits - 1)``. Signed quantizers have levels
``-2**(bits-1) .. 2**(bits-1) - 1`` with step ``scale / (2**(bits-1) - 1)`` and
store codes in offset binary (``raw = level + 2**(bits-1)``). Rounding is half
to even.

Table index layout: for codes ``c_0 .. c_{F-1}`` of ``bits`` bits each, the index
is ``sum(c_k << bits * (F - 1 - k))``. Connection 0 occupies the most
significant bit group. The simulator and the Verilog emitter rely on this.
"""

from dataclasses import dataclass

import numpy as np

from .numerics import DTYPE

MAX_INDEX_BITS = 32


class QuantizationError(ValueError):
    """Raised for invalid quantizer inputs or codes."""


@dataclass
class Quantizer:
    bits: int
    scale: float = 1.0
    signed: bool = False

    def __post_init__(self):
        if int(self.bits) != self.bits or self.bits < 1:
            raise QuantizationError(f"bits must be a positive integer, got {self.bits}")
        if self.signed and self.bits < 2:
            raise QuantizationError("a signed quantizer needs at least 2 bits")
        if not self.scale > 0:
            raise QuantizationError(f"scale must be positive, got {self.scale}")
        self.bits = int(self.bits)
        self.scale = float(self.scale)

    @property
    def levels(self):
        return 1 << self.bits

    @property
    def offset(self):
        """Level represented by raw code 0."""
        return -(1 << (self.bits - 1)) if self.signed else 0

    @property
    def min_level(self):
        return self.offset

    @property
    def max_level(self):
        return self.offset + self.levels - 1

    @property
    def step(self):
        return self.scale / self.max_level

    def bounds(self):
        """Real-valued clip interval ``(low, high)``."""
        d = self.step
        return self.min_level * d, self.max_level * d


def quantize(x, q):
    """Return ``(codes, xq)`` for ``x`` (scalar or array).

    ``codes`` are raw unsigned codes, ``xq`` the represented real values.
    """
    x = np.asarray(x, dtype=DTYPE)
    if not np.all(np.isfinite(x)):
        raise QuantizationError("cannot quantize non-finite values")
    d = q.step
    level = np.clip(np.rint(x / d), q.min_level, q.max_level)
    xq = level * d
    codes = (level - q.offset).astype(np.int64)
    return codes, xq


def dequantize(codes, q):
    codes = np.asarray(codes)
    if codes.size and (codes.min() < 0 or codes.max() >= q.levels):
        raise QuantizationError(f"codes must lie in [0, {q.levels}) for a {q.bits}-bit quantizer")
    level = (codes + q.offset).astype(DTYPE)
    return level * q.step


def fake_quantize(x, q, surrogate=False):
    """Quantized values of ``x``; with ``surrogate`` only the clip is applied.

    The surrogate is the function whose exact gradient the straight-through
    estimator computes, used for finite-difference checks.
    """
    if surrogate:
        lo, hi = q.bounds()
        return np.clip(np.asarray(x, dtype=DTYPE), lo, hi)
    return quantize(x, q)[1]


def quantize_backward(x, q, dY):
    """Straight-through gradient. Returns ``(dX, dScale)``.

    Inside the clip interval the gradient passes unchanged and the scale gets
    nothing. Clipped elements block ``dX`` and contribute to ``dScale`` through
    the derivative of the clip bound with respect to the scale (``+1`` at the
    top bound, ``min_level / max_level`` at the bottom bound, which is 0 for
    unsigned quantizers).
    """
    x = np.asarray(x, dtype=DTYPE)
    dY = np.asarray(dY, dtype=DTYPE)
    lo, hi = q.bounds()
    above = x > hi
    below = x < lo
    inside = ~(above | below)
    dX = np.where(inside, dY, 0.0)
    d_scale = dY[above].sum() + (q.min_level / q.max_level) * dY[below].sum()
    return dX, float(d_scale)


def pack_codes(codes, bits):
    """Concatenate codes into a table index, connection 0 most significant.

    ``codes`` may be a 1-D sequence or an array whose last axis indexes the
    connections; the result has the remaining shape.
    """
    codes = np.asarray(codes, dtype=np.int64)
    fan_in = codes.shape[-1]
    if bits * fan_in > MAX_INDEX_BITS:
        raise QuantizationError(
            f"index of {bits * fan_in} bits exceeds the {MAX_INDEX_BITS}-bit limit"
        )
    if codes.size and (codes.min() < 0 or codes.max() >= (1 << bits)):
        raise QuantizationError(f"codes must lie in [0, {1 << bits})")
    index = np.zeros(codes.shape[:-1], dtype=np.int64)
    for k in range(fan_in):
        index = (index << bits) | codes[..., k]
    if index.ndim == 0:
        return int(index)
    return index


def unpack_index(index, bits, fan_in):
    """Inverse of :func:`pack_codes`; returns codes with a trailing connection axis."""
    index = np.asarray(index, dtype=np.int64)
    mask = (1 << bits) - 1
    shifts = bits * (fan_in - 1 - np.arange(fan_in))
    return (index[..., None] >> shifts) & mask
