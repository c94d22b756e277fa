"""Fixed-point conversion of inputs, weights and biases.

Inputs are normalized by ``m`` and mapped onto n-bit signed integers, weights
and biases of a layer are normalized jointly by ``f = max |w|, |b|`` and
mapped onto q-bit integers. Each step rescales the running spike threshold by
the same factor it applied to the data, so ``drive / theta`` stays in the
units of the float network.

Rounding is a true floor (toward -inf) of the exact rational value: results
that land within rounding distance of an integer are recomputed with
fractions. Since ``(1 - 2**-(k-1)) * 2**(k-1)`` equals ``2**(k-1) - 1``
exactly, the scale factors are computed in that form.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

MAX_BITS = 32


def level_scale(bits: int) -> int:
    """``(1 - 1/2**(bits-1)) * 2**(bits-1)``, the largest representable magnitude."""
    return 2 ** (bits - 1) - 1


def scaled_floor(c: int, x, m) -> np.ndarray:
    """``floor(c * x / m)`` elementwise, exact for float inputs."""
    x, m = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(m, dtype=float))
    v = c * (x / m)
    out = np.floor(v)
    near = np.abs(v - np.rint(v)) <= 1e-9 * np.maximum(1.0, np.abs(v))
    for idx in zip(*np.nonzero(near)):
        out[idx] = (Fraction(c) * Fraction(float(x[idx]))) // Fraction(float(m[idx]))
    return out.astype(np.int64)


def _check_bits(bits: int, name: str):
    if not 2 <= int(bits) <= MAX_BITS:
        raise ValueError(f"{name} must lie in 2..{MAX_BITS}, got {bits}")


@dataclass(frozen=True)
class InputQuantSpec:
    """n-bit input quantizer; ``m`` is a scalar or one normalizer per dimension."""

    n: int
    m: float | tuple[float, ...] = 1.0

    def __post_init__(self):
        _check_bits(self.n, "input bit width n")
        m = np.asarray(self.m, dtype=float)
        if not np.all(np.isfinite(m)) or np.any(m <= 0):
            raise ValueError(f"input normalizer m must be finite and > 0, got {self.m}")
        if m.ndim:
            object.__setattr__(self, "m", tuple(float(v) for v in m))

    @property
    def limit(self) -> int:
        return level_scale(self.n)


@dataclass(frozen=True)
class WeightQuantSpec:
    q: int
    f: float

    def __post_init__(self):
        _check_bits(self.q, "weight bit width q")
        if not np.isfinite(self.f) or self.f <= 0:
            raise ValueError(f"weight normalizer f must be finite and > 0, got {self.f}")


@dataclass(frozen=True, eq=False)
class QuantizedLinear:
    """Integer layer ``w_int`` (out, in), ``b_int`` (out,) with its threshold.

    ``bias_scale`` is the integer value that one unit of float activation has
    at this layer's input (``2**(n-1) - 1`` after the input quantizer, 1 for
    spike inputs); the bias enters the drive as ``b_int * bias_scale`` so it
    lives in the same units as ``w_int @ x_int``.
    """

    w_int: np.ndarray
    b_int: np.ndarray
    spec: WeightQuantSpec
    theta: float
    bias_scale: int = 1
    # accumulator width; 128 when 64 bits cannot hold the worst case
    acc_bits: int = 64

    def __post_init__(self):
        if self.acc_bits not in (64, 128):
            raise ValueError(f"acc_bits must be 64 or 128, got {self.acc_bits}")
        if self.w_int.ndim != 2 or self.b_int.shape != (self.w_int.shape[0],):
            raise ValueError(f"inconsistent shapes w {self.w_int.shape}, b {self.b_int.shape}")
        if not self.theta > 0:
            raise ValueError(f"threshold must be > 0, got {self.theta}")
        bound = 2 ** (self.spec.q - 1)
        for name, arr in (("w_int", self.w_int), ("b_int", self.b_int)):
            if arr.size and np.max(np.abs(arr)) > bound:
                raise ValueError(f"{name} entry exceeds the {self.spec.q}-bit range")
        self.w_int.setflags(write=False)
        self.b_int.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.w_int.shape

    def dequantize(self) -> tuple[np.ndarray, np.ndarray]:
        c = self.spec.f / level_scale(self.spec.q)
        return self.w_int * c, self.b_int * c

    def __eq__(self, other):
        if not isinstance(other, QuantizedLinear):
            return NotImplemented
        return (
            np.array_equal(self.w_int, other.w_int)
            and np.array_equal(self.b_int, other.b_int)
            and self.spec == other.spec
            and self.theta == other.theta
            and self.bias_scale == other.bias_scale
            and self.acc_bits == other.acc_bits
        )

    def worst_drive(self, input_max: int, T: int = 1) -> int:
        """Largest accumulator magnitude over ``T`` steps for inputs bounded by ``input_max``."""
        rows = np.abs(self.w_int).astype(object).sum(axis=1) * int(input_max)
        rows = rows + np.abs(self.b_int).astype(object) * int(self.bias_scale) * int(T)
        return int(max(rows, default=0)) * int(T)

    def with_accumulator(self, input_max: int, T: int) -> "QuantizedLinear":
        """Copy with the narrowest accumulator (64 or 128 bits) that cannot overflow."""
        bits = 64 if self.worst_drive(input_max, T) < 2**63 else 128
        return QuantizedLinear(self.w_int, self.b_int, self.spec, self.theta, self.bias_scale, bits)


def quantize_input(x, spec: InputQuantSpec, clip: bool = True) -> tuple[np.ndarray, float | np.ndarray]:
    """Map real inputs onto n-bit integers; returns ``(x_int, theta0)``.

    ``theta0 = (2**(n-1) - 1) / m`` is a vector when ``m`` is. Values beyond
    ``+-m`` are clipped first unless ``clip`` is false, in which case they
    are rejected.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    m = np.asarray(spec.m, dtype=float)
    if clip:
        x = np.clip(x, -m, m)
    elif np.any(np.abs(x) > m):
        raise ValueError("input magnitude exceeds the normalizer m")
    c = level_scale(spec.n)
    x_int = scaled_floor(c, x, m)
    theta0 = c / m
    return x_int, (float(theta0) if np.ndim(theta0) == 0 else theta0)


def quantize_layer(w, b, q: int, theta_in: float, bias_scale: int = 1) -> QuantizedLinear:
    """Quantize one layer to q bits and carry the threshold through."""
    w = np.atleast_2d(np.asarray(w, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
        raise ValueError("weights contain non-finite values")
    _check_bits(q, "weight bit width q")
    f = float(max(np.max(np.abs(w), initial=0.0), np.max(np.abs(b), initial=0.0)))
    if f == 0.0:
        raise ValueError("degenerate layer: all weights and biases are zero")
    c = level_scale(q)
    w_int = scaled_floor(c, w, f)
    b_int = scaled_floor(c, b, f)
    theta = theta_in * c / f
    if not np.isfinite(theta):
        raise ValueError("threshold overflows; weights are too small to normalize")
    return QuantizedLinear(w_int, b_int, WeightQuantSpec(q, f), float(theta), int(bias_scale))


def max_quant_error(spec: WeightQuantSpec) -> float:
    """Upper bound on ``|dequantize(w_int) - w|`` for one entry: ``2 f / 2**(q-1)``."""
    return 2.0 * spec.f / 2 ** (spec.q - 1)
