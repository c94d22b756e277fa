"""Integer spiking inference: input spike generation and averaging IF layers.

Both neuron models run the integrate-and-fire recurrence against a real
threshold with subtract-on-spike reset. The recurrence is evaluated in
cumulative form: with constant drive ``D`` the membrane after ``t`` steps is
``t*D - k*theta`` (``k`` spikes so far), so a spike fires when
``t*D >= (k+1)*theta``. ``t*D`` is an exact integer, which keeps long trains
free of accumulated rounding error.

Functions accept leading batch dimensions: inputs ``(..., d)``, spike trains
``(..., T, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import TYPE_CHECKING

import numpy as np

from .quant import InputQuantSpec, QuantizedLinear, level_scale, quantize_input

if TYPE_CHECKING:
    from .hdc import HdcCodebook

INT64_MAX = np.iinfo(np.int64).max
_SAFE = 2.0**62


@dataclass(frozen=True, eq=False)
class SpikeTrain:
    """Binary train of shape ``(..., T, d)``."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim < 2:
            raise ValueError("a spike train needs at least (T, d) dimensions")
        if bits.size and not np.isin(bits, (0, 1)).all():
            raise ValueError("spike trains are binary")
        object.__setattr__(self, "bits", bits.astype(np.uint8))

    @property
    def T(self) -> int:
        return self.bits.shape[-2]

    @property
    def width(self) -> int:
        return self.bits.shape[-1]

    def counts(self) -> np.ndarray:
        """Spikes per neuron summed over time, shape ``(..., d)``."""
        return self.bits.sum(axis=-2, dtype=np.int64)

    def __eq__(self, other):
        return isinstance(other, SpikeTrain) and np.array_equal(self.bits, other.bits)


def exact_linear(x_int: np.ndarray, w_int: np.ndarray, acc_bits: int = 64) -> np.ndarray:
    """``x_int @ w_int.T`` in exact integer arithmetic.

    Uses int64 when the worst case provably fits, arbitrary-precision
    integers otherwise. Raises :class:`OverflowError` when the true result
    does not fit an ``acc_bits``-wide signed accumulator.
    """
    x_int = np.asarray(x_int)
    w_int = np.asarray(w_int)
    if w_int.size == 0 or x_int.size == 0:
        return np.zeros(x_int.shape[:-1] + (w_int.shape[0],), dtype=np.int64)
    bound = float(np.max(np.abs(x_int))) * float(np.max(np.sum(np.abs(w_int.astype(float)), axis=1)))
    if bound < _SAFE:
        return x_int.astype(np.int64) @ w_int.astype(np.int64).T
    return _checked(x_int.astype(object) @ w_int.astype(object).T, acc_bits)


def _checked(values, acc_bits: int) -> np.ndarray:
    """Exact integers as int64 when they fit, else as Python ints within ``acc_bits``."""
    arr = np.asarray(values, dtype=object)
    peak = max((abs(int(v)) for v in arr.flat), default=0)
    if peak >= 2 ** (acc_bits - 1):
        raise OverflowError(f"integer accumulator exceeds the {acc_bits}-bit range")
    return arr.astype(np.int64) if peak <= INT64_MAX else arr


def _add_exact(a: np.ndarray, b: np.ndarray, acc_bits: int = 64) -> np.ndarray:
    if a.dtype != object and b.dtype != object:
        if float(np.max(np.abs(a), initial=0)) + float(np.max(np.abs(b), initial=0)) < _SAFE:
            return a + b
    return _checked(a.astype(object) + b.astype(object), acc_bits)


def fire(drive: np.ndarray, theta: float, T: int, acc_bits: int = 64) -> np.ndarray:
    """IF neuron with constant per-step integer ``drive`` for ``T`` steps.

    Returns spikes of shape ``drive.shape[:-1] + (T, d)``.
    """
    drive = np.asarray(drive)
    if drive.dtype == object or float(np.max(np.abs(drive), initial=0)) * T >= _SAFE:
        drive = drive.astype(object)
        _checked(drive * T, acc_bits)
    else:
        drive = drive.astype(np.int64)
    out = np.zeros(drive.shape[:-1] + (T, drive.shape[-1]), dtype=np.uint8)
    k = np.zeros(drive.shape, dtype=np.int64)
    cum = np.zeros(drive.shape, dtype=drive.dtype)
    for t in range(T):
        cum = cum + drive
        s = _at_least(cum, (k + 1), theta)
        out[..., t, :] = s
        k += s
    return out


def _at_least(cum: np.ndarray, mult: np.ndarray, theta: float) -> np.ndarray:
    """Exact ``cum >= mult * theta``; near ties are settled with rationals."""
    rhs = mult * theta
    lhs = cum.astype(float) if cum.dtype != object else np.array(cum, dtype=float)
    s = lhs >= rhs
    near = np.abs(lhs - rhs) <= 1e-9 * np.maximum(1.0, np.abs(rhs))
    if near.any() or cum.dtype == object:
        theta_q = Fraction(theta)
        idx = np.nonzero(near) if cum.dtype != object else np.nonzero(np.ones_like(s))
        for i in zip(*idx):
            s[i] = Fraction(int(cum[i])) >= int(mult[i]) * theta_q
    return s


def spike_gen(x_int, layer: QuantizedLinear, T: int) -> SpikeTrain:
    """Embedding-layer spike generation from integer inputs.

    Every timestep adds ``w_int @ x_int + b_int * bias_scale`` to the membrane.
    """
    x_int = np.asarray(x_int)
    if x_int.shape[-1] != layer.shape[1]:
        raise ValueError(f"input width {x_int.shape[-1]} != layer input width {layer.shape[1]}")
    bias = _checked(layer.b_int.astype(object) * layer.bias_scale, layer.acc_bits)
    drive = _add_exact(exact_linear(x_int, layer.w_int, layer.acc_bits), bias, layer.acc_bits)
    return SpikeTrain(fire(drive, layer.theta, T, layer.acc_bits))


def inter_layer_act(s_prev: SpikeTrain, layer: QuantizedLinear, T: int) -> SpikeTrain:
    """Averaging IF activation for a hidden layer.

    The per-step drive ``w_int @ s_t + b_int`` is averaged over the train,
    then an IF neuron integrates that constant average for ``T`` steps. The
    average ``S / T`` is never formed: the neuron integrates the integer sum
    ``S`` against the threshold ``T * theta`` instead, which is the same
    recurrence scaled by ``T``.
    """
    if s_prev.width != layer.shape[1]:
        raise ValueError(f"spike width {s_prev.width} != layer input width {layer.shape[1]}")
    total = _add_exact(
        exact_linear(s_prev.counts(), layer.w_int, layer.acc_bits),
        _checked(layer.b_int.astype(object) * (layer.bias_scale * s_prev.T), layer.acc_bits),
        layer.acc_bits,
    )
    return SpikeTrain(fire(total, layer.theta * s_prev.T, T, layer.acc_bits))


@dataclass
class SpikeTelemetry:
    """Spike counts per sample and spiking layer, shape ``(N, layers)``."""

    counts: np.ndarray
    widths: tuple[int, ...]
    T: int

    @property
    def total_spikes(self) -> np.ndarray:
        return self.counts.sum(axis=-1)

    def mean_rates(self) -> np.ndarray:
        """Mean firing probability per layer (spikes / (T * width))."""
        c = np.atleast_2d(self.counts)
        return c.mean(axis=0) / (self.T * np.asarray(self.widths))

    def merge(self, other: "SpikeTelemetry") -> "SpikeTelemetry":
        if (self.widths, self.T) != (other.widths, other.T):
            raise ValueError("cannot merge telemetry of different networks")
        return SpikeTelemetry(
            np.concatenate([np.atleast_2d(self.counts), np.atleast_2d(other.counts)]), self.widths, self.T
        )


@dataclass(eq=False)
class ConvertedNet:
    """A fully quantized spiking policy.

    ``layers`` holds every layer including the dense output layer; in HDC mode
    the output layer is replaced by ``codebook`` at inference time.
    """

    input_spec: InputQuantSpec
    layers: list
    T: int
    output_mode: str = "dense"
    codebook: "HdcCodebook | None" = None
    # collapse T>1 penultimate trains to one vector for HDC (off by default)
    collapse_time: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for a, b in zip(self.layers[:-1], self.layers[1:]):
            if a.shape[0] != b.shape[1]:
                raise ValueError(f"layer widths do not chain: {a.shape} -> {b.shape}")
        if self.output_mode == "hdc" and self.codebook is None:
            raise ValueError("HDC output mode needs a codebook")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.layers[0].shape[1],) + tuple(layer.shape[0] for layer in self.layers)

    @property
    def hidden_widths(self) -> tuple[int, ...]:
        return tuple(layer.shape[0] for layer in self.layers[:-1])

    def with_codebook(self, codebook, collapse_time=None) -> "ConvertedNet":
        return ConvertedNet(
            self.input_spec,
            self.layers,
            self.T,
            "hdc",
            codebook,
            self.collapse_time if collapse_time is None else collapse_time,
            dict(self.meta),
        )

    def dense(self) -> "ConvertedNet":
        return ConvertedNet(self.input_spec, self.layers, self.T, "dense", None, self.collapse_time, dict(self.meta))


def hidden_trains(x, net: ConvertedNet):
    """Spike trains of every hidden layer for raw observations ``x``."""
    x_int, _ = quantize_input(x, net.input_spec)
    s = spike_gen(x_int, net.layers[0], net.T)
    trains = [s]
    for layer in net.layers[1:-1]:
        s = inter_layer_act(s, layer, net.T)
        trains.append(s)
    return trains


def dense_readout(s: SpikeTrain, layer: QuantizedLinear) -> np.ndarray:
    """Integer output accumulators ``w_int @ counts + T * b_int``."""
    return _add_exact(
        exact_linear(s.counts(), layer.w_int, layer.acc_bits),
        _checked(layer.b_int.astype(object) * (layer.bias_scale * s.T), layer.acc_bits),
        layer.acc_bits,
    )


def forward_snn(x, net: ConvertedNet):
    """Run the converted network on raw observations ``x``.

    Returns ``(output, telemetry)``: the integer output accumulators in dense
    mode, the penultimate :class:`SpikeTrain` in HDC mode.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.sizes[0]:
        raise ValueError(f"input width {x.shape[-1]} != network input width {net.sizes[0]}")
    trains = hidden_trains(x, net)
    counts = np.stack([t.bits.sum(axis=(-2, -1), dtype=np.int64) for t in trains], axis=-1)
    telemetry = SpikeTelemetry(counts, net.hidden_widths, net.T)
    if net.output_mode == "hdc":
        return trains[-1], telemetry
    return dense_readout(trains[-1], net.layers[-1]), telemetry


def snn_actions(x, net: ConvertedNet):
    """Greedy actions (and telemetry) for a batch of raw observations."""
    out, telemetry = forward_snn(x, net)
    if net.output_mode == "hdc":
        from .hdc import classify

        return classify(out, net.codebook, collapse_time=net.collapse_time), telemetry
    return np.argmax(out, axis=-1), telemetry


def spike_rates(x, net: ConvertedNet) -> list[np.ndarray]:
    """Per-neuron firing rates (count / T) of every hidden layer."""
    return [t.counts() / net.T for t in hidden_trains(x, net)]


def input_theta(spec: InputQuantSpec) -> float:
    """Input-quantizer threshold with the per-dimension normalizer folded out."""
    return float(level_scale(spec.n))
