from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import if_count_closed_form, if_train_oracle
from spikehd.network import MlpWeights, PolicySpec, convert, cq_activation, forward_mlp
from spikehd.quant import QuantizedLinear, WeightQuantSpec
from spikehd.snn import (
    SpikeTelemetry,
    SpikeTrain,
    fire,
    forward_snn,
    inter_layer_act,
    snn_actions,
    spike_gen,
    spike_rates,
)


def layer(w, b, theta, q=8, bias_scale=1):
    return QuantizedLinear(np.array(w, dtype=np.int64), np.array(b, dtype=np.int64), WeightQuantSpec(q, 1.0), theta, bias_scale)


def test_zero_drive_is_silent():
    s = spike_gen([0, 0], layer([[5, 5]], [0], 3.0), 6)
    assert s.bits.sum() == 0


def test_drive_equal_to_threshold_fires_every_step():
    s = spike_gen([1], layer([[3]], [0], 3.0), 3)
    assert s.bits[:, 0].tolist() == [1, 1, 1]


def test_half_threshold_drive():
    s = spike_gen([1], layer([[2]], [0], 4.0), 4)
    assert s.bits[:, 0].tolist() == [0, 1, 0, 1]


def test_averaged_drive_equal_to_threshold():
    prev = SpikeTrain(np.array([[1], [1]]))
    out = inter_layer_act(prev, layer([[4]], [0], 4.0), 2)
    assert out.bits[:, 0].tolist() == [1, 1]


def test_three_quarter_averaged_drive():
    prev = SpikeTrain(np.array([[1], [1], [1], [0]]))
    out = inter_layer_act(prev, layer([[4]], [0], 4.0), 4)
    assert out.bits[:, 0].tolist() == [0, 1, 1, 1]


def test_silent_input_and_zero_bias():
    prev = SpikeTrain(np.zeros((5, 3)))
    assert inter_layer_act(prev, layer([[1, 2, 3]], [0], 1.0), 5).bits.sum() == 0


def test_spike_train_validation():
    with pytest.raises(ValueError):
        SpikeTrain(np.array([[0, 2]]))
    with pytest.raises(ValueError):
        SpikeTrain(np.array([1, 0]))


def test_width_mismatch():
    with pytest.raises(ValueError):
        spike_gen([1, 2, 3], layer([[1, 1]], [0], 1.0), 1)
    with pytest.raises(ValueError):
        inter_layer_act(SpikeTrain(np.zeros((1, 3))), layer([[1, 1]], [0], 1.0), 1)


def test_if_recurrence_matches_literal_oracle():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        T = int(rng.integers(1, 65))
        theta = float(rng.integers(1, 500)) / float(rng.integers(1, 9))
        drive = int(rng.integers(-300, 900))
        got = fire(np.array([drive]), theta, T)[:, 0].tolist()
        assert got == if_train_oracle(drive, Fraction(theta), T)
        assert sum(got) == if_count_closed_form(drive, Fraction(theta), T)


@given(st.integers(1, 64), st.integers(0, 2**32 - 1))
def test_averaging_is_order_invariant(T, seed):
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=(T, 6))
    lay = layer(rng.integers(-127, 128, size=(4, 6)), rng.integers(-127, 128, size=4), 50.0)
    a = inter_layer_act(SpikeTrain(bits), lay, T)
    b = inter_layer_act(SpikeTrain(bits[rng.permutation(T)]), lay, T)
    assert np.array_equal(a.counts(), b.counts())
    assert set(np.unique(a.bits)) <= {0, 1}


def test_membrane_stays_bounded_for_nonnegative_drive():
    rng = np.random.default_rng(1)
    for _ in range(2000):
        T = int(rng.integers(1, 40))
        theta = float(rng.uniform(0.5, 50))
        drive = float(rng.uniform(0, 60))
        bits = if_train_oracle(drive, Fraction(theta), T)
        # U(t) = t*drive - k*theta must stay in [0, theta) while the neuron keeps up
        u = T * Fraction(drive) - sum(bits) * Fraction(theta)
        assert u >= 0
        if drive <= theta:
            assert u < Fraction(theta)


def test_overflow_is_detected():
    big = QuantizedLinear(
        np.full((1, 2), 2**31 - 1, dtype=np.int64), np.zeros(1, dtype=np.int64), WeightQuantSpec(32, 1.0), 1.0, 1, 64
    )
    with pytest.raises(OverflowError):
        spike_gen(np.full((1, 2), 2**31 - 1), big, 4)


def test_128_bit_accumulator_is_exact():
    big = QuantizedLinear(
        np.full((1, 2), 2**31 - 1, dtype=np.int64), np.zeros(1, dtype=np.int64), WeightQuantSpec(32, 1.0), float(2**63), 1, 128
    )
    s = spike_gen(np.full((1, 2), 2**31 - 1), big, 4)
    drive = 2 * (2**31 - 1) ** 2
    assert s.bits[0, :, 0].tolist() == if_train_oracle(drive, Fraction(2**63), 4)


def _random_net(rng, sizes, T):
    layers = [(rng.normal(size=(b, a)), rng.normal(size=b) * 0.3) for a, b in zip(sizes[:-1], sizes[1:])]
    weights = MlpWeights(layers, np.ones(sizes[0]), "cq", T)
    return weights


def test_forward_is_deterministic_and_bounded():
    rng = np.random.default_rng(3)
    weights = _random_net(rng, (4, 10, 2), 4)
    spec = PolicySpec("cartpole", (4, 10, 2), T=4, output_mode="dense")
    net = convert(weights, spec)
    x = rng.uniform(-1, 1, size=(50, 4))
    out1, tel1 = forward_snn(x, net)
    out2, tel2 = forward_snn(x, net)
    assert np.array_equal(out1, out2)
    assert np.all(tel1.total_spikes <= net.T * sum(net.hidden_widths))
    with pytest.raises(ValueError):
        forward_snn(np.zeros((1, 3)), net)


def test_telemetry_merge():
    a = SpikeTelemetry(np.array([[1, 2]]), (3, 3), 2)
    b = SpikeTelemetry(np.array([[3, 4]]), (3, 3), 2)
    assert a.merge(b).counts.tolist() == [[1, 2], [3, 4]]
    assert a.merge(b).mean_rates().tolist() == [pytest.approx(2 / 6), pytest.approx(3 / 6)]
    with pytest.raises(ValueError):
        a.merge(SpikeTelemetry(np.array([[1]]), (3,), 2))


@pytest.mark.parametrize("T", [1, 2, 4])
def test_quantized_activation_variance_ratio(T):
    x = np.random.default_rng(T).standard_normal(1_000_000)
    ratio = np.var(cq_activation(x, T)) / np.var(x)
    relu_ratio = np.var(np.maximum(x, 0)) / np.var(x)
    assert relu_ratio == pytest.approx(0.5 - 1 / (2 * np.pi), abs=5e-3)
    assert ratio < 0.5 - 0.01
    assert ratio < relu_ratio


def test_rates_match_cq_activations_at_T64():
    """Spike rates of hidden neurons stay within 1/64 of the CQ(64) float activations."""
    rng = np.random.default_rng(5)
    T = 64
    for sizes in [(4, 10, 2), (2, 24, 24, 3), (6, 64, 3)]:
        weights = _random_net(rng, sizes, T)
        env = {4: "cartpole", 2: "mountaincar", 6: "acrobot"}[sizes[0]]
        weights.obs_scale = np.ones(sizes[0])
        spec = PolicySpec(env, sizes, T=T, n=32, q=32, output_mode="dense")
        net = convert(weights, spec)
        x = rng.uniform(-1, 1, size=(200, sizes[0]))
        _, hidden = forward_mlp(x, weights, return_hidden=True)
        rates = spike_rates(x, net)
        for h, r in zip(hidden, rates):
            assert np.max(np.abs(h - r)) <= 1 / 64 + 1e-12


def test_dense_actions_match_integer_argmax():
    rng = np.random.default_rng(8)
    weights = _random_net(rng, (2, 24, 24, 3), 1)
    net = convert(weights, PolicySpec("mountaincar", (2, 24, 24, 3), output_mode="dense"))
    x = rng.uniform(-1, 1, size=(100, 2))
    out, _ = forward_snn(x, net)
    actions, _ = snn_actions(x, net)
    assert np.array_equal(actions, np.argmax(out, axis=-1))
