import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import energy_oracle_pj
from spikehd.energy import (
    CostTable,
    EnergyLedger,
    LayerCount,
    count_mlp,
    count_snn,
    int_precision,
    report,
    report_csv,
    report_json,
    with_lookahead,
)
from spikehd.network import PolicySpec, convert, init_weights
from spikehd.snn import SpikeTelemetry, forward_snn


def spec(preset, bits=8, T=1, mode="hdc"):
    return PolicySpec.preset(preset, T=T, n=bits, q=bits, output_mode=mode)


def cells(ledger):
    return [float(e) for e in ledger.layer_energy()]


def test_mlp_cells():
    assert cells(count_mlp((4, 10, 2))) == pytest.approx([157.0, 75.8], abs=1e-12)
    assert cells(count_mlp((2, 24, 24, 3))) == pytest.approx([199.2, 2152.8, 269.1], abs=1e-12)
    assert count_mlp((4, 10, 2)).total_exact == Fraction("232.8")


def test_cartpole_spiking_cells():
    e8 = count_snn(spec("net1"), retained=1, xor_convention="shared")
    assert e8.layer_energy() == [Fraction("23.1"), Fraction("0.00243")]
    assert e8.total_exact == Fraction("23.10243")
    assert count_snn(spec("net1"), retained=1).layer_energy()[1] == Fraction("0.00486")
    assert count_snn(spec("net1", 32), retained=1).layer_energy()[0] == Fraction("139.8")


def test_mountaincar_spiking_cells():
    e = count_snn(spec("net3"), retained=19, xor_convention="shared")
    assert e.layer_energy() == [Fraction("17.72"), Fraction(18), Fraction("0.04617")]
    assert e.total_exact == Fraction("35.76617")
    assert count_snn(spec("net3"), xor_convention="shared").layer_energy()[2] == Fraction("0.05832")
    e32 = count_snn(spec("net3", 32), retained=19)
    assert e32.layer_energy()[:2] == [Fraction("158.6"), Fraction(60)]


def test_acrobot_spiking_cells():
    e = count_snn(spec("net2"), retained=61, xor_convention="shared")
    assert e.layer_energy() == [Fraction("100.92"), Fraction("0.14823")]
    assert count_snn(spec("net2", 32), retained=61).layer_energy()[0] == Fraction(1219)


def test_dense_output_and_multi_step_terms():
    # 10 spiking inputs, T steps: 10*2*T events, 2*T bias and 2*(T-1) averaging adds at int32
    for T in (1, 2, 4):
        got = count_snn(spec("net1", 32, T, "dense")).per_inference()[1].adds["int32"]
        assert got == 20 * T + 2 * T + 2 * (T - 1)


def test_against_oracle_counts():
    e = count_snn(spec("net3", 8, 2, "dense"))
    layers = e.per_inference()
    want = energy_oracle_pj({"int8": 2 * 24, "fp32": 2}, {"int8": 24 * 2})
    assert layers[0].energy(e.costs) == want
    want = energy_oracle_pj({}, {"int8": 24 * 24 * 2 + 24 * 2 + 24})
    assert layers[1].energy(e.costs) == want


@given(st.sampled_from(["net1", "net2", "net3"]), st.integers(1, 16), st.integers(1, 24))
def test_monotone_in_T_and_width_and_precision(preset, T, retained):
    a = count_snn(spec(preset, 8, T), retained=retained).total_exact
    assert count_snn(spec(preset, 8, T + 1), retained=retained).total_exact > a
    assert count_snn(spec(preset, 8, T), retained=retained + 1).total_exact > a
    assert count_snn(spec(preset, 32, T), retained=retained).total_exact > a
    assert count_snn(spec(preset, 8, T), retained=retained, xor_convention="shared").total_exact <= a


def test_measured_mode_uses_spike_counts():
    rng = np.random.default_rng(0)
    w = init_weights((2, 24, 24, 3), np.ones(2), rng)
    net = convert(w, spec("net3", mode="dense"))
    _, tel = forward_snn(rng.uniform(-1, 1, size=(40, 2)), net)
    measured = count_snn(net, tel, mode="measured")
    conservative = count_snn(net, mode="conservative")
    assert measured.total_exact <= conservative.total_exact
    mean_spikes = Fraction(int(tel.counts[:, 0].sum()), 40)
    assert measured.per_inference()[1].adds["int8"] == 24 * mean_spikes + 24
    with pytest.raises(ValueError):
        count_snn(net, mode="measured")
    with pytest.raises(ValueError):
        count_snn(net, SpikeTelemetry(np.zeros((1, 1)), (9,), 1), mode="measured")


def test_merge_is_associative_and_commutative():
    def ledger(n):
        layer = LayerCount("layer0")
        layer.add("add", "int8", n)
        layer.xors = Fraction(n, 3)
        return EnergyLedger("x", [layer], "measured", 1)

    a, b, c = ledger(1), ledger(5), ledger(9)
    left, right = a.merge(b).merge(c), a.merge(b.merge(c))
    assert left.total_exact == right.total_exact == b.merge(a).merge(c).total_exact
    assert left.samples == 3
    with pytest.raises(ValueError):
        a.merge(count_mlp((4, 10, 2)))
    with pytest.raises(ValueError):
        a.merge(EnergyLedger("x", a.layers, "conservative"))


def test_lookahead_product_rule():
    e = count_snn(spec("net1"), retained=1)
    for l in range(0, 9):
        assert with_lookahead(e, l).total_exact == (1 + l) * e.total_exact
    with pytest.raises(ValueError):
        with_lookahead(e, -1)


def test_costs_and_precisions():
    assert (int_precision(8), int_precision(16), int_precision(32)) == ("int8", "int32", "int32")
    with pytest.raises(ValueError):
        int_precision(64)
    with pytest.raises(ValueError):
        CostTable(xor="0")
    assert CostTable().cost("int8_add") == Fraction(3, 100)


def test_report_rows_and_formats():
    assert report([]) == []
    ledgers = [count_mlp((4, 10, 2), label="mlp_fp32"), count_snn(spec("net1"), retained=1, label="snn_int8_hdc")]
    rows = report(ledgers, {"mlp_fp32": 2000.0})
    totals = [r for r in rows if r["layer"] == "total"]
    assert [r["energy_pj"] for r in totals] == [pytest.approx(232.8), pytest.approx(23.10486)]
    assert totals[0]["reward"] == 2000.0
    for ledger, total in zip(ledgers, totals):
        layer_rows = [r for r in rows if r["network"] == ledger.label and r["layer"] != "total"]
        assert sum(r["energy_pj"] for r in layer_rows) == pytest.approx(total["energy_pj"])
    text = report_csv(rows)
    assert text.splitlines()[0] == "network,mode,layer,adds,mults,bools,energy_pj,reward"
    assert len(json.loads(report_json(rows))) == len(rows) == 6
