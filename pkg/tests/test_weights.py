import json

import numpy as np
import pytest

from spikehd.network import PolicySpec, convert, init_weights
from spikehd.weights import WeightFile, WeightFileError, load_weights, save_weights


@pytest.fixture
def mlp():
    spec = PolicySpec.preset("net3")
    return init_weights(spec.sizes, np.array([1.2, 0.07]), np.random.default_rng(0)), spec


def test_mlp_round_trip_is_bit_exact(tmp_path, mlp):
    w, spec = mlp
    wf = save_weights(tmp_path / "w.json", w, spec, {"seed": 4})
    back = load_weights(tmp_path / "w.json")
    assert back.kind == "mlp" and back.spec == spec and back.provenance == {"seed": 4}
    assert back.checksum == wf.checksum
    assert back.model.digest() == w.digest()
    assert all(a.dtype == np.float64 for a, _ in back.model.layers)


def test_snn_round_trip(tmp_path):
    spec = PolicySpec.preset("net1")
    w = init_weights(spec.sizes, np.array([2.4, 3.0, 0.21, 3.5]), np.random.default_rng(1))
    w.layers[0] = (w.layers[0][0] * 4, w.layers[0][1] + 1.0)
    net = convert(w, spec)
    save_weights(tmp_path / "s.json", net, spec)
    back = load_weights(tmp_path / "s.json").model
    assert back.codebook == net.codebook
    assert back.input_spec == net.input_spec and back.T == net.T
    for a, b in zip(back.layers, net.layers):
        assert np.array_equal(a.w_int, b.w_int) and a.w_int.dtype == b.w_int.dtype
        assert a.theta == b.theta and a.bias_scale == b.bias_scale and a.acc_bits == b.acc_bits
    text = (tmp_path / "s.json").read_text()
    save_weights(tmp_path / "t.json", back, spec)
    assert (tmp_path / "t.json").read_text() == text


def test_corruption_is_detected(tmp_path, mlp):
    w, spec = mlp
    save_weights(tmp_path / "w.json", w, spec)
    doc = json.loads((tmp_path / "w.json").read_text())
    doc["payload"]["T"] = 3
    with pytest.raises(WeightFileError, match="checksum"):
        WeightFile.from_json(json.dumps(doc))


def test_version_and_format_checks(tmp_path, mlp):
    w, spec = mlp
    doc = json.loads(save_weights(tmp_path / "w.json", w, spec).to_json())
    with pytest.raises(WeightFileError, match="version 7 .*expected 1"):
        WeightFile.from_json(json.dumps({**doc, "version": 7}))
    with pytest.raises(WeightFileError):
        WeightFile.from_json(json.dumps({**doc, "format": "other"}))
    with pytest.raises(WeightFileError):
        WeightFile.from_json("not json")
    bad = {**doc, "spec": PolicySpec.preset("net3", T=2).to_dict() | {"sizes": [2, 24, 3]}}
    with pytest.raises((WeightFileError, ValueError)):
        WeightFile.from_json(json.dumps(bad))
