"""Weight files: JSON headers with base64 array payloads.

Layout::

    {
      "format": "spikehd-weights",
      "version": 1,
      "kind": "mlp" | "snn",
      "spec": {...},          # PolicySpec fields
      "provenance": {...},    # seed, config hash, code version
      "payload": {...},       # arrays as {"dtype", "shape", "data"}
      "checksum": "<sha256 of the canonical payload JSON>"
    }

Arrays keep their dtype, so integer weights stay integers. Python floats
are written with their shortest round-trip repr, which reloads bit-exactly.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hdc import HdcCodebook
from .network import MlpWeights, PolicySpec
from .quant import InputQuantSpec, QuantizedLinear, WeightQuantSpec
from .snn import ConvertedNet

FORMAT = "spikehd-weights"
VERSION = 1


class WeightFileError(ValueError):
    pass


def _enc(a) -> dict:
    a = np.ascontiguousarray(a)
    if a.dtype == object:
        raise WeightFileError("cannot store arbitrary-precision arrays")
    dtype = a.dtype.newbyteorder("<") if a.dtype.byteorder == ">" else a.dtype
    return {
        "dtype": dtype.str,
        "shape": list(a.shape),
        "data": base64.b64encode(a.astype(dtype).tobytes()).decode("ascii"),
    }


def _dec(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"].encode("ascii"))
    return np.frombuffer(raw, dtype=np.dtype(d["dtype"])).reshape(d["shape"]).copy()


def _mlp_payload(w: MlpWeights) -> dict:
    return {
        "layers": [{"w": _enc(a), "b": _enc(b)} for a, b in w.layers],
        "obs_scale": _enc(w.obs_scale),
        "activation": w.activation,
        "T": w.T,
    }


def _mlp_from(p: dict) -> MlpWeights:
    layers = [(_dec(l["w"]), _dec(l["b"])) for l in p["layers"]]
    return MlpWeights(layers, _dec(p["obs_scale"]), p["activation"], p["T"])


def _layer_payload(l: QuantizedLinear) -> dict:
    return {
        "w_int": _enc(l.w_int),
        "b_int": _enc(l.b_int),
        "q": l.spec.q,
        "f": l.spec.f,
        "theta": l.theta,
        "bias_scale": l.bias_scale,
        "acc_bits": l.acc_bits,
    }


def _layer_from(p: dict) -> QuantizedLinear:
    return QuantizedLinear(
        _dec(p["w_int"]), _dec(p["b_int"]), WeightQuantSpec(p["q"], p["f"]), p["theta"], p["bias_scale"], p["acc_bits"]
    )


def _snn_payload(net: ConvertedNet) -> dict:
    m = net.input_spec.m
    out = {
        "input": {"n": net.input_spec.n, "m": list(m) if isinstance(m, tuple) else m},
        "layers": [_layer_payload(l) for l in net.layers],
        "T": net.T,
        "output_mode": net.output_mode,
        "collapse_time": net.collapse_time,
        "meta": net.meta,
        "codebook": None,
    }
    if net.codebook is not None:
        cb = net.codebook
        out["codebook"] = {
            "labels": _enc(cb.labels),
            "keep_mask": _enc(cb.keep_mask),
            "thresholds": list(cb.thresholds),
            "n_per_class": list(cb.n_per_class),
            "degenerate": cb.degenerate,
        }
    return out


def _snn_from(p: dict) -> ConvertedNet:
    m = p["input"]["m"]
    codebook = None
    if p["codebook"] is not None:
        c = p["codebook"]
        codebook = HdcCodebook(
            _dec(c["labels"]), _dec(c["keep_mask"]), tuple(c["thresholds"]), tuple(c["n_per_class"]), c["degenerate"]
        )
    return ConvertedNet(
        InputQuantSpec(p["input"]["n"], tuple(m) if isinstance(m, list) else m),
        [_layer_from(l) for l in p["layers"]],
        p["T"],
        p["output_mode"],
        codebook,
        p["collapse_time"],
        dict(p["meta"]),
    )


def _checksum(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


@dataclass
class WeightFile:
    kind: str
    spec: PolicySpec
    model: MlpWeights | ConvertedNet
    provenance: dict = field(default_factory=dict)
    checksum: str = ""

    def to_json(self) -> str:
        if self.kind == "mlp":
            payload = _mlp_payload(self.model)
        elif self.kind == "snn":
            payload = _snn_payload(self.model)
        else:
            raise WeightFileError(f"unknown weight kind {self.kind!r}")
        doc = {
            "format": FORMAT,
            "version": VERSION,
            "kind": self.kind,
            "spec": self.spec.to_dict(),
            "provenance": self.provenance,
            "payload": payload,
            "checksum": _checksum(payload),
        }
        return json.dumps(doc, indent=1, sort_keys=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "WeightFile":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise WeightFileError(f"not a weight file: {e}") from None
        if doc.get("format") != FORMAT:
            raise WeightFileError(f"not a {FORMAT} file")
        if doc.get("version") != VERSION:
            raise WeightFileError(f"weight file version {doc.get('version')} is not supported (expected {VERSION})")
        payload = doc["payload"]
        digest = _checksum(payload)
        if digest != doc.get("checksum"):
            raise WeightFileError(f"checksum mismatch: file says {doc.get('checksum')}, payload hashes to {digest}")
        kind = doc["kind"]
        model = _mlp_from(payload) if kind == "mlp" else _snn_from(payload)
        spec = PolicySpec.from_dict(doc["spec"])
        if tuple(model.sizes) != spec.sizes:
            raise WeightFileError(f"payload sizes {model.sizes} do not match spec {spec.sizes}")
        return cls(kind, spec, model, doc.get("provenance", {}), digest)


def save_weights(path, model, spec: PolicySpec, provenance: dict | None = None) -> WeightFile:
    kind = "snn" if isinstance(model, ConvertedNet) else "mlp"
    wf = WeightFile(kind, spec, model, dict(provenance or {}))
    text = wf.to_json()
    wf.checksum = json.loads(text)["checksum"]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return wf


def load_weights(path) -> WeightFile:
    return WeightFile.from_json(Path(path).read_text())
