"""Operation counts and picojoule energy per inference.

Counts are kept as exact fractions and costs are parsed from their decimal
strings, so totals carry no floating-point drift.

Per layer of width ``in -> out``:

* float MLP: ``in*out`` fp32 multiplications and ``out`` fp32 additions.
* spiking embedding layer: ``in*out`` integer multiplications, ``in`` fp32
  multiplications for input scaling and ``out*T`` integer additions.
* spiking hidden or dense output layer: ``in*out*rate*T`` integer
  additions for the synaptic events, ``out*T`` for the bias and
  ``out*(T-1)`` for averaging the drive over time. ``rate`` is 1 in
  conservative mode and the measured input spike rate otherwise.
* HDC output: one xor per compared position.

Integer operations are priced at int8 for ``q <= 8`` and int32 otherwise.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, fields
from fractions import Fraction

MODES = ("conservative", "measured")
XOR_CONVENTIONS = ("per_class", "shared")
PRECISIONS = ("fp32", "int32", "int8")


@dataclass(frozen=True)
class CostTable:
    """Energy per operation in pJ."""

    fp32_mul: str = "3.7"
    int32_mul: str = "3.1"
    int8_mul: str = "0.2"
    fp32_add: str = "0.9"
    int32_add: str = "0.1"
    int8_add: str = "0.03"
    xor: str = "0.00243"

    def __post_init__(self):
        for f in fields(self):
            value = Fraction(str(getattr(self, f.name)))
            if value <= 0:
                raise ValueError(f"cost {f.name} must be positive")
            object.__setattr__(self, f.name, str(getattr(self, f.name)))

    def cost(self, name: str) -> Fraction:
        return Fraction(getattr(self, name))


DEFAULT_COSTS = CostTable()


def int_precision(bits: int) -> str:
    if bits <= 8:
        return "int8"
    if bits <= 32:
        return "int32"
    raise ValueError(f"no integer cost for {bits}-bit operands")


@dataclass
class LayerCount:
    """Operation totals of one layer, summed over ``samples`` inferences."""

    name: str
    mults: dict = field(default_factory=dict)
    adds: dict = field(default_factory=dict)
    xors: Fraction = Fraction(0)

    def add(self, kind: str, precision: str, n):
        if precision not in PRECISIONS:
            raise ValueError(f"unknown precision {precision!r}")
        table = self.mults if kind == "mul" else self.adds
        table[precision] = table.get(precision, Fraction(0)) + Fraction(n)

    def energy(self, costs: CostTable) -> Fraction:
        total = Fraction(self.xors) * costs.cost("xor")
        for p, n in self.mults.items():
            total += n * costs.cost(f"{p}_mul")
        for p, n in self.adds.items():
            total += n * costs.cost(f"{p}_add")
        return total

    def scaled(self, s: Fraction) -> "LayerCount":
        return LayerCount(
            self.name,
            {p: n * s for p, n in self.mults.items()},
            {p: n * s for p, n in self.adds.items()},
            Fraction(self.xors) * s,
        )

    def merged(self, other: "LayerCount") -> "LayerCount":
        out = self.scaled(Fraction(1))
        for p, n in other.mults.items():
            out.add("mul", p, n)
        for p, n in other.adds.items():
            out.add("add", p, n)
        out.xors += other.xors
        return out


@dataclass
class EnergyLedger:
    """Per-layer operation totals over ``samples`` inferences."""

    label: str
    layers: list
    mode: str = "conservative"
    samples: int = 1
    costs: CostTable = DEFAULT_COSTS

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.samples < 1:
            raise ValueError("a ledger covers at least one inference")

    def per_inference(self) -> list[LayerCount]:
        return [layer.scaled(Fraction(1, self.samples)) for layer in self.layers]

    def layer_energy(self) -> list[Fraction]:
        return [layer.energy(self.costs) for layer in self.per_inference()]

    @property
    def total_exact(self) -> Fraction:
        return sum(self.layer_energy(), Fraction(0))

    @property
    def total_pj(self) -> float:
        return float(self.total_exact)

    def merge(self, other: "EnergyLedger") -> "EnergyLedger":
        """Pool two ledgers of the same network; associative and commutative."""
        if [l.name for l in self.layers] != [l.name for l in other.layers]:
            raise ValueError("cannot merge ledgers of different networks")
        if (self.mode, self.costs) != (other.mode, other.costs):
            raise ValueError("cannot merge ledgers with different modes or costs")
        layers = [a.merged(b) for a, b in zip(self.layers, other.layers)]
        return EnergyLedger(self.label, layers, self.mode, self.samples + other.samples, self.costs)


def count_mlp(sizes, label: str = "mlp", costs: CostTable = DEFAULT_COSTS) -> EnergyLedger:
    """Float MLP with layer widths ``sizes``."""
    layers = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layer = LayerCount(f"layer{i}")
        layer.add("mul", "fp32", a * b)
        layer.add("add", "fp32", b)
        layers.append(layer)
    return EnergyLedger(label, layers, "conservative", 1, costs)


def _layout(net):
    """``(sizes, T, q, output_mode, n_classes, retained)`` of a policy or converted net."""
    from .snn import ConvertedNet

    if isinstance(net, ConvertedNet):
        q = max(layer.spec.q for layer in net.layers)
        retained = net.codebook.retained if net.codebook is not None else None
        return net.sizes, net.T, q, net.output_mode, net.sizes[-1], retained
    return tuple(net.sizes), net.T, net.q, net.output_mode, net.sizes[-1], None


def count_snn(
    net,
    telemetry=None,
    mode: str = "conservative",
    retained: int | None = None,
    xor_convention: str = "per_class",
    label: str = "snn",
    costs: CostTable = DEFAULT_COSTS,
) -> EnergyLedger:
    """Spiking network given as a :class:`ConvertedNet` or a policy spec.

    ``retained`` overrides the codebook width (a spec has no codebook, so it
    defaults to the full penultimate width). Measured mode needs the
    :class:`SpikeTelemetry` of the inferences being accounted for.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if xor_convention not in XOR_CONVENTIONS:
        raise ValueError(f"xor convention must be one of {XOR_CONVENTIONS}")
    sizes, T, q, output_mode, n_classes, net_retained = _layout(net)
    if mode == "measured":
        if telemetry is None:
            raise ValueError("measured mode needs spike telemetry")
        counts = telemetry.counts.reshape(-1, telemetry.counts.shape[-1])
        if tuple(telemetry.widths) != tuple(sizes[1:-1]):
            raise ValueError("telemetry does not belong to this network")
        # mean spikes per inference emitted by each hidden layer
        spikes = [Fraction(int(counts[:, i].sum()), len(counts)) for i in range(counts.shape[1])]
    precision = int_precision(q)
    layers = []
    embed = LayerCount("layer0")
    embed.add("mul", precision, sizes[0] * sizes[1])
    embed.add("mul", "fp32", sizes[0])
    embed.add("add", precision, sizes[1] * T)
    layers.append(embed)
    n_spiking = len(sizes) - 2
    for i in range(1, len(sizes) - 1):
        a, b = sizes[i], sizes[i + 1]
        if i == n_spiking and output_mode == "hdc":
            break
        layer = LayerCount(f"layer{i}")
        events = Fraction(a * T) if mode == "conservative" else spikes[i - 1]
        layer.add("add", precision, b * events + b * T + b * (T - 1))
        layers.append(layer)
    if output_mode == "hdc":
        width = retained if retained is not None else (net_retained or sizes[-2])
        out = LayerCount("hdc")
        out.xors = Fraction(width * (n_classes if xor_convention == "per_class" else 1))
        layers.append(out)
    return EnergyLedger(label, layers, mode, 1, costs)


def with_lookahead(ledger: EnergyLedger, l_mpc: int) -> EnergyLedger:
    """Energy of one real step with ``l_mpc`` simulated inferences on top."""
    if l_mpc < 0:
        raise ValueError("lookahead must be >= 0")
    s = Fraction(1 + l_mpc)
    return EnergyLedger(
        f"{ledger.label}+mpc{l_mpc}", [l.scaled(s) for l in ledger.layers], ledger.mode, ledger.samples, ledger.costs
    )


REPORT_COLUMNS = ("network", "mode", "layer", "adds", "mults", "bools", "energy_pj", "reward")


def _num(x: Fraction):
    return int(x) if x.denominator == 1 else float(x)


def report(ledgers, rewards=None) -> list[dict]:
    """One row per layer plus a total row per ledger."""
    rewards = rewards or {}
    rows = []
    for ledger in ledgers:
        reward = rewards.get(ledger.label, "")
        tot = {"adds": Fraction(0), "mults": Fraction(0), "bools": Fraction(0)}
        for layer, e in zip(ledger.per_inference(), ledger.layer_energy()):
            counts = {
                "adds": sum(layer.adds.values(), Fraction(0)),
                "mults": sum(layer.mults.values(), Fraction(0)),
                "bools": Fraction(layer.xors),
            }
            for k in tot:
                tot[k] += counts[k]
            rows.append(
                {
                    "network": ledger.label,
                    "mode": ledger.mode,
                    "layer": layer.name,
                    **{k: _num(v) for k, v in counts.items()},
                    "energy_pj": float(e),
                    "reward": "",
                }
            )
        rows.append(
            {
                "network": ledger.label,
                "mode": ledger.mode,
                "layer": "total",
                **{k: _num(v) for k, v in tot.items()},
                "energy_pj": ledger.total_pj,
                "reward": reward,
            }
        )
    return rows


def report_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def report_json(rows) -> str:
    return json.dumps(rows, indent=2, sort_keys=False)
