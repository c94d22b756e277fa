"""Binary class hypervectors built from the network's own spike output.

Each class gets a label by bitwise majority vote over sample spike vectors;
positions on which every label agrees are dropped, since they add the same
distance to every class. Queries go to the label with the smallest Hamming
distance (xor + popcount on bit-packed rows), ties to the lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .rollout import initial_internals
from .snn import ConvertedNet, SpikeTrain, hidden_trains

MAX_SAMPLES_PER_CLASS = 4096


class CodebookError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class HdcCodebook:
    labels: np.ndarray  # (C, d) in {0, 1}
    keep_mask: np.ndarray  # (d,) bool
    thresholds: tuple[float, ...]
    n_per_class: tuple[int, ...]
    degenerate: bool = False
    _packed: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.uint8)
        mask = np.asarray(self.keep_mask, dtype=bool)
        if labels.ndim != 2 or mask.shape != (labels.shape[1],):
            raise ValueError(f"labels {labels.shape} and mask {mask.shape} disagree")
        if not np.isin(labels, (0, 1)).all():
            raise ValueError("labels must be binary")
        if not mask.any():
            raise ValueError("a codebook must retain at least one position")
        labels.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "keep_mask", mask)
        object.__setattr__(self, "_packed", np.packbits(labels[:, mask], axis=-1))

    @property
    def n_classes(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def retained(self) -> int:
        return int(self.keep_mask.sum())

    def __eq__(self, other):
        return (
            isinstance(other, HdcCodebook)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.keep_mask, other.keep_mask)
            and self.thresholds == other.thresholds
            and self.n_per_class == other.n_per_class
            and self.degenerate == other.degenerate
        )


def _group(samples, n_classes):
    if isinstance(samples, Mapping):
        groups = {int(c): np.atleast_2d(np.asarray(v)) for c, v in samples.items()}
    else:
        groups = {}
        for c, v in samples:
            groups.setdefault(int(c), []).append(np.asarray(v))
        groups = {c: np.stack(v) for c, v in groups.items()}
    if n_classes is None:
        n_classes = max(groups) + 1 if groups else 0
    return groups, n_classes


def hygen(samples_per_class, n_classes: int | None = None, threshold=None) -> HdcCodebook:
    """Majority-rule labels from ``{class: (N, d) bits}`` or ``[(class, bits), ...]``.

    A position is 1 when its count over the class's N samples is strictly
    greater than ``threshold`` (default N/2; scalar or one per class).
    """
    groups, n_classes = _group(samples_per_class, n_classes)
    if n_classes < 1:
        raise CodebookError("no samples given")
    missing = [c for c in range(n_classes) if c not in groups or len(groups[c]) == 0]
    if missing:
        raise CodebookError(f"classes {missing} have no samples")
    widths = {groups[c].shape[1] for c in range(n_classes)}
    if len(widths) != 1:
        raise CodebookError(f"sample widths differ: {sorted(widths)}")
    labels, thresholds, counts = [], [], []
    for c in range(n_classes):
        bits = groups[c]
        if not np.isin(bits, (0, 1)).all():
            raise CodebookError("samples must be binary")
        n = len(bits)
        th = n / 2 if threshold is None else float(np.broadcast_to(threshold, (n_classes,))[c])
        labels.append((bits.sum(axis=0) > th).astype(np.uint8))
        thresholds.append(float(th))
        counts.append(n)
    d = widths.pop()
    return HdcCodebook(np.stack(labels), np.ones(d, dtype=bool), tuple(thresholds), tuple(counts))


def truncate(codebook: HdcCodebook) -> HdcCodebook:
    """Drop the positions on which all class labels agree."""
    if codebook.n_classes < 2:
        raise CodebookError("truncation needs at least two classes")
    labels = codebook.labels
    keep = np.any(labels != labels[:1], axis=0)
    degenerate = not keep.any()
    if degenerate:
        keep = np.ones_like(keep)
    return HdcCodebook(labels, keep, codebook.thresholds, codebook.n_per_class, degenerate)


def collapse(train: SpikeTrain) -> np.ndarray:
    """One binary vector per train: spike count strictly above T/2."""
    return (2 * train.counts() > train.T).astype(np.uint8)


def query_bits(spike_out, collapse_time: bool = False) -> np.ndarray:
    if isinstance(spike_out, SpikeTrain):
        if spike_out.T == 1:
            return spike_out.bits[..., 0, :]
        if not collapse_time:
            raise ValueError(
                f"HDC classification of T={spike_out.T} trains needs time collapse (collapse_time=True)"
            )
        return collapse(spike_out)
    return np.asarray(spike_out, dtype=np.uint8)


def hamming(spike_out, codebook: HdcCodebook, collapse_time: bool = False) -> np.ndarray:
    """Distances ``(..., C)`` on retained positions."""
    bits = query_bits(spike_out, collapse_time)
    if bits.shape[-1] != codebook.width:
        raise ValueError(f"query width {bits.shape[-1]} != codebook width {codebook.width}")
    packed = np.packbits(bits[..., codebook.keep_mask], axis=-1)
    x = np.bitwise_xor(packed[..., None, :], codebook._packed)
    return np.bitwise_count(x).sum(axis=-1, dtype=np.int64)


def classify(spike_out, codebook: HdcCodebook, collapse_time: bool = False):
    """Nearest label by Hamming distance; ``np.argmin`` breaks ties low."""
    out = np.argmin(hamming(spike_out, codebook, collapse_time), axis=-1)
    return int(out) if np.ndim(out) == 0 else out


def xor_ops(codebook: HdcCodebook, convention: str = "per_class") -> int:
    """xor operations per classification.

    ``per_class`` compares the query against every label (C x retained);
    ``shared`` counts one xor per retained position.
    """
    if convention == "per_class":
        return codebook.n_classes * codebook.retained
    if convention == "shared":
        return codebook.retained
    raise ValueError(f"unknown xor counting convention {convention!r}")


def collect_codebook_samples(
    net: ConvertedNet,
    env,
    episodes: int = 100,
    seed: int = 0,
    explore: float = 0.0,
    cap: int = MAX_SAMPLES_PER_CLASS,
) -> dict[int, np.ndarray]:
    """Roll out the dense spiking policy and group penultimate spikes by action.

    With ``explore > 0`` that fraction of executed actions is random, which
    visits more states; the recorded label is always the policy's own greedy
    choice. Each class keeps at most ``cap`` vectors (reservoir sampling).
    """
    from .snn import dense_readout

    dense = net.dense()
    seeds = [seed * 100_003 + i for i in range(episodes)]
    rng = np.random.default_rng([seed, 7])
    internal = initial_internals(env, seeds)
    active = np.ones(len(seeds), dtype=bool)
    reservoirs = {c: [] for c in range(env.n_actions)}
    seen = np.zeros(env.n_actions, dtype=np.int64)
    for _ in range(env.max_steps):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        trains = hidden_trains(env.observe(internal[idx]), dense)
        bits = query_bits(trains[-1], collapse_time=True)
        actions = np.argmax(dense_readout(trains[-1], dense.layers[-1]), axis=-1)
        for vec, a in zip(bits, actions):
            seen[a] += 1
            box = reservoirs[a]
            if len(box) < cap:
                box.append(vec)
            else:
                j = rng.integers(seen[a])
                if j < cap:
                    box[j] = vec
        executed = actions
        if explore > 0:
            flip = rng.random(idx.size) < explore
            executed = np.where(flip, rng.integers(env.n_actions, size=idx.size), actions)
        new = env.advance(internal[idx], executed)
        internal[idx] = new
        active[idx[env.terminated(new)]] = False
    missing = [c for c, box in reservoirs.items() if not box]
    if missing:
        raise CodebookError(
            f"actions {missing} were never chosen in {episodes} episodes; "
            "collect more exploration episodes"
        )
    return {c: np.stack(box) for c, box in reservoirs.items()}
