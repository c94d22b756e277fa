"""Experiment orchestration: training, conversion, evaluation and sweeps.

Weight files live in a weights directory (``weights/`` by default) and fall
back to the copies bundled with the package. File names:

* ``{preset}_{activation}_seed{seed}.json`` float policies (``cq`` for the
  spiking variants, ``relu`` for the float baseline)
* ``{preset}_{variant}_T{T}_seed{seed}.json`` converted spiking policies
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .energy import count_mlp, count_snn, with_lookahead
from .envs import make_env
from .hdc import CodebookError
from .mpc import MpcConfig, run_mpc
from .network import (
    MlpWeights,
    PolicySpec,
    TrainingError,
    convert,
    default_dqn_config,
    greedy_policy,
    train_dqn,
)
from .noise import NOISE_KINDS, NoiseSpec
from .rollout import run_episodes
from .snn import ConvertedNet, SpikeTelemetry, snn_actions
from .weights import load_weights, save_weights

log = logging.getLogger(__name__)

# variant -> (bit width of inputs and weights, output mode)
VARIANTS = {
    "mlp_fp32": (None, "dense"),
    "snn_int32": (32, "dense"),
    "snn_int8": (8, "dense"),
    "snn_int32_hdc": (32, "hdc"),
    "snn_int8_hdc": (8, "hdc"),
}

# noise scale per environment; Acrobot's angular velocities get larger noise
DEFAULT_NOISE = {
    "cartpole": dict(scale=0.01, per_dim_scale=None),
    "acrobot": dict(scale=0.1, per_dim_scale=(1.0, 1.0, 1.0, 1.0, 4.0, 9.0)),
    "mountaincar": dict(scale=0.01, per_dim_scale=None),
}

CSV_COLUMNS = (
    "env",
    "variant",
    "n",
    "q",
    "T",
    "noise_kind",
    "k",
    "mean_reward",
    "reward_std",
    "energy_pj_per_inference",
    "energy_mode",
    "config_hash",
    "weight_checksum",
    "code_version",
)

WORKERS_ENV = "SPIKEHD_WORKERS"


class MissingWeightsError(FileNotFoundError):
    pass


def validation_seeds(seed: int, count: int = 50) -> list[int]:
    """Episode seeds for checkpoint selection, disjoint from the 0..99 test seeds."""
    return [20_000 + seed * 1_000 + i for i in range(count)]


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str = "net1"
    variant: str = "snn_int8_hdc"
    T: int = 1
    noise_kind: str = "gaussian"
    k_grid: tuple[int, ...] = (0,)
    noise_scale: float | None = None
    per_dim_scale: tuple[float, ...] | None = None
    noise_seed: int = 0
    episodes: int = 100
    seed: int = 0
    energy_mode: str = "conservative"
    xor_convention: str = "per_class"
    weights_dir: str = "weights"

    def __post_init__(self):
        object.__setattr__(self, "k_grid", tuple(sorted(int(k) for k in self.k_grid)))
        if self.per_dim_scale is not None:
            object.__setattr__(self, "per_dim_scale", tuple(float(v) for v in self.per_dim_scale))
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {sorted(VARIANTS)}")
        if self.noise_kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.noise_kind!r}")
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if not self.k_grid:
            raise ValueError("the k grid is empty")
        if self.variant == "mlp_fp32" and self.energy_mode == "measured":
            raise ValueError("measured energy needs a spiking variant")
        self.policy_spec()

    @property
    def env(self) -> str:
        return PolicySpec.preset(self.preset).env

    def policy_spec(self) -> PolicySpec:
        bits, mode = VARIANTS[self.variant]
        if bits is None:
            return PolicySpec.preset(self.preset, output_mode="dense", activation="relu")
        return PolicySpec.preset(self.preset, T=self.T, n=bits, q=bits, output_mode=mode, activation="cq")

    def noise(self, k: int) -> NoiseSpec | None:
        if k == 0:
            return None
        defaults = DEFAULT_NOISE[self.env]
        scale = self.noise_scale if self.noise_scale is not None else defaults["scale"]
        per_dim = self.per_dim_scale if self.per_dim_scale is not None else defaults["per_dim_scale"]
        return NoiseSpec(self.noise_kind, k, scale, per_dim, self.noise_seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["k_grid"] = list(self.k_grid)
        if self.per_dim_scale is not None:
            d["per_dim_scale"] = list(self.per_dim_scale)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown experiment keys {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def float_name(preset: str, activation: str, seed: int) -> str:
    return f"{preset}_{activation}_seed{seed}.json"


def converted_name(preset: str, variant: str, T: int, seed: int) -> str:
    return f"{preset}_{variant}_T{T}_seed{seed}.json"


def bundled_dir() -> Path:
    return Path(str(resources.files("spikehd") / "pretrained"))


def find_weights(name: str, weights_dir) -> Path | None:
    for d in (Path(weights_dir), bundled_dir()):
        if (d / name).is_file():
            return d / name
    return None


def _missing(preset, activation, seed):
    flag = " --baseline" if activation == "relu" else ""
    return MissingWeightsError(
        f"no {activation} weights for {preset} seed {seed}; "
        f"run `spikehd train --preset {preset} --seed {seed}{flag}` first"
    )


def hdc_score(spec: PolicySpec, env, seeds):
    """Mean reward of the converted policy; -inf when a class is never chosen."""

    def score(weights: MlpWeights) -> float:
        try:
            net = convert(weights, spec, env)
        except CodebookError:
            return float("-inf")
        return run_episodes(env, SnnPolicy(net), seeds).mean_reward

    return score


def train_policy(preset: str, seed: int = 0, baseline: bool = False, weights_dir="weights", **overrides):
    """Train and save one float policy; returns ``(path, TrainResult)``.

    The CQ student is selected by the reward of its 8-bit HDC conversion on
    validation seeds. Raises :class:`TrainingError` below the success bar.
    """
    activation = "relu" if baseline else "cq"
    spec = PolicySpec.preset(preset, activation=activation, output_mode="dense" if baseline else "hdc")
    env = make_env(spec.env)
    config = default_dqn_config(spec.env, seed=seed, **overrides)
    score = None if baseline else hdc_score(spec, env, validation_seeds(seed))
    result = train_dqn(spec, config, env, score=score)
    provenance = {
        "seed": seed,
        "config_hash": config.digest(),
        "code_version": __version__,
        "best_score": result.best_reward,
        "episodes": result.episodes,
        "total_steps": result.total_steps,
    }
    path = Path(weights_dir) / float_name(preset, activation, seed)
    save_weights(path, result.weights, spec, provenance)
    return path, result


def convert_policy(preset: str, variant: str, T: int = 1, seed: int = 0, weights_dir="weights"):
    """Convert saved CQ weights into ``variant`` and save the spiking network."""
    if variant == "mlp_fp32":
        raise ValueError("mlp_fp32 is not a spiking variant")
    cfg = ExperimentConfig(preset=preset, variant=variant, T=T, seed=seed, weights_dir=weights_dir)
    net, checksum = _build_snn(cfg)
    path = Path(weights_dir) / converted_name(preset, variant, T, seed)
    wf = save_weights(path, net, cfg.policy_spec(), {"seed": seed, "source_checksum": checksum, "code_version": __version__})
    return path, wf


def _build_snn(cfg: ExperimentConfig):
    found = find_weights(float_name(cfg.preset, "cq", cfg.seed), cfg.weights_dir)
    if found is None:
        raise _missing(cfg.preset, "cq", cfg.seed)
    wf = load_weights(found)
    spec = cfg.policy_spec()
    weights = wf.model
    weights.T = spec.T
    return convert(weights, spec, make_env(spec.env)), wf.checksum


def load_policy(cfg: ExperimentConfig):
    """``(model, weight checksum)`` for the configured variant."""
    if cfg.variant == "mlp_fp32":
        found = find_weights(float_name(cfg.preset, "relu", cfg.seed), cfg.weights_dir)
        if found is None:
            raise _missing(cfg.preset, "relu", cfg.seed)
        wf = load_weights(found)
        return wf.model, wf.checksum
    found = find_weights(converted_name(cfg.preset, cfg.variant, cfg.T, cfg.seed), cfg.weights_dir)
    if found is not None:
        wf = load_weights(found)
        return wf.model, wf.checksum
    return _build_snn(cfg)


class SnnPolicy:
    """Batch policy over a converted network that can record spike telemetry."""

    def __init__(self, net: ConvertedNet, record: bool = False):
        self.net = net
        self.record = record
        self.counts = []

    def __call__(self, obs):
        actions, telemetry = snn_actions(obs, self.net)
        if self.record:
            self.counts.append(np.atleast_2d(telemetry.counts))
        return actions

    def telemetry(self) -> SpikeTelemetry:
        counts = np.concatenate(self.counts) if self.counts else np.zeros((0, len(self.net.hidden_widths)), np.int64)
        return SpikeTelemetry(counts, self.net.hidden_widths, self.net.T)


def make_policy(model, record: bool = False):
    if isinstance(model, ConvertedNet):
        return SnnPolicy(model, record)
    return greedy_policy(model)


def energy_ledger(cfg: ExperimentConfig, model, policy=None):
    if isinstance(model, MlpWeights):
        return count_mlp(model.sizes, label=cfg.variant)
    telemetry = policy.telemetry() if cfg.energy_mode == "measured" else None
    return count_snn(model, telemetry, cfg.energy_mode, xor_convention=cfg.xor_convention, label=cfg.variant)


def _row(cfg: ExperimentConfig, k: int, batch, ledger, checksum: str) -> dict:
    spec = cfg.policy_spec()
    spiking = cfg.variant != "mlp_fp32"
    return {
        "env": cfg.env,
        "variant": cfg.variant,
        "n": spec.n if spiking else "",
        "q": spec.q if spiking else "",
        "T": spec.T if spiking else "",
        "noise_kind": cfg.noise_kind,
        "k": k,
        "mean_reward": batch.mean_reward,
        "reward_std": batch.reward_std,
        "energy_pj_per_inference": ledger.total_pj,
        "energy_mode": cfg.energy_mode if spiking else "conservative",
        "config_hash": cfg.digest(),
        "weight_checksum": checksum,
        "code_version": __version__,
    }


def _grid_point(args):
    cfg, k, model, checksum = args
    env = make_env(cfg.env)
    policy = make_policy(model, record=cfg.energy_mode == "measured")
    batch = run_episodes(env, policy, range(cfg.episodes), noise=cfg.noise(k))
    return _row(cfg, k, batch, energy_ledger(cfg, model, policy), checksum)


def workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer") from None


def run_experiment(cfg: ExperimentConfig) -> list[dict]:
    """One row per k, sorted by k; test episodes use seeds ``0..episodes-1``."""
    model, checksum = load_policy(cfg)
    jobs = [(cfg, k, model, checksum) for k in cfg.k_grid]
    n = min(workers(), len(jobs))
    if n > 1:
        with ProcessPoolExecutor(n) as pool:
            rows = list(pool.map(_grid_point, jobs))
    else:
        rows = [_grid_point(j) for j in jobs]
    return sorted(rows, key=lambda r: r["k"])


def run_sweep(configs) -> list[dict]:
    rows = []
    for cfg in configs:
        rows += run_experiment(cfg)
    return sorted(rows, key=lambda r: (r["env"], r["variant"], r["T"], r["noise_kind"], r["k"]))


MPC_COLUMNS = CSV_COLUMNS[:7] + ("l_mpc", "mean_reward", "reward_std", "energy_pj_per_step", "config_hash", "weight_checksum")


def run_mpc_experiment(cfg: ExperimentConfig, lookaheads=range(1, 9), flip: str = "once") -> list[dict]:
    """MPC rows for each lookahead at every k of the grid."""
    model, checksum = load_policy(cfg)
    env = make_env(cfg.env)
    base = energy_ledger(dataclasses.replace(cfg, energy_mode="conservative"), model)
    rows = []
    for k in cfg.k_grid:
        for l_mpc in lookaheads:
            mcfg = MpcConfig(l_mpc=l_mpc, noise=cfg.noise(k), flip=flip)
            batch = run_mpc(make_policy(model), env, mcfg, range(cfg.episodes))
            row = _row(cfg, k, batch, base, checksum)
            rows.append(
                {
                    **{c: row[c] for c in CSV_COLUMNS[:7]},
                    "l_mpc": l_mpc,
                    "mean_reward": batch.mean_reward,
                    "reward_std": batch.reward_std,
                    "energy_pj_per_step": with_lookahead(base, l_mpc).total_pj,
                    "config_hash": row["config_hash"],
                    "weight_checksum": checksum,
                }
            )
    return rows


def rows_csv(rows, columns=CSV_COLUMNS) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: (repr(v) if isinstance(v, float) else v) for c, v in row.items()})
    return buf.getvalue()


def rows_json(rows) -> str:
    return json.dumps(rows, indent=2) + "\n"


__all__ = [
    "CSV_COLUMNS",
    "ExperimentConfig",
    "MissingWeightsError",
    "TrainingError",
    "VARIANTS",
    "convert_policy",
    "load_policy",
    "run_experiment",
    "run_mpc_experiment",
    "run_sweep",
    "train_policy",
]
