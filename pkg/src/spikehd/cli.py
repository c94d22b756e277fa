"""Command-line interface.

Exit status: 0 on success, 1 on usage errors, 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .energy import count_mlp, count_snn, report, report_csv, report_json
from .harness import (
    MPC_COLUMNS,
    VARIANTS,
    ExperimentConfig,
    convert_policy,
    load_policy,
    rows_csv,
    rows_json,
    run_experiment,
    run_mpc_experiment,
    run_sweep,
    train_policy,
)
from .network import PRESETS, TrainingError
from .noise import DEFAULT_K_GRIDS, NOISE_KINDS
from .snn import ConvertedNet


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _experiment_args(p, variant=True):
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int, help="training seed of the weights")
    p.add_argument("--T", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--noise-kind", choices=NOISE_KINDS)
    p.add_argument("--noise-scale", type=float)
    p.add_argument("--energy-mode", choices=("conservative", "measured"))
    p.add_argument("--xor-convention", choices=("per_class", "shared"))
    p.add_argument("--weights-dir")
    if variant:
        p.add_argument("--variant", choices=sorted(VARIANTS))


def build_parser() -> argparse.ArgumentParser:
    parser = Parser(prog="spikehd", description="Train, convert and evaluate spiking control policies.")
    parser.add_argument("--version", action="version", version=f"spikehd {__version__}")
    parser.add_argument("--config", type=Path, help="JSON experiment file; flags override its values")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("train", help="train a float policy with DQN")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int)
    p.add_argument("--baseline", action="store_true", help="train the ReLU float baseline instead of CQ")
    p.add_argument("--max-episodes", type=int)
    p.add_argument("--weights-dir")

    p = sub.add_parser("convert", help="convert CQ weights into a spiking network")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int)
    p.add_argument("--bits", type=int, choices=(8, 32), default=8, help="input and weight bit width")
    p.add_argument("--T", type=int)
    p.add_argument("--hdc", action="store_true", help="replace the output layer by a hypervector codebook")
    p.add_argument("--weights-dir")

    p = sub.add_parser("eval", help="evaluate one variant")
    _experiment_args(p)
    p.add_argument("--k", type=int, default=None, help="noise intensity index")
    p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("sweep", help="evaluate variants over a noise grid")
    _experiment_args(p, variant=False)
    p.add_argument("--variants", nargs="+", choices=sorted(VARIANTS))
    p.add_argument("--k-grid", type=int, nargs="+")
    p.add_argument("--out", type=Path, help="output file (default stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("mpc", help="evaluate lookahead control on CartPole")
    _experiment_args(p)
    p.add_argument("--lookahead", type=int, nargs="+", default=None)
    p.add_argument("--noise-k", type=int, default=None)
    p.add_argument("--flip", choices=("once", "literal"), default="once")
    p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("energy-report", help="per-layer operation counts and energy")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--variants", nargs="+", choices=sorted(VARIANTS))
    p.add_argument("--T", type=int)
    p.add_argument("--retained", type=int, help="codebook width (default: full width, or the codebook's)")
    p.add_argument("--xor-convention", choices=("per_class", "shared"))
    p.add_argument("--from-weights", action="store_true", help="use the trained codebook width")
    p.add_argument("--seed", type=int)
    p.add_argument("--weights-dir")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    return parser


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read config {path}: {e}") from None
    if not isinstance(data, dict):
        raise UsageError("the config file must hold a JSON object")
    return data


FIELD_FLAGS = {
    "preset": "preset",
    "variant": "variant",
    "T": "T",
    "noise_kind": "noise_kind",
    "noise_scale": "noise_scale",
    "episodes": "episodes",
    "seed": "seed",
    "energy_mode": "energy_mode",
    "xor_convention": "xor_convention",
    "weights_dir": "weights_dir",
}


def _merged(args, file_cfg: dict, **extra) -> dict:
    """Config-file values overridden by any flag given on the command line."""
    exp = {k: v for k, v in file_cfg.items() if k in {f.name for f in dataclasses.fields(ExperimentConfig)}}
    for field, flag in FIELD_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            exp[field] = value
    exp.update({k: v for k, v in extra.items() if v is not None})
    return exp


def _experiment(d: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.from_dict(d)
    except (TypeError, ValueError) as e:
        raise UsageError(str(e)) from None


def _emit(text: str, out=None):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


def cmd_train(args, cfg):
    preset = args.preset or cfg.get("preset", "net1")
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    overrides = {"max_episodes": args.max_episodes} if args.max_episodes else {}
    weights_dir = args.weights_dir or cfg.get("weights_dir", "weights")
    path, result = train_policy(preset, seed, args.baseline, weights_dir, **overrides)
    print(f"saved {path} (score {result.best_reward:.2f}, {result.episodes} episodes, {result.seconds:.0f} s)")


def cmd_convert(args, cfg):
    preset = args.preset or cfg.get("preset", "net1")
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    variant = f"snn_int{args.bits}" + ("_hdc" if args.hdc else "")
    T = args.T or cfg.get("T", 1)
    path, wf = convert_policy(preset, variant, T, seed, args.weights_dir or cfg.get("weights_dir", "weights"))
    extra = f", {wf.model.codebook.retained} codebook positions" if wf.model.codebook is not None else ""
    print(f"saved {path}{extra}")


def cmd_eval(args, cfg):
    k = args.k if args.k is not None else None
    d = _merged(args, cfg, k_grid=[k] if k is not None else None)
    rows = run_experiment(_experiment(d))
    _emit(rows_csv(rows) if args.format == "csv" else rows_json(rows))


def cmd_sweep(args, cfg):
    variants = args.variants or cfg.get("variants") or ["mlp_fp32", "snn_int8_hdc"]
    base = _merged(args, cfg, k_grid=args.k_grid)
    if "k_grid" not in base:
        base["k_grid"] = list(DEFAULT_K_GRIDS[base.get("noise_kind", "gaussian")])
    base.pop("variant", None)
    rows = run_sweep([_experiment({**base, "variant": v}) for v in variants])
    _emit(rows_csv(rows) if args.format == "csv" else rows_json(rows), args.out)


def cmd_mpc(args, cfg):
    k = args.noise_k if args.noise_k is not None else cfg.get("noise_k", 8)
    d = _merged(args, cfg, k_grid=[k])
    d.setdefault("preset", "net1")
    exp = _experiment(d)
    if exp.env != "cartpole":
        raise UsageError("mpc is defined for the CartPole preset only")
    lookaheads = args.lookahead or cfg.get("lookaheads") or list(range(1, 9))
    rows = run_mpc_experiment(exp, lookaheads, args.flip)
    _emit(rows_csv(rows, MPC_COLUMNS) if args.format == "csv" else rows_json(rows))


def cmd_energy(args, cfg):
    preset = args.preset or cfg.get("preset", "net1")
    variants = args.variants or cfg.get("variants") or list(VARIANTS)
    T = args.T or cfg.get("T", 1)
    convention = args.xor_convention or cfg.get("xor_convention", "per_class")
    ledgers = []
    for v in variants:
        exp = _experiment({"preset": preset, "variant": v, "T": T, "seed": args.seed or cfg.get("seed", 0),
                           "weights_dir": args.weights_dir or cfg.get("weights_dir", "weights")})
        spec = exp.policy_spec()
        if v == "mlp_fp32":
            ledgers.append(count_mlp(spec.sizes, label=v))
            continue
        model = load_policy(exp)[0] if args.from_weights else spec
        if isinstance(model, ConvertedNet) and args.retained is None:
            ledgers.append(count_snn(model, xor_convention=convention, label=v))
        else:
            ledgers.append(count_snn(spec, retained=args.retained, xor_convention=convention, label=v))
    rows = report(ledgers)
    _emit(report_csv(rows) if args.format == "csv" else report_json(rows))


COMMANDS = {
    "train": cmd_train,
    "convert": cmd_convert,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "mpc": cmd_mpc,
    "energy-report": cmd_energy,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _load_config(args.config)
        COMMANDS[args.command](args, cfg)
    except UsageError as e:
        print(f"spikehd: error: {e}", file=sys.stderr)
        return 1
    except TrainingError as e:
        print(f"spikehd: training failed: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, OverflowError) as e:
        print(f"spikehd: error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
