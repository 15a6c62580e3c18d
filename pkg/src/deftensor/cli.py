"""Command line entry point: ``deftensor <command> [options]``.

Commands: train, attack, sweep, omniscient, landscape, report. Every command
reads an optional ``--config`` file of ``key = value`` lines; flags and
``--set key=value`` override it. Outputs land in ``--out`` (relative paths are
placed under ``$DEFTENSOR_OUTPUT_ROOT`` when that is set).

Exit codes: 0 success, 1 usage or configuration error, 2 data or checkpoint
error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .attacks import attack_records, make_config, run_attack
from .factorized import LayerMode
from .harness import experiments
from .harness.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .harness.config import ConfigError, ExperimentConfig
from .harness.data import DataError
from .harness.evaluation import RobustnessTable
from .harness.training import STREAM_ATTACK, STREAM_EVAL, NumericError, rng_stream

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="deftensor", description="Randomized tensorized networks and white-box attacks.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--theta", type=float, help="keep probability of the tensor dropout")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", help="output directory")
        return p

    add("train", "train a model and write a checkpoint")
    for name, text in [
        ("attack", "attack a checkpoint and write per-example records"),
        ("sweep", "robust accuracy over attacks and budgets"),
        ("omniscient", "attack the deterministic network, defend with randomization"),
    ]:
        p = add(name, text)
        p.add_argument("--checkpoint", help="model checkpoint (default: <out>/checkpoint.bin)")
        p.add_argument("--attack", help="comma-separated attacks: fgsm, bim, pgd, bpda")
        p.add_argument("--epsilon-list", help="comma-separated budgets")
        if name == "omniscient":
            p.add_argument("--theta-defense", type=float, help="keep probability used by the defender")
    p = add("landscape", "loss surface around one test example")
    p.add_argument("--checkpoint", help="model checkpoint (default: <out>/checkpoint.bin)")
    p = add("report", "render a robustness table")
    p.add_argument("--input", required=True, help="robustness table CSV")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    for flag, key in [("theta", "theta"), ("seed", "seed"), ("out", "out"), ("attack", "attacks"),
                      ("epsilon_list", "epsilons"), ("theta_defense", "theta_defense")]:
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = str(value)
    return cfg.with_overrides(overrides)


def _checkpoint_path(args, out: Path) -> Path:
    return Path(args.checkpoint) if getattr(args, "checkpoint", None) else out / "checkpoint.bin"


def _load(args, cfg, out):
    splits = experiments.load_splits(cfg)
    model, manifest = load_checkpoint(_checkpoint_path(args, out))
    if model.spec.input_shape != splits[0].x.shape[1:]:
        raise CheckpointError("checkpoint input shape does not match the configured dataset")
    if args.theta is not None:
        model.theta = args.theta
    return model, splits


def _write_table(table: RobustnessTable, path: Path) -> None:
    path.write_text(table.to_csv())
    sys.stdout.write(table.render())


def cmd_train(args, cfg, out):
    metrics_path = out / "metrics.jsonl"
    with open(metrics_path, "w") as fp:
        def log(m):
            fp.write(json.dumps(m, sort_keys=True) + "\n")
            fp.flush()

        model, metrics = experiments.train(cfg, log=log)
    summary = experiments.metrics_summary(model, cfg)
    save_checkpoint(
        out / "checkpoint.bin",
        model,
        epoch=cfg.epochs,
        seeds={"seed": cfg.seed, "data_seed": cfg.data_seed},
        config=cfg.to_dict(),
    )
    print(json.dumps(summary, sort_keys=True))


def cmd_attack(args, cfg, out):
    model, splits = _load(args, cfg, out)
    test = experiments.test_split(cfg, splits)
    with open(out / "attack.jsonl", "w") as fp:
        for ai, name in enumerate(cfg.attacks):
            for ei, eps in enumerate(cfg.epsilons):
                acfg = make_config(name, eps, units=cfg.epsilon_units, pixel_bounds=cfg.pixel_bounds,
                                   eot_samples=cfg.bpda_k, iterations=cfg.bpda_iterations or None)
                result = run_attack(
                    name, model, test.x, test.y, acfg, rng_stream(cfg.seed, STREAM_ATTACK, ai, ei),
                    mode=LayerMode.RANDOMIZED, model_rng=rng_stream(cfg.seed, STREAM_EVAL, 0, 1 + ai, ei),
                )
                for rec in attack_records(result, range(len(test)), eps, name):
                    fp.write(json.dumps(rec, sort_keys=True) + "\n")
                rate = 100.0 * float(result.success.mean()) if len(test) else 0.0
                print(f"{name} eps={eps:g}: success {rate:.2f}%")


def cmd_sweep(args, cfg, out):
    model, splits = _load(args, cfg, out)
    _write_table(experiments.sweep(cfg, model, splits), out / "sweep.csv")


def cmd_omniscient(args, cfg, out):
    model, splits = _load(args, cfg, out)
    _write_table(experiments.omniscient(cfg, model, splits), out / "omniscient.csv")


def cmd_landscape(args, cfg, out):
    model, splits = _load(args, cfg, out)
    grid = experiments.landscape(cfg, model, splits)
    (out / "landscape.csv").write_text(grid.to_csv())
    print(f"landscape {len(grid.u)}x{len(grid.v)}: loss in [{grid.loss.min():.4g}, {grid.loss.max():.4g}]")


def cmd_report(args, cfg, out):
    try:
        text = Path(args.input).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {args.input}: {exc}") from exc
    try:
        table = RobustnessTable.from_csv(text)
    except (ValueError, IndexError) as exc:
        raise DataError(f"{args.input}: {exc}") from exc
    (out / "report.txt").write_text(table.render())
    sys.stdout.write(table.render())


COMMANDS = {
    "train": cmd_train,
    "attack": cmd_attack,
    "sweep": cmd_sweep,
    "omniscient": cmd_omniscient,
    "landscape": cmd_landscape,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args)
        out = cfg.output_dir()
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, cfg, out)
    except UsageError as exc:
        sys.stderr.write(parser.format_usage())
        print(f"deftensor: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"deftensor: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"deftensor: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"deftensor: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"deftensor: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
