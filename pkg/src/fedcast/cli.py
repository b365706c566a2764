"""Command line entry point: ``fedcast {run,grid,pretrain,manifest} <config>``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import forecaster, harness, partitioning
from .config import ExperimentConfig, load_config
from .errors import ConfigError, DivergenceError, FedcastError

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config_file", nargs="?", help="experiment config file")
    common.add_argument("--config", dest="config_flag", metavar="PATH", help="experiment config file")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, help="override master_seed")
    common.add_argument("--rounds", type=int, help="override strategy.rounds")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fedcast", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    sub.add_parser("run", parents=[common], help="run one experiment")
    sub.add_parser("grid", parents=[common], help="run every strategy on one partition")
    sub.add_parser("pretrain", parents=[common], help="build and save the pretrained checkpoint")
    sub.add_parser("manifest", parents=[common], help="print the partition audit table")
    return parser


def _load(args) -> ExperimentConfig:
    path = args.config_flag or args.config_file
    if not path:
        raise ConfigError("--config", "no config file given")
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = str(args.seed)
    if args.rounds is not None:
        overrides["strategy.rounds"] = str(args.rounds)
    if args.out is not None:
        overrides["output_dir"] = args.out
    return load_config(path, overrides)


def _dispatch(args) -> int:
    cfg = _load(args)
    out = Path(cfg.output_dir)
    if args.command == "manifest":
        sys.stdout.write(partitioning.manifest_table(harness.build_clients(cfg)))
        return EXIT_OK
    if args.command == "pretrain":
        ckpt = harness.get_checkpoint(cfg)
        out.mkdir(parents=True, exist_ok=True)
        forecaster.save_checkpoint(ckpt, out / "checkpoint.bin")
        print(f"wrote {out / 'checkpoint.bin'} ({len(ckpt.params)} parameters)")
        return EXIT_OK

    clients = harness.build_clients(cfg)
    ckpt = harness.get_checkpoint(cfg)
    if args.command == "run":
        histories = {cfg.strategy.kind: harness.run_config(cfg, clients, ckpt)}
    else:
        histories = harness.run_grid(cfg, clients, ckpt)
    harness.write_outputs(out, histories, clients, ckpt)
    sys.stdout.write(harness.comparison_table(histories))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"fedcast: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"fedcast: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FedcastError, OSError) as exc:
        print(f"fedcast: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
