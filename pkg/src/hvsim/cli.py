"""Command line entry point.

    hvsim run --config bell-violation [--seed N] [--trials N] [--model ID] [--out DIR]
    hvsim list-models
    hvsim configs
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, ExperimentConfig, bundled_configs, resolve_config
from .runner import Experiment, summary_table, write_outputs
from .samplers import MODEL_DESCRIPTIONS, ModelId

EXIT_OK = 0
EXIT_TEST_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_IO_ERROR = 3


def list_models() -> str:
    return "\n".join(f"{m.value}\t{MODEL_DESCRIPTIONS[m]}" for m in ModelId)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hvsim", description=__doc__.splitlines()[0] if __doc__ else None)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("--config", required=True, help="config JSON path or bundled config name")
    run.add_argument("--seed", type=int, help="override the config seed")
    run.add_argument("--trials", type=int, help="override trials_per_pair")
    run.add_argument("--model", help="override model_id")
    run.add_argument("--out", help="output directory (overrides output_path)")
    run.add_argument("--workers", type=int, help="threads for trial generation")
    run.add_argument("--quiet", action="store_true", help="suppress the summary table")

    sub.add_parser("list-models", help="list model ids")
    sub.add_parser("configs", help="list bundled configs")
    return parser


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    path = resolve_config(args.config)
    try:
        data = ExperimentConfig.load(path).to_dict()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    overrides = {"seed": args.seed, "trials_per_pair": args.trials, "model_id": args.model,
                 "output_path": args.out, "workers": args.workers}
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(data)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-models":
        print(list_models())
        return EXIT_OK
    if args.command == "configs":
        print("\n".join(bundled_configs()))
        return EXIT_OK

    try:
        config = _load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    result = Experiment(config).run()
    try:
        trials_path, report_path = write_outputs(result, config.output_path)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO_ERROR

    if not args.quiet:
        print(summary_table(result))
        print(f"trials: {trials_path}\nreport: {report_path}")
    return EXIT_OK if result.all_passed else EXIT_TEST_FAILURE


if __name__ == "__main__":
    sys.exit(main())
