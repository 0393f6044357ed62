"""Command-line interface.

    adamixt SUBCOMMAND --config PATH [--set key=value]... --out DIR --seed N --repeats R

Subcommands: train, eval, predict, ablate, scalestudy, bench, synth,
dump-config. Exit codes: 0 success, 2 config error, 3 data error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import sys

from . import experiments
from .config import resolve_config
from .data import save_csv
from .errors import ConfigError, DataError, NumericError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

SUBCOMMANDS = ("train", "eval", "predict", "ablate", "scalestudy", "bench",
               "synth", "dump-config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adamixt",
        description="Multi-scale mixture-of-expert transformer forecasting harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="base random seed")
        p.add_argument("--repeats", type=int, default=None,
                       help="rerun with seeds seed..seed+R-1 and report the mean")
        p.add_argument("--quiet", action="store_true", help="suppress progress lines")
    return parser


def _progress(quiet: bool):
    if quiet:
        return None

    def log_fn(entry) -> None:
        if hasattr(entry, "epoch"):
            print(f"epoch {entry.epoch}: train_loss={entry.train_loss:.6f} "
                  f"val_mse={entry.val_mse:.6f} ({entry.seconds:.1f}s)",
                  file=sys.stderr)
        else:
            print(str(entry), file=sys.stderr)

    return log_fn


def run(args: argparse.Namespace) -> int:
    exp = resolve_config(args.config, args.set, out=args.out, seed=args.seed,
                         repeats=args.repeats)
    log_fn = _progress(args.quiet)

    if args.command == "dump-config":
        sys.stdout.write(exp.dump())
        return EXIT_OK

    if args.command == "synth":
        if exp.flat["dataset.kind"] != "synth":
            raise ConfigError("synth subcommand needs dataset.kind=synth")
        dataset = exp.build_dataset()
        exp.out_dir.mkdir(parents=True, exist_ok=True)
        path = exp.out_dir / f"{dataset.name}.csv"
        save_csv(dataset, path)
        print(path)
        return EXIT_OK

    if args.command == "train":
        results = experiments.train_command(exp, log_fn=log_fn)
        for res in results:
            print(f"seed {res.seed}: val_mse={res.val_mse:.6f} "
                  f"test_mse={res.test.mse:.6f} test_mae={res.test.mae:.6f}")
        return EXIT_OK

    if args.command == "eval":
        evals = experiments.eval_command(exp)
        for split_name, ev in evals.items():
            print(f"{split_name}: mse={ev.mse:.6f} mae={ev.mae:.6f} "
                  f"naive_mse={ev.naive_mse:.6f}")
        return EXIT_OK

    if args.command == "predict":
        path = experiments.predict_command(exp)
        print(path)
        return EXIT_OK

    if args.command == "ablate":
        results = experiments.run_ablation(exp, log_fn=log_fn)
        full = next((r for r in results if r.name == "full"), None)
        for r in results:
            line = (f"{r.name}: mean_val_mse={r.mean_val_mse:.6f} "
                    f"mean_test_mse={r.mean_test_mse:.6f}")
            if full is not None and r.name != "full" and full.mean_val_mse > 0:
                delta = (r.mean_val_mse - full.mean_val_mse) / full.mean_val_mse
                line += f" (vs full: {delta:+.1%})"
            print(line)
        return EXIT_OK

    if args.command == "scalestudy":
        results = experiments.run_scalestudy(exp, log_fn=log_fn)
        for r in results:
            print(f"{r.name}: mean_val_mse={r.mean_val_mse:.6f} "
                  f"mean_test_mse={r.mean_test_mse:.6f}")
        return EXIT_OK

    if args.command == "bench":
        table = experiments.bench_inference(exp)
        for stats in table:
            print(f"batch={int(stats['batch'])}: mean={stats['mean_ms']:.3f}ms "
                  f"p50={stats['p50_ms']:.3f}ms p95={stats['p95_ms']:.3f}ms "
                  f"throughput={stats['windows_per_s']:.1f}/s")
        return EXIT_OK

    raise ConfigError(f"unknown subcommand {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
