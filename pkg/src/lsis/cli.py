"""Command-line runner for variance-ratio experiments.

    lsis run caplets --paths 20000 --output caplets.csv
    lsis run my_experiment.cfg --seed 7 --quiet
    lsis list

Exit status is 0 on success, 2 for an invalid configuration or arguments and
3 for file errors. Progress goes to standard error.
"""

import argparse
import logging
import sys
import time

from .experiments import (
    ConfigError,
    bundled_configs,
    load_config,
    run_experiment,
    summarize,
    write_results,
)

log = logging.getLogger("lsis")

EXIT_CONFIG = 2
EXIT_IO = 3


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lsis",
        description="Least-squares importance sampling experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config and write a CSV of results")
    run.add_argument("config", help="path to a .cfg file or the name of a bundled config")
    run.add_argument("--seed", type=int, help="override run.seed")
    run.add_argument("--paths", type=int, help="override run.paths (main-run paths per repetition)")
    run.add_argument("--strata", type=int, help="override run.strata for lsis_strat")
    run.add_argument("--repetitions", type=int, help="override run.repetitions")
    run.add_argument("--output", "-o", help="CSV path (default: run.output, else <id>.csv)")
    run.add_argument("--quiet", "-q", action="store_true", help="only report warnings and errors")

    sub.add_parser("list", help="list the bundled configs")
    return parser


def _cmd_run(args):
    try:
        cfg = load_config(args.config)
        cfg = cfg.with_overrides(seed=args.seed, paths=args.paths, strata=args.strata,
                                 repetitions=args.repetitions, output=args.output)
    except ConfigError as exc:
        log.error("invalid configuration: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO
    output = cfg.output or f"{cfg.experiment_id}.csv"
    log.info("experiment %s: %d instruments, methods %s, %d paths x %d repetitions",
             cfg.experiment_id, len(cfg.instruments), ",".join(cfg.run.methods),
             cfg.run.paths, cfg.run.repetitions)
    t0 = time.perf_counter()
    rows = run_experiment(cfg, progress=log.info)
    try:
        write_results(rows, output)
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO
    log.info("wrote %d rows to %s in %.1f s", len(rows), output, time.perf_counter() - t0)
    if not args.quiet and rows:
        print(summarize(rows), file=sys.stderr)
    return 0


def _cmd_list(args):
    for name, path in sorted(bundled_configs().items()):
        print(f"{name:<12} {path}")
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    quiet = getattr(args, "quiet", False)
    logging.basicConfig(level=logging.WARNING if quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.command == "run":
        return _cmd_run(args)
    return _cmd_list(args)


if __name__ == "__main__":
    sys.exit(main())
