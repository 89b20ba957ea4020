"""Command-line entry point: gen-corpus, train, bench, sweep, report.

Exit codes: 0 success, 1 configuration error, 2 runtime error. Progress
goes to standard error; data goes to files or standard output.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import load_config
from .errors import ConfigurationError, UplLabError
from .metrics import SWEEP_COLUMNS, load_report, sweep_row

log = logging.getLogger("upl_lab")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
REPORT_COLUMNS = ["run"] + SWEEP_COLUMNS[2:]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # bad flags are a configuration problem, not a runtime one
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, workers: bool = False, trace: bool = False) -> None:
    p.add_argument("--config", type=Path, help="experiment JSON file (defaults apply when omitted)")
    p.add_argument("--seed", type=int, help="global seed; overrides the config")
    p.add_argument("--out", help="output directory; overrides paths.out_dir")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key by dotted path, e.g. train.epochs=5 (repeatable)")
    if workers:
        p.add_argument("--workers", type=int, default=1, help="parallel decode processes")
    if trace:
        p.add_argument("--trace", action="store_true", help="dump per-chunk decode traces as JSON lines")


def build_parser() -> argparse.ArgumentParser:
    levels = ["DEBUG", "INFO", "WARNING", "ERROR"]
    parser = _Parser(prog="upl-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="INFO", choices=levels)
    # also accepted after the subcommand name
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--log-level", default=argparse.SUPPRESS, choices=levels)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-corpus", parents=[shared], help="synthesize the training and evaluation corpora")
    _common(p)
    p = sub.add_parser("train", parents=[shared], help="train the transducer (and the neural endpointer if configured)")
    _common(p)
    p = sub.add_parser("bench", parents=[shared], help="stream-decode the evaluation corpus and write reports")
    _common(p, workers=True, trace=True)
    p = sub.add_parser("sweep", parents=[shared], help="benchmark once per value of the configured sweep parameter")
    _common(p, workers=True)
    p = sub.add_parser("report", parents=[shared], help="merge report.json files into one comparison table")
    p.add_argument("inputs", nargs="+", type=Path, help="report.json files or run directories")
    p.add_argument("--out", type=Path, help="write comparison.csv here instead of standard output")
    return parser


def _experiment(args):
    return load_config(args.config, args.overrides, args.seed, args.out)


def cmd_gen_corpus(args) -> int:
    train_path, eval_path = pipeline.gen_corpus(_experiment(args))
    print(train_path)
    print(eval_path)
    return EXIT_OK


def cmd_train(args) -> int:
    exp = _experiment(args)
    pipeline.train_models(exp)
    print(exp.path("model"))
    return EXIT_OK


def cmd_bench(args) -> int:
    exp = _experiment(args)
    if args.workers < 1:
        raise ConfigurationError("--workers must be >= 1")
    report = pipeline.bench(exp, args.workers, args.trace)
    a = report.aggregates
    log.info("n=%d wer=%s p50 upl=%s ms", a["n"], a["wer"], a["p50_upl_ms"])
    print(exp.path("report_json"))
    print(exp.path("report_csv"))
    return EXIT_OK


def cmd_sweep(args) -> int:
    exp = _experiment(args)
    if args.workers < 1:
        raise ConfigurationError("--workers must be >= 1")
    pipeline.sweep(exp, args.workers)
    print(exp.path("sweep_csv"))
    return EXIT_OK


def _resolve_report(path: Path) -> Path:
    if path.is_dir():
        path = path / "report.json"
    if not path.exists():
        raise ConfigurationError(f"report {path} not found; run bench first")
    return path


def cmd_report(args) -> int:
    rows = []
    for item in args.inputs:
        path = _resolve_report(item)
        row = sweep_row("", "", load_report(path))
        row["run"] = str(item)
        rows.append(row)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        target = (args.out / "comparison.csv").open("w", newline="")
    else:
        target = sys.stdout
    try:
        w = csv.writer(target, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for row in rows:
            w.writerow(["" if row[c] is None else row[c] for c in REPORT_COLUMNS])
    finally:
        if target is not sys.stdout:
            target.close()
            print(args.out / "comparison.csv")
    return EXIT_OK


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "train": cmd_train,
    "bench": cmd_bench,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (UplLabError, OSError, ValueError) as exc:
        log.error("runtime error: %s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
