"""Command-line front end: one subcommand per pipeline plus rank and serve.

Every pipeline subcommand writes its artifacts under a fresh run directory
(--out, $SURV_HOME, or ./runs) and prints the manifest path.  Exit codes:
0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import runs, service
from .errors import DataError
from .synth import config_from_dict

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage problems; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(parser) -> None:
    parser.add_argument("--out", metavar="DIR", default=None,
                        help="run root (default $SURV_HOME or ./runs)")


def _add_input(parser) -> None:
    parser.add_argument("--run", metavar="DIR", default=None,
                        help="data run directory holding the panel")
    parser.add_argument("--stock", default=None, help="target stock id")
    parser.add_argument("--pse", metavar="CSV", default=None,
                        help="event registry overriding the data run's")


def build_parser() -> _Parser:
    parser = _Parser(prog="tradewatch",
                     description="Trading surveillance pipelines over "
                                 "transaction panels")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND",
                              parser_class=_Parser)

    p = sub.add_parser("ingest",
                       help="normalize transaction + event CSVs into a data run")
    p.add_argument("transactions", metavar="CSV")
    p.add_argument("--pse", metavar="CSV", required=True)
    p.add_argument("--error-budget", type=int, default=0)
    _add_common(p)

    p = sub.add_parser("synth",
                       help="generate a synthetic data run from a scenario")
    p.add_argument("--config", metavar="JSON", required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="override the scenario seed")
    _add_common(p)

    p = sub.add_parser("kmeans",
                       help="dynamic clustering + discontinuity ranking")
    _add_input(p)
    p.add_argument("--window", type=int, default=20)
    p.add_argument("--step", type=int, default=5)
    p.add_argument("--k", type=int, default=None,
                   help="cluster count (default: elbow selection)")
    p.add_argument("--k-max", type=int, default=10)
    p.add_argument("--rel-tol", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    _add_common(p)

    p = sub.add_parser("svn",
                       help="validated co-occurrence network + communities")
    _add_input(p)
    p.add_argument("--theta", type=float, default=0.01)
    p.add_argument("--correction", default="bonferroni",
                   help="bonferroni, fdr, or fixed:<p>")
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--min-days", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    _add_common(p)

    p = sub.add_parser("bicm",
                       help="configuration-model validation vs the "
                            "hypergeometric one")
    _add_input(p)
    p.add_argument("--theta", type=float, default=0.01)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--min-days", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--floor", type=float, default=0.8)
    p.add_argument("--workers", type=int, default=1)
    _add_common(p)

    p = sub.add_parser("sweep",
                       help="edge counts across fixed validation thresholds")
    _add_input(p)
    p.add_argument("--theta", type=float, default=0.01)
    p.add_argument("--min-days", type=int, default=8)
    p.add_argument("--thresholds", default=None,
                   help="comma-separated p-value cuts (default: auto grid)")
    p.add_argument("--workers", type=int, default=1)
    _add_common(p)

    p = sub.add_parser("full",
                       help="all pipelines plus containment and truth scoring")
    _add_input(p)
    p.add_argument("--window", type=int, default=20)
    p.add_argument("--step", type=int, default=5)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--k-max", type=int, default=10)
    p.add_argument("--rel-tol", type=float, default=0.05)
    p.add_argument("--theta", type=float, default=0.01)
    p.add_argument("--correction", default="bonferroni")
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--min-days", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--floor", type=float, default=0.8)
    p.add_argument("--workers", type=int, default=1)
    _add_common(p)

    p = sub.add_parser("rank",
                       help="print a completed run's ranking table")
    p.add_argument("run", metavar="DIR")

    p = sub.add_parser("compare",
                       help="match community partitions of two runs")
    p.add_argument("run_a", metavar="DIR_A")
    p.add_argument("run_b", metavar="DIR_B")
    p.add_argument("--floor", type=float, default=0.8)
    _add_common(p)

    p = sub.add_parser("serve",
                       help="serve completed runs over HTTP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    _add_common(p)

    return parser


def _require_run(args, parser) -> Path:
    """Validate --pse/--stock first so event problems report as data errors."""
    if args.pse is not None:
        runs.pick_event(runs.load_events(args.pse), args.stock)
    if args.run is None:
        parser.error("--run is required")
    return Path(args.run)


def _cmd_ingest(args, parser) -> Path:
    return runs.run_ingest(args.transactions, args.pse,
                           error_budget=args.error_budget, home=args.out)


def _cmd_synth(args, parser) -> Path:
    try:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise DataError(f"scenario {args.config} is not JSON: {err}") from None
    cfg = config_from_dict(raw)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return runs.run_synth(cfg, home=args.out)


def _cmd_kmeans(args, parser) -> Path:
    return runs.run_kmeans(
        _require_run(args, parser), stock=args.stock, window=args.window,
        step=args.step, k=args.k, k_max=args.k_max, rel_tol=args.rel_tol,
        seed=args.seed, pse_csv=args.pse, home=args.out)


def _cmd_svn(args, parser) -> Path:
    correction, threshold = runs.parse_correction(args.correction)
    return runs.run_svn(
        _require_run(args, parser), stock=args.stock, theta=args.theta,
        correction=correction, alpha=args.alpha, threshold=threshold,
        min_days=args.min_days, seed=args.seed, n_workers=args.workers,
        pse_csv=args.pse, home=args.out)


def _cmd_bicm(args, parser) -> Path:
    return runs.run_bicm(
        _require_run(args, parser), stock=args.stock, theta=args.theta,
        alpha=args.alpha, min_days=args.min_days, seed=args.seed,
        floor=args.floor, n_workers=args.workers, pse_csv=args.pse,
        home=args.out)


def _cmd_sweep(args, parser) -> Path:
    thresholds = None
    if args.thresholds is not None:
        try:
            thresholds = [float(t) for t in args.thresholds.split(",") if t]
        except ValueError:
            parser.error(f"bad threshold list {args.thresholds!r}")
    return runs.run_sweep(
        _require_run(args, parser), stock=args.stock, theta=args.theta,
        min_days=args.min_days, thresholds=thresholds,
        n_workers=args.workers, pse_csv=args.pse, home=args.out)


def _cmd_full(args, parser) -> Path:
    correction, threshold = runs.parse_correction(args.correction)
    return runs.run_full(
        _require_run(args, parser), stock=args.stock, window=args.window,
        step=args.step, k=args.k, k_max=args.k_max, rel_tol=args.rel_tol,
        theta=args.theta, correction=correction, alpha=args.alpha,
        threshold=threshold, min_days=args.min_days, seed=args.seed,
        floor=args.floor, n_workers=args.workers, pse_csv=args.pse,
        home=args.out)


def _cmd_rank(args, parser) -> Path | None:
    arts = runs.read_manifest(args.run)["artifacts"]
    for logical in ("suspects_csv", "dossiers_csv"):
        if logical in arts:
            sys.stdout.write((Path(args.run) / arts[logical])
                             .read_text(encoding="utf-8"))
            return None
    raise DataError(f"run {Path(args.run).name} has no ranking artifact")


def _cmd_compare(args, parser) -> Path:
    return runs.run_compare(args.run_a, args.run_b, floor=args.floor,
                            home=args.out)


def _cmd_serve(args, parser) -> None:
    service.serve(runs.run_home(args.out), host=args.host, port=args.port)


_COMMANDS = {
    "ingest": _cmd_ingest,
    "synth": _cmd_synth,
    "kmeans": _cmd_kmeans,
    "svn": _cmd_svn,
    "bicm": _cmd_bicm,
    "sweep": _cmd_sweep,
    "full": _cmd_full,
    "rank": _cmd_rank,
    "compare": _cmd_compare,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        manifest_path = _COMMANDS[args.command](args, parser)
    except DataError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    if manifest_path is not None:
        print(manifest_path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
