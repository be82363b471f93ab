"""Command-line entry point: ``python3 -m cellfree {run,validate,bench}``.

Exit codes: 0 success, 1 configuration error (bad flags or spec file),
2 suite failure (a validation check failed or a run produced solver errors).
"""

from __future__ import annotations

import argparse
import logging
import sys

from .experiment import ExperimentSpec, bench, run_monte_carlo
from .network import ConfigError, preset
from .validation import CHECKS, DEFAULT_CHECKS, run_all

log = logging.getLogger("cellfree")

EXIT_OK, EXIT_CONFIG, EXIT_SUITE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """Argument errors raise instead of exiting with argparse's own code 2."""

    def error(self, message):
        raise ConfigError(message)


def _add_common(p):
    p.add_argument("--seed", type=int, help="override the network rng_seed")
    p.add_argument("--realizations", type=int, help="override num_realizations")
    p.add_argument("--solvers", help="comma-separated subset of SCA,APG,FULL,HEU")
    p.add_argument("--out", help="override output_dir")
    p.add_argument("--jobs", type=int, help="worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cellfree", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="Monte-Carlo sweep from a JSON spec")
    run.add_argument("spec", help="path to the JSON experiment spec")
    run.add_argument("--dry-run", action="store_true",
                     help="print planned row counts without solving")
    _add_common(run)

    val = sub.add_parser("validate", help=f"numerical checks: {', '.join(DEFAULT_CHECKS)}")
    val.add_argument("--only", help=f"comma-separated subset of {','.join(CHECKS)} "
                                    "(oracle is not run by default)")

    b = sub.add_parser("bench", help="mean wall time per solver and ratio to SCA")
    b.add_argument("spec", nargs="?", help="JSON spec; default is the large-150x40 preset")
    _add_common(b)
    return parser


def _apply_overrides(spec: ExperimentSpec, args) -> ExperimentSpec:
    changes = {}
    if args.seed is not None:
        changes["config"] = spec.config.replace(rng_seed=args.seed)
    if args.realizations is not None:
        changes["num_realizations"] = args.realizations
    if args.solvers is not None:
        changes["solvers"] = tuple(s.strip().upper() for s in args.solvers.split(",")
                                   if s.strip())
    if args.out is not None:
        changes["output_dir"] = args.out
    if args.jobs is not None:
        changes["jobs"] = args.jobs
    return spec.replace(**changes) if changes else spec


def _cmd_run(args) -> int:
    spec = _apply_overrides(ExperimentSpec.load(args.spec), args)
    if args.dry_run:
        for name, rows in run_monte_carlo(spec, dry_run=True).items():
            print(f"{name}\t{rows}")
        return EXIT_OK
    result = run_monte_carlo(spec)
    failures = [r for r in result.records if r["error"]]
    for name, med in result.medians().items():
        print(f"{name}\tmedian sum SE {med:.3f} bit/s/Hz")
    print(f"wrote {', '.join(str(p) for p in result.files.values())}")
    for rec in failures:
        log.error("realization %d %s: %s", rec["realization"], rec["solver"], rec["error"])
    return EXIT_SUITE if failures else EXIT_OK


def _cmd_validate(args) -> int:
    names = None
    if args.only:
        names = [n.strip() for n in args.only.split(",") if n.strip()]
        unknown = [n for n in names if n not in CHECKS]
        if unknown:
            raise ConfigError(f"unknown checks {unknown}; choose from {list(CHECKS)}")
    results = run_all(names)
    for res in results:
        print(res.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_SUITE


def _cmd_bench(args) -> int:
    if args.spec:
        spec = ExperimentSpec.load(args.spec)
    else:
        spec = ExperimentSpec(scenario="large-150x40", config=preset("large-150x40"),
                              solvers=("SCA", "APG", "HEU"), num_realizations=5,
                              output_dir="results/bench")
    spec = _apply_overrides(spec, args)
    rows = bench(spec)
    print(f"{'solver':<6} {'runs':>5} {'mean time [s]':>14} {'median sum SE':>14} "
          f"{'time / SCA':>11}")
    for name, n, t, med, ratio in rows:
        print(f"{name:<6} {n:>5} {t:>14.3f} {med:>14.3f} {ratio:>11.3f}")
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "validate": _cmd_validate, "bench": _cmd_bench}


def cli_main(argv=None) -> int:
    """Parse ``argv`` and run the command; returns the exit status."""
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"cellfree: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"cellfree: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(cli_main())
