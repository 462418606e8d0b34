"""``dr-glm`` command line: partition, fit, compare, synth.

Exit codes: 0 success (or within tolerance), 1 runtime, convergence or
tolerance failure, 2 usage or validation error. Errors are printed to
stdout as a single JSON object ``{"error": {"kind", "message", ...}}``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .dataio import ModelSpec
from .errors import DRGLMError, PartitionError, SpecError
from .harness import SynthConfig, Tolerances, compare_fits, generate_synthetic, load_baseline
from .partition import REPLICATE, SEQUENTIAL, STRATIFIED
from .pipeline import make_plan, result_document, run
from .recombine import AGGREGATED, POOLED

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2

_USAGE_ERRORS = (SpecError, PartitionError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _nonneg_float(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def _emit_error(kind, message, **details):
    doc = {"error": {"kind": kind, "message": message, **details}}
    print(json.dumps(doc, sort_keys=True))


def _write_json(path, doc):
    text = json.dumps(doc, indent=2, sort_keys=False, allow_nan=True) + "\n"
    if str(path) == "-":
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _add_plan_flags(p, rows=False):
    if rows:
        p.add_argument("--rows", type=_positive_int, required=True)
    p.add_argument("--subsets", type=_positive_int, default=1)
    p.add_argument("--division", choices=(SEQUENTIAL, REPLICATE, STRATIFIED),
                   default=SEQUENTIAL)
    p.add_argument("--seed", type=int)
    p.add_argument("--strat-column")


def _add_fit_flags(p):
    p.add_argument("--data", required=True)
    p.add_argument("--spec", required=True)
    _add_plan_flags(p)
    p.add_argument("--chunk-rows", type=_positive_int, default=100_000)
    p.add_argument("--threads", type=_positive_int,
                   help="worker threads (default: $DR_GLM_THREADS or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dr-glm", description="Divide-and-recombine GLM fitting.")
    parser.add_argument("--version", action="version", version=f"dr-glm {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    fit = sub.add_parser("fit", help="fit a model by D&R or on the full data")
    _add_fit_flags(fit)
    fit.add_argument("--method", choices=("dr", "full"), default="dr")
    fit.add_argument("--variance", choices=(AGGREGATED, POOLED), default=AGGREGATED)
    fit.add_argument("--out", required=True, help="result JSON path ('-' for stdout)")

    cmp_ = sub.add_parser("compare", help="compare a D&R fit with the full fit or a baseline")
    _add_fit_flags(cmp_)
    cmp_.add_argument("--tol-coef", type=_nonneg_float)
    cmp_.add_argument("--tol-se", type=_nonneg_float)
    cmp_.add_argument("--baseline", help="CSV with columns label,estimate,se")
    cmp_.add_argument("--out", help="also write the report as JSON")

    part = sub.add_parser("partition", help="print a partition plan as JSON")
    _add_plan_flags(part, rows=True)
    part.add_argument("--data", help="CSV to read the stratification column from")
    part.add_argument("--max-subset-rows", type=_positive_int)
    part.add_argument("--out", default="-")

    syn = sub.add_parser("synth", help="generate a synthetic CSV from a JSON config")
    syn.add_argument("--config", required=True)
    syn.add_argument("--out", required=True)
    return parser


def _check_plan_args(args):
    if args.division == REPLICATE and args.seed is None:
        raise UsageError("--division replicate requires --seed")
    if args.division == STRATIFIED and not args.strat_column:
        raise UsageError("--division stratified requires --strat-column")


def _manifest_path(out):
    out = Path(out)
    return out.with_name(out.stem + ".manifest.json")


def cmd_fit(args) -> int:
    _check_plan_args(args)
    spec = ModelSpec.load(args.spec)
    mode = args.method
    try:
        result = run(args.data, spec, subsets=args.subsets, division=args.division,
                     seed=args.seed, strat_column=args.strat_column,
                     chunk_rows=args.chunk_rows, threads=args.threads,
                     variance_method=args.variance, mode=mode)
    except DRGLMError as exc:
        manifest = getattr(exc, "manifest", None)
        if manifest is not None and args.out != "-":
            _write_json(_manifest_path(args.out), manifest)
        raise
    if args.out == "-":
        _write_json("-", result_document(result.combined, None))
        return EXIT_OK
    mpath = _manifest_path(args.out)
    _write_json(mpath, result.manifest)
    _write_json(args.out, result_document(result.combined, mpath.name))
    return EXIT_OK


def cmd_compare(args) -> int:
    _check_plan_args(args)
    spec = ModelSpec.load(args.spec)
    common = dict(chunk_rows=args.chunk_rows, threads=args.threads)
    dr = run(args.data, spec, subsets=args.subsets, division=args.division, seed=args.seed,
             strat_column=args.strat_column, **common).combined
    if args.baseline:
        ref = load_baseline(args.baseline)
    else:
        ref = run(args.data, spec, mode="full", **common).combined
    report = compare_fits(dr, ref, Tolerances(coef=args.tol_coef, se=args.tol_se))
    print(report.render())
    if args.out:
        _write_json(args.out, report.to_json())
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_partition(args) -> int:
    _check_plan_args(args)
    if args.division == STRATIFIED and not args.data:
        raise UsageError("--division stratified requires --data")
    plan = make_plan(args.rows, args.subsets, args.division, seed=args.seed,
                     csv_source=args.data, strat_column=args.strat_column,
                     max_subset_rows=args.max_subset_rows)
    if plan.total_rows != args.rows:
        raise PartitionError(f"--rows {args.rows} but the data has {plan.total_rows} rows")
    _write_json(args.out, plan.to_json())
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        with open(args.config, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SpecError(f"config is not valid JSON: {exc}", path=args.config) from None
    config = SynthConfig.from_json(doc)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    if not os.path.isdir(out_dir) or not os.access(out_dir, os.W_OK):
        raise OSError(f"cannot write to {args.out}")
    truth = generate_synthetic(config, args.out)
    print(json.dumps({"out": args.out, "truth": args.out + ".truth.json", "n": truth["n"],
                      "labels": truth["labels"]}))
    return EXIT_OK


_COMMANDS = {"fit": cmd_fit, "compare": cmd_compare, "partition": cmd_partition,
             "synth": cmd_synth}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        _emit_error("usage", str(exc))
        return EXIT_USAGE
    except _USAGE_ERRORS as exc:
        _emit_error(exc.kind, str(exc), **exc.details())
        return EXIT_USAGE
    except DRGLMError as exc:
        _emit_error(exc.kind, str(exc), **exc.details())
        return EXIT_FAIL
    except OSError as exc:
        _emit_error("io", str(exc), path=getattr(exc, "filename", None))
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
