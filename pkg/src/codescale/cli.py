"""``codescale`` command line.

Exit status: 0 success, 1 usage error, 2 bad input or arguments, 3 numeric
failure. Results go to stdout (or ``--out``), diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from decimal import Decimal, InvalidOperation

from . import __version__
from .errors import EvaluationError, FitFailure, ScalingError
from .fitting import HUBER_LOG, OBJECTIVES, FitConfig, fit, relative_error, score
from .io import LawFile, ingest, read_law, render_series, write_law
from .laws import FAMILIES, LogGrid, asymptotic_limit
from .mixtures import LawSet, dominance_map
from .planner import (
    NON_EMBEDDING,
    WITH_EMBEDDING,
    FlopConvention,
    family_convention,
    optimal_allocation,
    optimal_dn_curve,
)
from .sweep import (
    DEFAULT_MAX_GPUS,
    DEFAULT_VOCAB,
    SweepSpec,
    derive_arch,
    plan_gpus,
    plan_sweep,
    reference_sweep_spec,
)

logger = logging.getLogger("codescale")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # one line only; --help has the full usage
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message} (see --help)\n")


class _UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Argument types


def count(text: str) -> int:
    """Positive integer count; accepts scientific notation such as ``2.27e9``."""
    try:
        value = Decimal(text)
    except InvalidOperation:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not value.is_finite() or value < 1 or value != value.to_integral_value():
        raise argparse.ArgumentTypeError(f"not a positive whole count: {text!r}")
    return int(value)


def positive(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (value > 0 and math.isfinite(value)):
        raise argparse.ArgumentTypeError(f"must be a positive finite number: {text!r}")
    return value


def grid(text: str) -> LogGrid:
    """``lo:hi:count`` log grid."""
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"grid must look like lo:hi:count, got {text!r}")
    try:
        return LogGrid(positive(parts[0]), positive(parts[1]), int(parts[2]))
    except (ValueError, ScalingError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


# ---------------------------------------------------------------------------
# Output helpers


def _emit(args, rows):
    text = render_series(rows, args.format)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _emit_mapping(args, mapping: dict):
    if args.format == "json":
        sys.stdout.write(json.dumps(mapping, indent=2) + "\n")
    else:
        for k, v in mapping.items():
            sys.stdout.write(f"{k}: {_fmt_text(v)}\n")


def _fmt_text(v) -> str:
    if isinstance(v, float):
        return f"{v:.9g}"
    return str(v)


def _convention(args) -> FlopConvention:
    if args.basis == WITH_EMBEDDING:
        return family_convention(args.multiplier, args.vocab)
    return FlopConvention(args.multiplier, NON_EMBEDDING)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_fit(args):
    records = ingest(args.input)
    config = FitConfig(family=args.law, objective=args.objective, seed=args.seed,
                       n_starts=args.starts, huber_delta=args.huber_delta)
    report = fit(records, config)
    units = sorted({r.meta.get("source_units", "raw") for r in records})
    law_file = LawFile(report.law, {
        "fit_config_digest": config.digest(),
        "record_count": len(records),
        "mre_permille": report.mre_permille,
        "input_units": ",".join(units),
    })
    write_law(law_file, args.out)
    print(f"mre_permille: {report.mre_permille:.9g}")


def cmd_predict(args):
    law = read_law(args.params).law
    print(f"{law.loss(args.n, args.d):.9g}")


def cmd_score(args):
    records = ingest(args.input)
    if args.params:
        report = score(read_law(args.params).law, records)
        predicted = [r.predicted for r in report.residuals]
    else:
        col = args.predicted_column
        predicted = []
        for i, r in enumerate(records, start=2):
            if col not in r.meta:
                raise _UsageError(f"column {col!r} not in {args.input}")
            try:
                predicted.append(float(r.meta[col]))
            except ValueError:
                raise ScalingError(f"row {i}, column {col!r}: not a number: {r.meta[col]!r}") from None
    rows = [
        {"n_params": r.n_params, "d_tokens": r.d_tokens, "loss": r.loss,
         "predicted": p, "re_permille": relative_error(p, r.loss)}
        for r, p in zip(records, predicted)
    ]
    _emit(args, rows)
    mre = sum(row["re_permille"] for row in rows) / len(rows)
    logger.info("mre_permille: %.9g", mre)


def cmd_optimal(args):
    law = read_law(args.params).law
    search = (args.n_min, args.n_max) if args.n_min or args.n_max else None
    if search and not (args.n_min and args.n_max):
        raise _UsageError("--n-min and --n-max must be given together")
    alloc = optimal_allocation(law, args.compute, _convention(args), search)
    _emit_mapping(args, {
        "compute": alloc.compute,
        "n_opt": alloc.n_opt,
        "d_opt": alloc.d_opt,
        "dn_ratio": alloc.dn_ratio,
        "predicted_loss": alloc.predicted_loss,
        "method": alloc.method,
        "convention": alloc.convention,
        "at_boundary": alloc.at_boundary,
        "flat_basin": alloc.flat_basin,
    })


def cmd_frontier(args):
    law = read_law(args.params).law
    curve = optimal_dn_curve(law, LogGrid(args.c_min, args.c_max, args.points), _convention(args))
    _emit(args, [a.row() for a in curve])


def cmd_limit(args):
    print(asymptotic_limit(read_law(args.params).law))


def cmd_compare(args):
    laws = [read_law(p).law for p in args.params]
    labels = args.labels or [f"law{i}" for i in range(len(laws))]
    if len(labels) != len(laws):
        raise _UsageError(f"--labels has {len(labels)} entries for {len(laws)} laws")
    law_set = LawSet.build(zip(labels, laws))
    report = dominance_map(law_set, sorted(set(args.fixed_n)), LogGrid(args.dn_min, args.dn_max, args.dn_points), args.tol)
    rows = [{"kind": "crossover", "n": n, "dn": dn, "winner": "", "pair": f"{a}|{b}"}
            for n, dn, (a, b) in report.crossovers]
    rows += [{"kind": "cell", "n": c["n"], "dn": c["dn"], "winner": c["winner"], "pair": ""}
             for c in report.rows()]
    _emit(args, rows)


def cmd_sweep(args):
    if args.reference:
        if args.n_values or args.n_grid or args.d_grid:
            raise _UsageError("--reference cannot be combined with explicit grids")
        spec = reference_sweep_spec((args.dn_min, args.dn_max))
    else:
        if bool(args.n_values) == bool(args.n_grid):
            raise _UsageError("give exactly one of --n-values or --n-grid")
        if args.d_grid is None:
            raise _UsageError("--d-grid is required without --reference")
        spec = SweepSpec(args.n_values or args.n_grid, args.d_grid, (args.dn_min, args.dn_max))
    plan = plan_sweep(spec)
    logger.info("%d of %d grid points kept", plan.count, plan.unpruned)
    _emit(args, [{"n": n, "d": d, "dn": d / n} for n, d in plan.points])


def cmd_arch(args):
    arch = derive_arch(args.target_n, args.vocab, args.rescale_layers)
    _emit_mapping(args, {
        "d_model": arch.d_model, "d_ff": arch.d_ff, "n_head": arch.n_head,
        "n_layer": arch.n_layer, "n_params": arch.n_params,
        "n_with_emb": arch.n_with_emb, "vocab": arch.vocab,
    })


def cmd_gpus(args):
    p = plan_gpus(args.gbz, args.mbz_max, args.gpu_step, args.max_gpus)
    _emit_mapping(args, {"gbz": p.gbz, "gpus": p.gpus, "mbz": p.mbz, "accum": p.accum})


def cmd_surface(args):
    law = read_law(args.params).law
    rows = []
    for n in args.n_grid.values():
        for d in args.d_grid.values():
            rows.append({"n": float(n), "d": float(d), "loss": law.loss(n, d)})
    _emit(args, rows)


# ---------------------------------------------------------------------------
# Parser


def _series_flags(p, default="csv"):
    p.add_argument("--format", choices=("csv", "json"), default=default)
    p.add_argument("--out", help="write to this file instead of stdout")


def _convention_flags(p):
    p.add_argument("--basis", choices=(NON_EMBEDDING, WITH_EMBEDDING), default=NON_EMBEDDING,
                   help="parameter count entering C = multiplier * N * D")
    p.add_argument("--multiplier", type=positive, default=6.0)
    p.add_argument("--vocab", type=count, default=DEFAULT_VOCAB,
                   help="vocabulary for the with_embedding basis")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="codescale", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a law to a run file")
    p.add_argument("--law", choices=FAMILIES, required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--objective", choices=OBJECTIVES, default=HUBER_LOG)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--starts", type=int, default=64)
    p.add_argument("--huber-delta", type=positive, default=1e-3)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="loss at one (N, D) point")
    p.add_argument("--params", required=True)
    p.add_argument("--n", type=count, required=True)
    p.add_argument("--d", type=count, required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("score", help="per-row relative error of predictions against a run file")
    p.add_argument("--input", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--params", help="law file to predict with")
    src.add_argument("--predicted-column", help="run-file column holding precomputed predictions")
    _series_flags(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("optimal", help="compute-optimal allocation at one budget")
    p.add_argument("--params", required=True)
    p.add_argument("--compute", type=positive, required=True)
    p.add_argument("--n-min", type=positive, help="lower end of the N search bracket")
    p.add_argument("--n-max", type=positive, help="upper end of the N search bracket")
    p.add_argument("--format", choices=("text", "json"), default="text")
    _convention_flags(p)
    p.set_defaults(func=cmd_optimal)

    p = sub.add_parser("frontier", help="optimal D/N over a range of budgets")
    p.add_argument("--params", required=True)
    p.add_argument("--c-min", type=positive, required=True)
    p.add_argument("--c-max", type=positive, required=True)
    p.add_argument("--points", type=int, default=9)
    _convention_flags(p)
    _series_flags(p)
    p.set_defaults(func=cmd_frontier)

    p = sub.add_parser("limit", help="loss as N, D -> infinity")
    p.add_argument("--params", required=True)
    p.set_defaults(func=cmd_limit)

    p = sub.add_parser("compare", help="crossovers and dominance between laws")
    p.add_argument("--params", nargs="+", required=True)
    p.add_argument("--labels", nargs="+")
    p.add_argument("--fixed-n", type=count, nargs="+", required=True)
    p.add_argument("--dn-min", type=positive, required=True)
    p.add_argument("--dn-max", type=positive, required=True)
    p.add_argument("--dn-points", type=int, default=64)
    p.add_argument("--tol", type=positive, default=1e-6)
    _series_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="plan an (N, D) campaign")
    p.add_argument("--reference", action="store_true",
                   help="nine reference architectures with 13 budgets each")
    p.add_argument("--n-values", type=positive, nargs="+")
    p.add_argument("--n-grid", type=grid, help="lo:hi:count")
    p.add_argument("--d-grid", type=grid, help="lo:hi:count")
    p.add_argument("--dn-min", type=float, default=0.5)
    p.add_argument("--dn-max", type=float, default=1000.0)
    _series_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("arch", help="reference architecture for a target size")
    p.add_argument("--target-n", type=positive, required=True)
    p.add_argument("--vocab", type=count, default=DEFAULT_VOCAB)
    p.add_argument("--rescale-layers", action="store_true")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_arch)

    p = sub.add_parser("gpus", help="split a global batch over GPUs")
    p.add_argument("--gbz", type=int, required=True)
    p.add_argument("--mbz-max", type=int, required=True)
    p.add_argument("--gpu-step", type=int, default=8)
    p.add_argument("--max-gpus", type=int, default=DEFAULT_MAX_GPUS)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_gpus)

    p = sub.add_parser("surface", help="loss on an (N, D) grid")
    p.add_argument("--params", required=True)
    p.add_argument("--n-grid", type=grid, required=True, help="lo:hi:count")
    p.add_argument("--d-grid", type=grid, required=True, help="lo:hi:count")
    _series_flags(p)
    p.set_defaults(func=cmd_surface)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except _UsageError as exc:
        print(f"codescale {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EvaluationError, FitFailure, ArithmeticError) as exc:
        print(f"codescale {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ScalingError, ValueError, OSError) as exc:
        print(f"codescale {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
