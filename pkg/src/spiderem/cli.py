"""Command-line entry point: ``spiderem {prep,fit,bench,verify,plot}``.

Exit codes: 0 success, 1 validation error, 2 divergence, 3 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

from . import kernels

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED, EXIT_VERIFY = 0, 1, 2, 3


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _peek_width(path: Path, has_header: bool) -> int:
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh)):
            if lineno == 0 and has_header:
                continue
            if row:
                return len(row)
    return 0


def cmd_prep(args) -> int:
    from .data import DataError, drop_constant_columns, load_csv, pca_project, write_csv

    src = Path(args.input)
    if not src.is_file():
        return _fail(f"input file {str(src)!r} does not exist", EXIT_INVALID)
    if args.pca is not None:
        width = _peek_width(src, args.header)
        if not 1 <= args.pca <= width:
            return _fail(f"--pca {args.pca} must lie in [1, {width}] for this input", EXIT_INVALID)
    if args.whiten and args.pca is None:
        return _fail("--whiten requires --pca", EXIT_INVALID)
    try:
        data = load_csv(src, args.header)
        if args.drop_constant:
            data = drop_constant_columns(data, args.tol)
        out = Path(args.out)
        if args.pca is not None:
            data, proj = pca_project(data, args.pca, whiten=args.whiten)
            proj.save(out.with_name(out.stem + ".projection"))
    except DataError as exc:
        return _fail(str(exc), EXIT_INVALID)
    write_csv(out, data.values)
    for note in data.provenance:
        print(note)
    print(f"wrote {out} ({data.n} x {data.d})")
    return EXIT_OK


def cmd_fit(args) -> int:
    from .bench import build_model, initial_statistic, run_config
    from .config import KNOWN_STRATEGIES, SpecError, load_spec
    from .solvers import DivergenceError, run_strategy

    try:
        spec = load_spec(args.spec)
        strategy = args.strategy or spec.strategies[0]
        if strategy not in KNOWN_STRATEGIES:
            raise SpecError([f"unknown strategy {strategy!r}"])
        model = build_model(spec)
    except SpecError as exc:
        return _fail(str(exc), EXIT_INVALID)
    seed = spec.seed if args.seed is None else args.seed
    config = run_config(spec, model.n, strategy, 0, seed)
    out = Path(args.out) if args.out else Path(spec.output_dir) / f"trace_{strategy}_seed{seed}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    started = time.time()
    code = EXIT_OK
    try:
        trace = run_strategy(model, initial_statistic(model, spec), strategy, config)
    except DivergenceError as exc:
        trace = exc.trace
        code = EXIT_DIVERGED
        print(f"error: run diverged: {exc}", file=sys.stderr)
    out.write_text(trace.to_csv())
    side = trace.sidecar()
    side["started"] = started
    side["kernel_backend"] = kernels.BACKEND
    out.with_suffix(".log.json").write_text(json.dumps(side, indent=1))
    if code == EXIT_OK:
        last = trace.records[-1]
        print(f"{strategy} seed={seed}: {len(trace.records)} epochs, |h|^2={last.h2:.3e}, "
              f"F={last.objective:.6f}, CE={last.cum_ce} (+{trace.warm_ce} warm-start)")
    print(f"wrote {out}")
    return code


def cmd_bench(args) -> int:
    from .bench import run_bench
    from .config import SpecError, load_spec

    try:
        spec = load_spec(args.spec)
        if args.validate_only:
            print(f"valid spec: {len(spec.strategies)} strategies: {', '.join(spec.strategies)}")
            return EXIT_OK
        result, traces = run_bench(spec, args.out, args.workers)
    except SpecError as exc:
        return _fail(str(exc), EXIT_INVALID)
    out = Path(args.out or spec.output_dir)
    for name, series in result.series.items():
        diverged = sum(tr.diverged for tr in traces[name])
        print(f"{name:10s} final q50|h|^2={series.q50_h2[-1]:.3e}  mean -F={series.mean_negF[-1]:.6f}  "
              f"CE={series.cum_ce[-1]:.0f}  diverged={diverged}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_suite

    checks = run_suite(args.suite, int(args.trials) if args.trials else None, args.seed)
    for c in checks:
        print(c.line())
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} identities passed")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_plot(args) -> int:
    from .diagnostics import FIGURES, plot_figure, read_bench_csv

    src = Path(args.bench_csv)
    if not src.is_file():
        return _fail(f"{str(src)!r} does not exist", EXIT_INVALID)
    result = read_bench_csv(src)
    out = Path(args.out or src.parent)
    out.mkdir(parents=True, exist_ok=True)
    for fig, (x, y) in FIGURES.items():
        print(f"wrote {plot_figure(result, x, y, out / f'{fig}.svg')}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="spiderem", description="Variance-reduced stochastic EM: data prep, fitting, benchmarks and identity checks.")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("prep", help="drop constant columns and/or project on principal components")
    sp.add_argument("input")
    sp.add_argument("--out", required=True)
    sp.add_argument("--header", action="store_true", help="input has a header row")
    sp.add_argument("--drop-constant", action="store_true")
    sp.add_argument("--tol", type=float, default=0.0, help="variance threshold for --drop-constant")
    sp.add_argument("--pca", type=int)
    sp.add_argument("--whiten", action="store_true")
    sp.set_defaults(func=cmd_prep)

    sf = sub.add_parser("fit", help="run one strategy and write its trace")
    sf.add_argument("spec")
    sf.add_argument("--strategy")
    sf.add_argument("--seed", type=int)
    sf.add_argument("--out")
    sf.set_defaults(func=cmd_fit)

    sb = sub.add_parser("bench", help="run the strategy x replication grid")
    sb.add_argument("spec")
    sb.add_argument("--out")
    sb.add_argument("--workers", type=int)
    sb.add_argument("--validate-only", action="store_true")
    sb.set_defaults(func=cmd_bench)

    sv = sub.add_parser("verify", help="check the estimator identities")
    sv.add_argument("--suite", choices=("bias", "variance", "geom", "counters", "all"), default="all")
    sv.add_argument("--trials", type=float, help="Monte-Carlo draws (accepts 1e6)")
    sv.add_argument("--seed", type=int, default=0)
    sv.set_defaults(func=cmd_verify)

    sl = sub.add_parser("plot", help="re-render SVG figures from bench.csv")
    sl.add_argument("bench_csv")
    sl.add_argument("--out")
    sl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
