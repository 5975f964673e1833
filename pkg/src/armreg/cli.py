"""Command-line interface: ``python -m armreg <subcommand> ...``."""

import argparse
import csv
import logging
import sys

import numpy as np

from . import analysis, datagen, filters, harness, problems
from .errors import BracketError, StabilityError

FILTER_METHODS = (filters.NONSTATIONARY, filters.STATIONARY)


def _problem(example, n, p):
    return problems.whiten(problems.example_problem(example, n), p)


def _source_index(example, nu=None):
    if nu is None:
        nu = problems.EXAMPLE_SMOOTHNESS[example]
    return problems.IndexFunction.holder(nu)


def cmd_experiment(args):
    cfg = harness.read_config(args.config, args.profile)
    out = args.out or cfg.output_path
    table = harness.run_experiment(cfg, workers=args.workers)
    harness.write_csv(table, out)
    flagged = sum(not r.stable for r in table.rows)
    print(f"wrote {len(table)} rows to {out} ({flagged} unstable cells flagged)")
    if args.plotdata:
        with open(args.plotdata, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["series", "T", "value"])
            for series, T, value in harness.plot_data(table, cfg.example, cfg.p):
                w.writerow([series, format(T, ".17g"), format(value, ".17g")])
        print(f"wrote plot data to {args.plotdata}")
    for m in cfg.methods:
        curve = table.min_rmse_curve(m, cfg.p)
        if len(curve) >= 3:
            print(f"{m}: fitted slope {table.slope(m, cfg.p):+.4f}")
    return 0


def cmd_run(args):
    wp = _problem(args.example, args.n, args.p)
    h = args.h if args.h is not None else args.T / 100
    stream = datagen.simulate_stream(wp.base, args.T, h, args.seed)
    u = wp.base.u_true
    if args.method in FILTER_METHODS:
        runner = filters.nonstationary_run if args.method == filters.NONSTATIONARY else filters.stationary_run
        run = runner(wp, stream, args.alpha, path=args.path)
        final = run.final_mean
        if args.trace:
            err = np.linalg.norm(run.means - u, axis=-1)
            with open(args.trace, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t", "error"])
                for t, e in zip(run.times, err):
                    w.writerow([format(t, ".17g"), format(e, ".17g")])
    else:
        final = harness.final_estimates(wp, args.method, stream, args.alpha)
        if args.trace:
            print("note: --trace applies to filter methods only", file=sys.stderr)
    err = float(np.linalg.norm(final - u))
    print(f"method={args.method} T={args.T:g} h={h:g} alpha={args.alpha:g} final_error={err:.10g}")
    return 0


def cmd_simulate(args):
    prob = problems.example_problem(args.example, args.n)
    stream = datagen.simulate_stream(prob, args.T, args.h, args.seed)
    datagen.write_stream(stream, args.out)
    print(f"wrote {stream.steps} increments of dimension {prob.A.shape[0]} to {args.out}")
    return 0


def cmd_alpha(args):
    wp = _problem(args.example, args.n, args.p)
    if args.rule == "grid":
        cfg = harness.ExperimentConfig(example=args.example, methods=(args.method,), p=args.p, n=args.n)
        alpha = harness.oracle_alpha(cfg, args.T, args.method, wp=wp)
        print(f"grid oracle alpha={alpha:.17g}")
        return 0
    phi = _source_index(args.example, args.nu)
    solver = analysis.solve_alpha_theta if args.rule == "theta" else analysis.solve_alpha_psi
    eps, alpha = solver(wp, phi, args.T)
    print(f"rule={args.rule} eps={eps:.10g} alpha={alpha:.10g}")
    return 0


def cmd_bounds(args):
    wp = _problem(args.example, args.n, args.p)
    br = analysis.mse_exact(wp, args.method, args.alpha, args.T)
    print(f"bias_sq={br.bias_sq:.10g} variance={br.variance:.10g} total={br.total:.10g}")
    if args.method in FILTER_METHODS:
        rep = analysis.mse_bound(wp, args.method, _source_index(args.example, args.nu), args.alpha, args.T)
        consts = " ".join(f"{k}={v:.6g}" for k, v in rep.constants.items())
        print(
            f"bound={rep.bound_value:.10g} regime={rep.regime} "
            f"bias_bound={rep.bias_bound:.10g} variance_bound={rep.variance_bound:.10g} {consts}"
        )
    return 0


def cmd_slope(args):
    table = harness.read_csv(args.inp)
    curve = table.min_rmse_curve(args.method, args.p)
    for T, rmse, alpha in curve:
        print(f"T={T:g} min_rmse={rmse:.6g} alpha={alpha:g}")
    print(f"slope={table.slope(args.method, args.p):+.6f}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="armreg", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    examples = problems.EXAMPLES

    p = sub.add_parser("experiment", help="run a full (T, alpha, method) grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--profile", choices=sorted(harness.PROFILES), default="paper")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--plotdata", metavar="CSV", help="also write min-RMSE curves and reference rates")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("run", help="single filter run")
    p.add_argument("--example", choices=examples, required=True)
    p.add_argument("--method", choices=analysis.METHODS, required=True)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--p", type=float, default=0.0)
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--h", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--path", choices=("auto", "spectral", "dense"), default="auto")
    p.add_argument("--trace", metavar="CSV")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("simulate", help="dump a data stream")
    p.add_argument("--example", choices=examples, required=True)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--h", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("alpha", help="a-priori or grid parameter choice")
    p.add_argument("--example", choices=examples, required=True)
    p.add_argument("--method", choices=analysis.METHODS, default=filters.NONSTATIONARY)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--rule", choices=("theta", "psi", "grid"), required=True)
    p.add_argument("--p", type=float, default=0.0)
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--nu", type=float, help="Hölder exponent of the source (default: example smoothness)")
    p.set_defaults(func=cmd_alpha)

    p = sub.add_parser("bounds", help="exact MSE and theoretical bound")
    p.add_argument("--example", choices=examples, required=True)
    p.add_argument("--method", choices=analysis.METHODS, required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--p", type=float, default=0.0)
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--nu", type=float)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("slope", help="fitted log-log rate from a results CSV")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--method", choices=analysis.METHODS, required=True)
    p.add_argument("--p", type=float)
    p.set_defaults(func=cmd_slope)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s"
    )
    try:
        return args.func(args)
    except (harness.ConfigError, BracketError, StabilityError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
