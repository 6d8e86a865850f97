"""Command line front end.

Subcommands: synth, complete, theory, sweep, select-lambda. Exit codes:
0 success, 2 usage error (argparse), 3 invalid data or parameters, 4 runtime
failure (convergence, pipeline stage), 5 I/O failure.
"""

from __future__ import annotations

import argparse
import hashlib
import sys

import numpy as np
import threadpoolctl

from . import harness, theory
from .obsmat import read_coordinate, write_dense
from .synthgen import generate, save_instance, snr_to_sigma2, train_error
from .spectral import reconstruct

EXIT_DATA = 3
EXIT_RUNTIME = 4
EXIT_IO = 5


def _build_parser():
    top = argparse.ArgumentParser(prog="optspace", description=__doc__)
    sub = top.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic instance and write it to disk")
    s.add_argument("--m", type=int, required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--r", type=int, required=True)
    noise = s.add_mutually_exclusive_group(required=True)
    noise.add_argument("--sigma2", type=float)
    noise.add_argument("--snr", type=float)
    s.add_argument("--p", type=float, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--spectrum", type=str, default=None, help="comma-separated normalized singular values")
    s.add_argument("--mask-mode", choices=["bernoulli", "fixed"], default="bernoulli")
    s.add_argument("--out", type=str, required=True, help="output path prefix")

    c = sub.add_parser("complete", help="run the completion pipeline on a MatrixMarket file")
    c.add_argument("--input", type=str, required=True, help="coordinate MatrixMarket observations")
    c.add_argument("--rank", type=int, required=True)
    c.add_argument("--lam-spectral", type=float, default=0.0)
    c.add_argument("--lam-descent", type=float, default=0.0)
    c.add_argument("--max-iters", type=int, default=500)
    c.add_argument("--seed", type=int, required=True)
    c.add_argument("--out", type=str, required=True, help="output path prefix for X/S/Y and manifest")
    c.add_argument("--trace", type=str, default=None, help="optional CSV path for the descent trace")

    t = sub.add_parser("theory", help="print asymptotic predictions for given model parameters")
    t.add_argument("--sigma-diag", type=str, required=True, help="comma-separated normalized singular values")
    t.add_argument("--sigma2", type=float, required=True)
    t.add_argument("--p", type=float, required=True)
    t.add_argument("--alpha", type=float, required=True)

    w = sub.add_parser("sweep", help="run an experiment config")
    w.add_argument("--config", type=str, required=True)
    w.add_argument("--out", type=str, default=None, help="CSV path (overrides config output)")
    w.add_argument("--plot-script", type=str, default=None, help="also write a gnuplot script here")

    g = sub.add_parser("select-lambda", help="holdout selection of the regularization weight")
    g.add_argument("--input", type=str, required=True)
    g.add_argument("--rank", type=int, required=True)
    g.add_argument("--grid", type=str, required=True, help="comma-separated candidate values")
    g.add_argument("--holdout-fraction", type=float, default=0.1)
    g.add_argument("--seed", type=int, required=True)
    return top


def _cmd_synth(args) -> int:
    sigma2 = args.sigma2 if args.sigma2 is not None else snr_to_sigma2(args.snr, args.r, args.m, args.n)
    spectrum = [float(x) for x in args.spectrum.split(",")] if args.spectrum else None
    inst = generate(args.m, args.n, args.r, sigma2, args.p, args.seed, spectrum=spectrum, mask_mode=args.mask_mode)
    save_instance(inst, args.out)
    print(f"wrote {args.out}.obs.mtx ({inst.observed.nnz} entries), .truth.mtx, .noise.mtx, .meta")
    return 0


def _cmd_complete(args) -> int:
    obs = read_coordinate(args.input)
    from .manifold import DescentOptions

    opts = DescentOptions(max_iters=args.max_iters)
    fact, trace = harness.run_optspace(
        obs, args.rank, args.lam_spectral, args.lam_descent, opts=opts, seed=args.seed
    )
    write_dense(fact.X, f"{args.out}.X.mtx")
    write_dense(fact.S, f"{args.out}.S.mtx")
    write_dense(fact.Y, f"{args.out}.Y.mtx")
    with open(args.input, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    with open(f"{args.out}.manifest", "w", encoding="ascii") as fh:
        for key, val in [
            ("r", args.rank),
            ("lam_spectral", f"{args.lam_spectral:.17g}"),
            ("lam_descent", f"{args.lam_descent:.17g}"),
            ("input_sha256", digest),
            ("iterations", len(trace.steps)),
            ("termination", trace.reason),
        ]:
            fh.write(f"{key} = {val}\n")
    if args.trace:
        trace.write_csv(args.trace)
    print(f"train_error = {train_error(obs, reconstruct(fact)):.6g}")
    print(f"termination = {trace.reason} after {len(trace.steps)} steps")
    return 0


def _cmd_theory(args) -> int:
    sd = np.array([float(x) for x in args.sigma_diag.split(",")])
    params = theory.ModelParams(r=sd.size, sigma_diag=sd, sigma2=args.sigma2, p=args.p, alpha=args.alpha)
    pred = theory.predict(params)
    items = pred.as_items()
    if pred.k > 0:
        t_star, lam_star = theory.theory_lambda(params)
        items += [("t_star", f"{t_star:.17g}"), ("lambda_star", f"{lam_star:.17g}")]
    else:
        items += [("t_star", "0"), ("lambda_star", "nan")]
    for key, val in items:
        print(f"{key} = {val}")
    print(",".join(k for k, _ in items))
    print(",".join(v for _, v in items))
    return 0


def _cmd_sweep(args) -> int:
    config = harness.read_config_file(args.config)
    if args.out:
        config.output = args.out
    rows = harness.run(config)
    bad = sum(1 for r in rows if r.status != "ok")
    where = config.output or "(not written)"
    print(f"{len(rows)} rows -> {where}; {bad} failed cells")
    if args.plot_script:
        if not config.output:
            raise ValueError("--plot-script needs a CSV output path")
        harness.emit_plotscript(rows, args.plot_script, csv_path=config.output)
        print(f"plot script -> {args.plot_script}")
    return 0


def _cmd_select_lambda(args) -> int:
    obs = read_coordinate(args.input)
    grid = [float(x) for x in args.grid.split(",")]
    best, table = harness.select_lambda(obs, args.rank, grid, args.holdout_fraction, args.seed)
    print("lam,holdout_sq_error")
    for lam, score in table:
        print(f"{lam:.17g},{score:.17g}")
    print(f"lambda_star = {best:.17g}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "complete": _cmd_complete,
    "theory": _cmd_theory,
    "sweep": _cmd_sweep,
    "select-lambda": _cmd_select_lambda,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        with threadpoolctl.threadpool_limits(limits=1):
            return _COMMANDS[args.command](args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
