"""Command-line front end.

Subcommands: variation, eval, product, solve, evolve, logderiv, split,
signature, verify, sample.  JSON in, JSON/CSV out; identical inputs and
seeds produce byte-identical reports (floats printed with 17 significant
digits).  Exit codes: 0 success, 2 verification failure, 3 input error,
4 numerical-tolerance failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import (
    BilinearMap,
    BVFunction,
    Density,
    SpecError,
    ToleranceError,
    bvfunction_from_dict,
    builtin_rhs,
    evolve,
    group_from_name,
    log_derivative,
    measure_from_dict,
    measure_to_dict,
    odot_polynomial,
    semidirect_split,
    signature,
    solve_global,
    variation_norm,
)
from .errors import BVFlowError
from .lie import GroupPath
from .verify import run_verification

EXIT_OK = 0
EXIT_VERIFY = 2
EXIT_INPUT = 3
EXIT_TOL = 4


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise SpecError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SpecError(f"malformed JSON in {path} at line {exc.lineno} column {exc.colno}") from exc


def _write_json(path, payload):
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer)):
            return float(o)
        raise TypeError(type(o).__name__)

    text = json.dumps(payload, sort_keys=True, indent=2, default=default)
    if path is None or path == "-":
        print(text)
    else:
        with open(path, "w") as fh:
            fh.write(text + "\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])


def _load_measure(path):
    return measure_from_dict(_load_json(path))


def _load_bv(path):
    return bvfunction_from_dict(_load_json(path))


def _parse_points(spec, interval, grid):
    if spec:
        return np.array([float(x) for x in spec.split(",")])
    return np.linspace(interval.a, interval.b, grid)


def _sample_rows(ts, values):
    values = np.asarray(values)
    flat = values.reshape(len(ts), -1)
    return [(t, *row) for t, row in zip(ts, flat)]


def _value_header(shape):
    if len(shape) == 2:
        n, m = shape
        return [f"m_{i + 1}{j + 1}" for i in range(n) for j in range(m)]
    d = shape[0] if shape else 1
    return [f"x_{i + 1}" for i in range(d)]


def cmd_variation(args):
    mu = _load_measure(args.measure)
    print(_fmt(variation_norm(mu, tol=args.tol)))
    return EXIT_OK


def cmd_eval(args):
    if args.measure:
        mu = _load_measure(args.measure)
        ts = _parse_points(args.at, mu.interval, args.grid)
        vals = mu.cumulative(ts, tol=args.tol)
        shape = mu.shape
    else:
        f = _load_bv(args.path)
        ts = _parse_points(args.at, f.interval, args.grid)
        vals = f.eval_many(ts, tol=args.tol)
        shape = f.shape
    if args.out:
        _write_csv(args.out, ["t"] + _value_header(shape), _sample_rows(ts, vals))
    else:
        for t, v in zip(ts, np.asarray(vals).reshape(len(ts), -1)):
            print(_fmt(t), *map(_fmt, v))
    return EXIT_OK


_BILINEARS = {
    "mult": lambda mu: BilinearMap.scalar_mult(),
    "scale": lambda mu: BilinearMap.scaling(mu.shape),
    "matmul": lambda mu: BilinearMap.matmul(mu.shape[0]),
}


def cmd_product(args):
    mu = _load_measure(args.measure)
    spec = _load_json(args.path)
    fdens = Density.from_dict(spec, tuple(spec.get("shape", [])))
    beta = _BILINEARS[args.bilinear](mu)
    result = odot_polynomial(fdens, beta, mu)
    payload = measure_to_dict(result)
    payload["variation_norm"] = variation_norm(result)
    _write_json(args.out, payload)
    return EXIT_OK


def cmd_solve(args):
    mu = _load_measure(args.measure)
    table = None
    if args.rhs == "custom-table":
        tab = _load_json(args.table)
        table = (tab["y"], tab["g"])
    n = mu.shape[0] if len(mu.shape) == 2 else None
    rhs = builtin_rhs(args.rhs, n=n, table=table)
    y0 = np.asarray(json.loads(args.y0), dtype=float)
    t0 = mu.interval.a if args.t0 is None else args.t0
    report = solve_global(rhs, mu, t0, y0, tol=args.tol)
    ts = _parse_points(args.at, mu.interval, args.grid)
    vals = report.extras["eta"](ts)
    if args.out:
        _write_csv(args.out, ["t"] + _value_header(np.asarray(y0).shape), _sample_rows(ts, vals))
    sidecar = {
        "contraction_factor": report.contraction_factor,
        "picard_iters": report.picard_iters,
        "residual": report.residual,
        "subdivision": list(report.subdivision),
        "endpoint": np.asarray(vals[-1]).tolist(),
    }
    _write_json(args.report, sidecar)
    return EXIT_OK


def cmd_evolve(args):
    group = group_from_name(args.group)
    mu = _load_measure(args.measure)
    init = np.asarray(_load_json(args.init), dtype=float) if args.init else None
    path = evolve(group, mu, init_g=init, mode=args.mode, tol=args.tol)
    ts = _parse_points(args.at, mu.interval, args.grid)
    vals = path.eval_many(ts)
    if args.out:
        _write_csv(args.out, ["t"] + _value_header((group.n, group.n)), _sample_rows(ts, vals))
    report = {
        "group": group.name,
        "mode": args.mode,
        "drift": path.drift,
        "endpoint": np.asarray(vals[-1]).tolist(),
    }
    if "mode_agreement" in path.extras:
        report["mode_agreement"] = path.extras["mode_agreement"]
    _write_json(args.report, report)
    return EXIT_OK


def _group_path_from_args(args):
    group = group_from_name(args.group)
    bv = _load_bv(args.path)
    ts = np.linspace(bv.interval.a, bv.interval.b, 129)
    vals = bv.eval_many(ts)
    drift = float(np.max(group.distance(vals)))
    return group, GroupPath(bv=bv, group=group, drift=drift)


def cmd_logderiv(args):
    group, path = _group_path_from_args(args)
    delta = log_derivative(path, mode=args.mode)
    ts = _parse_points(args.at, path.interval, args.grid)
    cums = delta.cumulative(ts, tol=args.tol)
    if args.out:
        _write_csv(args.out, ["t"] + _value_header((group.n, group.n)), _sample_rows(ts, cums))
    _write_json(args.report, {
        "group": group.name,
        "mode": args.mode,
        "drift": path.drift,
        "variation_norm": variation_norm(delta, tol=max(args.tol, 1e-9)),
    })
    return EXIT_OK


def cmd_split(args):
    group, path = _group_path_from_args(args)
    delta, g = semidirect_split(path)
    ts = _parse_points(args.at, path.interval, args.grid)
    cums = delta.cumulative(ts, tol=args.tol)
    if args.out:
        _write_csv(args.out, ["t"] + _value_header((group.n, group.n)), _sample_rows(ts, cums))
    recon = evolve(group, delta, init_g=g, mode="ambient", tol=max(args.tol, 1e-8))
    gap = float(np.max(np.abs(recon.eval_many(ts) - path.eval_many(ts))))
    _write_json(args.report, {
        "group": group.name,
        "initial": np.asarray(g).tolist(),
        "reconstruction_gap": gap,
        "drift": path.drift,
    })
    return EXIT_OK


def cmd_signature(args):
    f = _load_bv(args.path)
    tensor = signature(f, args.level, tol=args.tol)
    payload = {
        "d": tensor.d,
        "N": tensor.N,
        "levels": [lv.tolist() for lv in tensor.levels],
    }
    _write_json(args.out, payload)
    return EXIT_OK


def cmd_verify(args):
    scorecard = run_verification(seed=args.seed, fast=args.fast)
    _write_json(args.out, scorecard)
    return EXIT_OK if scorecard["passed"] else EXIT_VERIFY


def cmd_sample(args):
    f = _load_bv(args.path)
    ts = _parse_points(args.at, f.interval, args.grid)
    vals = f.eval_many(ts, tol=args.tol)
    _write_csv(args.out, ["t"] + _value_header(f.shape), _sample_rows(ts, vals))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bvflow",
        description="BV functions, measure-driven differential equations, "
                    "Lie group evolution and truncated signatures",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, tol=1e-10):
        p.add_argument("--tol", type=float, default=tol)
        p.add_argument("--at", help="comma-separated evaluation points")
        p.add_argument("--grid", type=int, default=101, help="uniform points when --at absent")

    p = sub.add_parser("variation", help="total variation norm of a measure")
    p.add_argument("--measure", required=True)
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(func=cmd_variation)

    p = sub.add_parser("eval", help="cumulative of a measure or values of a BV function")
    p.add_argument("--measure")
    p.add_argument("--path")
    p.add_argument("--out")
    add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("product", help="exact bilinear product path ⊙ measure")
    p.add_argument("--path", required=True, help="piecewise-polynomial path JSON")
    p.add_argument("--measure", required=True)
    p.add_argument("--bilinear", choices=sorted(_BILINEARS), default="mult")
    p.add_argument("--out")
    p.set_defaults(func=cmd_product)

    p = sub.add_parser("solve", help="solve y' = f_*(mu, y)")
    p.add_argument("--measure", required=True)
    p.add_argument("--rhs", required=True,
                   choices=["linear-matrix", "scalar-linear", "riccati", "rotation", "custom-table"])
    p.add_argument("--table", help="JSON with y/g arrays for custom-table")
    p.add_argument("--t0", type=float)
    p.add_argument("--y0", required=True, help="initial value as JSON array/scalar")
    p.add_argument("--out", help="CSV of t, y columns")
    p.add_argument("--report", help="JSON solve report")
    add_common(p, tol=1e-8)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("evolve", help="evolution of an algebra-valued measure")
    p.add_argument("--group", required=True)
    p.add_argument("--measure", required=True)
    p.add_argument("--init", help="JSON matrix initial value")
    p.add_argument("--mode", choices=["ambient", "chart", "both"], default="ambient")
    p.add_argument("--out")
    p.add_argument("--report")
    add_common(p, tol=1e-8)
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("logderiv", help="right logarithmic derivative of a group path")
    p.add_argument("--group", required=True)
    p.add_argument("--path", required=True, help="matrix-valued BV function JSON")
    p.add_argument("--mode", choices=["ambient", "chart"], default="ambient")
    p.add_argument("--out")
    p.add_argument("--report")
    add_common(p)
    p.set_defaults(func=cmd_logderiv)

    p = sub.add_parser("split", help="semidirect factorization (delta, initial value)")
    p.add_argument("--group", required=True)
    p.add_argument("--path", required=True)
    p.add_argument("--out")
    p.add_argument("--report")
    add_common(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("signature", help="truncated signature of a BV path")
    p.add_argument("--path", required=True)
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--out")
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(func=cmd_signature)

    p = sub.add_parser("verify", help="run the seeded invariant battery")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--fast", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sample", help="sample a BV function to CSV")
    p.add_argument("--path", required=True)
    p.add_argument("--out", required=True)
    add_common(p)
    p.set_defaults(func=cmd_sample)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ToleranceError as exc:
        print(f"tolerance failure: {exc}", file=sys.stderr)
        return EXIT_TOL
    except SpecError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except BVFlowError as exc:
        print(f"{args.command} error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
