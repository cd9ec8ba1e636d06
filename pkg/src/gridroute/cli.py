"""Command-line interface: solve, screen, sweep, reduce, mitigate, case.

All file outputs are written atomically (temp file + rename) and are
byte-deterministic for identical inputs. Exit codes: 0 success, 1 domain
error (code and message on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys as _sys
import tempfile

import numpy as np

from . import model, metrics, pricing, radial
from .equilibrium import gue_to_dict, solve_gue
from .errors import GridrouteError, MalformedCsv, ParseError


def _write_atomic(path: str, data: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".gridroute-")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load(path: str) -> model.CoupledSystem:
    try:
        with open(path, "rb") as fh:
            return model.load_system(fh.read())
    except OSError as exc:
        raise ParseError(f"cannot read '{path}': {exc}") from exc


def _json_dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _policy_from_args(args) -> pricing.PricingPolicy:
    kind = getattr(args, "policy", "lmp")
    if kind == "static":
        if not getattr(args, "pi", None):
            raise ParseError("--policy static requires --pi v1,v2,...")
        pi = np.array([float(v) for v in args.pi.split(",")])
        return pricing.PricingPolicy.static(pi)
    return {
        "lmp": pricing.PricingPolicy.lmp_pass_through,
        "opt_t": pricing.PricingPolicy.opt_t,
        "opt_p": pricing.PricingPolicy.opt_p,
        "opt_c": pricing.PricingPolicy.opt_c,
    }[kind]()


def _cmd_solve(args) -> int:
    sys_ = _load(args.system)
    policy = _policy_from_args(args)
    gue = pricing.gue_under_policy(sys_, policy, tol=args.tol)
    _write_atomic(args.out, _json_dump(gue_to_dict(sys_, gue)))
    if not args.quiet:
        print(f"solved: wrote {args.out}")
    return 0


def _cmd_screen(args) -> int:
    sys_ = _load(args.system)
    if args.policy == "lmp":
        report = metrics.screen_bp(sys_, method=args.method)
    else:
        report = pricing.screen_under_policy(sys_, _policy_from_args(args), method=args.method)
    _write_atomic(args.out, metrics.screen_to_csv(report))
    if not args.quiet:
        present = sorted(k for k, v in report.verdicts.items() if v)
        print(f"screened: BP types present: {present or 'none'}; wrote {args.out}")
    return 0


def _cmd_sweep(args) -> int:
    sys_ = _load(args.system)
    param = metrics.Param.parse(args.param)
    table = metrics.sweep(sys_, param, args.lo, args.hi, args.steps)
    _write_atomic(args.out, metrics.sweep_to_csv(table))
    if not args.quiet:
        switches = table.switch_points()
        print(f"swept {param} over [{args.lo}, {args.hi}]; pattern switches at {switches}; wrote {args.out}")
    return 0


def _cmd_reduce(args) -> int:
    sys_ = _load(args.system)
    gue = solve_gue(sys_, tol=args.tol)
    report = radial.reduce_report(sys_, gue)
    _write_atomic(args.out, _json_dump(report))
    if not args.quiet:
        print(f"reduced: {len(report['subnetworks'])} subnetworks; wrote {args.out}")
    return 0


def _cmd_mitigate(args) -> int:
    sys_ = _load(args.system)
    walk = pricing.region_walk(
        sys_, (args.pi_lo, args.pi_hi), args.budget, revenue_floor=args.revenue_floor
    )
    doc = {
        "status": walk.status,
        "regions_visited": walk.regions_visited,
        "samples_drawn": walk.samples_drawn,
        "results": [],
    }
    for region, result in walk.entries:
        doc["results"].append({
            "status": result.status,
            "pi": None if result.pi is None else result.pi.tolist(),
            "revenue": None if not np.isfinite(result.revenue) else result.revenue,
            "region": {
                "zero_routes": sorted(region.pattern.zero_routes),
                "congested_lines": sorted(region.pattern.congested_lines),
            },
            "constraint_slacks": [[n, v] for n, v in result.constraint_slacks],
            "certificate": result.certificate,
        })
    _write_atomic(args.out, _json_dump(doc))
    if not args.quiet:
        print(f"mitigate: {walk.status}; wrote {args.out}")
    return 0


def _cmd_case(args) -> int:
    sys_ = model.builtin_case(args.name)
    _write_atomic(args.out, model.save_system(sys_).decode("utf-8") + "\n")
    if not args.quiet:
        print(f"wrote {args.name} to {args.out}")
    return 0


def render_plot_data(csv_text: str) -> str:
    """Reshape a sweep CSV into gnuplot data blocks, one per social cost.

    Columns are matched by header name, so column order does not matter.
    Blocks are separated by two blank lines in phi_t, phi_p, phi_c order.
    """
    lines = [ln for ln in csv_text.split("\n") if ln.strip()]
    if len(lines) < 2:
        raise MalformedCsv("sweep CSV needs a header and at least one row")
    header = lines[0].split(",")
    try:
        idx = {name: header.index(name) for name in ("theta", "phi_t", "phi_p", "phi_c")}
    except ValueError as exc:
        raise MalformedCsv(f"missing column: {exc}") from exc
    rows = []
    for ln in lines[1:]:
        cells = ln.split(",")
        if len(cells) != len(header):
            raise MalformedCsv("row width differs from header")
        try:
            rows.append({k: float(cells[i]) for k, i in idx.items() if cells[i] != ""})
        except ValueError as exc:
            raise MalformedCsv(f"non-numeric cell: {exc}") from exc
    blocks = []
    for metric in ("phi_t", "phi_p", "phi_c"):
        block = [f"# {metric}"]
        for row in rows:
            if "theta" in row and metric in row:
                block.append(f"{row['theta']:.12g} {row[metric]:.12g}")
        if len(block) == 1:
            raise MalformedCsv(f"no numeric data for {metric}")
        blocks.append("\n".join(block))
    return "\n\n\n".join(blocks) + "\n"


def _cmd_plotdata(args) -> int:
    try:
        with open(args.csv, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read '{args.csv}': {exc}") from exc
    _write_atomic(args.out, render_plot_data(text))
    if not args.quiet:
        print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridroute",
        description="Coupled power-transportation equilibria, Braess screening, and pricing",
    )
    parser.add_argument("--tol", type=float, default=1e-9, help="solver tolerance")
    parser.add_argument("--fd-step", type=float, default=None, help="finite-difference step override")
    parser.add_argument("--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_system(p):
        p.add_argument("--system", required=True, help="system JSON path")
        p.add_argument("--out", required=True, help="output path")

    p = sub.add_parser("solve", help="compute an equilibrium")
    add_system(p)
    p.add_argument("--policy", default="lmp", choices=["lmp", "static", "opt_t", "opt_p", "opt_c"])
    p.add_argument("--pi", default=None, help="comma-separated static prices")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("screen", help="screen all capacity parameters for BPs")
    add_system(p)
    p.add_argument("--method", default="kkt", choices=["fd", "kkt", "both"])
    p.add_argument("--policy", default="lmp", choices=["lmp", "static", "opt_t", "opt_p", "opt_c"])
    p.add_argument("--pi", default=None)
    p.set_defaults(func=_cmd_screen)

    p = sub.add_parser("sweep", help="sweep one parameter and tabulate costs")
    add_system(p)
    p.add_argument("--param", required=True, help="alpha:<l>, fbar:<l>, rho, or qscale")
    p.add_argument("--from", dest="lo", type=float, required=True)
    p.add_argument("--to", dest="hi", type=float, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("reduce", help="radial reduction and analytic verdicts")
    add_system(p)
    p.set_defaults(func=_cmd_reduce)

    p = sub.add_parser("mitigate", help="search static prices that eliminate TBP")
    add_system(p)
    p.add_argument("--revenue-floor", type=float, default=-np.inf)
    p.add_argument("--pi-lo", type=float, default=0.0)
    p.add_argument("--pi-hi", type=float, default=1.0)
    p.add_argument("--budget", type=int, default=16)
    p.set_defaults(func=_cmd_mitigate)

    p = sub.add_parser("case", help="export a built-in example system")
    p.add_argument("--name", required=True, choices=model.builtin_case_names())
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_case)

    p = sub.add_parser("plot-data", help="reshape a sweep CSV into gnuplot blocks")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_plotdata)
    return parser


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except GridrouteError as exc:
        print(f"{exc.code}: {exc}", file=_sys.stderr)
        return 1


def main() -> None:
    raise SystemExit(run(_sys.argv[1:]))
