"""Command-line front end: validation, stage runs, sweeps, MPS export.

Exit codes: 0 success, 1 validation error, 2 infeasible, 3 solver limit,
4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .kkt import assemble_single_level
from .mechanism import (
    SolveOptions,
    StageError,
    default_alpha_grid,
    pre_schedule,
    select_alpha_star,
    SelectionError,
    sweep,
)
from .milp import write_mps
from .network import InfeasiblePathError, InstanceError, enumerate_paths, load_instance

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_INFEASIBLE = 2
EXIT_SOLVER_LIMIT = 3
EXIT_IO = 4

SWEEP_COLUMNS = [
    "alpha", "gamma", "eta", "delta_eta", "delta_gamma", "psi", "h",
    "overall", "tn_net_profit", "pdn_net_profit", "status", "gap",
    "nodes", "wall_seconds",
]


def _fmt(value):
    return f"{value:.6g}"


def _parse_grid(spec):
    """Parse 'a:b:step' into a sorted ratio grid."""
    try:
        a, b, step = (float(tok) for tok in spec.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"bad grid spec {spec!r}, expected a:b:step"
        )
    if step <= 0 or b < a:
        raise argparse.ArgumentTypeError(f"bad grid spec {spec!r}")
    n = int(round((b - a) / step))
    grid = [round(a + i * step, 10) for i in range(n + 1)]
    return [g for g in grid if g <= b + 1e-12]


def _options(args):
    return SolveOptions(
        segments=args.segments_n,
        cost_segments=args.cost_segments,
        gap=args.gap,
        node_limit=args.node_limit,
    )


def _load(args):
    inst = load_instance(args.instance)
    pathset = enumerate_paths(inst, k=args.paths_k)
    return inst, pathset


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _dump_point(outdir, tag, inst, traffic, gen_output, gen_cost, unit_ids):
    _write_csv(
        outdir / f"loads_{tag}.csv",
        ["evcs", "y_pu", "p_mw"],
        [
            [m.id, repr(float(traffic.y[i])), repr(float(traffic.p_evcs[i]))]
            for i, m in enumerate(inst.evcs)
        ],
    )
    if gen_output is not None:
        _write_csv(
            outdir / f"gen_{tag}.csv",
            ["unit", "output_mw", "cost_cny_per_h"],
            [
                [uid, repr(float(gen_output[i])), repr(float(gen_cost[i]))]
                for i, uid in enumerate(unit_ids)
            ],
        )


def cmd_validate(args):
    try:
        inst = load_instance(args.instance)
    except InstanceError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    print(
        f"instance {inst.name}: {len(inst.nodes)} traffic nodes, "
        f"{len(inst.roads)} roads, {len(inst.evcs)} EVCSs, "
        f"{len(inst.od_pairs)} O-D pairs, {len(inst.buses)} buses, "
        f"{len(inst.lines)} lines, {len(inst.generators)} generators"
    )
    return EXIT_OK


def cmd_pre(args):
    inst, pathset = _load(args)
    options = _options(args)
    pre = pre_schedule(inst, pathset, options)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    unit_ids = [g.id for g in inst.generators] + ["substation"]
    gen_output = list(pre.dispatch.p_gen) + [pre.dispatch.p_sub]
    _dump_point(outdir, "pre", inst, pre.traffic, gen_output,
                pre.dispatch.f_cost, unit_ids)
    print(f"pre-scheduling travel cost Gamma0 = {_fmt(pre.gamma0)} CNY/h")
    print(f"benchmark dispatch cost eta0 = {_fmt(pre.eta0)} CNY/h")
    return EXIT_OK


def cmd_sweep(args):
    inst, pathset = _load(args)
    options = _options(args)
    grid = _parse_grid(args.alpha_grid) if args.alpha_grid else default_alpha_grid()
    pre, points = sweep(inst, pathset, grid, options)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    unit_ids = [g.id for g in inst.generators] + ["substation"]
    rows = []
    for p in points:
        rows.append([
            repr(float(p.alpha)), repr(float(p.gamma)), repr(float(p.eta)),
            repr(float(p.delta_eta)), repr(float(p.delta_gamma)),
            repr(float(p.psi)), repr(float(p.h)), repr(float(p.overall)),
            repr(float(p.tn_net_profit)), repr(float(p.pdn_net_profit)),
            p.status, repr(float(p.gap)), p.nodes, repr(float(p.wall_seconds)),
        ])
        if p.traffic is not None:
            _dump_point(outdir, f"alpha_{p.alpha:g}", inst, p.traffic,
                        p.gen_output, p.gen_cost, unit_ids)
    _write_csv(outdir / "sweep.csv", SWEEP_COLUMNS, rows)
    print(f"pre-scheduling: Gamma0 = {_fmt(pre.gamma0)}, eta0 = {_fmt(pre.eta0)}")
    try:
        alpha_star = select_alpha_star(points)
    except SelectionError as exc:
        print(f"sweep finished but no optimal point: {exc}", file=sys.stderr)
        return EXIT_SOLVER_LIMIT
    best = next(p for p in points if p.alpha == alpha_star)
    print(
        f"best sharing ratio alpha* = {_fmt(alpha_star)} "
        f"with PDN total cost Psi = {_fmt(best.psi)} CNY/h"
    )
    if any(p.status not in ("optimal",) for p in points):
        flagged = [f"{p.alpha:g}" for p in points if p.status != "optimal"]
        print(f"flagged (non-optimal) ratios: {', '.join(flagged)}", file=sys.stderr)
    return EXIT_OK


def cmd_export_mps(args):
    inst, pathset = _load(args)
    options = _options(args)
    pre = pre_schedule(inst, pathset, options)
    sl = assemble_single_level(
        inst, pathset, args.alpha, pre.eta0,
        segments=options.segments, cost_segments=options.cost_segments,
    )
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    target = outdir / f"single_level_alpha_{args.alpha:g}.mps"
    write_mps(sl.model, target)
    print(f"wrote {target}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ptshare",
        description="Profit-sharing coordination of coupled traffic and "
                    "power distribution networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--instance", required=True, help="instance JSON file")
        if needs_out:
            p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--paths-k", type=int, default=6,
                       help="route alternatives per O-D pair / station")
        p.add_argument("--segments-n", type=int, default=None,
                       help="delay-curve segments (default: instance value)")
        p.add_argument("--cost-segments", type=int, default=3,
                       help="generator cost supports")
        p.add_argument("--gap", type=float, default=1e-6,
                       help="relative MILP gap tolerance")
        p.add_argument("--node-limit", type=int, default=None)

    p = sub.add_parser("validate", help="validate an instance file")
    p.add_argument("--instance", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("pre", help="run the benchmark stage")
    common(p)
    p.set_defaults(func=cmd_pre)

    p = sub.add_parser("sweep", help="run the full sharing-ratio sweep")
    common(p)
    p.add_argument("--alpha-grid", default=None, metavar="a:b:step",
                   help="ratio grid (default 0:1:0.05)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-mps", help="export the re-scheduling MILP")
    common(p)
    p.add_argument("--alpha", type=float, required=True)
    p.set_defaults(func=cmd_export_mps)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        code = args.func(args)
    except InfeasiblePathError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        code = EXIT_INFEASIBLE
    except InstanceError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        code = EXIT_VALIDATION
    except StageError as exc:
        msg = str(exc)
        print(f"stage failure: {msg}", file=sys.stderr)
        code = EXIT_INFEASIBLE if "infeasible" in msg else EXIT_SOLVER_LIMIT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        code = EXIT_IO
    sys.exit(code)


if __name__ == "__main__":
    main()
