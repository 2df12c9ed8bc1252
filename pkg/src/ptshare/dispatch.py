"""Distribution-network economic dispatch as a linear program.

The quadratic generator fuel costs enter through epigraph variables bounded
below by chord supports; substation purchases are priced linearly.  The LP
can be solved standalone (benchmark stage, oracle re-solves) or embedded in
the single-level re-scheduling model via its optimality conditions.

Generator fixed cost is always incurred (no commitment variable): the cost
supports intercept at the fixed cost, so output 0 still pays it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .milp import INF, Model, solve_lp


@dataclass(frozen=True)
class CostSegment:
    slope: float      # CNY/MWh
    intercept: float  # CNY/h


def _quad(gen, p):
    return gen.cost_a * p * p + gen.cost_b * p + gen.cost_c


def cost_pwl(gen, j_seg=3):
    """Chord supports of the quadratic fuel cost over [p_min, p_max].

    Chords touch the curve at the knots and lie above it in between, so the
    epigraph variable never undercuts the true cost.  A degenerate range
    collapses to a single fixed-cost segment.
    """
    if gen.cost_a < 0:
        raise ValueError(f"generator {gen.id}: negative quadratic coefficient")
    if j_seg < 1:
        raise ValueError("need at least one cost segment")
    if gen.p_min == gen.p_max:
        return [CostSegment(0.0, _quad(gen, gen.p_min))]
    if gen.cost_a == 0.0:
        return [CostSegment(gen.cost_b, gen.cost_c)]
    knots = np.linspace(gen.p_min, gen.p_max, j_seg + 1)
    vals = np.array([_quad(gen, p) for p in knots])
    segments = []
    for j in range(j_seg):
        slope = (vals[j + 1] - vals[j]) / (knots[j + 1] - knots[j])
        segments.append(CostSegment(float(slope), float(vals[j] - slope * knots[j])))
    return segments


def pwl_cost_value(segments, p):
    """Max over supports; the epigraph value the LP assigns at output p."""
    return max(s.slope * p + s.intercept for s in segments)


def _support_range(segments, lo, hi):
    """Exact range of the support maximum over [lo, hi].

    The maximum of affine supports is convex piecewise linear; its extrema
    lie at the interval endpoints or at crossings of support pairs.
    """
    candidates = [lo, hi]
    for i, a in enumerate(segments):
        for b in segments[i + 1:]:
            if a.slope != b.slope:
                p = (b.intercept - a.intercept) / (a.slope - b.slope)
                if lo < p < hi:
                    candidates.append(p)
    vals = [pwl_cost_value(segments, p) for p in candidates]
    return min(vals), max(vals)


@dataclass
class DispatchDecision:
    """Solved dispatch point, arrays in instance ordering (units then sub)."""

    p_gen: np.ndarray    # MW, generators
    p_sub: float         # MW, substation import
    f_cost: np.ndarray   # CNY/h epigraph values, generators then substation
    p_line: np.ndarray   # MW
    theta: np.ndarray    # rad
    eta: float           # CNY/h
    status: str = "optimal"


@dataclass
class DispatchVars:
    """Variable names of one dispatch LP, plus big-M boxes for embedding."""

    eta: str
    f_cost: list     # generators then substation
    p_units: list    # generators then substation
    p_line: list
    theta: list
    p_evcs: list     # empty when loads entered as fixed parameters
    boxes: dict
    unit_ids: list
    segments: list   # list of CostSegment lists, aligned with units


def assemble_dispatch_lp(inst, charging_loads=None, j_seg=3, prefix="pd"):
    """Build the dispatch LP.

    `charging_loads` (MW per EVCS, instance order) folds the coupling into
    the bus-balance right-hand sides; passing None instead creates one load
    variable per EVCS so the traffic side can drive them (single-level use).
    All operating limits are explicit rows (not variable bounds) so the
    optimality conditions derived from this model carry one multiplier per
    limit; `boxes` carries the equivalent intervals for big-M estimation.
    """
    params = inst.params
    model = Model(f"{prefix}.dispatch")
    boxes = {}

    def var(name, lo, hi):
        model.add_var(name, lb=-INF, ub=INF)
        boxes[name] = (lo, hi)
        return name

    units = list(inst.generators) + [inst.substation]
    unit_ids = [g.id for g in inst.generators] + ["substation"]
    seg_lists = [cost_pwl(g, j_seg) for g in inst.generators]
    seg_lists.append([CostSegment(inst.substation.energy_price, 0.0)])
    p_los = [g.p_min for g in inst.generators] + [inst.substation.p_min]
    p_his = [g.p_max for g in inst.generators] + [inst.substation.p_max]

    f_names, p_names = [], []
    for uid, segs, lo, hi in zip(unit_ids, seg_lists, p_los, p_his):
        f_lo, f_hi = _support_range(segs, lo, hi)
        f_names.append(var(f"{prefix}.F[{uid}]", f_lo, f_hi))
        p_names.append(var(f"{prefix}.P[{uid}]", lo, hi))
    eta_name = var(
        f"{prefix}.eta",
        sum(boxes[f][0] for f in f_names),
        sum(boxes[f][1] for f in f_names),
    )
    line_names = [
        var(f"{prefix}.Pl[{ln.id}]", -ln.flow_limit, ln.flow_limit) for ln in inst.lines
    ]
    theta_names = [
        var(f"{prefix}.theta[{b.id}]", b.angle_min, b.angle_max) for b in inst.buses
    ]

    p_evcs_names = []
    if charging_loads is None:
        for m in inst.evcs:
            hi = params.davidson_fraction * m.capacity * params.load_mw_per_pu
            p_evcs_names.append(var(f"{prefix}.Pevcs[{m.id}]", 0.0, hi))
        loads = None
    else:
        loads = np.asarray(charging_loads, dtype=float)
        if loads.shape != (len(inst.evcs),):
            raise ValueError("need one charging load per EVCS")
        if np.any(loads < 0):
            raise ValueError("charging loads must be nonnegative")

    # total-cost linkage and epigraph supports
    coeffs = {eta_name: 1.0}
    coeffs.update({f: -1.0 for f in f_names})
    model.add_constr(f"{prefix}.eta_def", coeffs, "=", 0.0)
    for f, p, segs, uid in zip(f_names, p_names, seg_lists, unit_ids):
        for j, seg in enumerate(segs):
            model.add_constr(
                f"{prefix}.support[{uid},{j}]",
                {f: -1.0, p: seg.slope},
                "<=",
                -seg.intercept,
            )

    # bus balance: generation minus load equals net line outflow
    bus_ix = {b.id: i for i, b in enumerate(inst.buses)}
    out_lines = {b.id: [] for b in inst.buses}
    in_lines = {b.id: [] for b in inst.buses}
    for name, ln in zip(line_names, inst.lines):
        out_lines[ln.from_bus].append(name)
        in_lines[ln.to_bus].append(name)
    units_at = {b.id: [] for b in inst.buses}
    for name, unit in zip(p_names, units):
        units_at[unit.bus].append(name)
    evcs_at = {b.id: [] for b in inst.buses}
    for i, m in enumerate(inst.evcs):
        evcs_at[m.bus].append(i)
    for b in inst.buses:
        coeffs = {}
        for name in units_at[b.id]:
            coeffs[name] = 1.0
        for name in out_lines[b.id]:
            coeffs[name] = coeffs.get(name, 0.0) - 1.0
        for name in in_lines[b.id]:
            coeffs[name] = coeffs.get(name, 0.0) + 1.0
        rhs = b.traditional_demand
        for i in evcs_at[b.id]:
            if loads is None:
                coeffs[p_evcs_names[i]] = coeffs.get(p_evcs_names[i], 0.0) - 1.0
            else:
                rhs += loads[i]
        model.add_constr(f"{prefix}.balance[{b.id}]", coeffs, "=", rhs)

    # DC flow law, scaled to MW so multipliers stay price-sized
    for name, ln in zip(line_names, inst.lines):
        k = params.power_base / ln.reactance
        model.add_constr(
            f"{prefix}.dcflow[{ln.id}]",
            {
                name: 1.0,
                theta_names[bus_ix[ln.from_bus]]: -k,
                theta_names[bus_ix[ln.to_bus]]: k,
            },
            "=",
            0.0,
        )

    # operating limits as rows (one multiplier each)
    for name, lo, hi, uid in zip(p_names, p_los, p_his, unit_ids):
        model.add_constr(f"{prefix}.p_lo[{uid}]", {name: -1.0}, "<=", -lo)
        model.add_constr(f"{prefix}.p_hi[{uid}]", {name: 1.0}, "<=", hi)
    for name, ln in zip(line_names, inst.lines):
        model.add_constr(f"{prefix}.l_lo[{ln.id}]", {name: -1.0}, "<=", ln.flow_limit)
        model.add_constr(f"{prefix}.l_hi[{ln.id}]", {name: 1.0}, "<=", ln.flow_limit)
    for name, b in zip(theta_names, inst.buses):
        model.add_constr(f"{prefix}.th_lo[{b.id}]", {name: -1.0}, "<=", -b.angle_min)
        model.add_constr(f"{prefix}.th_hi[{b.id}]", {name: 1.0}, "<=", b.angle_max)

    # substation bus is the angle reference
    model.add_constr(
        f"{prefix}.slack",
        {theta_names[bus_ix[inst.substation.bus]]: 1.0},
        "=",
        0.0,
    )
    model.set_objective({eta_name: 1.0})
    varmap = DispatchVars(
        eta=eta_name, f_cost=f_names, p_units=p_names, p_line=line_names,
        theta=theta_names, p_evcs=p_evcs_names, boxes=boxes,
        unit_ids=unit_ids, segments=seg_lists,
    )
    return model, varmap


def extract_dispatch(solution, varmap, n_gens):
    val = solution.values
    p_units = np.array([val[n] for n in varmap.p_units])
    return DispatchDecision(
        p_gen=p_units[:n_gens],
        p_sub=float(p_units[n_gens]),
        f_cost=np.array([val[n] for n in varmap.f_cost]),
        p_line=np.array([val[n] for n in varmap.p_line]),
        theta=np.array([val[n] for n in varmap.theta]),
        eta=float(val[varmap.eta]),
        status=solution.status,
    )


def solve_dispatch(inst, charging_loads, j_seg=3):
    """Solve the dispatch LP at fixed charging loads."""
    model, varmap = assemble_dispatch_lp(inst, charging_loads, j_seg)
    sol = solve_lp(model.freeze())
    if sol.status != "optimal":
        return DispatchDecision(
            p_gen=np.zeros(len(inst.generators)), p_sub=0.0,
            f_cost=np.zeros(len(inst.generators) + 1),
            p_line=np.zeros(len(inst.lines)), theta=np.zeros(len(inst.buses)),
            eta=float("nan"), status=sol.status,
        )
    return extract_dispatch(sol, varmap, len(inst.generators))
