"""Tolled user-equilibrium constraint system and traffic-side evaluation.

Builds, into a generic `Model`, the demand balance, incidence, capacity,
linearized delay, cost composition and Wardrop complementarity constraints
over the decision fields of `TrafficDecision`, together with the total
travel cost expression minimized by the traffic operator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linearize
from .linearize import BigMPair, DomainError
from .network import incidence

MIN_PER_H = 60.0


def bpr_time(x, road):
    """Road travel time in hours at flow x (quartic congestion curve)."""
    if x < 0:
        raise ValueError(f"negative flow {x} on road {road.id}")
    factor = 1.0 + 0.15 * (x / road.capacity) ** 4
    return road.free_flow_time * factor / MIN_PER_H


def davidson_time(y, station, j_coef, fraction=0.95):
    """Station service time in hours at flow y (queuing delay curve).

    Valid on 0 <= y <= fraction * capacity; the curve is singular at
    capacity, so flows above the domain bound are rejected.
    """
    if y < 0:
        raise ValueError(f"negative flow {y} at EVCS {station.id}")
    if y > fraction * station.capacity:
        raise DomainError(
            f"EVCS {station.id}: flow {y} above domain bound "
            f"{fraction * station.capacity}"
        )
    factor = 1.0 + j_coef * y / (station.capacity - y)
    return station.base_service_time * factor / MIN_PER_H


def charging_load(y, params):
    """Convert station flows (p.u.) to charging loads (MW), componentwise."""
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise ValueError("negative station flow")
    return y * params.load_mw_per_pu


@dataclass
class TrafficDecision:
    """Equilibrium traffic quantities extracted from a solved model.

    Arrays follow instance ordering (roads, EVCSs, path alternatives); O-D
    optimal costs are keyed by (od_id, vclass).
    """

    x: np.ndarray          # total road flows, p.u.
    x_gv: np.ndarray
    x_ev: np.ndarray
    y: np.ndarray          # station flows, p.u.
    f: np.ndarray          # per-alternative flows, pathset order
    t_road: np.ndarray     # hours
    t_evcs: np.ndarray
    c_road: np.ndarray     # CNY
    c_evcs: np.ndarray
    c_path: np.ndarray
    toll_road: np.ndarray  # CNY
    toll_evcs: np.ndarray
    u: dict                # (od_id, vclass) -> CNY
    p_evcs: np.ndarray     # MW
    gamma: float           # total travel cost, CNY/h


@dataclass
class UeBlock:
    """Names and metadata of everything assemble_ue_block added to a model."""

    f: list               # alt var names, pathset order
    x: list
    x_gv: list
    x_ev: list
    y: list
    t_road: list
    t_evcs: list
    c_road: list
    c_evcs: list
    c_path: list
    toll_road: list
    toll_evcs: list
    u: dict               # (od_id, vclass) -> var name
    p_evcs: list
    gamma_expr: dict      # objective coefficients for the travel cost
    pairs: list = field(default_factory=list)  # BigMPair, UE complementarity
    boxes: dict = field(default_factory=dict)  # var -> (lb, ub) for big-M
    n_vars: int = 0
    n_constrs: int = 0
    toll_max: float = 0.0


def default_toll_max(inst, pathset):
    """Toll cap: 10 x omega x longest free-flow route time (hours)."""
    tmax_h = max((a.free_flow_time for a in pathset.alts), default=1.0) / MIN_PER_H
    return 10.0 * inst.params.omega * max(tmax_h, 1e-6)


def assemble_ue_block(model, inst, pathset, segments=None):
    """Emit the tolled user-equilibrium block into `model`.

    Complementarity pairs (used-path cost equals the O-D optimal cost) are
    big-M linearized immediately; the returned block carries them for the
    post-solve audit, plus the travel-cost expression to minimize.
    """
    params = inst.params
    n_seg = segments if segments is not None else params.pwl_segments
    frac = params.davidson_fraction
    omega = params.omega
    v0 = len(model.variables)
    c0 = len(model.constraints)
    inc = incidence(inst, pathset)
    toll_max = params.toll_max if params.toll_max is not None else default_toll_max(inst, pathset)
    boxes = {}

    def var(name, lb, ub, kind="continuous"):
        model.add_var(name, lb=lb, ub=ub, kind=kind)
        boxes[name] = (lb, ub)
        return name

    # per-road variables and linearized delay curve
    x_names, xg_names, xe_names, tr_names, cr_names, tollr_names = [], [], [], [], [], []
    for r in inst.roads:
        t_lo, t_hi = bpr_time(0.0, r), bpr_time(r.capacity, r)
        x_names.append(var(f"tn.x[{r.id}]", 0.0, r.capacity))
        xg_names.append(var(f"tn.x_gv[{r.id}]", 0.0, r.capacity))
        xe_names.append(var(f"tn.x_ev[{r.id}]", 0.0, r.capacity))
        tr_names.append(var(f"tn.t_road[{r.id}]", t_lo, t_hi))
        tollr_names.append(var(f"tn.toll_r[{r.id}]", 0.0, toll_max))
        cr_names.append(
            var(f"tn.c_road[{r.id}]", omega * t_lo, omega * t_hi + toll_max)
        )
        curve = linearize.build_pwl(
            lambda q, road=r: bpr_time(q, road), r.capacity, n_seg, entity=r.id
        )
        fill = linearize.encode_fill_order(model, curve, f"tn.road[{r.id}]")
        for dx in fill.dx:
            boxes[dx] = (0.0, curve.dx_max)
        # x = sum dx_j   (fill reconstruction)
        coeffs = {dx: 1.0 for dx in fill.dx}
        coeffs[x_names[-1]] = -1.0
        model.add_constr(f"tn.fill_x[{r.id}]", coeffs, "=", 0.0)
        # t = t0 + sum k_j dx_j
        coeffs = {dx: k for dx, k in zip(fill.dx, curve.slopes)}
        coeffs[tr_names[-1]] = -1.0
        model.add_constr(f"tn.time_road[{r.id}]", coeffs, "=", -curve.f0)
        # road cost = omega t + toll
        model.add_constr(
            f"tn.cost_road[{r.id}]",
            {cr_names[-1]: 1.0, tr_names[-1]: -omega, tollr_names[-1]: -1.0},
            "=",
            0.0,
        )

    # per-station variables, linearized queue curve and charging load coupling
    y_names, te_names, ce_names, tolle_names, p_names = [], [], [], [], []
    for m in inst.evcs:
        y_hi = frac * m.capacity
        t_lo = davidson_time(0.0, m, params.davidson_j, frac)
        t_hi = davidson_time(y_hi, m, params.davidson_j, frac)
        fee = m.charging_price * params.ev_charge_kwh
        y_names.append(var(f"tn.y[{m.id}]", 0.0, y_hi))
        te_names.append(var(f"tn.t_evcs[{m.id}]", t_lo, t_hi))
        tolle_names.append(var(f"tn.toll_e[{m.id}]", 0.0, toll_max))
        ce_names.append(
            var(f"tn.c_evcs[{m.id}]", omega * t_lo + fee, omega * t_hi + fee + toll_max)
        )
        p_names.append(var(f"tn.p_evcs[{m.id}]", 0.0, y_hi * params.load_mw_per_pu))
        curve = linearize.build_pwl(
            lambda q, st=m: davidson_time(q, st, params.davidson_j, frac),
            y_hi, n_seg, entity=m.id
        )
        fill = linearize.encode_fill_order(model, curve, f"tn.evcs[{m.id}]")
        for dx in fill.dx:
            boxes[dx] = (0.0, curve.dx_max)
        coeffs = {dx: 1.0 for dx in fill.dx}
        coeffs[y_names[-1]] = -1.0
        model.add_constr(f"tn.fill_y[{m.id}]", coeffs, "=", 0.0)
        coeffs = {dx: k for dx, k in zip(fill.dx, curve.slopes)}
        coeffs[te_names[-1]] = -1.0
        model.add_constr(f"tn.time_evcs[{m.id}]", coeffs, "=", -curve.f0)
        model.add_constr(
            f"tn.cost_evcs[{m.id}]",
            {ce_names[-1]: 1.0, te_names[-1]: -omega, tolle_names[-1]: -1.0},
            "=",
            fee,
        )
        model.add_constr(
            f"tn.load[{m.id}]",
            {p_names[-1]: 1.0, y_names[-1]: -params.load_mw_per_pu},
            "=",
            0.0,
        )

    # path alternatives: flows, costs and per-class demand
    od_by_id = {od.id: od for od in inst.od_pairs}
    f_names, cp_names = [], []
    cp_lo, cp_ub = [], []
    for alt in pathset.alts:
        od = od_by_id[alt.od_id]
        demand = od.gv_demand if alt.vclass == "GV" else od.ev_demand
        f_names.append(var(f"tn.f[{alt.id}]", 0.0, demand))
        lo = sum(model.var_bounds(cr_names[inc["road_ix"][rid]])[0] for rid in alt.roads)
        hi = sum(model.var_bounds(cr_names[inc["road_ix"][rid]])[1] for rid in alt.roads)
        if alt.evcs is not None:
            s_lo, s_hi = model.var_bounds(ce_names[inc["evcs_ix"][alt.evcs]])
            lo, hi = lo + s_lo, hi + s_hi
        cp_names.append(var(f"tn.c_path[{alt.id}]", lo, hi))
        cp_lo.append(lo)
        cp_ub.append(hi)
        coeffs = {cp_names[-1]: 1.0}
        for rid in alt.roads:
            name = cr_names[inc["road_ix"][rid]]
            coeffs[name] = coeffs.get(name, 0.0) - 1.0
        if alt.evcs is not None:
            coeffs[ce_names[inc["evcs_ix"][alt.evcs]]] = -1.0
        model.add_constr(f"tn.cost_path[{alt.id}]", coeffs, "=", 0.0)

    # O-D optimal costs; classes without demand get no cost variable (their
    # alternative flows are already fixed at zero by their bounds).  The
    # optimal cost is a minimum over members, so both of its bounds come
    # from the cheapest member box.
    u_names = {}
    for od in inst.od_pairs:
        for vclass, demand in (("GV", od.gv_demand), ("EV", od.ev_demand)):
            members = [j for j, a in enumerate(pathset.alts)
                       if a.od_id == od.id and a.vclass == vclass]
            if not members or demand <= 0.0:
                continue
            u_lo = min(cp_lo[j] for j in members)
            u_hi = min(cp_ub[j] for j in members)
            u_names[(od.id, vclass)] = var(f"tn.u[{od.id}.{vclass}]", u_lo, u_hi)

    # demand balance per O-D pair and class
    for od in inst.od_pairs:
        for vclass, demand in (("GV", od.gv_demand), ("EV", od.ev_demand)):
            members = [j for j, a in enumerate(pathset.alts)
                       if a.od_id == od.id and a.vclass == vclass]
            if not members or demand <= 0.0:
                continue
            model.add_constr(
                f"tn.demand[{od.id}.{vclass}]",
                {f_names[j]: 1.0 for j in members},
                "=",
                demand,
            )

    # road / station incidence
    delta = inc["delta"]
    for i, r in enumerate(inst.roads):
        for cls, xname in (("GV", xg_names[i]), ("EV", xe_names[i])):
            coeffs = {xname: 1.0}
            for j, a in enumerate(pathset.alts):
                if a.vclass == cls and delta[i, j]:
                    coeffs[f_names[j]] = -delta[i, j]
            model.add_constr(f"tn.road_{cls.lower()}[{r.id}]", coeffs, "=", 0.0)
        model.add_constr(
            f"tn.road_sum[{r.id}]",
            {x_names[i]: 1.0, xg_names[i]: -1.0, xe_names[i]: -1.0},
            "=",
            0.0,
        )
    gam = inc["gam"]
    for i, m in enumerate(inst.evcs):
        coeffs = {y_names[i]: 1.0}
        for j, a in enumerate(pathset.alts):
            if gam[i, j]:
                coeffs[f_names[j]] = -1.0
        model.add_constr(f"tn.station_sum[{m.id}]", coeffs, "=", 0.0)

    # Wardrop complementarity: flow on an alternative only at minimal cost
    pairs = []
    for j, alt in enumerate(pathset.alts):
        u_name = u_names.get((alt.od_id, alt.vclass))
        if u_name is None:  # zero-demand class, flow fixed at zero
            continue
        f_ub = model.var_bounds(f_names[j])[1]
        g_coeffs = {cp_names[j]: 1.0, u_name: -1.0}
        m_g = linearize.estimate_big_m(g_coeffs, 0.0, boxes, params.bigm_safety)
        pair = BigMPair(
            name=f"tn.ue[{alt.id}]",
            f_coeffs={f_names[j]: 1.0},
            f_const=0.0,
            g_coeffs=g_coeffs,
            g_const=0.0,
            m_f=params.bigm_safety * max(f_ub, 1e-9),
            m_g=m_g,
        )
        linearize.big_m_linearize(model, pair)
        pairs.append(pair)

    gamma_expr = {}
    for (od_id, vclass), name in u_names.items():
        od = od_by_id[od_id]
        demand = od.gv_demand if vclass == "GV" else od.ev_demand
        if demand:
            gamma_expr[name] = demand

    return UeBlock(
        f=f_names, x=x_names, x_gv=xg_names, x_ev=xe_names, y=y_names,
        t_road=tr_names, t_evcs=te_names, c_road=cr_names, c_evcs=ce_names,
        c_path=cp_names, toll_road=tollr_names, toll_evcs=tolle_names,
        u=u_names, p_evcs=p_names, gamma_expr=gamma_expr, pairs=pairs,
        boxes=boxes,
        n_vars=len(model.variables) - v0,
        n_constrs=len(model.constraints) - c0,
        toll_max=toll_max,
    )


def extract_traffic(solution, block, inst, pathset):
    """Populate a TrafficDecision from a solved model's values."""
    val = solution.values

    def arr(names):
        return np.array([val[n] for n in names])

    u = {key: val[name] for key, name in block.u.items()}
    od_by_id = {od.id: od for od in inst.od_pairs}
    gamma = 0.0
    for (od_id, vclass), cost in u.items():
        od = od_by_id[od_id]
        demand = od.gv_demand if vclass == "GV" else od.ev_demand
        gamma += cost * demand
    return TrafficDecision(
        x=arr(block.x), x_gv=arr(block.x_gv), x_ev=arr(block.x_ev),
        y=arr(block.y), f=arr(block.f),
        t_road=arr(block.t_road), t_evcs=arr(block.t_evcs),
        c_road=arr(block.c_road), c_evcs=arr(block.c_evcs),
        c_path=arr(block.c_path),
        toll_road=arr(block.toll_road), toll_evcs=arr(block.toll_evcs),
        u=u, p_evcs=arr(block.p_evcs), gamma=gamma,
    )


@dataclass
class WardropReport:
    passed: bool
    violations: list
    identity_residual: float
    max_comp_residual: float


def verify_wardrop(decision, inst, pathset, tol=1e-6):
    """Check Wardrop conditions and the travel-cost identity on a solution.

    Path costs are recomputed from the per-road / per-station cost fields
    (independent of the model's path-cost variables).  Violations are
    reported, never raised.
    """
    inc = incidence(inst, pathset)
    od_by_id = {od.id: od for od in inst.od_pairs}
    violations = []
    max_comp = 0.0
    for j, alt in enumerate(pathset.alts):
        if (alt.od_id, alt.vclass) not in decision.u:
            continue  # zero-demand class, no equilibrium condition
        cost = sum(decision.c_road[inc["road_ix"][rid]] for rid in alt.roads)
        if alt.evcs is not None:
            cost += decision.c_evcs[inc["evcs_ix"][alt.evcs]]
        u = decision.u[(alt.od_id, alt.vclass)]
        slack = cost - u
        if slack < -tol:
            violations.append(
                f"alternative {alt.id}: cost {cost:.6g} below optimal cost {u:.6g}"
            )
        flow = decision.f[j]
        max_comp = max(max_comp, min(max(flow, 0.0), max(slack, 0.0)))
        if flow > tol and abs(slack) > tol:
            violations.append(
                f"alternative {alt.id}: flow {flow:.6g} on non-minimal path "
                f"(cost {cost:.6g}, optimal {u:.6g})"
            )
    lhs = float(decision.c_road @ decision.x + decision.c_evcs @ decision.y)
    rhs = 0.0
    for (od_id, vclass), u in decision.u.items():
        od = od_by_id[od_id]
        demand = od.gv_demand if vclass == "GV" else od.ev_demand
        rhs += u * demand
    identity = abs(lhs - rhs)
    if identity > tol * max(1.0, abs(rhs)):
        violations.append(
            f"travel-cost identity violated: {lhs:.8g} vs {rhs:.8g}"
        )
    return WardropReport(
        passed=not violations,
        violations=violations,
        identity_residual=identity,
        max_comp_residual=max_comp,
    )
