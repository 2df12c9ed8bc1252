"""Mechanical KKT derivation for LPs and the single-level re-scheduling MILP.

`derive_kkt` walks a canonical linear program (min c'v, equality rows,
inequality rows normalized to g <= 0, optional finite variable bounds) and
produces one stationarity identity per decision variable and one
complementarity pair per inequality.  Nothing is hand-coded per constraint
family; a structural report lets tests assert the derived system has the
expected shape per variable class.

`assemble_single_level` embeds the dispatch LP's KKT system, with charging
loads driven by the traffic side, into one MILP that prices the travel cost
against the shared dispatch savings at a fixed sharing ratio.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linearize
from .dispatch import assemble_dispatch_lp
from .milp import Model, ModelError
from .traffic import assemble_ue_block


class StructuralError(ValueError):
    """LP not in the canonical shape KKT derivation expects."""


@dataclass
class CompPair:
    """Complementarity 0 <= mu  perp  g <= 0 for one inequality row."""

    mu: str               # dual variable name
    row: str              # originating constraint name
    g_coeffs: dict        # g = coeffs . v + const  (normalized to <= 0)
    g_const: float


@dataclass
class KktSystem:
    """Stationarity and complementarity system of one LP."""

    duals_eq: list        # (dual name, row name, rhs, parameter coeffs)
    duals_ineq: list      # (dual name, row name, normalized rhs)
    stationarity: dict    # var -> (coeffs over dual names, objective coef)
    comp_pairs: list      # CompPair
    decision_vars: list

    def shape_report(self):
        """Row/pair counts for the structural cross-check."""
        return {
            "stationarity_rows": len(self.stationarity),
            "complementarity_pairs": len(self.comp_pairs),
            "equality_duals": len(self.duals_eq),
            "inequality_duals": len(self.duals_ineq),
        }


def derive_kkt(model, decision_vars=None):
    """Derive the KKT system of an LP, mechanically.

    Only `decision_vars` (default: all variables) get stationarity rows;
    other variables appearing in the rows are treated as parameters of the
    lower level.  Inequalities are normalized to ``g <= 0`` with ``mu >= 0``,
    and finite bounds on decision variables become bound inequalities.
    """
    if model.binary_names:
        raise StructuralError("KKT derivation needs a pure LP, found binaries")
    if decision_vars is None:
        decision_vars = [v.name for v in model.variables]
    decision = set(decision_vars)
    for name in decision:
        if not model.has_var(name):
            raise StructuralError(f"unknown decision variable {name!r}")
    stationarity = {
        v: ({}, model.objective.get(v, 0.0)) for v in decision_vars
    }
    duals_eq, duals_ineq, comp_pairs = [], [], []

    def add_ineq(row_name, coeffs, const):
        mu = f"mu[{row_name}]"
        duals_ineq.append((mu, row_name, -const))
        comp_pairs.append(CompPair(mu, row_name, dict(coeffs), const))
        for v, coef in coeffs.items():
            if v in decision:
                stationarity[v][0][mu] = stationarity[v][0].get(mu, 0.0) + coef

    for con in model.constraints:
        if not con.coeffs:
            raise StructuralError(f"constraint {con.name!r} has no coefficients")
        if con.sense == "=":
            lam = f"lam[{con.name}]"
            params_c = {v: c for v, c in con.coeffs.items() if v not in decision}
            duals_eq.append((lam, con.name, con.rhs, params_c))
            for v, coef in con.coeffs.items():
                if v in decision:
                    stationarity[v][0][lam] = stationarity[v][0].get(lam, 0.0) + coef
        elif con.sense == "<=":
            add_ineq(con.name, con.coeffs, -con.rhs)
        else:  # ">=" : rhs - a.v <= 0
            add_ineq(con.name, {v: -c for v, c in con.coeffs.items()}, con.rhs)

    for name in decision_vars:
        lb, ub = model.var_bounds(name)
        if np.isfinite(lb):
            add_ineq(f"lb[{name}]", {name: -1.0}, lb)
        if np.isfinite(ub):
            add_ineq(f"ub[{name}]", {name: 1.0}, -ub)
    return KktSystem(duals_eq, duals_ineq, stationarity, comp_pairs, list(decision_vars))


def kkt_residuals(values, kkt):
    """Residual audit of a solved point carrying primal and dual values.

    Returns max stationarity residual, max complementarity residual
    min(mu, -g), max dual-feasibility violation, and the strong-duality gap
    |primal - dual| (absolute).
    """
    decision = set(kkt.decision_vars)
    stat = 0.0
    for var, (coeffs, c) in kkt.stationarity.items():
        resid = c + sum(coef * values[d] for d, coef in coeffs.items())
        stat = max(stat, abs(resid))
    comp = 0.0
    dual_feas = 0.0
    mu_h = 0.0
    for pair in kkt.comp_pairs:
        mu = values[pair.mu]
        g = pair.g_const + sum(c * values[v] for v, c in pair.g_coeffs.items())
        dual_feas = max(dual_feas, -mu, g)
        comp = max(comp, min(max(mu, 0.0), max(-g, 0.0)))
        # effective bound: constants plus parameter (non-decision) terms
        h_eff = -pair.g_const - sum(
            c * values[v] for v, c in pair.g_coeffs.items() if v not in decision
        )
        mu_h += mu * h_eff
    lam_b = 0.0
    for lam, _, rhs, params_c in kkt.duals_eq:
        b_eff = rhs - sum(c * values[v] for v, c in params_c.items())
        lam_b += values[lam] * b_eff
    dual_obj = -(lam_b + mu_h)
    return {
        "stationarity": stat,
        "complementarity": comp,
        "dual_feasibility": dual_feas,
        "dual_objective": dual_obj,
    }


@dataclass
class SingleLevelModel:
    """Assembled re-scheduling MILP plus the maps needed for extraction."""

    model: Model
    ue: object                  # UeBlock
    dispatch_vars: object       # DispatchVars
    kkt: KktSystem
    pairs: list                 # all BigMPair (UE + KKT) for auditing
    alpha: float
    eta0: float
    boxes: dict


def assemble_single_level(inst, pathset, alpha, eta0, *, segments=None,
                          cost_segments=3, dual_cap=None, bigm_scale=1.0):
    """Build the single-level re-scheduling MILP for a fixed sharing ratio.

    Objective: travel cost minus the shared dispatch savings,
    ``Gamma - alpha (eta0 - eta)``.  The dispatch problem enters through its
    mechanically derived KKT system with the station charging loads tied to
    the traffic-side station flows; every complementarity (equilibrium and
    dispatch optimality) is big-M gated with per-pair interval-derived M
    values, scalable by `bigm_scale` for the enlarge-and-retry path.
    """
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"sharing ratio {alpha} outside [0, 1]")
    params = inst.params
    cap = (dual_cap if dual_cap is not None else params.bigm_dual_cap) * bigm_scale
    safety = params.bigm_safety

    model = Model(f"single_level[alpha={alpha:g}]")
    ue = assemble_ue_block(model, inst, pathset, segments=segments)

    lower, dvars = assemble_dispatch_lp(inst, charging_loads=None, j_seg=cost_segments)
    kkt = derive_kkt(
        lower,
        decision_vars=[dvars.eta, *dvars.f_cost, *dvars.p_units,
                       *dvars.p_line, *dvars.theta],
    )

    boxes = dict(ue.boxes)
    boxes.update(dvars.boxes)
    # primal dispatch variables, boxed for big-M estimation and LP tightness
    for v in lower.variables:
        lo, hi = dvars.boxes[v.name]
        model.add_var(v.name, lb=lo, ub=hi)
    for con in lower.constraints:
        model.add_constr(con.name, con.coeffs, con.sense, con.rhs)
    # station loads on the power side follow the traffic-side station flows
    for pevcs, tload in zip(dvars.p_evcs, ue.p_evcs):
        model.add_constr(f"link[{pevcs}]", {pevcs: 1.0, tload: -1.0}, "=", 0.0)

    # dual variables
    for lam, _, _, _ in kkt.duals_eq:
        model.add_var(lam, lb=-cap, ub=cap)
        boxes[lam] = (-cap, cap)
    for mu, _, _ in kkt.duals_ineq:
        model.add_var(mu, lb=0.0, ub=cap)
        boxes[mu] = (0.0, cap)
    # stationarity identities
    for var, (coeffs, c) in kkt.stationarity.items():
        model.add_constr(f"stat[{var}]", dict(coeffs), "=", -c)

    # big-M gating of dispatch complementarity
    pairs = list(ue.pairs)
    for pair in kkt.comp_pairs:
        neg_g = {v: -c for v, c in pair.g_coeffs.items()}
        m_g = linearize.estimate_big_m(neg_g, -pair.g_const, boxes, safety) * bigm_scale
        bpair = linearize.BigMPair(
            name=f"kkt[{pair.row}]",
            f_coeffs={pair.mu: 1.0},
            f_const=0.0,
            g_coeffs=neg_g,
            g_const=-pair.g_const,
            m_f=safety * cap,
            m_g=m_g,
        )
        linearize.big_m_linearize(model, bpair)
        pairs.append(bpair)

    objective = dict(ue.gamma_expr)
    objective[dvars.eta] = objective.get(dvars.eta, 0.0) + alpha
    model.set_objective(objective, offset=-alpha * eta0)
    model.freeze()
    return SingleLevelModel(
        model=model, ue=ue, dispatch_vars=dvars, kkt=kkt, pairs=pairs,
        alpha=alpha, eta0=eta0, boxes=boxes,
    )
