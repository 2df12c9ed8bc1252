"""Two-stage scheduling protocol and sharing-ratio selection.

Stage one (pre-scheduling): the traffic operator minimizes total travel cost
alone; the resulting charging loads fix the benchmark dispatch cost.  Stage
two (re-scheduling): for each candidate sharing ratio the traffic operator
re-optimizes against the transfer of dispatch savings, with the dispatch
problem embedded through its optimality conditions.  The best ratio is the
one minimizing the distribution network's total cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dispatch import DispatchDecision, solve_dispatch
from .kkt import assemble_single_level, kkt_residuals
from .linearize import audit_big_m
from .milp import Model, solve_milp
from .traffic import (
    TrafficDecision,
    assemble_ue_block,
    extract_traffic,
    verify_wardrop,
)


class StageError(RuntimeError):
    """A protocol stage failed; message carries the stage label."""


@dataclass
class SolveOptions:
    segments: int | None = None     # delay-curve segments (None: instance default)
    cost_segments: int = 3          # generator cost supports
    gap: float = 1e-6
    node_limit: int | None = None
    time_limit: float | None = None
    wardrop_tol_scale: float = 1e-5
    audit_retries: int = 1          # enlarge-M retries after a dirty audit


@dataclass
class PreScheduleResult:
    gamma0: float
    eta0: float
    traffic: TrafficDecision
    dispatch: DispatchDecision
    loads_mw: np.ndarray
    wardrop: object = None


@dataclass
class SweepPoint:
    """Per-ratio record of the re-scheduling outcome and its accounting."""

    alpha: float
    gamma: float = float("nan")
    eta: float = float("nan")
    delta_eta: float = float("nan")    # eta0 - eta
    delta_gamma: float = float("nan")  # gamma - gamma0
    psi: float = float("nan")          # PDN total: eta + alpha delta_eta
    h: float = float("nan")            # TN total: gamma - alpha delta_eta
    overall: float = float("nan")      # psi + h
    tn_net_profit: float = float("nan")
    pdn_net_profit: float = float("nan")
    status: str = "pending"
    gap: float = float("nan")
    nodes: int = 0
    wall_seconds: float = 0.0
    traffic: TrafficDecision | None = None
    gen_output: np.ndarray | None = None   # generators then substation, MW
    gen_cost: np.ndarray | None = None
    eta_resolve: float = float("nan")      # oracle dispatch re-solve at fixed loads
    audits: dict = field(default_factory=dict)


def solve_tno(inst, pathset, options=None):
    """Solve the traffic operator's own problem: min travel cost under UE."""
    options = options or SolveOptions()
    model = Model("pre_schedule")
    ue = assemble_ue_block(model, inst, pathset, segments=options.segments)
    model.set_objective(dict(ue.gamma_expr))
    model.freeze()
    sol = solve_milp(model, gap_tol=options.gap,
                     node_limit=options.node_limit,
                     time_limit=options.time_limit)
    return sol, ue


def pre_schedule(inst, pathset, options=None):
    """Run the benchmark stage and return (Gamma0, eta0) with both decisions."""
    options = options or SolveOptions()
    sol, ue = solve_tno(inst, pathset, options)
    if sol.status not in ("optimal",):
        raise StageError(f"pre-scheduling (traffic): solver status {sol.status}")
    traffic = extract_traffic(sol, ue, inst, pathset)
    loads = traffic.p_evcs
    dispatch = solve_dispatch(inst, loads, options.cost_segments)
    if dispatch.status != "optimal":
        raise StageError(f"pre-scheduling (dispatch): solver status {dispatch.status}")
    tol = options.wardrop_tol_scale * max(1.0, abs(traffic.gamma))
    report = verify_wardrop(traffic, inst, pathset, tol=tol)
    return PreScheduleResult(
        gamma0=traffic.gamma, eta0=dispatch.eta, traffic=traffic,
        dispatch=dispatch, loads_mw=loads, wardrop=report,
    )


def _accounting(point, gamma0, eta0):
    point.delta_eta = eta0 - point.eta
    point.delta_gamma = point.gamma - gamma0
    point.psi = point.eta + point.alpha * point.delta_eta
    point.h = point.gamma - point.alpha * point.delta_eta
    point.overall = point.psi + point.h
    point.tn_net_profit = point.alpha * point.delta_eta - point.delta_gamma
    point.pdn_net_profit = (1.0 - point.alpha) * point.delta_eta


def re_schedule(inst, pathset, alpha, eta0, gamma0=None, options=None):
    """Solve the re-scheduling MILP at a fixed ratio and audit the point.

    A dirty big-M audit triggers one automatic retry with 10x enlarged M
    constants; points hitting solver limits are returned flagged rather
    than raised.
    """
    options = options or SolveOptions()
    point = SweepPoint(alpha=alpha)
    scale = 1.0
    for attempt in range(options.audit_retries + 1):
        sl = assemble_single_level(
            inst, pathset, alpha, eta0,
            segments=options.segments, cost_segments=options.cost_segments,
            bigm_scale=scale,
        )
        sol = solve_milp(sl.model, gap_tol=options.gap,
                         node_limit=options.node_limit,
                         time_limit=options.time_limit)
        point.status = sol.status
        point.gap = sol.gap
        point.nodes = sol.nodes
        point.wall_seconds += sol.wall_seconds
        if sol.status in ("infeasible", "unbounded", "iteration-limit"):
            return point
        traffic = extract_traffic(sol, sl.ue, inst, pathset)
        bigm = audit_big_m(sol.values, sl.pairs)
        if not bigm.clean and attempt < options.audit_retries:
            scale *= 10.0
            continue
        point.traffic = traffic
        point.gamma = traffic.gamma
        point.eta = sol.values[sl.dispatch_vars.eta]
        point.gen_output = np.array(
            [sol.values[n] for n in sl.dispatch_vars.p_units]
        )
        point.gen_cost = np.array(
            [sol.values[n] for n in sl.dispatch_vars.f_cost]
        )
        tol = options.wardrop_tol_scale * max(1.0, abs(traffic.gamma))
        wardrop = verify_wardrop(traffic, inst, pathset, tol=tol)
        residuals = kkt_residuals(sol.values, sl.kkt)
        oracle = solve_dispatch(inst, traffic.p_evcs, options.cost_segments)
        point.eta_resolve = oracle.eta
        point.audits = {
            "wardrop": wardrop,
            "bigm": bigm,
            "kkt": residuals,
            "strong_duality_gap": abs(residuals["dual_objective"] - point.eta),
        }
        if not bigm.clean:
            point.status = "bigm-suspect"
        break
    _accounting(point, gamma0 if gamma0 is not None else point.gamma, eta0)
    if gamma0 is None:
        point.delta_gamma = float("nan")
        point.h = float("nan")
        point.tn_net_profit = float("nan")
    return point


def default_alpha_grid(step=0.05):
    n = round(1.0 / step)
    return [round(i * step, 10) for i in range(n + 1)]


def sweep(inst, pathset, alpha_grid=None, options=None, pre=None):
    """Pre-schedule once, then re-schedule over the ratio grid.

    Grid values must be sorted, distinct and within [0, 1].  Per-point solver
    failures are recorded in the returned points; only a benchmark-stage
    failure aborts.
    """
    options = options or SolveOptions()
    grid = list(alpha_grid) if alpha_grid is not None else default_alpha_grid()
    if not grid:
        raise ValueError("empty sharing-ratio grid")
    if sorted(set(grid)) != grid:
        raise ValueError("sharing-ratio grid must be sorted and distinct")
    if grid[0] < 0.0 or grid[-1] > 1.0:
        raise ValueError("sharing-ratio grid values must lie in [0, 1]")
    if pre is None:
        pre = pre_schedule(inst, pathset, options)
    points = []
    for alpha in grid:
        try:
            points.append(
                re_schedule(inst, pathset, alpha, pre.eta0, pre.gamma0, options)
            )
        except Exception as exc:  # record, keep sweeping
            failed = SweepPoint(alpha=alpha, status=f"error: {exc}")
            points.append(failed)
    return pre, points


class SelectionError(RuntimeError):
    """No optimal sweep point to select the best ratio from."""


def select_alpha_star(points):
    """Ratio minimizing the distribution network's total cost.

    Only points solved to optimality participate; exact ties go to the
    smallest ratio (the power side keeps more when indifferent).
    """
    optimal = [p for p in points if p.status == "optimal"]
    if not optimal:
        raise SelectionError("no optimal sweep point available")
    best = min(optimal, key=lambda p: (p.psi, p.alpha))
    return best.alpha


@dataclass
class DiagnosticsReport:
    overall_nonincreasing: bool
    plateau_alpha: float | None
    local_generation_zero_on_plateau: bool | None
    notes: list = field(default_factory=list)


def diagnostics(points, rel_tol=1e-3, gen_tol=1e-3):
    """Describe the overall-cost trend and the savings plateau over the grid.

    The plateau is the longest grid suffix on which the dispatch savings stay
    within `rel_tol` (relative) of their final value; `plateau_alpha` is its
    first ratio.  Local generation counts as reaching zero when some plateau
    point has every non-substation unit at (near-)zero output.  Purely
    descriptive; nothing is asserted.
    """
    optimal = [p for p in points if p.status == "optimal"]
    if len(optimal) < 2:
        raise ValueError("need at least two optimal points")
    notes = []
    final = optimal[-1].delta_eta
    band = rel_tol * max(1.0, abs(final))
    plateau = None
    for p in optimal:
        if abs(p.delta_eta - final) <= band:
            if plateau is None:
                plateau = p.alpha
        else:
            plateau = None
    mono = True
    scale = max(1.0, max(abs(p.overall) for p in optimal))
    for prev, cur in zip(optimal[:-1], optimal[1:]):
        if cur.overall > prev.overall + 1e-6 * scale:
            mono = False
            notes.append(
                f"overall cost rises between ratios {prev.alpha:g} and {cur.alpha:g}"
            )
    gen_zero = None
    if plateau is not None:
        notes.append(f"savings plateau from ratio {plateau:g}")
        on_plateau = [p for p in optimal if p.alpha >= plateau and p.gen_output is not None]
        if on_plateau:
            local = min(float(np.max(p.gen_output[:-1], initial=0.0)) for p in on_plateau)
            gen_zero = local <= gen_tol * max(1.0, max(
                float(np.sum(p.gen_output)) for p in on_plateau))
            notes.append(f"smallest local-generation peak on plateau: {local:.6g} MW")
    return DiagnosticsReport(
        overall_nonincreasing=mono,
        plateau_alpha=plateau,
        local_generation_zero_on_plateau=gen_zero,
        notes=notes,
    )
