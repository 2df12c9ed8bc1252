"""Linear-model intermediate representation, LP/MILP solving and MPS export.

The `Model` class is a plain container for variables, linear constraints and
a linear minimization objective.  Solving is delegated to the HiGHS solvers
shipped with scipy (`linprog` for LPs, `scipy.optimize.milp` for MILPs); a
brute-force enumerator over binary assignments is kept as an independent
oracle for tests.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, linprog
from scipy.optimize import milp as _highs_milp

INF = float("inf")

#: feasibility / optimality tolerances requested from the LP backend
FEAS_TOL = 1e-9
OPT_TOL = 1e-9


class ModelError(ValueError):
    """Raised for malformed models (duplicate names, bad bounds, ...)."""


class SolverError(RuntimeError):
    """Raised when the backend fails for a reason other than infeasibility."""


@dataclass(frozen=True)
class Variable:
    name: str
    lb: float
    ub: float
    kind: str = "continuous"  # "continuous" | "binary"


@dataclass(frozen=True)
class Constraint:
    name: str
    coeffs: dict
    sense: str  # "<=" | "=" | ">="
    rhs: float


@dataclass
class Solution:
    """Result of an LP or MILP solve."""

    status: str  # optimal | infeasible | unbounded | gap-limit | iteration-limit
    values: dict
    objective: float | None
    gap: float = 0.0
    nodes: int = 0
    wall_seconds: float = 0.0

    def __getitem__(self, name):
        return self.values[name]

    @property
    def is_optimal(self):
        return self.status == "optimal"


class Model:
    """Mutable builder for a linear minimization model.

    Variable and constraint insertion order is preserved and defines the
    deterministic column/row order used by the solvers and the MPS writer.
    """

    def __init__(self, name="model"):
        self.name = name
        self.variables: list[Variable] = []
        self.constraints: list[Constraint] = []
        self.objective: dict = {}
        self.objective_offset: float = 0.0
        self._var_index: dict = {}
        self._con_names: set = set()
        self._frozen = False

    # -- construction ------------------------------------------------------

    def add_var(self, name, lb=0.0, ub=INF, kind="continuous"):
        if self._frozen:
            raise ModelError("model is frozen")
        if name in self._var_index:
            raise ModelError(f"duplicate variable name {name!r}")
        if kind not in ("continuous", "binary"):
            raise ModelError(f"unknown variable kind {kind!r}")
        if kind == "binary":
            lb, ub = max(0.0, lb), min(1.0, ub)
        if lb > ub:
            raise ModelError(f"variable {name!r} has lb {lb} > ub {ub}")
        self._var_index[name] = len(self.variables)
        self.variables.append(Variable(name, float(lb), float(ub), kind))
        return name

    def add_constr(self, name, coeffs, sense, rhs):
        if self._frozen:
            raise ModelError("model is frozen")
        if name in self._con_names:
            raise ModelError(f"duplicate constraint name {name!r}")
        if sense not in ("<=", "=", ">="):
            raise ModelError(f"unknown sense {sense!r}")
        for v in coeffs:
            if v not in self._var_index:
                raise ModelError(f"constraint {name!r} references unknown variable {v!r}")
        self._con_names.add(name)
        self.constraints.append(Constraint(name, dict(coeffs), sense, float(rhs)))
        return name

    def set_objective(self, coeffs, offset=0.0):
        if self._frozen:
            raise ModelError("model is frozen")
        for v in coeffs:
            if v not in self._var_index:
                raise ModelError(f"objective references unknown variable {v!r}")
        self.objective = dict(coeffs)
        self.objective_offset = float(offset)

    def freeze(self):
        self._frozen = True
        return self

    # -- queries -----------------------------------------------------------

    def var_index(self, name):
        return self._var_index[name]

    def has_var(self, name):
        return name in self._var_index

    @property
    def binary_names(self):
        return [v.name for v in self.variables if v.kind == "binary"]

    def var_bounds(self, name):
        v = self.variables[self._var_index[name]]
        return v.lb, v.ub

    # -- matrix form -------------------------------------------------------

    def to_arrays(self):
        """Return (c, A, row_lb, row_ub, lb, ub, integrality)."""
        n = len(self.variables)
        c = np.zeros(n)
        for v, coef in self.objective.items():
            c[self._var_index[v]] = coef
        lb = np.array([v.lb for v in self.variables])
        ub = np.array([v.ub for v in self.variables])
        integrality = np.array(
            [1 if v.kind == "binary" else 0 for v in self.variables]
        )
        m = len(self.constraints)
        rows, cols, vals = [], [], []
        row_lb = np.empty(m)
        row_ub = np.empty(m)
        for i, con in enumerate(self.constraints):
            for v, coef in con.coeffs.items():
                rows.append(i)
                cols.append(self._var_index[v])
                vals.append(coef)
            if con.sense == "<=":
                row_lb[i], row_ub[i] = -INF, con.rhs
            elif con.sense == ">=":
                row_lb[i], row_ub[i] = con.rhs, INF
            else:
                row_lb[i], row_ub[i] = con.rhs, con.rhs
        A = sp.csr_matrix((vals, (rows, cols)), shape=(m, n))
        return c, A, row_lb, row_ub, lb, ub, integrality


def _values_dict(model, x):
    return {v.name: float(x[i]) for i, v in enumerate(model.variables)}


def solve_lp(model, fixed_binaries=None):
    """Solve the continuous relaxation of `model` with HiGHS.

    `fixed_binaries` optionally maps binary variable names to 0/1 values that
    are pinned via bounds before solving.
    """
    t0 = time.perf_counter()
    c, A, row_lb, row_ub, lb, ub, _ = model.to_arrays()
    lb, ub = lb.copy(), ub.copy()
    if fixed_binaries:
        for name, val in fixed_binaries.items():
            i = model.var_index(name)
            lb[i] = ub[i] = float(val)
    # split rows for linprog
    le = row_ub < INF
    ge = row_lb > -INF
    eq = le & ge & (row_lb == row_ub)
    le &= ~eq
    ge &= ~eq
    kw = {}
    if le.any() or ge.any():
        A_ub = sp.vstack([A[le], -A[ge]]) if (le.any() and ge.any()) else (A[le] if le.any() else -A[ge])
        b_ub = np.concatenate([row_ub[le], -row_lb[ge]])
        kw["A_ub"], kw["b_ub"] = A_ub, b_ub
    if eq.any():
        kw["A_eq"], kw["b_eq"] = A[eq], row_lb[eq]
    res = linprog(
        c,
        bounds=np.column_stack([lb, ub]),
        method="highs",
        options={
            "presolve": True,
            "primal_feasibility_tolerance": FEAS_TOL,
            "dual_feasibility_tolerance": OPT_TOL,
        },
        **kw,
    )
    wall = time.perf_counter() - t0
    if res.status == 0:
        return Solution(
            "optimal",
            _values_dict(model, res.x),
            float(res.fun) + model.objective_offset,
            wall_seconds=wall,
        )
    if res.status == 2:
        return Solution("infeasible", {}, None, wall_seconds=wall)
    if res.status == 3:
        return Solution("unbounded", {}, None, wall_seconds=wall)
    raise SolverError(f"LP backend failure: {res.message}")


def solve_milp(model, gap_tol=1e-6, node_limit=None, time_limit=None):
    """Solve a MILP with HiGHS branch-and-bound, then polish the incumbent.

    The incumbent's binaries are rounded and fixed, and the remaining LP is
    re-solved at tight tolerances so complementarity-style gating constraints
    hold essentially exactly in the reported point.
    """
    if gap_tol < 0:
        raise ModelError("gap_tol must be >= 0")
    binaries = model.binary_names
    if not binaries:
        return solve_lp(model)
    t0 = time.perf_counter()
    c, A, row_lb, row_ub, lb, ub, integrality = model.to_arrays()
    # MIP presolve is disabled: the HiGHS build shipped with scipy returns
    # confidently wrong "optimal" points on some models with it enabled
    # (caught by the brute-force oracle on randomized instances).
    options = {"presolve": False, "mip_rel_gap": gap_tol}
    if node_limit is not None:
        options["node_limit"] = int(node_limit)
    if time_limit is not None:
        options["time_limit"] = float(time_limit)
    res = _highs_milp(
        c,
        constraints=LinearConstraint(A, row_lb, row_ub),
        integrality=integrality,
        bounds=Bounds(lb, ub),
        options=options,
    )
    wall = time.perf_counter() - t0
    nodes = int(getattr(res, "mip_node_count", 0) or 0)
    gap = float(getattr(res, "mip_gap", 0.0) or 0.0)
    if res.status == 2:
        return Solution("infeasible", {}, None, nodes=nodes, wall_seconds=wall)
    if res.status == 3:
        return Solution("unbounded", {}, None, nodes=nodes, wall_seconds=wall)
    if res.x is None:
        return Solution("iteration-limit", {}, None, gap=INF, nodes=nodes, wall_seconds=wall)
    fixed = {name: round(res.x[model.var_index(name)]) for name in binaries}
    polished = solve_lp(model, fixed_binaries=fixed)
    if polished.status == "optimal":
        values, objective = polished.values, polished.objective
    else:  # pragma: no cover - tolerance corner, fall back to raw incumbent
        values = _values_dict(model, res.x)
        objective = float(res.fun) + model.objective_offset
    status = "optimal" if res.status == 0 else "gap-limit"
    return Solution(status, values, objective, gap=gap, nodes=nodes,
                    wall_seconds=time.perf_counter() - t0)


def brute_force_binaries(model, max_binaries=20):
    """Exhaustively enumerate binary assignments; test oracle for solve_milp."""
    binaries = model.binary_names
    if len(binaries) > max_binaries:
        raise ModelError(
            f"brute force refused: {len(binaries)} binaries > limit {max_binaries}"
        )
    t0 = time.perf_counter()
    best = None
    for assignment in itertools.product((0, 1), repeat=len(binaries)):
        sol = solve_lp(model, fixed_binaries=dict(zip(binaries, assignment)))
        if sol.status != "optimal":
            continue
        if best is None or sol.objective < best.objective - 1e-12:
            best = sol
    if best is None:
        return Solution("infeasible", {}, None, wall_seconds=time.perf_counter() - t0)
    best.wall_seconds = time.perf_counter() - t0
    return best


# ---------------------------------------------------------------------------
# MPS export / import (free format)
# ---------------------------------------------------------------------------

def write_mps(model, path):
    """Write `model` as a free-format MPS file with deterministic ordering.

    Binary columns are wrapped in INTORG/INTEND markers and additionally
    carry BV bound records.  A constant objective offset is stored as a
    negated RHS entry on the objective row (standard MPS convention).
    """
    lines = [f"NAME {model.name}", "ROWS", " N  OBJ"]
    sense_tag = {"<=": "L", ">=": "G", "=": "E"}
    for con in model.constraints:
        lines.append(f" {sense_tag[con.sense]}  {con.name}")
    lines.append("COLUMNS")
    in_int = False
    marker = 0
    for var in model.variables:
        if (var.kind == "binary") != in_int:
            tag = "INTORG" if not in_int else "INTEND"
            lines.append(f"    MARKER{marker}  'MARKER'  '{tag}'")
            in_int = not in_int
            marker += 1
        entries = []
        if var.name in model.objective and model.objective[var.name] != 0.0:
            entries.append(("OBJ", model.objective[var.name]))
        for con in model.constraints:
            if var.name in con.coeffs and con.coeffs[var.name] != 0.0:
                entries.append((con.name, con.coeffs[var.name]))
        if not entries:
            entries.append(("OBJ", 0.0))
        for row, coef in entries:
            # plain-float repr round-trips exactly; numpy scalars would not
            lines.append(f"    {var.name}  {row}  {float(coef)!r}")
    if in_int:
        lines.append(f"    MARKER{marker}  'MARKER'  'INTEND'")
    lines.append("RHS")
    if model.objective_offset != 0.0:
        lines.append(f"    RHS  OBJ  {float(-model.objective_offset)!r}")
    for con in model.constraints:
        if con.rhs != 0.0:
            lines.append(f"    RHS  {con.name}  {float(con.rhs)!r}")
    lines.append("BOUNDS")
    for var in model.variables:
        if var.kind == "binary":
            lines.append(f" BV BND  {var.name}")
            continue
        if var.lb == 0.0 and var.ub == INF:
            continue
        if var.lb == var.ub:
            lines.append(f" FX BND  {var.name}  {float(var.lb)!r}")
            continue
        if var.lb == -INF and var.ub == INF:
            lines.append(f" FR BND  {var.name}")
            continue
        if var.lb == -INF:
            lines.append(f" MI BND  {var.name}")
        elif var.lb != 0.0:
            lines.append(f" LO BND  {var.name}  {float(var.lb)!r}")
        if var.ub < INF:
            lines.append(f" UP BND  {var.name}  {float(var.ub)!r}")
    lines.append("ENDATA")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mps(path):
    """Parse a free-format MPS file produced by `write_mps` into a Model."""
    with open(path) as fh:
        raw = [ln.rstrip() for ln in fh if ln.strip()]
    model = None
    section = None
    row_sense: dict = {}
    row_order: list = []
    columns: dict = {}
    obj_col: dict = {}
    rhs: dict = {}
    obj_offset = 0.0
    var_order: list = []
    var_kind: dict = {}
    bounds: dict = {}
    in_int = False
    for ln in raw:
        tok = ln.split()
        if tok[0] == "NAME":
            model = Model(tok[1] if len(tok) > 1 else "model")
            continue
        if len(tok) == 1 and tok[0] in (
            "ROWS", "COLUMNS", "RHS", "BOUNDS", "RANGES", "ENDATA"
        ):
            section = tok[0]
            continue
        if section == "ROWS":
            tag, name = tok
            if tag == "N":
                continue
            row_sense[name] = {"L": "<=", "G": ">=", "E": "="}[tag]
            row_order.append(name)
        elif section == "COLUMNS":
            if len(tok) >= 3 and tok[1] == "'MARKER'":
                in_int = tok[2].strip("'") == "INTORG"
                continue
            name = tok[0]
            if name not in var_kind:
                var_kind[name] = "binary" if in_int else "continuous"
                var_order.append(name)
            for row, coef in zip(tok[1::2], tok[2::2]):
                val = float(coef)
                if val == 0.0:  # placeholder entry for an otherwise empty column
                    continue
                if row == "OBJ":
                    obj_col[name] = val
                else:
                    columns.setdefault(row, {})[name] = val
        elif section == "RHS":
            for row, coef in zip(tok[1::2], tok[2::2]):
                if row == "OBJ":
                    obj_offset = -float(coef)
                else:
                    rhs[row] = float(coef)
        elif section == "BOUNDS":
            btype, _, name = tok[0], tok[1], tok[2]
            val = float(tok[3]) if len(tok) > 3 else None
            lo, hi = bounds.get(name, (0.0, INF))
            if btype == "BV":
                bounds[name] = (0.0, 1.0)
                var_kind[name] = "binary"
            elif btype == "UP":
                bounds[name] = (lo, val)
            elif btype == "LO":
                bounds[name] = (val, hi)
            elif btype == "FX":
                bounds[name] = (val, val)
            elif btype == "FR":
                bounds[name] = (-INF, INF)
            elif btype == "MI":
                bounds[name] = (-INF, hi)
            elif btype == "PL":
                bounds[name] = (lo, INF)
            else:
                raise ModelError(f"unsupported bound type {btype!r}")
    if model is None:
        model = Model()
    for name in var_order:
        lo, hi = bounds.get(name, (0.0, INF))
        model.add_var(name, lb=lo, ub=hi, kind=var_kind[name])
    for row in row_order:
        model.add_constr(row, columns.get(row, {}), row_sense[row], rhs.get(row, 0.0))
    model.set_objective(obj_col, offset=obj_offset)
    return model
