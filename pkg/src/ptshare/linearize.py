"""Piecewise-linear encodings and big-M treatment of complementarity pairs.

Two constructions live here:

* chord-based piecewise-linear curves with left-to-right fill-order binaries,
  used for the quartic road-delay and the station queuing-delay curves;
* big-M linearization of complementarity pairs ``0 <= f  perp  g >= 0`` with
  per-pair M constants estimated by interval arithmetic over variable boxes,
  plus a post-solve audit that flags M values suspected of cutting optima.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DomainError(ValueError):
    """Curve evaluated or linearized outside its valid domain."""


class UnboundedMError(ValueError):
    """Raised when no finite M can be derived for a big-M pair."""


# ---------------------------------------------------------------------------
# Piecewise-linear curves
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PwlCurve:
    """Equal-interval chord approximation of a scalar curve on [0, x_hi]."""

    entity: str
    knots: tuple
    dx_max: float
    slopes: tuple
    f0: float

    @property
    def n_segments(self):
        return len(self.slopes)


def build_pwl(fn, x_hi, n, entity=""):
    """Build an N-segment chord approximation of `fn` over [0, x_hi].

    Chords interpolate the curve exactly at the knots and, for convex
    curves, lie above it in between (conservative for delay curves).
    """
    if n < 2:
        raise ValueError("need at least 2 segments")
    if x_hi <= 0:
        raise ValueError("domain upper end must be positive")
    knots = np.linspace(0.0, x_hi, n + 1)
    try:
        vals = np.array([float(fn(k)) for k in knots])
    except DomainError as exc:
        raise DomainError(f"curve for {entity!r} singular inside [0, {x_hi}]: {exc}")
    if not np.all(np.isfinite(vals)):
        raise DomainError(f"curve for {entity!r} not finite on [0, {x_hi}]")
    dx = float(knots[1] - knots[0])
    slopes = tuple((vals[1:] - vals[:-1]) / dx)
    return PwlCurve(entity, tuple(knots), dx, slopes, float(vals[0]))


def pwl_value(curve, x):
    """Evaluate the chord approximation at `x` (left-to-right fill)."""
    if x < -1e-12 or x > curve.knots[-1] + 1e-9:
        raise DomainError(f"{x} outside [0, {curve.knots[-1]}]")
    total = curve.f0
    remaining = x
    for k in curve.slopes:
        step = min(remaining, curve.dx_max)
        total += k * max(step, 0.0)
        remaining -= step
    return total


@dataclass(frozen=True)
class FillOrderBlock:
    """Variable names created by `encode_fill_order` for one curve."""

    dx: tuple  # segment fill variable names, length N
    z: tuple   # fill-order binaries, length N-1


def encode_fill_order(model, curve, prefix):
    """Emit fill variables and left-to-right ordering binaries for `curve`.

    Adds, for segments j = 1..N-1:
        dx_max - dx_j <= M * z_j
        dx_{j+1}      <= M * (1 - z_j)
    with M = dx_max (the tightest valid constant), so a later segment can be
    positive only once every earlier segment is full.
    """
    n = curve.n_segments
    m = curve.dx_max
    dx = tuple(
        model.add_var(f"{prefix}.dx[{j}]", lb=0.0, ub=m) for j in range(n)
    )
    z = tuple(
        model.add_var(f"{prefix}.z[{j}]", kind="binary") for j in range(n - 1)
    )
    for j in range(n - 1):
        # dx_max - dx_j <= M z_j
        model.add_constr(
            f"{prefix}.fill_lo[{j}]", {dx[j]: -1.0, z[j]: -m}, "<=", -m
        )
        # dx_{j+1} <= M (1 - z_j)
        model.add_constr(
            f"{prefix}.fill_hi[{j}]", {dx[j + 1]: 1.0, z[j]: m}, "<=", m
        )
    return FillOrderBlock(dx, z)


# ---------------------------------------------------------------------------
# Big-M linearization of complementarity
# ---------------------------------------------------------------------------

@dataclass
class BigMPair:
    """One complementarity pair ``0 <= f  perp  g >= 0`` awaiting big-M gating.

    `f` and `g` are affine expressions stored as (coeffs dict, constant).
    `switch` is filled in by `big_m_linearize`.
    """

    name: str
    f_coeffs: dict
    f_const: float
    g_coeffs: dict
    g_const: float
    m_f: float
    m_g: float
    switch: str | None = None


def estimate_big_m(coeffs, const, boxes, safety=1.1):
    """Interval-arithmetic bound on |expr| over the variable box, x safety.

    `boxes` maps variable name -> (lb, ub).  Raises UnboundedMError when a
    referenced variable lacks the finite bound the sign of its coefficient
    requires.
    """
    hi = const
    lo = const
    for name, coef in coeffs.items():
        if coef == 0.0:
            continue
        if name not in boxes:
            raise UnboundedMError(f"no bounds declared for variable {name!r}")
        lb, ub = boxes[name]
        top = coef * (ub if coef > 0 else lb)
        bot = coef * (lb if coef > 0 else ub)
        if not np.isfinite(top) or not np.isfinite(bot):
            raise UnboundedMError(f"variable {name!r} unbounded in big-M expression")
        hi += top
        lo += bot
    return safety * max(abs(hi), abs(lo))


def _is_plain_nonneg_var(model, coeffs, const):
    if const != 0.0 or len(coeffs) != 1:
        return False
    (name, coef), = coeffs.items()
    lb, _ = model.var_bounds(name)
    return coef > 0 and lb >= 0.0


def big_m_linearize(model, pair):
    """Gate `pair` with a binary switch: f <= M_f X and g <= M_g (1 - X).

    Nonnegativity rows for f and g are emitted unless the expression is a
    single nonnegative variable (already bounded below by its box).
    """
    if not (np.isfinite(pair.m_f) and np.isfinite(pair.m_g)):
        raise UnboundedMError(f"pair {pair.name!r} has non-finite M")
    if pair.m_f <= 0 or pair.m_g <= 0:
        # degenerate side: still valid, but give it a tiny positive gate
        pair.m_f = max(pair.m_f, 1e-9)
        pair.m_g = max(pair.m_g, 1e-9)
    x = model.add_var(f"{pair.name}.X", kind="binary")
    pair.switch = x
    f, g = dict(pair.f_coeffs), dict(pair.g_coeffs)
    if not _is_plain_nonneg_var(model, f, pair.f_const):
        model.add_constr(f"{pair.name}.f_nn", f, ">=", -pair.f_const)
    if not _is_plain_nonneg_var(model, g, pair.g_const):
        model.add_constr(f"{pair.name}.g_nn", g, ">=", -pair.g_const)
    fx = dict(f)
    fx[x] = fx.get(x, 0.0) - pair.m_f
    model.add_constr(f"{pair.name}.f_gate", fx, "<=", -pair.f_const)
    gx = dict(g)
    gx[x] = gx.get(x, 0.0) + pair.m_g
    model.add_constr(f"{pair.name}.g_gate", gx, "<=", pair.m_g - pair.g_const)
    return x


def _eval_expr(values, coeffs, const):
    return const + sum(coef * values[name] for name, coef in coeffs.items())


@dataclass
class BigMAudit:
    clean: bool
    flagged: list = field(default_factory=list)
    max_comp_residual: float = 0.0


def audit_big_m(values, pairs, threshold=0.01):
    """Flag pairs whose active side sits within `threshold` of its M.

    A flagged pair means the M constant is suspected of binding (and thus of
    cutting the true optimum); callers should enlarge M and re-solve.
    """
    flagged = []
    max_resid = 0.0
    for pair in pairs:
        f = _eval_expr(values, pair.f_coeffs, pair.f_const)
        g = _eval_expr(values, pair.g_coeffs, pair.g_const)
        max_resid = max(max_resid, min(max(f, 0.0), max(g, 0.0)))
        if pair.switch is not None and pair.switch in values:
            active_f = values[pair.switch] > 0.5
        else:
            active_f = f >= g
        if active_f and f >= (1.0 - threshold) * pair.m_f:
            flagged.append((pair.name, "f", f, pair.m_f))
        if not active_f and g >= (1.0 - threshold) * pair.m_g:
            flagged.append((pair.name, "g", g, pair.m_g))
    return BigMAudit(clean=not flagged, flagged=flagged, max_comp_residual=max_resid)
