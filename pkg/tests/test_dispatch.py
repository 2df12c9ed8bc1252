"""Dispatch LP: cost supports, closed-form optima, solution residuals."""

import dataclasses

import numpy as np
import pytest

from ptshare.dispatch import (
    cost_pwl,
    pwl_cost_value,
    solve_dispatch,
)
from ptshare.network import (
    Bus,
    CoupledInstance,
    Evcs,
    Generator,
    GlobalParams,
    OdPair,
    Road,
    Substation,
)

from conftest import make_tiny

GEN = Generator("g", "P1", 5.2, 200.0, 300.0, 0.0, 120.0)


def _quad(g, p):
    return g.cost_a * p * p + g.cost_b * p + g.cost_c


def test_cost_pwl_three_chords():
    segs = cost_pwl(GEN, 3)
    assert [s.slope for s in segs] == pytest.approx([408.0, 824.0, 1240.0])
    assert [s.intercept for s in segs] == pytest.approx([300.0, -16340.0, -49620.0])


def test_cost_pwl_exact_at_knots_above_between():
    segs = cost_pwl(GEN, 3)
    for p in (0.0, 40.0, 80.0, 120.0):
        assert pwl_cost_value(segs, p) == pytest.approx(_quad(GEN, p), abs=1e-9)
    for p in np.linspace(0.0, 120.0, 241):
        assert pwl_cost_value(segs, p) >= _quad(GEN, p) - 1e-9


def test_cost_pwl_degenerate_cases():
    linear = dataclasses.replace(GEN, cost_a=0.0)
    segs = cost_pwl(linear, 5)
    assert len(segs) == 1
    assert (segs[0].slope, segs[0].intercept) == (200.0, 300.0)
    fixed = dataclasses.replace(GEN, p_min=50.0, p_max=50.0)
    segs = cost_pwl(fixed, 3)
    assert len(segs) == 1
    assert segs[0].slope == 0.0
    assert segs[0].intercept == pytest.approx(_quad(GEN, 50.0))
    with pytest.raises(ValueError):
        cost_pwl(dataclasses.replace(GEN, cost_a=-1.0), 3)
    with pytest.raises(ValueError):
        cost_pwl(GEN, 0)


def _single_bus(demand, gen=GEN, sub_price=400.0, sub_max=600.0):
    params = GlobalParams(omega=100.0, ev_charge_kwh=100.0, davidson_j=0.15,
                          traffic_base=100.0, power_base=100.0)
    return CoupledInstance(
        name="onebus",
        nodes=("A", "B"),
        roads=(Road("r1", "A", "B", 10.0, 20.0),),
        evcs=(Evcs("cs1", "B", "P1", 25.0, 12.0, 0.6),),
        od_pairs=(OdPair("od1", "A", "B", 0.0, 0.0),),
        buses=(Bus("P1", demand),),
        lines=(),
        generators=(gen,),
        substation=Substation("P1", sub_price, 0.0, sub_max),
        params=params,
    )


def test_single_bus_substation_only():
    # first chord slope 408 exceeds the 400 import price, so the generator
    # idles (fixed cost still due): eta = 400 * 10 + 300
    inst = _single_bus(10.0)
    dec = solve_dispatch(inst, [0.0], j_seg=3)
    assert dec.status == "optimal"
    assert dec.p_gen[0] == pytest.approx(0.0, abs=1e-8)
    assert dec.p_sub == pytest.approx(10.0, abs=1e-8)
    assert dec.eta == pytest.approx(4300.0, abs=1e-6)


def test_single_bus_refinement_converges_to_marginal_point():
    # with the true quadratic, the generator runs where marginal cost meets
    # the import price: p* = (400 - 200) / (2 * 5.2)
    inst = _single_bus(30.0)
    p_star = (400.0 - 200.0) / (2.0 * 5.2)
    eta_star = _quad(GEN, p_star) + 400.0 * (30.0 - p_star)
    errors, etas = [], []
    for j_seg in (3, 10, 50):
        dec = solve_dispatch(inst, [0.0], j_seg=j_seg)
        assert dec.status == "optimal"
        errors.append(abs(dec.p_gen[0] - p_star))
        etas.append(dec.eta)
    assert errors[0] > errors[1] > errors[2]
    assert etas[0] >= etas[1] >= etas[2]  # refinement never raises the optimum
    assert etas[2] == pytest.approx(eta_star, abs=0.1)
    assert errors[2] < 0.05


def test_dispatch_infeasible_status():
    inst = _single_bus(1000.0, sub_max=200.0)
    dec = solve_dispatch(inst, [0.0])
    assert dec.status == "infeasible"
    assert np.isnan(dec.eta)


def test_dispatch_rejects_bad_loads(tiny):
    with pytest.raises(ValueError, match="one charging load"):
        solve_dispatch(tiny, [1.0, 2.0])
    with pytest.raises(ValueError, match="nonnegative"):
        solve_dispatch(tiny, [-1.0])


def test_tiny_solution_residuals(tiny):
    loads = [60.0]
    dec = solve_dispatch(tiny, loads)
    assert dec.status == "optimal"
    total_demand = sum(b.traditional_demand for b in tiny.buses) + sum(loads)
    assert dec.p_gen.sum() + dec.p_sub == pytest.approx(total_demand, abs=1e-6)
    # per-bus balance: P1 hosts the substation, P2 the generator and station
    assert dec.p_sub - dec.p_line[0] == pytest.approx(5.0, abs=1e-6)
    assert dec.p_gen[0] + dec.p_line[0] == pytest.approx(10.0 + 60.0, abs=1e-6)
    line = tiny.lines[0]
    assert abs(dec.p_line[0]) <= line.flow_limit + 1e-6
    # DC flow law and the angle reference at the substation bus
    k = tiny.params.power_base / line.reactance
    assert dec.p_line[0] == pytest.approx(
        k * (dec.theta[0] - dec.theta[1]), abs=1e-6
    )
    assert dec.theta[0] == pytest.approx(0.0, abs=1e-9)
    # epigraph values sit on the supports and sum to eta
    segs = cost_pwl(tiny.generators[0], 3)
    assert dec.f_cost[0] == pytest.approx(
        pwl_cost_value(segs, dec.p_gen[0]), abs=1e-6
    )
    assert dec.f_cost[1] == pytest.approx(400.0 * dec.p_sub, abs=1e-6)
    assert dec.eta == pytest.approx(dec.f_cost.sum(), abs=1e-6)


def test_dispatch_invariant_under_reordering(bundled):
    loads = [10.0, 20.0, 5.0, 0.0, 15.0, 8.0]
    base = solve_dispatch(bundled, loads)
    shuffled = dataclasses.replace(
        bundled,
        generators=tuple(reversed(bundled.generators)),
        lines=tuple(reversed(bundled.lines)),
    )
    other = solve_dispatch(shuffled, loads)
    assert base.status == other.status == "optimal"
    assert base.eta == pytest.approx(other.eta, rel=1e-8)
    assert base.p_gen.sum() == pytest.approx(other.p_gen.sum(), abs=1e-5)


def test_loads_raise_cost_monotonically(tiny):
    etas = [solve_dispatch(tiny, [mw]).eta for mw in (0.0, 30.0, 60.0, 90.0)]
    assert etas == sorted(etas)
    assert etas[0] < etas[-1]
