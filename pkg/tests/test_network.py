"""Instance loading, validation, and K-shortest path enumeration."""

import dataclasses
import itertools

import numpy as np
import pytest

from ptshare import bundled_instance_path, enumerate_paths, load_instance
from ptshare.network import (
    Bus,
    CoupledInstance,
    Evcs,
    Generator,
    GlobalParams,
    InfeasiblePathError,
    InstanceError,
    Line,
    OdPair,
    Road,
    Substation,
    incidence,
)

from conftest import make_tiny, write_tiny_json


def test_bundled_instance_counts(bundled):
    assert len(bundled.nodes) == 12
    assert len(bundled.roads) == 20
    assert len(bundled.evcs) == 6
    assert len(bundled.od_pairs) == 3
    assert len(bundled.buses) == 18
    assert len(bundled.lines) == 17
    assert len(bundled.generators) == 3


def test_bundled_demands_converted_to_pu(bundled):
    by_id = {od.id: od for od in bundled.od_pairs}
    assert by_id["od1"].gv_demand == pytest.approx(16.0)
    assert by_id["od2"].gv_demand == pytest.approx(12.0)
    assert by_id["od3"].ev_demand == pytest.approx(24.0)
    assert by_id["od3"].gv_demand == 0.0


def test_load_is_deterministic(bundled):
    again = load_instance(bundled_instance_path())
    assert again == bundled


def test_loader_reports_truncated_file(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"name": "x", "traffic": {')
    with pytest.raises(InstanceError, match="parse failure"):
        load_instance(path)


def test_loader_reports_missing_file(tmp_path):
    with pytest.raises(InstanceError, match="cannot read"):
        load_instance(tmp_path / "nope.json")


def test_loader_requires_coupling_entry(tmp_path):
    def drop_coupling(doc):
        doc["coupling"] = {}
    path = write_tiny_json(tmp_path / "t.json", drop_coupling)
    with pytest.raises(InstanceError, match="cs1.*coupling|coupling.*cs1"):
        load_instance(path)


def test_loader_rejects_unknown_coupling_target(tmp_path):
    def add_ghost(doc):
        doc["coupling"]["ghost"] = "P1"
    path = write_tiny_json(tmp_path / "t.json", add_ghost)
    with pytest.raises(InstanceError, match="ghost"):
        load_instance(path)


def test_loader_reports_missing_field(tmp_path):
    def drop_omega(doc):
        del doc["params"]["omega_cny_per_h"]
    path = write_tiny_json(tmp_path / "t.json", drop_omega)
    with pytest.raises(InstanceError, match="omega_cny_per_h"):
        load_instance(path)


def test_validation_names_offending_entity(tiny):
    with pytest.raises(InstanceError, match="EVCS cs1.*unknown bus"):
        dataclasses.replace(
            tiny, evcs=(dataclasses.replace(tiny.evcs[0], bus="nowhere"),)
        )
    with pytest.raises(InstanceError, match="road r1.*capacity"):
        dataclasses.replace(
            tiny, roads=(dataclasses.replace(tiny.roads[0], capacity=0.0),)
            + tiny.roads[1:]
        )
    with pytest.raises(InstanceError, match="od1.*unknown node"):
        dataclasses.replace(
            tiny, od_pairs=(dataclasses.replace(tiny.od_pairs[0], origin="Zz"),)
        )
    with pytest.raises(InstanceError, match="line l1.*unknown bus"):
        dataclasses.replace(
            tiny, lines=(dataclasses.replace(tiny.lines[0], to_bus="Zz"),)
        )
    with pytest.raises(InstanceError, match="duplicate"):
        dataclasses.replace(tiny, roads=tiny.roads + (tiny.roads[0],))


def test_validation_checks_params(tiny):
    with pytest.raises(InstanceError, match="davidson_fraction"):
        dataclasses.replace(
            tiny, params=dataclasses.replace(tiny.params, davidson_fraction=1.0)
        )
    with pytest.raises(InstanceError, match="pwl_segments"):
        dataclasses.replace(
            tiny, params=dataclasses.replace(tiny.params, pwl_segments=1)
        )


def test_tiny_enumeration(tiny):
    ps = enumerate_paths(tiny, k=4)
    gv = ps.for_od("od1", "GV")
    ev = ps.for_od("od1", "EV")
    # GV: direct r4 plus both parallel corridors through B
    assert {a.roads for a in gv} == {("r4",), ("r1", "r3"), ("r2", "r3")}
    # EV must pass the station at B; the direct road cannot charge
    assert {a.roads for a in ev} == {("r1", "r3"), ("r2", "r3")}
    assert all(a.evcs == "cs1" for a in ev)
    # ranking by free-flow time, ties by road ids
    assert [a.roads for a in gv] == [("r1", "r3"), ("r2", "r3"), ("r4",)]


def test_k_limits_alternatives(tiny):
    ps = enumerate_paths(tiny, k=1)
    assert len(ps.for_od("od1", "GV")) == 1
    assert ps.for_od("od1", "GV")[0].roads == ("r1", "r3")
    assert len(ps.for_od("od1", "EV")) == 1


def test_enumeration_deterministic(bundled):
    a = enumerate_paths(bundled, k=6)
    b = enumerate_paths(bundled, k=6)
    assert a == b
    assert len(a.alts) == 48


def _dfs_routes(inst, origin, destination):
    """Brute-force loop-free route enumeration (oracle for the K-shortest)."""
    out = {}
    for r in inst.roads:
        out.setdefault(r.tail, []).append(r)
    routes = []

    def walk(node, visited, roads, time):
        if node == destination:
            routes.append((tuple(roads), time))
            return
        for r in out.get(node, []):
            if r.head in visited:
                continue
            walk(r.head, visited | {r.head}, roads + [r.id], time + r.free_flow_time)

    walk(origin, {origin}, [], 0.0)
    routes.sort(key=lambda item: (item[1], item[0]))
    return routes


def test_k_shortest_matches_dfs_oracle(bundled):
    ps = enumerate_paths(bundled, k=6)
    for od in bundled.od_pairs:
        oracle = _dfs_routes(bundled, od.origin, od.destination)[:6]
        got = [(a.roads, a.free_flow_time) for a in ps.for_od(od.id, "GV")]
        if od.gv_demand == 0 and not got:
            continue
        assert got == oracle


def test_ev_composites_match_two_leg_oracle(bundled):
    ps = enumerate_paths(bundled, k=6)
    road_map = {r.id: r for r in bundled.roads}
    od = next(o for o in bundled.od_pairs if o.ev_demand > 0)
    got = {(a.roads, a.evcs) for a in ps.for_od(od.id, "EV")}
    expected = set()
    for st in bundled.evcs:
        legs_in = _dfs_routes(bundled, od.origin, st.node)
        legs_out = _dfs_routes(bundled, st.node, od.destination)
        comps = []
        for (r1, t1), (r2, t2) in itertools.product(legs_in, legs_out):
            nodes = [od.origin]
            ok = True
            for rid in r1 + r2:
                head = road_map[rid].head
                if head in nodes:
                    ok = False
                    break
                nodes.append(head)
            if ok and (r1 + r2):
                comps.append((r1 + r2, t1 + t2))
        comps.sort(key=lambda item: (item[1], item[0]))
        expected.update((roads, st.id) for roads, _ in comps[:6])
    assert got == expected


def test_infeasible_ev_demand_names_od():
    params = GlobalParams(omega=100.0, ev_charge_kwh=100.0, davidson_j=0.15,
                          traffic_base=100.0, power_base=100.0)
    inst = CoupledInstance(
        name="no_station_route",
        nodes=("A", "B", "C"),
        roads=(Road("r1", "A", "B", 10.0, 20.0),),
        evcs=(Evcs("cs1", "C", "P1", 25.0, 12.0, 0.6),),  # unreachable
        od_pairs=(OdPair("odX", "A", "B", 0.0, 5.0),),
        buses=(Bus("P1", 5.0),),
        lines=(),
        generators=(),
        substation=Substation("P1", 400.0, 0.0, 200.0),
        params=params,
    )
    with pytest.raises(InfeasiblePathError, match="odX"):
        enumerate_paths(inst)


def test_infeasible_gv_demand_names_od():
    params = GlobalParams(omega=100.0, ev_charge_kwh=100.0, davidson_j=0.15,
                          traffic_base=100.0, power_base=100.0)
    inst = CoupledInstance(
        name="disconnected",
        nodes=("A", "B", "C"),
        roads=(Road("r1", "A", "B", 10.0, 20.0),),
        evcs=(Evcs("cs1", "B", "P1", 25.0, 12.0, 0.6),),
        od_pairs=(OdPair("odY", "C", "A", 3.0, 0.0),),
        buses=(Bus("P1", 5.0),),
        lines=(),
        generators=(),
        substation=Substation("P1", 400.0, 0.0, 200.0),
        params=params,
    )
    with pytest.raises(InfeasiblePathError, match="odY"):
        enumerate_paths(inst)


def test_incidence_consistency(bundled):
    ps = enumerate_paths(bundled, k=6)
    inc = incidence(bundled, ps)
    delta, lam, gam = inc["delta"], inc["lam"], inc["gam"]
    assert delta.shape == (20, len(ps.alts))
    for j, alt in enumerate(ps.alts):
        assert delta[:, j].sum() == len(alt.roads)
        assert lam[:, j].sum() == 1.0
        assert gam[:, j].sum() == (1.0 if alt.vclass == "EV" else 0.0)
    # every EV alternative's station index matches its column
    for j, alt in enumerate(ps.alts):
        if alt.evcs is not None:
            assert gam[inc["evcs_ix"][alt.evcs], j] == 1.0


def test_load_mw_per_pu():
    params = make_tiny().params
    assert params.load_mw_per_pu == pytest.approx(10.0)
