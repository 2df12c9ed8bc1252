"""Domain types for the coupled traffic / distribution networks.

Covers instance ingestion from the documented JSON schema (see
docs/instance_schema.md), cross-reference validation, and K-shortest
loop-free path enumeration producing the route alternatives both vehicle
classes choose among.

Internal unit conventions: traffic quantities in p.u. of the traffic base,
power in MW, stored curve coefficients in minutes (converted to hours by the
time functions), money in CNY.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import networkx as nx


class InstanceError(ValueError):
    """Invalid instance file: parse failure, dangling reference or bad value."""


class InfeasiblePathError(ValueError):
    """An O-D pair with positive demand has no feasible route alternative."""


@dataclass(frozen=True)
class Road:
    id: str
    tail: str
    head: str
    free_flow_time: float  # minutes
    capacity: float        # traffic p.u.


@dataclass(frozen=True)
class Evcs:
    id: str
    node: str
    bus: str
    base_service_time: float  # minutes
    capacity: float           # traffic p.u.
    charging_price: float     # CNY per kWh


@dataclass(frozen=True)
class OdPair:
    id: str
    origin: str
    destination: str
    gv_demand: float  # traffic p.u.
    ev_demand: float  # traffic p.u.


@dataclass(frozen=True)
class PathAlt:
    """One route alternative: a GV route or an EV route bound to one station."""

    id: str
    od_id: str
    vclass: str            # "GV" | "EV"
    roads: tuple           # ordered road ids, connected walk origin -> destination
    evcs: str | None = None
    free_flow_time: float = 0.0  # minutes, tie-break/ranking key


@dataclass(frozen=True)
class Bus:
    id: str
    traditional_demand: float  # MW
    angle_min: float = -6.3    # rad
    angle_max: float = 6.3


@dataclass(frozen=True)
class Line:
    id: str
    from_bus: str
    to_bus: str
    reactance: float   # p.u.
    flow_limit: float  # MW


@dataclass(frozen=True)
class Generator:
    id: str
    bus: str
    cost_a: float  # CNY/MW^2 h
    cost_b: float  # CNY/MWh
    cost_c: float  # CNY/h
    p_min: float   # MW
    p_max: float


@dataclass(frozen=True)
class Substation:
    bus: str
    energy_price: float  # CNY/MWh
    p_min: float
    p_max: float


@dataclass(frozen=True)
class GlobalParams:
    omega: float                  # CNY per hour of travel time
    ev_charge_kwh: float          # energy drawn per charging EV
    davidson_j: float
    traffic_base: float           # vehicles per hour per p.u.
    power_base: float             # MVA
    pwl_segments: int = 5
    davidson_fraction: float = 0.95
    toll_max: float | None = None  # CNY; None -> derived from the path set
    bigm_dual_cap: float = 1e4
    bigm_safety: float = 1.1

    @property
    def load_mw_per_pu(self):
        # y [p.u.] * base [veh/h] * E_B [kWh] / 1000 -> MW
        return self.traffic_base * self.ev_charge_kwh / 1000.0


@dataclass(frozen=True)
class PathSet:
    k: int
    alts: tuple  # PathAlt, deterministic order

    def for_od(self, od_id, vclass=None):
        return [
            a for a in self.alts
            if a.od_id == od_id and (vclass is None or a.vclass == vclass)
        ]


@dataclass(frozen=True)
class CoupledInstance:
    name: str
    nodes: tuple
    roads: tuple
    evcs: tuple
    od_pairs: tuple
    buses: tuple
    lines: tuple
    generators: tuple
    substation: Substation
    params: GlobalParams

    def road(self, rid):
        return self._road_map[rid]

    def station(self, mid):
        return self._evcs_map[mid]

    def __post_init__(self):
        object.__setattr__(self, "_road_map", {r.id: r for r in self.roads})
        object.__setattr__(self, "_evcs_map", {m.id: m for m in self.evcs})
        validate_instance(self)


def _positive(entity, fieldname, value):
    if not (value > 0):
        raise InstanceError(f"{entity}: field {fieldname!r} must be > 0, got {value}")


def _nonnegative(entity, fieldname, value):
    if value < 0:
        raise InstanceError(f"{entity}: field {fieldname!r} must be >= 0, got {value}")


def validate_instance(inst):
    """Check every invariant of the coupled instance; raise InstanceError."""
    node_set = set(inst.nodes)
    if len(node_set) != len(inst.nodes):
        raise InstanceError("duplicate traffic node ids")
    seen = set()
    for r in inst.roads:
        if r.id in seen:
            raise InstanceError(f"road {r.id}: duplicate id")
        seen.add(r.id)
        _positive(f"road {r.id}", "free_flow_time", r.free_flow_time)
        _positive(f"road {r.id}", "capacity", r.capacity)
        if r.tail == r.head:
            raise InstanceError(f"road {r.id}: tail equals head ({r.tail})")
        for endpoint in (r.tail, r.head):
            if endpoint not in node_set:
                raise InstanceError(f"road {r.id}: unknown node {endpoint!r}")
    bus_set = {b.id for b in inst.buses}
    if len(bus_set) != len(inst.buses):
        raise InstanceError("duplicate bus ids")
    seen = set()
    for m in inst.evcs:
        if m.id in seen:
            raise InstanceError(f"EVCS {m.id}: duplicate id")
        seen.add(m.id)
        _positive(f"EVCS {m.id}", "base_service_time", m.base_service_time)
        _positive(f"EVCS {m.id}", "capacity", m.capacity)
        _nonnegative(f"EVCS {m.id}", "charging_price", m.charging_price)
        if m.node not in node_set:
            raise InstanceError(f"EVCS {m.id}: unknown traffic node {m.node!r}")
        if m.bus not in bus_set:
            raise InstanceError(f"EVCS {m.id}: unknown bus {m.bus!r}")
    seen = set()
    for od in inst.od_pairs:
        if od.id in seen:
            raise InstanceError(f"O-D pair {od.id}: duplicate id")
        seen.add(od.id)
        _nonnegative(f"O-D pair {od.id}", "gv_demand", od.gv_demand)
        _nonnegative(f"O-D pair {od.id}", "ev_demand", od.ev_demand)
        if od.origin == od.destination:
            raise InstanceError(f"O-D pair {od.id}: origin equals destination")
        for endpoint in (od.origin, od.destination):
            if endpoint not in node_set:
                raise InstanceError(f"O-D pair {od.id}: unknown node {endpoint!r}")
    seen = set()
    for ln in inst.lines:
        if ln.id in seen:
            raise InstanceError(f"line {ln.id}: duplicate id")
        seen.add(ln.id)
        _positive(f"line {ln.id}", "reactance", ln.reactance)
        _positive(f"line {ln.id}", "flow_limit", ln.flow_limit)
        for endpoint in (ln.from_bus, ln.to_bus):
            if endpoint not in bus_set:
                raise InstanceError(f"line {ln.id}: unknown bus {endpoint!r}")
    seen = set()
    for g in inst.generators:
        if g.id in seen:
            raise InstanceError(f"generator {g.id}: duplicate id")
        seen.add(g.id)
        _nonnegative(f"generator {g.id}", "cost_a", g.cost_a)
        if g.p_min > g.p_max:
            raise InstanceError(f"generator {g.id}: p_min > p_max")
        if g.bus not in bus_set:
            raise InstanceError(f"generator {g.id}: unknown bus {g.bus!r}")
    if inst.substation.bus not in bus_set:
        raise InstanceError(f"substation: unknown bus {inst.substation.bus!r}")
    if inst.substation.p_min > inst.substation.p_max:
        raise InstanceError("substation: p_min > p_max")
    for b in inst.buses:
        _nonnegative(f"bus {b.id}", "traditional_demand", b.traditional_demand)
        if b.angle_min >= b.angle_max:
            raise InstanceError(f"bus {b.id}: angle bounds not ordered")
    p = inst.params
    for name in ("omega", "ev_charge_kwh", "davidson_j", "traffic_base", "power_base"):
        _positive("params", name, getattr(p, name))
    if p.pwl_segments < 2:
        raise InstanceError("params: pwl_segments must be >= 2")
    if not (0.0 < p.davidson_fraction < 1.0):
        raise InstanceError("params: davidson_fraction must lie in (0, 1)")
    if p.toll_max is not None:
        _positive("params", "toll_max", p.toll_max)
    _positive("params", "bigm_dual_cap", p.bigm_dual_cap)
    if p.bigm_safety < 1.0:
        raise InstanceError("params: bigm_safety must be >= 1")


# ---------------------------------------------------------------------------
# Instance loading
# ---------------------------------------------------------------------------

def _require(section, key, where):
    if key not in section:
        raise InstanceError(f"{where}: missing required field {key!r}")
    return section[key]


def load_instance(path):
    """Load and validate a coupled instance from the JSON schema."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InstanceError(f"cannot read {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise InstanceError(f"parse failure in {path}: line {exc.lineno}: {exc.msg}")

    for section in ("traffic", "power", "coupling", "params"):
        _require(doc, section, "top level")
    traffic, power = doc["traffic"], doc["power"]
    pr = doc["params"]
    params = GlobalParams(
        omega=float(_require(pr, "omega_cny_per_h", "params")),
        ev_charge_kwh=float(_require(pr, "ev_charge_kwh", "params")),
        davidson_j=float(_require(pr, "davidson_j", "params")),
        traffic_base=float(_require(pr, "traffic_base_veh_per_h", "params")),
        power_base=float(_require(pr, "power_base_mva", "params")),
        pwl_segments=int(pr.get("pwl_segments", 5)),
        davidson_fraction=float(pr.get("davidson_fraction", 0.95)),
        toll_max=(float(pr["toll_max_cny"]) if "toll_max_cny" in pr else None),
        bigm_dual_cap=float(pr.get("bigm_dual_cap", 1e4)),
        bigm_safety=float(pr.get("bigm_safety", 1.1)),
    )
    base = params.traffic_base
    coupling = doc["coupling"]
    nodes = tuple(_require(traffic, "nodes", "traffic"))
    roads = tuple(
        Road(
            id=str(_require(r, "id", "road")),
            tail=str(_require(r, "from", f"road {r.get('id')}")),
            head=str(_require(r, "to", f"road {r.get('id')}")),
            free_flow_time=float(_require(r, "free_flow_time_min", f"road {r.get('id')}")),
            capacity=float(_require(r, "capacity_pu", f"road {r.get('id')}")),
        )
        for r in _require(traffic, "roads", "traffic")
    )
    evcs = []
    for m in _require(traffic, "evcs", "traffic"):
        mid = str(_require(m, "id", "evcs"))
        if mid not in coupling:
            raise InstanceError(f"EVCS {mid}: no coupling entry (bus mapping)")
        evcs.append(
            Evcs(
                id=mid,
                node=str(_require(m, "node", f"EVCS {mid}")),
                bus=str(coupling[mid]),
                base_service_time=float(_require(m, "base_service_time_min", f"EVCS {mid}")),
                capacity=float(_require(m, "capacity_pu", f"EVCS {mid}")),
                charging_price=float(_require(m, "charging_price_cny_per_kwh", f"EVCS {mid}")),
            )
        )
    for mid in coupling:
        if mid not in {m.id for m in evcs}:
            raise InstanceError(f"coupling: unknown EVCS {mid!r}")
    od_pairs = tuple(
        OdPair(
            id=str(_require(od, "id", "od_pair")),
            origin=str(_require(od, "origin", f"od {od.get('id')}")),
            destination=str(_require(od, "destination", f"od {od.get('id')}")),
            gv_demand=float(od.get("gv_demand_veh_per_h", 0.0)) / base,
            ev_demand=float(od.get("ev_demand_veh_per_h", 0.0)) / base,
        )
        for od in _require(traffic, "od_pairs", "traffic")
    )
    buses = tuple(
        Bus(
            id=str(_require(b, "id", "bus")),
            traditional_demand=float(b.get("traditional_demand_mw", 0.0)),
            angle_min=float(b.get("angle_min_rad", -6.3)),
            angle_max=float(b.get("angle_max_rad", 6.3)),
        )
        for b in _require(power, "buses", "power")
    )
    lines = tuple(
        Line(
            id=str(_require(l, "id", "line")),
            from_bus=str(_require(l, "from", f"line {l.get('id')}")),
            to_bus=str(_require(l, "to", f"line {l.get('id')}")),
            reactance=float(_require(l, "reactance_pu", f"line {l.get('id')}")),
            flow_limit=float(_require(l, "flow_limit_mw", f"line {l.get('id')}")),
        )
        for l in _require(power, "lines", "power")
    )
    generators = tuple(
        Generator(
            id=str(_require(g, "id", "generator")),
            bus=str(_require(g, "bus", f"generator {g.get('id')}")),
            cost_a=float(_require(g, "cost_a", f"generator {g.get('id')}")),
            cost_b=float(_require(g, "cost_b", f"generator {g.get('id')}")),
            cost_c=float(_require(g, "cost_c", f"generator {g.get('id')}")),
            p_min=float(g.get("p_min_mw", 0.0)),
            p_max=float(_require(g, "p_max_mw", f"generator {g.get('id')}")),
        )
        for g in _require(power, "generators", "power")
    )
    sub = _require(power, "substation", "power")
    substation = Substation(
        bus=str(_require(sub, "bus", "substation")),
        energy_price=float(_require(sub, "energy_price_cny_per_mwh", "substation")),
        p_min=float(sub.get("p_min_mw", 0.0)),
        p_max=float(_require(sub, "p_max_mw", "substation")),
    )
    return CoupledInstance(
        name=str(doc.get("name", "instance")),
        nodes=nodes,
        roads=roads,
        evcs=tuple(evcs),
        od_pairs=od_pairs,
        buses=buses,
        lines=lines,
        generators=generators,
        substation=substation,
        params=params,
    )


# ---------------------------------------------------------------------------
# Path enumeration
# ---------------------------------------------------------------------------

def _road_graph(inst):
    """Collapsed simple digraph; parallel roads kept per (tail, head) arc."""
    parallel = {}
    for r in inst.roads:
        parallel.setdefault((r.tail, r.head), []).append(r)
    g = nx.DiGraph()
    g.add_nodes_from(inst.nodes)
    for (tail, head), rs in parallel.items():
        g.add_edge(tail, head, weight=min(r.free_flow_time for r in rs))
    return g, parallel


def _expand_node_path(node_path, parallel):
    """All road-id sequences realizing a node path, with their times."""
    hops = list(zip(node_path[:-1], node_path[1:]))
    choices = [sorted(parallel[h], key=lambda r: (r.free_flow_time, r.id)) for h in hops]
    for combo in itertools.product(*choices):
        roads = tuple(r.id for r in combo)
        yield roads, sum(r.free_flow_time for r in combo)


def _k_shortest(graph, parallel, origin, destination, k):
    """Up to k loop-free road sequences origin -> destination, ranked by time.

    Node paths come from the collapsed graph in nondecreasing lower-bound
    order; each is expanded over parallel-road choices, and collection stops
    once the lower bound exceeds the current k-th best expanded time.
    """
    if origin == destination:
        return [((), 0.0)]
    if origin not in graph or destination not in graph:
        return []
    found = []
    try:
        gen = nx.shortest_simple_paths(graph, origin, destination, weight="weight")
    except nx.NetworkXNoPath:
        return []
    try:
        for node_path in gen:
            lb = sum(
                graph[u][v]["weight"] for u, v in zip(node_path[:-1], node_path[1:])
            )
            if len(found) >= k:
                kth = sorted(t for _, t in found)[k - 1]
                if lb > kth + 1e-12:
                    break
            found.extend(_expand_node_path(node_path, parallel))
    except nx.NetworkXNoPath:
        return []
    found.sort(key=lambda item: (item[1], item[0]))
    return found[:k]


def enumerate_paths(inst, k=6):
    """Enumerate route alternatives for every O-D pair.

    GV: up to `k` loop-free routes ranked by free-flow time, ties broken by
    lexicographic road-id sequence.  EV (pairs with positive EV demand):
    (origin -> station, station -> destination) composites over every EVCS,
    keeping up to `k` shortest loop-free composites per station, deduplicated.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    graph, parallel = _road_graph(inst)
    road_map = {r.id: r for r in inst.roads}
    alts = []
    for od in inst.od_pairs:
        gv_routes = _k_shortest(graph, parallel, od.origin, od.destination, k)
        gv_routes = [rt for rt in gv_routes if rt[0]]
        if od.gv_demand > 0 and not gv_routes:
            raise InfeasiblePathError(
                f"O-D pair {od.id}: positive GV demand but no feasible route"
            )
        for i, (roads, t0) in enumerate(gv_routes):
            alts.append(
                PathAlt(f"{od.id}.gv{i}", od.id, "GV", roads, None, t0)
            )
        if od.ev_demand <= 0:
            continue
        ev_routes = []
        for station in inst.evcs:
            legs_in = _k_shortest(graph, parallel, od.origin, station.node, k)
            legs_out = _k_shortest(graph, parallel, station.node, od.destination, k)
            composites = []
            for (r1, t1), (r2, t2) in itertools.product(legs_in, legs_out):
                roads = r1 + r2
                if not roads:
                    continue
                if not _loop_free(roads, road_map, od.origin):
                    continue
                composites.append((roads, t1 + t2, station.id))
            composites.sort(key=lambda item: (item[1], item[0]))
            seen = set()
            kept = 0
            for roads, t0, sid in composites:
                if kept >= k:
                    break
                if (roads, sid) in seen:
                    continue
                seen.add((roads, sid))
                ev_routes.append((roads, t0, sid))
                kept += 1
        if not ev_routes:
            raise InfeasiblePathError(
                f"O-D pair {od.id}: positive EV demand but no feasible "
                f"route through any EVCS"
            )
        ev_routes.sort(key=lambda item: (item[1], item[0], item[2]))
        for i, (roads, t0, sid) in enumerate(ev_routes):
            alts.append(PathAlt(f"{od.id}.ev{i}", od.id, "EV", roads, sid, t0))
    return PathSet(k=k, alts=tuple(alts))


def _loop_free(roads, road_map, origin):
    """A road sequence is loop-free when it never revisits a node."""
    visited = [origin]
    for rid in roads:
        r = road_map[rid]
        if r.tail != visited[-1]:
            return False
        if r.head in visited:
            return False
        visited.append(r.head)
    return True


def incidence(inst, pathset):
    """Incidence structures: delta (road x alt), lam (od x alt), gam (evcs x alt).

    Returned as dicts of index maps plus dense 0/1 (or count) matrices in
    instance ordering; used by the constraint assembly and by property tests.
    """
    import numpy as np

    road_ix = {r.id: i for i, r in enumerate(inst.roads)}
    evcs_ix = {m.id: i for i, m in enumerate(inst.evcs)}
    od_ix = {od.id: i for i, od in enumerate(inst.od_pairs)}
    alts = pathset.alts
    delta = np.zeros((len(inst.roads), len(alts)))
    lam = np.zeros((len(inst.od_pairs), len(alts)))
    gam = np.zeros((len(inst.evcs), len(alts)))
    for j, alt in enumerate(alts):
        lam[od_ix[alt.od_id], j] = 1.0
        for rid in alt.roads:
            delta[road_ix[rid], j] += 1.0
        if alt.evcs is not None:
            gam[evcs_ix[alt.evcs], j] = 1.0
    return {
        "delta": delta,
        "lam": lam,
        "gam": gam,
        "road_ix": road_ix,
        "evcs_ix": evcs_ix,
        "od_ix": od_ix,
    }
