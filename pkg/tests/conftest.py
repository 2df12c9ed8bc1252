"""Shared fixtures and the acceptance-criterion reporting hook."""

import json

import pytest

from ptshare import bundled_instance_path, load_instance
from ptshare.network import (
    Bus,
    CoupledInstance,
    Evcs,
    Generator,
    GlobalParams,
    Line,
    OdPair,
    Road,
    Substation,
)


@pytest.fixture(scope="session")
def bundled():
    return load_instance(bundled_instance_path())


def make_tiny(gv=8.0, ev=6.0, **param_overrides):
    """3-node / 2-bus coupled instance small enough for brute-force cross-checks.

    Two parallel roads A->B feed a station at B; a direct road A->C competes
    with the station corridor B->C.
    """
    params = GlobalParams(
        omega=100.0, ev_charge_kwh=100.0, davidson_j=0.15,
        traffic_base=100.0, power_base=100.0, pwl_segments=5,
        toll_max=200.0, **param_overrides,
    )
    return CoupledInstance(
        name="tiny",
        nodes=("A", "B", "C"),
        roads=(
            Road("r1", "A", "B", 10.0, 20.0),
            Road("r2", "A", "B", 10.0, 20.0),
            Road("r3", "B", "C", 10.0, 20.0),
            Road("r4", "A", "C", 25.0, 20.0),
        ),
        evcs=(Evcs("cs1", "B", "P2", 25.0, 12.0, 0.6),),
        od_pairs=(OdPair("od1", "A", "C", gv, ev),),
        buses=(Bus("P1", 5.0), Bus("P2", 10.0)),
        lines=(Line("l1", "P1", "P2", 0.1, 80.0),),
        generators=(Generator("g1", "P2", 5.2, 200.0, 300.0, 0.0, 80.0),),
        substation=Substation("P1", 400.0, 0.0, 200.0),
        params=params,
    )


@pytest.fixture
def tiny():
    return make_tiny()


TINY_DOC = {
    "name": "tiny",
    "traffic": {
        "nodes": ["A", "B", "C"],
        "roads": [
            {"id": "r1", "from": "A", "to": "B", "free_flow_time_min": 10.0, "capacity_pu": 20.0},
            {"id": "r2", "from": "A", "to": "B", "free_flow_time_min": 10.0, "capacity_pu": 20.0},
            {"id": "r3", "from": "B", "to": "C", "free_flow_time_min": 10.0, "capacity_pu": 20.0},
            {"id": "r4", "from": "A", "to": "C", "free_flow_time_min": 25.0, "capacity_pu": 20.0},
        ],
        "evcs": [
            {"id": "cs1", "node": "B", "base_service_time_min": 25.0,
             "capacity_pu": 12.0, "charging_price_cny_per_kwh": 0.6},
        ],
        "od_pairs": [
            {"id": "od1", "origin": "A", "destination": "C",
             "gv_demand_veh_per_h": 800.0, "ev_demand_veh_per_h": 600.0},
        ],
    },
    "power": {
        "buses": [
            {"id": "P1", "traditional_demand_mw": 5.0},
            {"id": "P2", "traditional_demand_mw": 10.0},
        ],
        "lines": [
            {"id": "l1", "from": "P1", "to": "P2", "reactance_pu": 0.1, "flow_limit_mw": 80.0},
        ],
        "generators": [
            {"id": "g1", "bus": "P2", "cost_a": 5.2, "cost_b": 200.0,
             "cost_c": 300.0, "p_min_mw": 0.0, "p_max_mw": 80.0},
        ],
        "substation": {"bus": "P1", "energy_price_cny_per_mwh": 400.0, "p_max_mw": 200.0},
    },
    "coupling": {"cs1": "P2"},
    "params": {
        "omega_cny_per_h": 100.0,
        "ev_charge_kwh": 100.0,
        "davidson_j": 0.15,
        "traffic_base_veh_per_h": 100.0,
        "power_base_mva": 100.0,
        "pwl_segments": 5,
        "toll_max_cny": 200.0,
    },
}


def write_tiny_json(path, mutate=None):
    """Dump the tiny instance schema document, optionally mutated first."""
    doc = json.loads(json.dumps(TINY_DOC))
    if mutate is not None:
        mutate(doc)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
    return path


@pytest.fixture
def tiny_json(tmp_path):
    return write_tiny_json(tmp_path / "tiny.json")


# -- acceptance criterion reporting -----------------------------------------

ACCEPTANCE_RESULTS = {}


def record_criterion(number, label, passed):
    ACCEPTANCE_RESULTS[number] = (label, bool(passed))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        label, passed = ACCEPTANCE_RESULTS[number]
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number} ({label}): {verdict}")
