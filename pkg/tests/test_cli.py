"""Command-line interface: exit codes, CSV artifacts, determinism."""

import argparse
import csv

import pytest

from ptshare.cli import SWEEP_COLUMNS, _parse_grid, main
from ptshare.milp import read_mps

from conftest import write_tiny_json


def _run(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    return exc.value.code


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_parse_grid():
    assert _parse_grid("0:1:0.25") == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert _parse_grid("0.3:0.3:0.1") == [0.3]
    for bad in ("0:1", "a:b:c", "0:1:0", "1:0:0.1"):
        with pytest.raises(argparse.ArgumentTypeError):
            _parse_grid(bad)


def test_validate_ok(tiny_json, capsys):
    assert _run(["validate", "--instance", str(tiny_json)]) == 0
    out = capsys.readouterr().out
    assert "3 traffic nodes" in out
    assert "4 roads" in out
    assert "1 EVCSs" in out


def test_validate_rejects_truncated_json(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text('{"name": "x", "traffic": {')
    assert _run(["validate", "--instance", str(path)]) == 1
    assert "validation error" in capsys.readouterr().err


def test_validate_rejects_missing_coupling(tmp_path, capsys):
    path = write_tiny_json(tmp_path / "t.json", lambda d: d.update(coupling={}))
    assert _run(["validate", "--instance", str(path)]) == 1
    assert "cs1" in capsys.readouterr().err


def test_load_error_in_sweep_exits_validation(tmp_path, capsys):
    path = tmp_path / "none.json"
    assert _run(["sweep", "--instance", str(path), "--out", str(tmp_path)]) == 1
    assert "validation error" in capsys.readouterr().err


def test_disconnected_od_exits_infeasible(tmp_path, capsys):
    def add_stranded_od(doc):
        doc["traffic"]["od_pairs"].append({
            "id": "od_stranded", "origin": "C", "destination": "A",
            "gv_demand_veh_per_h": 100.0, "ev_demand_veh_per_h": 0.0,
        })
    path = write_tiny_json(tmp_path / "t.json", add_stranded_od)
    code = _run(["pre", "--instance", str(path), "--out", str(tmp_path / "o")])
    assert code == 2
    err = capsys.readouterr().err
    assert "infeasible" in err and "od_stranded" in err


def test_pre_writes_benchmark_artifacts(tiny_json, tmp_path, capsys):
    out = tmp_path / "pre_out"
    assert _run(["pre", "--instance", str(tiny_json), "--out", str(out)]) == 0
    stdout = capsys.readouterr().out
    assert "Gamma0" in stdout and "eta0" in stdout
    loads = _read_csv(out / "loads_pre.csv")
    assert loads[0] == ["evcs", "y_pu", "p_mw"]
    assert loads[1][0] == "cs1"
    assert float(loads[1][2]) == pytest.approx(10.0 * float(loads[1][1]))
    gen = _read_csv(out / "gen_pre.csv")
    assert gen[0] == ["unit", "output_mw", "cost_cny_per_h"]
    assert [row[0] for row in gen[1:]] == ["g1", "substation"]


def test_sweep_writes_expected_artifacts(tiny_json, tmp_path, capsys):
    out = tmp_path / "sweep_out"
    code = _run([
        "sweep", "--instance", str(tiny_json), "--out", str(out),
        "--alpha-grid", "0:0.2:0.1",
    ])
    assert code == 0
    stdout = capsys.readouterr().out
    assert "alpha*" in stdout
    table = _read_csv(out / "sweep.csv")
    assert table[0] == SWEEP_COLUMNS
    assert len(table) == 4  # header + three ratios
    assert [row[0] for row in table[1:]] == ["0.0", "0.1", "0.2"]
    assert all(row[10] == "optimal" for row in table[1:])
    for tag in ("alpha_0", "alpha_0.1", "alpha_0.2"):
        assert (out / f"loads_{tag}.csv").exists()
        assert (out / f"gen_{tag}.csv").exists()
    # accounting columns satisfy psi + h = gamma + eta in the file itself
    for row in table[1:]:
        gamma, eta, psi, h = (float(row[i]) for i in (1, 2, 5, 6))
        assert psi + h == pytest.approx(gamma + eta, abs=1e-6)


def test_sweep_deterministic_apart_from_timing(tiny_json, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        code = _run([
            "sweep", "--instance", str(tiny_json), "--out", str(out),
            "--alpha-grid", "0:0.2:0.2",
        ])
        assert code == 0
        outs.append(out)
    wall_ix = SWEEP_COLUMNS.index("wall_seconds")
    tables = []
    for out in outs:
        tables.append([
            [cell for i, cell in enumerate(row) if i != wall_ix]
            for row in _read_csv(out / "sweep.csv")
        ])
    assert tables[0] == tables[1]
    for tag in ("alpha_0", "alpha_0.2"):
        assert (outs[0] / f"loads_{tag}.csv").read_bytes() == \
            (outs[1] / f"loads_{tag}.csv").read_bytes()


def test_export_mps_round_trips(tiny_json, tmp_path):
    out = tmp_path / "mps_out"
    code = _run([
        "export-mps", "--instance", str(tiny_json), "--out", str(out),
        "--alpha", "0.5",
    ])
    assert code == 0
    target = out / "single_level_alpha_0.5.mps"
    assert target.exists()
    model = read_mps(target)
    assert model.binary_names  # complementarity gates survive the export
    assert any(v.name.startswith("tn.") for v in model.variables)
    assert any(v.name.startswith("pd.") for v in model.variables)
