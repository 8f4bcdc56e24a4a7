import copy
import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import two_bus_ev
from gce_market.cli import CSV_HEADER, main, sweep_rows
from gce_market.equilibrium import regime_label, solve_gce, solve_swm
from gce_market.errors import ScenarioError
from gce_market.scenario import (EXAMPLES, example, load_schema, resolve_path, scenario_from_dict,
                                 sweep_points, validate_document, with_parameter)


def write(tmp_path, doc, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def run(args, capsys):
    code = main(args)
    out, err = capsys.readouterr()
    return code, out, err


def thresholds(a=2.0, b=1.0, q=1.0, g2_max=0.9):
    return g2_max - (a - b) * q / a, g2_max - (2 * a - b) * q / (2 * a)


def analytic_regime(f):
    hi, lo = thresholds()
    return "none" if f > hi else ("gce_only" if f > lo else "both")


def test_schema_is_versioned():
    s = load_schema()
    assert s["properties"]["schema"]["const"] == 1


@pytest.mark.parametrize("name", sorted(EXAMPLES))
def test_examples_validate(name):
    doc = example(name)
    validate_document(doc)
    assert doc["schema"] == 1
    assert "units" in doc


def test_example_loader_matches_fixture():
    sc = scenario_from_dict(example("two-bus-ev"))
    net, fl, *_ = two_bus_ev()
    got = solve_gce(sc.grid, sc.combined_fl())
    ref = solve_gce(net, fl)
    assert got.lmp == pytest.approx(ref.lmp, abs=1e-8)
    assert got.fl_load == pytest.approx(ref.fl_load, abs=1e-8)


def test_schema_rejects_unknown_field():
    doc = example("two-bus-ev")
    doc["grid"]["bogus"] = 1
    with pytest.raises(ScenarioError):
        validate_document(doc)


def test_wrong_schema_version_rejected():
    doc = example("two-bus-ev")
    doc["schema"] = 2
    with pytest.raises(ScenarioError):
        scenario_from_dict(doc)


def test_parameter_paths():
    doc = example("two-bus-ev")
    assert resolve_path(doc, "grid.line_limits.0") == 1.0
    new = with_parameter(doc, "grid.line_limits.0", 0.3)
    assert new["grid"]["line_limits"][0] == 0.3 and doc["grid"]["line_limits"][0] == 1.0
    with pytest.raises(ScenarioError):
        resolve_path(doc, "grid.generators")
    with pytest.raises(ScenarioError):
        resolve_path(doc, "grid.nope.0")


def test_kwh_inputs_scaled():
    doc = example("sioux-small")
    sc = scenario_from_dict(doc)
    kwh = doc["fl_systems"][0]["payload"]["charge_per_ev_kwh"]
    assert sc.fl_systems[0].meta["network"].charge_per_ev == pytest.approx(kwh * 1e-3)


def test_seed_override_changes_sampled_market():
    doc = example("two-dc")
    doc["fl_systems"][0]["payload"] = {"dc_bus": [0, 1], "energy_per_workload_kwh": 1.0,
                                       "sample": {"n_companies": 2, "seed": 1, "with_workload": True}}
    del doc["sweep"]
    a = scenario_from_dict(doc).fl_systems[0].meta["market"]
    b = scenario_from_dict(doc, seed=2).fl_systems[0].meta["market"]
    c = scenario_from_dict(doc, seed=1).fl_systems[0].meta["market"]
    assert not np.array_equal(a.eta, b.eta)
    assert np.array_equal(a.eta, c.eta)


def test_workload_sweep_total_load_monotone():
    doc = example("two-dc")
    doc["fl_systems"][0]["payload"]["workload"] = [4.0, 4.0]
    doc["sweep"] = {"parameter": "fl_systems.0.payload.energy_per_workload_mw", "values": [0.0, 5.0, 10.0]}
    loads = []
    for v, sc in sweep_points(scenario_from_dict(doc)):
        sol = solve_gce(sc.grid, sc.combined_fl())
        loads.append(sol.fl_load.sum())
    assert loads == pytest.approx([0.0, 40.0, 80.0], abs=1e-6)
    assert np.all(np.diff(loads) >= 0)


# ---------------------------------------------------------------- CLI


def test_solve_gce(tmp_path, capsys):
    path = write(tmp_path, example("two-bus-ev"))
    code, out, _ = run(["solve", path, "--model", "gce"], capsys)
    res = json.loads(out)
    assert code == 0
    assert res["solution"]["lmp"] == pytest.approx([2.2, 2.2], abs=1e-6)
    assert res["verification"]["passed"]
    assert res["units"]["money"] == "$/h"
    assert res["schema"] == 1


def test_solve_swm(tmp_path, capsys):
    path = write(tmp_path, example("two-bus-ev"))
    code, out, _ = run(["solve", path, "--model", "swm"], capsys)
    assert code == 0
    assert json.loads(out)["solution"]["fl_load"] == pytest.approx([0.25, 0.75], abs=1e-6)


def test_missing_file_exit_one(tmp_path, capsys):
    code, _, err = run(["solve", str(tmp_path / "missing.json")], capsys)
    assert code == 1
    assert err


def test_malformed_json_exit_one(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert run(["solve", str(p)], capsys)[0] == 1


def test_infeasible_exit_two(tmp_path, capsys):
    doc = example("two-bus-ev")
    for g in doc["grid"]["generators"]:
        g["g_max"] = 0.5
    code, _, err = run(["solve", write(tmp_path, doc)], capsys)
    assert code == 2
    assert "infeasible" in err


def test_non_convergence_exit_three(tmp_path, capsys):
    doc = example("two-bus-ev")
    doc["solver"] = {"tolerance": 1e-14, "max_iter": 1}
    assert run(["solve", write(tmp_path, doc)], capsys)[0] == 3


def test_bad_usage_exit_one(capsys):
    assert run(["frobnicate"], capsys)[0] == 1
    assert run(["sweep", "x.json", "--models", "gce,foo"], capsys)[0] == 1


def test_verify_round_trip_out_of_process(tmp_path):
    scen = write(tmp_path, example("two-bus-ev"))
    result = tmp_path / "result.json"
    solve = subprocess.run([sys.executable, "-m", "gce_market.cli", "solve", scen, "--out", str(result)],
                           capture_output=True, text=True)
    assert solve.returncode == 0, solve.stderr
    ver = subprocess.run([sys.executable, "-m", "gce_market.cli", "verify", str(result)],
                         capture_output=True, text=True)
    assert ver.returncode == 0, ver.stderr
    a = json.loads(result.read_text())["verification"]
    b = json.loads(ver.stdout)["verification"]
    for key in ("best_response_residual", "value_gap"):
        assert b[key] == pytest.approx(a[key], abs=1e-9)
    for key in ("rationality_residual", "feasibility_residual", "price_residual"):
        assert b["classical_ce"][key] == pytest.approx(a["classical_ce"][key], abs=1e-9)


def test_verify_detects_tampering(tmp_path, capsys):
    scen = write(tmp_path, example("two-bus-ev"))
    out = tmp_path / "r.json"
    assert run(["solve", scen, "--out", str(out)], capsys)[0] == 0
    doc = json.loads(out.read_text())
    doc["solution"]["lmp"][0] += 0.1
    bad = write(tmp_path, doc, "bad.json")
    assert run(["verify", bad], capsys)[0] == 4


def test_verify_rejects_incomplete_result(tmp_path, capsys):
    assert run(["verify", write(tmp_path, {"schema": 1})], capsys)[0] == 1


@pytest.mark.parametrize("f_max,regime,efficient", [(1.0, "none", False), (0.3, "gce_only", False),
                                                     (0.1, "both", True)])
def test_compare_regimes(tmp_path, capsys, f_max, regime, efficient):
    doc = example("two-bus-ev")
    doc["grid"]["line_limits"] = [f_max]
    code, out, _ = run(["compare", write(tmp_path, doc)], capsys)
    res = json.loads(out)
    assert code == 0
    assert res["regime"] == regime
    assert res["efficiency"]["efficient"] is efficient
    assert len(res["lmp_delta"]) == 2
    if efficient:
        assert res["swm_gap"] <= 1e-7
    else:
        assert res["swm_gap"] > 0


def test_regime_grid_matches_thresholds():
    hi, lo = thresholds()
    assert (hi, lo) == pytest.approx((0.4, 0.15))
    grid = np.linspace(0.011, 0.991, 50)
    for f in grid:
        net, fl, *_ = two_bus_ev(float(f))
        assert regime_label(solve_gce(net, fl), solve_swm(net, fl)) == analytic_regime(f), f


def test_sweep_rows(tmp_path, capsys):
    path = write(tmp_path, example("two-bus-ev"))
    out = tmp_path / "s.csv"
    assert run(["sweep", path, "--out", str(out)], capsys)[0] == 0
    lines = out.read_text().splitlines()
    assert lines[0].split(",") == CSV_HEADER
    rows = [l.split(",") for l in lines[1:]]
    assert len(rows) == 6
    assert [r[1] for r in rows] == ["gce", "swm"] * 3
    assert [float(r[2]) for r in rows] == [1.0, 1.0, 0.3, 0.3, 0.1, 0.1]
    g, w = rows[4], rows[5]
    assert float(g[3]) == pytest.approx(float(w[3]), abs=1e-6)
    assert [int(r[8]) for r in rows] == [0, 0, 1, 0, 1, 1]


def test_sweep_byte_identical(tmp_path, capsys):
    path = write(tmp_path, example("two-bus-ev"))
    outs = []
    for k in range(2):
        o = tmp_path / f"s{k}.csv"
        assert run(["sweep", path, "--no-timing", "--out", str(o)], capsys)[0] == 0
        outs.append(o.read_bytes())
    assert outs[0] == outs[1]


def test_empty_sweep_exit_one(tmp_path, capsys):
    doc = example("two-bus-ev")
    doc["sweep"]["values"] = []
    assert run(["sweep", write(tmp_path, doc)], capsys)[0] == 1


def test_sweep_without_block_exit_one(tmp_path, capsys):
    doc = example("two-bus-ev")
    del doc["sweep"]
    assert run(["sweep", write(tmp_path, doc)], capsys)[0] == 1


@pytest.mark.parametrize("name", ["two-bus-ev", "two-dc", "sioux-small"])
def test_example_command(tmp_path, capsys, name):
    out = tmp_path / "e.json"
    assert run(["example", name, "--out", str(out)], capsys)[0] == 0
    validate_document(json.loads(out.read_text()))


def test_unknown_example_lists_options(capsys):
    code, _, err = run(["example", "nope"], capsys)
    assert code == 1
    for name in EXAMPLES:
        assert name in err


def test_console_script_installed():
    r = subprocess.run(["gce-market", "example", "two-bus-ev"], capture_output=True, text=True)
    assert r.returncode == 0
    assert json.loads(r.stdout)["scenario_id"] == "two-bus-ev"


def test_pure_dispatch_mode(tmp_path, capsys):
    doc = example("two-bus-ev")
    doc["fl_systems"] = []
    del doc["sweep"]
    code, out, _ = run(["solve", write(tmp_path, doc)], capsys)
    assert code == 0
    assert json.loads(out)["solution"]["fl_decision"] == []


def test_sweep_rows_library_order():
    sc = scenario_from_dict(example("two-dc"))
    rows = sweep_rows(sc, timing=False)
    assert [float(r[2]) for r in rows] == [0.0, 0.0, 0.5, 0.5, 1.0, 1.0]
    assert all(r[-1] == "0" for r in rows)
