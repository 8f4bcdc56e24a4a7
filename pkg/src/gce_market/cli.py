"""``gce-market`` command line.

Exit codes: 0 success, 1 malformed input, 2 infeasible scenario, 3 solver
did not converge, 4 verification failed.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .equilibrium import (GceSolution, efficiency_check, regime_label, solve_gce, solve_swm, verify_gce)
from .errors import ConvergenceError, InfeasibleError, ScenarioError
from .scenario import (EXAMPLES, UNITS, example, load_scenario, result_record, scenario_from_dict,
                       sweep_points)
from .validation import validate_scenario

log = logging.getLogger("gce_market")

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_CONVERGENCE, EXIT_VERIFY = 0, 1, 2, 3, 4

CSV_HEADER = ["scenario_id", "model", "sweep_value", "gen_cost", "travel_cost", "compute_utility",
              "max_lmp", "min_lmp", "n_congested", "wall_ms"]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    return obj


def _emit(payload, out=None):
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=False) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _overrides(args):
    return {"seed": getattr(args, "seed", None), "value_of_time": getattr(args, "value_of_time", None),
            "tolerance": getattr(args, "tolerance", None)}


def _prepare(scenario):
    """Validate, then return the grid (with zero-capacity units where allowed) and the stacked FL."""
    report = validate_scenario(scenario)
    report.raise_if_invalid()
    for w in report.warnings:
        log.info("%s: %s", w["code"], w["message"])
    net = scenario.grid
    if (scenario.raw or {}).get("grid", {}).get("phantom_generators"):
        net = net.with_phantom_generators()
    return net, scenario.combined_fl(), report


def _solve(net, fl, model, settings):
    return (solve_gce if model == "gce" else solve_swm)(net, fl, settings)


def _verification(net, fl, sol: GceSolution, tol, settings):
    if sol.model == "gce":
        return verify_gce(net, fl, sol, tol, settings).as_dict()
    # planner output: it must attain the SWM optimum of a fresh solve
    ref = solve_swm(net, fl, settings)
    gap = abs(sol.objective - ref.objective) / (1.0 + abs(ref.objective))
    return {"passed": bool(gap <= tol), "objective_gap": gap, "tolerance": tol}


def cmd_solve(args):
    sc = load_scenario(args.scenario, **_overrides(args))
    net, fl, report = _prepare(sc)
    t0 = time.perf_counter()
    sol = _solve(net, fl, args.model, sc.solver)
    wall = (time.perf_counter() - t0) * 1e3
    ver = _verification(net, fl, sol, args.verify_tolerance, sc.solver)
    _emit({"schema": 1, "scenario_id": sc.scenario_id, "model": args.model, "units": dict(UNITS),
           "solution": sol.as_dict(), "verification": ver, "record": result_record(sc, sol, None, wall),
           "warnings": report.warnings, "scenario": sc.raw}, args.out)
    return EXIT_OK if ver["passed"] else EXIT_VERIFY


def cmd_verify(args):
    try:
        doc = json.loads(Path(args.result).read_text())
    except OSError as exc:
        raise ScenarioError(f"cannot read result: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"result is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or "solution" not in doc or "scenario" not in doc:
        raise ScenarioError("result file lacks the solution or scenario block")
    sc = scenario_from_dict(doc["scenario"], **_overrides(args))
    net, fl, _ = _prepare(sc)
    try:
        sol = GceSolution.from_dict(doc["solution"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"malformed solution block: {exc}") from None
    ver = _verification(net, fl, sol, args.verify_tolerance, sc.solver)
    _emit({"schema": 1, "scenario_id": sc.scenario_id, "model": sol.model, "verification": ver}, args.out)
    return EXIT_OK if ver["passed"] else EXIT_VERIFY


def cmd_compare(args):
    sc = load_scenario(args.scenario, **_overrides(args))
    net, fl, _ = _prepare(sc)
    gce = solve_gce(net, fl, sc.solver)
    swm = solve_swm(net, fl, sc.solver)
    eff = efficiency_check(net, fl, gce, args.verify_tolerance, sc.solver, swm=swm)
    _emit({"schema": 1, "scenario_id": sc.scenario_id, "units": dict(UNITS),
           "swm_gap": eff.swm_gap, "lmp_delta": (gce.lmp - swm.lmp).tolist(),
           "efficiency": eff.as_dict(), "regime": regime_label(gce, swm),
           "gce": result_record(sc, gce), "swm": result_record(sc, swm)}, args.out)
    return EXIT_OK


def sweep_rows(scenario, models=("gce", "swm"), timing=True, **overrides):
    """CSV rows in sweep order, one per value and model."""
    rows = []
    for value, sc in sweep_points(scenario, **overrides):
        net, fl, _ = _prepare(sc)
        for model in models:
            t0 = time.perf_counter()
            sol = _solve(net, fl, model, sc.solver)
            wall = (time.perf_counter() - t0) * 1e3
            rec = result_record(sc, sol, value, wall)
            rows.append([sc.scenario_id, model, repr(float(value)), repr(rec["gen_cost"]), repr(rec["travel_cost"]),
                         repr(rec["compute_utility"]), repr(max(rec["lmp"])), repr(min(rec["lmp"])),
                         str(len(rec["congested_lines"])), f"{wall:.1f}" if timing else "0"])
    return rows


def cmd_sweep(args):
    sc = load_scenario(args.scenario, **_overrides(args))
    if sc.sweep is None:
        raise ScenarioError("scenario has no sweep block")
    rows = sweep_rows(sc, tuple(args.models.split(",")), not args.no_timing, **_overrides(args))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    w.writerows(rows)
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_example(args):
    _emit(example(args.name), args.out)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="gce-market",
                                description="Market clearing with spatially flexible loads.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario=True):
        if scenario:
            sp.add_argument("scenario", help="scenario JSON file")
        sp.add_argument("--out", help="write output here instead of stdout")
        sp.add_argument("--tolerance", type=float, help="solver tolerance (overrides the file)")
        sp.add_argument("--seed", type=int, help="seed for sampled datacenter parameters")
        sp.add_argument("--value-of-time", type=float, help="$/h for TNTP travel times")
        sp.add_argument("--verify-tolerance", type=float, default=1e-6,
                        help="tolerance of the equilibrium checks (default 1e-6)")

    s = sub.add_parser("solve", help="solve one scenario and verify the result")
    common(s)
    s.add_argument("--model", choices=("gce", "swm"), default="gce")
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("verify", help="re-check a result written by solve")
    v.add_argument("result", help="result JSON from `solve`")
    common(v, scenario=False)
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("compare", help="GCE against the welfare benchmark")
    common(c)
    c.set_defaults(func=cmd_compare)

    w = sub.add_parser("sweep", help="CSV of both models over the sweep values")
    common(w)
    w.add_argument("--models", default="gce,swm", help="comma-separated subset of gce,swm")
    w.add_argument("--no-timing", action="store_true", help="write wall_ms as 0 (byte-stable output)")
    w.set_defaults(func=cmd_sweep)

    e = sub.add_parser("example", help="write a built-in scenario")
    e.add_argument("name", help=" | ".join(EXAMPLES))
    e.add_argument("--out")
    e.set_defaults(func=cmd_example)
    return p


def _setup_logging():
    level = os.environ.get("GCE_MARKET_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    if getattr(args, "models", None) and not set(args.models.split(",")) <= {"gce", "swm"}:
        print(f"error: unknown model in {args.models!r}", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        cert = exc.certificate if isinstance(exc.certificate, dict) else {}
        summary = {k: v for k, v in cert.items() if k in ("reason", "violations", "phase1")}
        print(json.dumps(_jsonable(summary), indent=2), file=sys.stderr)
        return EXIT_INFEASIBLE
    except ConvergenceError as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
