"""Scenario files: JSON in, model objects out.

A scenario is a grid, a list of tagged FL systems and solver settings, with an
optional one-parameter sweep.  Files carry ``"schema": 1`` and are checked
against ``data/scenario_schema.json`` before any model object is built.

Units: money in $/h, power in MW.  Per-vehicle EV charge and per-workload
datacenter energy may be given in kWh; over the one-hour clearing interval
kWh equals kW, so they are scaled to MW by 1e-3.
"""
from __future__ import annotations

import copy
import json
import logging
from dataclasses import replace
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .datacenter import (DEFAULT_SEED, DatacenterMarket, build_datacenter_fl, sample_queueing_market,
                         utilities)
from .errors import ScenarioError
from .model import (LARGE_LIMIT, FlSystemSpec, GeneratorParams, Polyhedron, PowerNetwork, QuadraticFunction,
                    Scenario, SolverSettings, ptdf_from_lines)
from .transport import (VALUE_OF_TIME, Edge, OdPair, TransportNetwork, build_transport_fl, enumerate_routes,
                        parse_tntp, travel_cost)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
KWH_TO_MW = 1e-3
UNITS = {"money": "$/h", "power": "MW", "energy_per_unit": "MWh over a 1 h interval (kWh inputs scaled by 1e-3)",
         "price": "$/MWh", "flow": "vehicles/h"}


def load_schema() -> dict:
    return json.loads(resources.files("gce_market.data").joinpath("scenario_schema.json").read_text())


def _data_text(name):
    return resources.files("gce_market.data").joinpath(name).read_text()


# --------------------------------------------------------------------------
# JSON -> objects


def _grid(d) -> PowerNetwork:
    gens = [GeneratorParams(int(g["bus"]), float(g["quad_coeff"]), float(g.get("lin_coeff", 0.0)),
                            float(g.get("g_min", 0.0)), float(g.get("g_max", LARGE_LIMIT)))
            for g in d["generators"]]
    load = np.asarray(d["stationary_load"], float)
    n = load.size
    ref = d.get("reference_bus")
    if "ptdf" in d:
        H = np.asarray(d["ptdf"], float).reshape(-1, n)
    else:
        lines = [(int(a), int(b), float(x)) for a, b, x in d["lines"]]
        H = ptdf_from_lines(n, lines, 0 if ref is None else int(ref))
        ref = 0 if ref is None else ref
    limits = d["line_limits"]
    if np.isscalar(limits):
        limits = [limits] * H.shape[0]
    if len(limits) != H.shape[0]:
        raise ScenarioError(f"{len(limits)} line limits for {H.shape[0]} lines")
    return PowerNetwork(H, np.asarray(limits, float), load, gens, None if ref is None else int(ref))


def _charge(p, kind):
    """Per-unit energy in MW from the ``*_mw`` or ``*_kwh`` field."""
    mw, kwh = f"{kind}_mw", f"{kind}_kwh"
    if mw in p and kwh in p:
        raise ScenarioError(f"give only one of {mw} and {kwh}")
    if mw in p:
        return float(p[mw])
    if kwh in p:
        return float(p[kwh]) * KWH_TO_MW
    return 1.0


def _transport(p, n_buses, name, value_of_time=None):
    vot = float(value_of_time if value_of_time is not None else p.get("value_of_time", VALUE_OF_TIME))
    if "builtin" in p:
        if p["builtin"] != "sioux-falls":
            raise ScenarioError(f"unknown built-in network {p['builtin']!r}")
        tn = parse_tntp(_data_text("SiouxFalls_net.tntp"), _data_text("SiouxFalls_trips.tntp"), vot,
                        p.get("power_policy", "affine"))
    elif "tntp" in p:
        t = p["tntp"]
        try:
            net_text = Path(t["network"]).read_text()
            trips_text = Path(t["trips"]).read_text()
        except OSError as exc:
            raise ScenarioError(f"cannot read TNTP file: {exc}") from None
        tn = parse_tntp(net_text, trips_text, vot, p.get("power_policy", "affine"))
    else:
        g = p["network"]
        edges = tuple(Edge(int(e["from"]), int(e["to"]), float(e["base_cost"]), float(e["slope"]))
                      for e in g["edges"])
        ods = tuple(OdPair(int(o["origin"]), int(o["dest"]), float(o["demand"])) for o in g["od_pairs"])
        tn = TransportNetwork(int(g["nodes"]), edges, ods, value_of_time=vot, first_node=int(g.get("first_node", 1)))
    chargers = {int(k): int(v) for k, v in p.get("chargers", {}).items()}
    for rng in p.get("charger_ranges", ()):
        lo, hi = rng["nodes"]
        for node in range(int(lo), int(hi) + 1):
            chargers.setdefault(node, int(rng["bus"]))
    bad = [b for b in chargers.values() if not 0 <= b < n_buses]
    if bad:
        raise ScenarioError(f"{name}: chargers attached to unknown buses {sorted(set(bad))}")
    tn = tn.with_chargers(chargers, _charge(p, "charge_per_ev"))
    tn.validate()
    r = p.get("routes", {})
    explicit = None
    if "explicit" in r:
        explicit = [(int(e["od"]), [int(k) for k in e["edges"]], int(e["charger"])) for e in r["explicit"]]
    routes = enumerate_routes(tn, r.get("mode", "shared_path"), explicit)
    fl = build_transport_fl(tn, routes, n_buses, name, bool(p.get("allow_flat_preference", False)))
    return replace(fl, meta={**fl.meta, "network": tn, "routes": routes})


def _blocks(rows, nd):
    return [np.asarray(b, float).reshape(nd, nd) for b in rows]


def _datacenter(p, n_buses, name, seed=None):
    q = _charge(p, "energy_per_workload")
    if "sample" in p:
        s = p["sample"]
        use_seed = seed if seed is not None else int(s.get("seed", DEFAULT_SEED))
        mkt = sample_queueing_market(int(s["n_companies"]), tuple(int(b) for b in p["dc_bus"]), q, use_seed,
                                     s.get("distance"), bool(s.get("with_workload", True)), name)
    else:
        nd = len(p["dc_bus"])
        eta = np.asarray(p["eta"], float)
        K = eta.shape[0]
        cross = [[None if b is None else np.asarray(b, float).reshape(nd, nd) for b in row]
                 for row in p.get("cross_blocks", [[None] * K for _ in range(K)])]
        up = p.get("upper")
        mkt = DatacenterMarket(tuple(int(b) for b in p["dc_bus"]), q, eta, _blocks(p["self_blocks"], nd), cross,
                               p.get("workload"), p.get("lower", 0.0), np.inf if up is None else up, name)
    if any(not 0 <= b < n_buses for b in mkt.dc_bus):
        raise ScenarioError(f"{name}: datacenter attached to an unknown bus")
    fl = build_datacenter_fl(mkt, n_buses, name)
    return replace(fl, meta={**fl.meta, "market": mkt})


def _raw(p, n_buses, name):
    A = np.asarray(p["load_map"], float).reshape(n_buses, -1)
    n = A.shape[1]
    f = p["feasible"]

    def mat(key, rows):
        return np.asarray(f.get(key, np.zeros((0, n))), float).reshape(rows, n) if rows else np.zeros((0, n))
    eq_rhs = np.asarray(f.get("eq_rhs", []), float)
    in_rhs = np.asarray(f.get("ineq_rhs", []), float)
    bound = lambda v, default: np.full(n, default) if v is None else np.asarray(
        [default if b is None else b for b in np.broadcast_to(np.asarray(v, object), (n,))], float)
    poly = Polyhedron(mat("eq_lhs", eq_rhs.size), eq_rhs, mat("ineq_lhs", in_rhs.size), in_rhs,
                      bound(f.get("lower"), -np.inf), bound(f.get("upper"), np.inf))

    def quad(q):
        return QuadraticFunction(np.asarray(q["quad"], float).reshape(n, n), np.asarray(q["lin"], float),
                                 float(q.get("const", 0.0)))
    pref = quad(p["preference"])
    wel = quad(p["welfare_preference"]) if "welfare_preference" in p else pref
    return FlSystemSpec(name, A, poly, pref, wel,
                        meta={"kind": "raw", "allow_flat_preference": bool(p.get("allow_flat_preference", False))})


def validate_document(doc: dict):
    """Schema check; raises :class:`ScenarioError` with the first problem."""
    try:
        jsonschema.validate(doc, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(v) for v in exc.absolute_path) or "<root>"
        raise ScenarioError(f"scenario does not match schema at {where}: {exc.message}") from None


def scenario_from_dict(doc: dict, *, seed=None, value_of_time=None, tolerance=None) -> Scenario:
    """Build a :class:`Scenario` from a parsed JSON document.

    ``seed``, ``value_of_time`` and ``tolerance`` override the file.
    """
    validate_document(doc)
    grid = _grid(doc["grid"])
    n = grid.n_buses
    specs = []
    for k, item in enumerate(doc.get("fl_systems", [])):
        name = item.get("name", f"{item['type']}{k}")
        payload = item["payload"]
        if item["type"] == "transport":
            specs.append(_transport(payload, n, name, value_of_time))
        elif item["type"] == "datacenter":
            specs.append(_datacenter(payload, n, name, seed))
        else:
            specs.append(_raw(payload, n, name))
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ScenarioError(f"FL system names must be unique, got {names}")
    sv = doc.get("solver", {})
    settings = SolverSettings(float(tolerance if tolerance is not None else sv.get("tolerance", 1e-8)),
                              int(sv.get("max_iter", 100)))
    sweep = doc.get("sweep")
    if sweep is not None:
        if not sweep["values"]:
            raise ScenarioError("sweep has no values")
        resolve_path(doc, sweep["parameter"])
    return Scenario(grid, tuple(specs), settings, str(doc.get("scenario_id", "scenario")), sweep, copy.deepcopy(doc))


def load_scenario(path, **overrides) -> Scenario:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a JSON object")
    return scenario_from_dict(doc, **overrides)


# --------------------------------------------------------------------------
# sweeps


def _split(path):
    return [int(p) if p.lstrip("-").isdigit() else p for p in path.split(".")]


def resolve_path(doc, path):
    """Value at a dotted path such as ``grid.line_limits.0``; must be a scalar."""
    cur = doc
    for part in _split(path):
        try:
            cur = cur[part]
        except (KeyError, IndexError, TypeError):
            raise ScenarioError(f"sweep parameter {path!r} does not resolve") from None
    if isinstance(cur, bool) or not isinstance(cur, (int, float)):
        raise ScenarioError(f"sweep parameter {path!r} is not a scalar")
    return cur


def with_parameter(doc, path, value):
    """Copy of ``doc`` with the scalar at ``path`` replaced."""
    resolve_path(doc, path)
    out = copy.deepcopy(doc)
    parts = _split(path)
    cur = out
    for part in parts[:-1]:
        cur = cur[part]
    cur[parts[-1]] = value
    return out


def sweep_points(scenario: Scenario, **overrides):
    """``(value, Scenario)`` pairs in sweep order."""
    if not scenario.sweep:
        raise ScenarioError("scenario has no sweep block")
    path = scenario.sweep["parameter"]
    values = scenario.sweep["values"]
    if not values:
        raise ScenarioError("sweep has no values")
    return [(v, scenario_from_dict(with_parameter(scenario.raw, path, v), **overrides)) for v in values]


# --------------------------------------------------------------------------
# result records


def fl_costs(scenario: Scenario, x) -> dict:
    """Travel cost and computing utility of a stacked decision, by system type."""
    x = np.asarray(x, float)
    travel = utility = 0.0
    off = 0
    for fl in scenario.fl_systems:
        xs = x[off:off + fl.decision_dim]
        off += fl.decision_dim
        if "routes" in fl.meta:
            travel += travel_cost(fl.meta["network"], fl.meta["routes"], xs)
        elif "market" in fl.meta:
            utility += float(np.sum(utilities(fl.meta["market"], xs)))
    return {"travel_cost": travel, "compute_utility": utility}


def result_record(scenario: Scenario, solution, sweep_value=None, wall_ms=None) -> dict:
    costs = fl_costs(scenario, solution.fl_decision)
    return {
        "scenario_id": scenario.scenario_id, "model": solution.model, "sweep_value": sweep_value,
        "lmp": [float(v) for v in solution.lmp], "gen_cost": float(solution.generation_cost),
        "travel_cost": costs["travel_cost"], "compute_utility": costs["compute_utility"],
        "congested_lines": list(solution.congested_lines), "wall_ms": wall_ms, "units": dict(UNITS),
    }


# --------------------------------------------------------------------------
# built-in examples


def two_bus_ev(line_limit=1.0, a=2.0, b=1.0, q=1.0) -> dict:
    """Two routes from node 1 to node 2, charging at bus 0 or bus 1.

    Route 1 (via node 3) has congestion cost ``a * flow``, route 2 (via node
    4) a fixed cost ``b``.  Generator 0 is expensive but large, generator 1
    cheap and capped at 0.9 MW; one stationary MW sits at bus 0.
    """
    return {
        "schema": SCHEMA_VERSION, "scenario_id": "two-bus-ev", "units": dict(UNITS),
        "grid": {
            "ptdf": [[1.0, 0.0]], "reference_bus": 1, "line_limits": [line_limit], "stationary_load": [1.0, 0.0],
            "generators": [{"bus": 0, "quad_coeff": 1.0, "g_max": 3.0}, {"bus": 1, "quad_coeff": 0.01, "g_max": 0.9}],
        },
        "fl_systems": [{
            "type": "transport", "name": "ev",
            "payload": {
                "network": {"nodes": 4, "first_node": 1,
                            "edges": [{"from": 1, "to": 3, "base_cost": 0.0, "slope": a},
                                      {"from": 3, "to": 2, "base_cost": 0.0, "slope": 0.0},
                                      {"from": 1, "to": 4, "base_cost": b, "slope": 0.0},
                                      {"from": 4, "to": 2, "base_cost": 0.0, "slope": 0.0}],
                            "od_pairs": [{"origin": 1, "dest": 2, "demand": 1.0}]},
                "chargers": {"3": 0, "4": 1}, "charge_per_ev_mw": q,
                "routes": {"explicit": [{"od": 0, "edges": [0, 1], "charger": 3},
                                        {"od": 0, "edges": [2, 3], "charger": 4}]},
            },
        }],
        "solver": {"tolerance": 1e-8, "max_iter": 100},
        "sweep": {"parameter": "grid.line_limits.0", "values": [1.0, 0.3, 0.1]},
    }


def two_dc(theta=0.25, eta=10.0, q=1.0, gamma=(1.0, 1.0)) -> dict:
    """Two companies, two datacenters on a two-bus grid with an ample line.

    ``M_kk = I`` and ``M_12 = M_21 = theta I``; the market is symmetric, so
    the equilibrium solves one QP.
    """
    I = np.eye(2).tolist()
    D = (theta * np.eye(2)).tolist()
    return {
        "schema": SCHEMA_VERSION, "scenario_id": "two-dc", "units": dict(UNITS),
        "grid": {
            "ptdf": [[1.0, 0.0]], "reference_bus": 1, "line_limits": [LARGE_LIMIT], "stationary_load": [0.0, 0.0],
            "generators": [{"bus": 0, "quad_coeff": gamma[0]}, {"bus": 1, "quad_coeff": gamma[1]}],
        },
        "fl_systems": [{
            "type": "datacenter", "name": "dc",
            "payload": {"dc_bus": [0, 1], "energy_per_workload_mw": q, "eta": [[eta, eta], [eta, eta]],
                        "self_blocks": [I, I], "cross_blocks": [[None, D], [D, None]], "upper": 100.0},
        }],
        "solver": {"tolerance": 1e-8, "max_iter": 100},
        "sweep": {"parameter": "fl_systems.0.payload.energy_per_workload_mw", "values": [0.0, 0.5, 1.0]},
    }


# Sioux Falls nodes 1-8 charge at bus 0, 9-16 at bus 1, 17-24 at bus 2.
SIOUX_CHARGER_RANGES = ({"nodes": [1, 8], "bus": 0}, {"nodes": [9, 16], "bus": 1}, {"nodes": [17, 24], "bus": 2})


def sioux_small(charge_kwh=20.0, line_limit=1500.0) -> dict:
    """Full Sioux Falls road network on a synthetic 3-bus triangle grid.

    Every node is a charging station; nodes map to buses by id range (see
    ``SIOUX_CHARGER_RANGES``).  Each OD pair has two routes: the free-flow
    shortest path charging at the origin and the second shortest path
    charging at the destination.  Generator data are synthetic and give
    prices of $12-20/MWh; line 3 (bus 0 to bus 2) congests from about
    10 kWh per vehicle.
    """
    return {
        "schema": SCHEMA_VERSION, "scenario_id": "sioux-small", "units": dict(UNITS),
        "grid": {
            "lines": [[0, 1, 1.0], [1, 2, 1.0], [0, 2, 1.0]], "reference_bus": 0,
            "line_limits": [line_limit] * 3, "stationary_load": [3000.0, 2000.0, 2500.0],
            "generators": [{"bus": 0, "quad_coeff": 0.5e-3, "lin_coeff": 8.0, "g_max": 12000.0},
                           {"bus": 1, "quad_coeff": 1.0e-3, "lin_coeff": 6.0, "g_max": 8000.0},
                           {"bus": 2, "quad_coeff": 2.0e-3, "lin_coeff": 10.0, "g_max": 6000.0}],
        },
        "fl_systems": [{
            "type": "transport", "name": "sioux-ev",
            "payload": {"builtin": "sioux-falls", "value_of_time": VALUE_OF_TIME, "power_policy": "affine",
                        "charger_ranges": [dict(r) for r in SIOUX_CHARGER_RANGES],
                        "charge_per_ev_kwh": charge_kwh, "routes": {"mode": "two_shortest"},
                        "allow_flat_preference": True},
        }],
        "solver": {"tolerance": 1e-8, "max_iter": 100},
        "sweep": {"parameter": "fl_systems.0.payload.charge_per_ev_kwh", "values": [1.0, 10.0, 20.0]},
    }


EXAMPLES = {"two-bus-ev": two_bus_ev, "two-dc": two_dc, "sioux-small": sioux_small}


def example(name) -> dict:
    try:
        return EXAMPLES[name]()
    except KeyError:
        raise ScenarioError(f"unknown example {name!r}; choose from {', '.join(EXAMPLES)}") from None
