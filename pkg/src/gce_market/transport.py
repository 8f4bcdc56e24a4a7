"""Electrified transportation as a flexible load.

Drivers pick a route and a charging station; the aggregate route flows are
the FL decision.  Edge costs are affine, ``c_e(y) = c0_e + slope_e * y``,
which TNTP data enter as ``c0 = fftime * value_of_time`` and
``slope = c0 * b / capacity``.  The Beckmann potential of affine costs is a
quadratic in the route flows, so the user equilibrium is one QP.
"""
from __future__ import annotations

import heapq
import logging
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ScenarioError
from .model import FlSystemSpec, Polyhedron, QuadraticFunction

log = logging.getLogger(__name__)

VALUE_OF_TIME = 17.09  # $/hour


@dataclass(frozen=True)
class Edge:
    tail: int
    head: int
    base_cost: float
    slope: float
    # raw TNTP columns, kept for round trips
    capacity: float = 1.0
    length: float = 0.0
    fftime: float = 0.0
    b: float = 0.0
    power: float = 1.0
    speed: float = 0.0
    toll: float = 0.0
    link_type: int = 1

    @property
    def delay_coeff(self) -> float:
        """kappa in ``c0 (1 + kappa y)``; infinite for a pure-delay edge with c0 = 0."""
        if self.base_cost == 0:
            return 0.0 if self.slope == 0 else np.inf
        return self.slope / self.base_cost

    def cost(self, y):
        return self.base_cost + self.slope * y


@dataclass(frozen=True)
class OdPair:
    origin: int
    dest: int
    demand: float


@dataclass(frozen=True)
class TransportNetwork:
    """Road graph with OD demand and charger-to-bus attachments.

    Node ids are the file's (1-based for TNTP).  ``charger_bus`` maps a
    charging node to its grid bus; ``charge_per_ev`` is in MW per vehicle
    over the one-hour interval.
    """

    n_nodes: int
    edges: tuple
    od_pairs: tuple
    charger_bus: dict = field(default_factory=dict)
    charge_per_ev: float = 1.0
    value_of_time: float = VALUE_OF_TIME
    first_node: int = 1
    metadata: dict = field(default_factory=dict, compare=False)
    warnings: tuple = field(default=(), compare=False)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def chargers(self):
        return tuple(sorted(self.charger_bus))

    def with_chargers(self, charger_bus, charge_per_ev=None) -> "TransportNetwork":
        return replace(self, charger_bus=dict(charger_bus),
                       charge_per_ev=self.charge_per_ev if charge_per_ev is None else float(charge_per_ev))

    def node_ids(self):
        return range(self.first_node, self.first_node + self.n_nodes)

    def validate(self):
        ids = set(self.node_ids())
        for k, e in enumerate(self.edges):
            if e.tail not in ids or e.head not in ids:
                raise ScenarioError(f"edge {k} uses an unknown node")
            if e.base_cost < 0 or e.slope < 0:
                raise ScenarioError(f"edge {k} has a negative cost coefficient")
        for od in self.od_pairs:
            if od.origin not in ids or od.dest not in ids:
                raise ScenarioError(f"OD pair {od.origin}->{od.dest} uses an unknown node")
            if not od.demand > 0:
                raise ScenarioError(f"OD pair {od.origin}->{od.dest} has non-positive demand")
        for node, bus in self.charger_bus.items():
            if node not in ids:
                raise ScenarioError(f"charger at unknown node {node}")
            if not isinstance(bus, (int, np.integer)):
                raise ScenarioError(f"charger {node} must map to a single bus")
        return self


# --------------------------------------------------------------------------
# TNTP I/O

_META = re.compile(r"<([^>]+)>\s*(.*)")


def _strip(line):
    i = line.find("~")
    return (line if i < 0 else line[:i]).strip()


def _read_metadata(lines, required):
    meta, body_start = {}, None
    for i, raw in enumerate(lines):
        line = _strip(raw)
        if not line:
            continue
        m = _META.match(line)
        if not m:
            if meta:
                raise ScenarioError(f"unexpected line before <END OF METADATA>: {raw!r}")
            body_start = i
            break
        key = m.group(1).strip().upper()
        if key == "END OF METADATA":
            body_start = i + 1
            break
        meta[key] = m.group(2).strip()
    missing = [k for k in required if k not in meta]
    if missing:
        raise ScenarioError(f"missing metadata: {', '.join('<' + k + '>' for k in missing)}")
    if (required or meta) and body_start is None:
        raise ScenarioError("missing <END OF METADATA>")
    return meta, lines[body_start:] if body_start is not None else []


def parse_tntp(net_text: str, trips_text: str | None = None, value_of_time=VALUE_OF_TIME,
               power_policy="affine") -> TransportNetwork:
    """Parse TNTP network (and optionally trips) text.

    Parameters
    ----------
    power_policy : {"affine", "strict"}
        Only affine link costs are modelled.  ``"strict"`` rejects rows whose
        BPR power is not 1; ``"affine"`` keeps the linear part of the curve
        and records a warning.

    Raises
    ------
    ScenarioError
        Missing metadata, malformed rows, unknown nodes, negative flows.
    """
    if power_policy not in ("affine", "strict"):
        raise ScenarioError(f"unknown power policy {power_policy!r}")
    lines = net_text.splitlines()
    meta, body = _read_metadata(lines, ["NUMBER OF NODES", "NUMBER OF LINKS"])
    try:
        n_nodes = int(meta["NUMBER OF NODES"])
        n_links = int(meta["NUMBER OF LINKS"])
    except ValueError as exc:
        raise ScenarioError(f"bad metadata value: {exc}") from None
    first = 1
    edges, warnings, nonaffine = [], [], 0
    for raw in body:
        line = _strip(raw)
        if not line:
            continue
        if ";" not in line:
            raise ScenarioError(f"link row without terminating ';': {raw!r}")
        fields = line.split(";")[0].split()
        if len(fields) != 10:
            raise ScenarioError(f"link row has {len(fields)} fields, expected 10: {raw!r}")
        try:
            init, term = int(fields[0]), int(fields[1])
            cap, length, fft, b, power, speed, toll = (float(v) for v in fields[2:9])
            ltype = int(float(fields[9]))
        except ValueError:
            raise ScenarioError(f"non-numeric link row: {raw!r}") from None
        for node in (init, term):
            if not first <= node < first + n_nodes:
                raise ScenarioError(f"link row refers to unknown node {node}")
        if cap <= 0:
            raise ScenarioError(f"link {init}->{term} has non-positive capacity")
        if power != 1.0:
            if power_policy == "strict":
                raise ScenarioError(f"link {init}->{term} has BPR power {power}; only affine costs are supported")
            nonaffine += 1
        c0 = fft * value_of_time
        edges.append(Edge(init, term, c0, c0 * b / cap, cap, length, fft, b, power, speed, toll, ltype))
    if len(edges) != n_links:
        raise ScenarioError(f"metadata announces {n_links} links, found {len(edges)}")
    if nonaffine:
        msg = f"{nonaffine} links have BPR power != 1; using the affine curve c0 (1 + b y / capacity)"
        log.info(msg)
        warnings.append(msg)
    ods = parse_trips(trips_text, n_nodes, first) if trips_text is not None else ()
    return TransportNetwork(n_nodes, tuple(edges), ods, value_of_time=value_of_time, first_node=first,
                            metadata=meta, warnings=tuple(warnings))


def parse_trips(trips_text: str, n_nodes=None, first=1):
    lines = trips_text.splitlines()
    _, body = _read_metadata(lines, [])
    ods, origin = [], None
    valid = (lambda k: first <= k < first + n_nodes) if n_nodes else (lambda k: k >= first)
    for raw in body:
        line = _strip(raw)
        if not line:
            continue
        if line.lower().startswith("origin"):
            try:
                origin = int(line.split()[1])
            except (IndexError, ValueError):
                raise ScenarioError(f"bad origin line: {raw!r}") from None
            if not valid(origin):
                raise ScenarioError(f"trips refer to unknown origin {origin}")
            continue
        if origin is None:
            raise ScenarioError(f"destination entry before any 'Origin' line: {raw!r}")
        for entry in line.split(";"):
            entry = entry.strip()
            if not entry:
                continue
            try:
                d, flow = entry.split(":")
                d, flow = int(d), float(flow)
            except ValueError:
                raise ScenarioError(f"bad trips entry: {entry!r}") from None
            if not valid(d):
                raise ScenarioError(f"trips refer to unknown destination {d}")
            if flow < 0:
                raise ScenarioError(f"negative flow {flow} for {origin}->{d}")
            if flow > 0:
                ods.append(OdPair(origin, d, flow))
    return tuple(ods)


def _num(v):
    return repr(float(v))


def serialize_tntp(net: TransportNetwork):
    """Inverse of :func:`parse_tntp` on the parsed fields.  Returns ``(net_text, trips_text)``."""
    out = [f"<NUMBER OF ZONES> {net.metadata.get('NUMBER OF ZONES', net.n_nodes)}",
           f"<NUMBER OF NODES> {net.n_nodes}",
           f"<FIRST THRU NODE> {net.metadata.get('FIRST THRU NODE', net.first_node)}",
           f"<NUMBER OF LINKS> {net.n_edges}",
           "<END OF METADATA>", "",
           "~ init term capacity length fftime b power speed toll type ;"]
    for e in net.edges:
        out.append("\t".join([str(e.tail), str(e.head), _num(e.capacity), _num(e.length), _num(e.fftime),
                              _num(e.b), _num(e.power), _num(e.speed), _num(e.toll), str(e.link_type)]) + "\t;")
    trips = [f"<NUMBER OF ZONES> {net.n_nodes}",
             f"<TOTAL OD FLOW> {_num(sum(od.demand for od in net.od_pairs))}",
             "<END OF METADATA>", ""]
    current = None
    for od in net.od_pairs:
        if od.origin != current:
            current = od.origin
            trips.append(f"Origin {current}")
        trips.append(f"    {od.dest} : {_num(od.demand)};")
    return "\n".join(out) + "\n", "\n".join(trips) + "\n"


# --------------------------------------------------------------------------
# routes


@dataclass(frozen=True)
class Route:
    od: int
    edges: tuple
    charger: int


@dataclass(frozen=True)
class RouteSet:
    routes: tuple
    od_ranges: tuple
    edge_route: np.ndarray
    charger_route: np.ndarray
    chargers: tuple

    @property
    def n_routes(self) -> int:
        return len(self.routes)


def _adjacency(net: TransportNetwork, banned_edges=(), banned_nodes=()):
    adj = {}
    for k, e in enumerate(net.edges):
        if k in banned_edges or e.tail in banned_nodes or e.head in banned_nodes:
            continue
        adj.setdefault(e.tail, []).append((e.head, k))
    for v in adj.values():
        v.sort()
    return adj


def shortest_path(net: TransportNetwork, origin, dest, banned_edges=(), banned_nodes=()):
    """Dijkstra on free-flow cost.  Ties go to the lexicographically smallest node sequence.

    Returns ``(cost, nodes, edge_ids)`` or ``None`` when unreachable.
    """
    adj = _adjacency(net, banned_edges, banned_nodes)
    heap = [(0.0, (origin,), ())]
    done = set()
    while heap:
        d, nodes, eids = heapq.heappop(heap)
        u = nodes[-1]
        if u == dest:
            return d, nodes, eids
        if u in done:
            continue
        done.add(u)
        for v, k in adj.get(u, ()):
            if v in done or v in nodes:
                continue
            heapq.heappush(heap, (d + net.edges[k].base_cost, nodes + (v,), eids + (k,)))
    return None


def two_shortest_paths(net, origin, dest):
    """Shortest and second-shortest simple paths (Yen with k = 2)."""
    first = shortest_path(net, origin, dest)
    if first is None:
        return []
    cost1, nodes1, eids1 = first
    best = None
    for i in range(len(nodes1) - 1):
        spur = nodes1[i]
        root_cost = sum(net.edges[k].base_cost for k in eids1[:i])
        sp = shortest_path(net, spur, dest, banned_edges={eids1[i]}, banned_nodes=set(nodes1[:i]))
        if sp is None:
            continue
        cand = (root_cost + sp[0], nodes1[:i] + sp[1], eids1[:i] + sp[2])
        if best is None or cand[:2] < best[:2]:
            best = cand
    return [first] if best is None else [first, best]


def enumerate_routes(net: TransportNetwork, mode="shared_path", explicit=None) -> RouteSet:
    """Candidate routes per OD pair.

    ``shared_path`` (default): the free-flow shortest path, once with charging
    at the origin station and once at the destination station.
    ``two_shortest``: the shortest path charging at the origin and the second
    shortest charging at the destination.
    ``explicit``: list of ``(od_index, [edge ids], charger_node)`` overriding
    the enumeration.
    """
    chargers = net.chargers
    if not chargers:
        raise ScenarioError("transport network has no charging stations")
    routes = []
    if explicit is not None:
        for od, eids, ch in explicit:
            if not 0 <= od < len(net.od_pairs):
                raise ScenarioError(f"explicit route refers to OD index {od}")
            if ch not in net.charger_bus:
                raise ScenarioError(f"explicit route charges at {ch}, which has no charger")
            routes.append(Route(int(od), tuple(int(k) for k in eids), int(ch)))
        routes.sort(key=lambda r: r.od)
    else:
        if mode not in ("shared_path", "two_shortest"):
            raise ScenarioError(f"unknown route mode {mode!r}")
        for k, od in enumerate(net.od_pairs):
            if od.origin == od.dest:
                raise ScenarioError(f"OD pair {k} has origin equal to destination")
            ends = [n for n in (od.origin, od.dest) if n in net.charger_bus]
            if not ends:
                raise ScenarioError(f"OD pair {od.origin}->{od.dest} has no charger at either endpoint")
            if mode == "shared_path":
                sp = shortest_path(net, od.origin, od.dest)
                if sp is None:
                    raise ScenarioError(f"destination {od.dest} unreachable from {od.origin}")
                paths = [sp[2]] * len(ends)
            else:
                found = two_shortest_paths(net, od.origin, od.dest)
                if not found:
                    raise ScenarioError(f"destination {od.dest} unreachable from {od.origin}")
                paths = [found[0][2], found[-1][2]][:len(ends)] if len(ends) == 2 else [found[0][2]]
            for eids, ch in zip(paths, ends):
                routes.append(Route(k, tuple(eids), ch))
    ranges, start = [], 0
    for k in range(len(net.od_pairs)):
        stop = start
        while stop < len(routes) and routes[stop].od == k:
            stop += 1
        if stop == start:
            raise ScenarioError(f"OD pair {k} has no route")
        ranges.append((start, stop))
        start = stop
    R = np.zeros((net.n_edges, len(routes)))
    C = np.zeros((len(chargers), len(routes)))
    cidx = {c: i for i, c in enumerate(chargers)}
    for r, route in enumerate(routes):
        for e in route.edges:
            R[e, r] += 1.0
        C[cidx[route.charger], r] = 1.0
    R.setflags(write=False)
    C.setflags(write=False)
    return RouteSet(tuple(routes), tuple(ranges), R, C, chargers)


def charger_bus_matrix(net: TransportNetwork, routes: RouteSet, n_buses):
    """A^CB: charger-by-bus incidence."""
    M = np.zeros((len(routes.chargers), n_buses))
    for i, c in enumerate(routes.chargers):
        bus = net.charger_bus[c]
        if not 0 <= bus < n_buses:
            raise ScenarioError(f"charger {c} maps to bus {bus}, grid has {n_buses}")
        M[i, bus] = 1.0
    return M


def build_transport_fl(net: TransportNetwork, routes: RouteSet, n_buses, name="transport",
                       allow_flat_preference=False) -> FlSystemSpec:
    """Beckmann potential and total travel cost as quadratics in route flows.

    ``Phi(x) = sum_e c0_e y_e + 0.5 slope_e y_e**2`` and
    ``Phi_SW(x) = sum_e (c0_e + slope_e y_e) y_e`` with ``y = R x``.
    """
    R = routes.edge_route
    c0 = np.array([e.base_cost for e in net.edges])
    slope = np.array([e.slope for e in net.edges])
    Q = R.T @ (slope[:, None] * R)
    lin = R.T @ c0
    n_r = routes.n_routes
    E = np.zeros((len(net.od_pairs), n_r))
    for k, (a, b) in enumerate(routes.od_ranges):
        E[k, a:b] = 1.0
    demand = np.array([od.demand for od in net.od_pairs])
    feas = Polyhedron.build(n_r, eq=(E, demand), lower=0.0)
    A = net.charge_per_ev * charger_bus_matrix(net, routes, n_buses).T @ routes.charger_route
    flat_edges = [k for k, e in enumerate(net.edges) if e.slope == 0]
    return FlSystemSpec(name, A, feas, QuadraticFunction(Q, lin), QuadraticFunction(2 * Q, lin),
                        meta={"kind": "transport", "allow_flat_preference": allow_flat_preference,
                              "zero_slope_edges": flat_edges})


def edge_flows(routes: RouteSet, x):
    return routes.edge_route @ np.asarray(x, float)


def travel_cost(net: TransportNetwork, routes: RouteSet, x) -> float:
    """Total travel disutility ``sum_e c_e(y_e) y_e``."""
    y = edge_flows(routes, x)
    return float(sum(e.cost(v) * v for e, v in zip(net.edges, y)))


@dataclass(frozen=True)
class WardropReport:
    passed: bool
    max_gap: float
    relative_gap: float
    cost_tol: float
    per_od_gap: np.ndarray
    route_costs: np.ndarray

    def as_dict(self):
        return {"passed": self.passed, "max_gap": self.max_gap, "relative_gap": self.relative_gap,
                "cost_tol": self.cost_tol, "worst_od": int(np.argmax(self.per_od_gap)) if self.per_od_gap.size else None}


def route_costs(net: TransportNetwork, routes: RouteSet, x, lmp, n_buses=None):
    """Travel plus charging cost of every route at flows ``x`` and prices ``lmp``."""
    lmp = np.asarray(lmp, float)
    y = edge_flows(routes, x)
    ce = np.array([e.cost(v) for e, v in zip(net.edges, y)])
    travel = routes.edge_route.T @ ce
    A = net.charge_per_ev * charger_bus_matrix(net, routes, lmp.size).T @ routes.charger_route
    return travel + A.T @ lmp


def check_wardrop(net: TransportNetwork, routes: RouteSet, x, lmp, flow_rel=1e-6, cost_rel=1e-6) -> WardropReport:
    """Used routes must be cheapest within their OD pair.

    A route counts as used when its flow exceeds ``flow_rel`` times the OD
    demand; the check passes when every used route is within ``cost_rel``
    times the largest route cost of the cheapest alternative.
    """
    x = np.asarray(x, float)
    pi = route_costs(net, routes, x, lmp)
    gaps = np.zeros(len(routes.od_ranges))
    for k, (a, b) in enumerate(routes.od_ranges):
        used = x[a:b] > flow_rel * net.od_pairs[k].demand
        if np.any(used):
            gaps[k] = float(np.max(pi[a:b][used]) - np.min(pi[a:b]))
    scale = float(np.max(np.abs(pi), initial=0.0))
    tol = cost_rel * scale
    mg = float(np.max(gaps, initial=0.0))
    return WardropReport(mg <= tol, mg, mg / scale if scale > 0 else mg, tol, gaps, pi)
