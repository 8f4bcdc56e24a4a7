import numpy as np
import pytest

from gce_market.datacenter import DatacenterMarket, build_datacenter_fl
from gce_market.model import (GeneratorParams, Polyhedron, PowerNetwork, QuadraticFunction, ptdf_from_lines,
                              stack_fl_systems)
from gce_market.qp import QuadraticProgram
from gce_market.transport import Edge, OdPair, TransportNetwork, build_transport_fl, enumerate_routes


def two_bus_ev(f_max=1.0, a=2.0, b=1.0, q=1.0):
    """Two routes 1->3->2 (cost a*x) and 1->4->2 (cost b), charging at bus 0 / bus 1."""
    edges = (Edge(1, 3, 0.0, a), Edge(3, 2, 0.0, 0.0), Edge(1, 4, b, 0.0), Edge(4, 2, 0.0, 0.0))
    tn = TransportNetwork(4, edges, (OdPair(1, 2, 1.0),), {3: 0, 4: 1}, q)
    routes = enumerate_routes(tn, explicit=[(0, [0, 1], 3), (0, [2, 3], 4)])
    fl = build_transport_fl(tn, routes, 2, name="ev")
    net = PowerNetwork([[1.0, 0.0]], [f_max], [1.0, 0.0],
                       [GeneratorParams(0, 1.0, g_max=3.0), GeneratorParams(1, 0.01, g_max=0.9)], reference_bus=1)
    return net, fl, tn, routes


def two_dc_market(theta=0.25, eta=10.0, q=1.0, upper=100.0):
    I = np.eye(2)
    D = theta * I
    return DatacenterMarket((0, 1), q, [[eta, eta], [eta, eta]], [I, I], [[None, D], [D, None]], upper=upper)


def two_dc(theta=0.25, eta=10.0, q=1.0, gamma=(1.0, 1.0)):
    mkt = two_dc_market(theta, eta, q)
    net = PowerNetwork([[1.0, 0.0]], [1e6], [0.0, 0.0],
                       [GeneratorParams(0, gamma[0]), GeneratorParams(1, gamma[1])], reference_bus=1)
    return net, build_datacenter_fl(mkt, 2, name="dc"), mkt


def _random_grid(rng, n):
    lines = [(i, int(rng.integers(0, i)), float(rng.uniform(0.5, 2.0))) for i in range(1, n)]
    if n >= 3:
        i, j = rng.choice(n, 2, replace=False)
        if not any({a, b} == {int(i), int(j)} for a, b, _ in lines):
            lines.append((int(i), int(j), float(rng.uniform(0.5, 2.0))))
    H = ptdf_from_lines(n, lines, 0)
    gens = [GeneratorParams(i, float(rng.uniform(0.2, 2.0)), float(rng.uniform(0.0, 2.0)), 0.0, 100.0)
            for i in range(n)]
    return PowerNetwork(H, rng.uniform(0.3, 3.0, size=len(lines)), rng.uniform(0.0, 1.5, size=n), gens, 0)


def _random_transport(rng, n, name):
    n_routes = int(rng.integers(2, 4))
    edges, explicit, chargers = [], [], {}
    for r in range(n_routes):
        mid = 3 + r
        edges.append(Edge(1, mid, float(rng.uniform(0.0, 2.0)), float(rng.uniform(0.3, 2.0))))
        edges.append(Edge(mid, 2, 0.0, 0.0))
        explicit.append((0, [2 * r, 2 * r + 1], mid))
        chargers[mid] = int(rng.integers(0, n))
    tn = TransportNetwork(2 + n_routes, tuple(edges), (OdPair(1, 2, float(rng.uniform(0.5, 2.0))),), chargers,
                          float(rng.uniform(0.2, 1.0)))
    routes = enumerate_routes(tn, explicit=explicit)
    return build_transport_fl(tn, routes, n, name=name), ("transport", tn, routes)


def _random_datacenter(rng, n, name):
    K = int(rng.integers(1, 3))
    nd = int(min(n, rng.integers(2, 4)))
    buses = tuple(int(b) for b in rng.choice(n, nd, replace=False))
    selfb = [np.diag(rng.uniform(1.0, 2.0, size=nd)) for _ in range(K)]
    cross = [[None] * K for _ in range(K)]
    for k in range(K):
        for j in range(k + 1, K):
            D = np.diag(rng.uniform(0.0, 0.3, size=nd))
            cross[k][j] = D
            cross[j][k] = D
    eta = rng.uniform(2.0, 6.0, size=(K, nd))
    workload = rng.uniform(1.0, 3.0, size=K) if rng.random() < 0.5 else None
    mkt = DatacenterMarket(buses, float(rng.uniform(0.2, 1.0)), eta, selfb, cross, workload, 0.0, 10.0, name)
    return build_datacenter_fl(mkt, n, name=name), ("datacenter", mkt)


def random_scenario(seed):
    """Seeded random valid scenario: 2-6 buses, transport and/or datacenter loads.

    Returns ``(net, fl, parts)`` where ``parts`` lists the per-system specs
    and their source objects.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    net = _random_grid(rng, n)
    kind = ("transport", "datacenter", "both")[seed % 3]
    parts = []
    if kind in ("transport", "both"):
        parts.append(_random_transport(rng, n, "ev"))
    if kind in ("datacenter", "both"):
        parts.append(_random_datacenter(rng, n, "dc"))
    fl = stack_fl_systems([p[0] for p in parts])
    return net, fl, parts


def random_qp(seed):
    """Seeded convex QP (possibly rank-deficient Hessian) with a known interior feasible point."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    B = rng.normal(size=(n, n))
    rank = int(rng.integers(1, n + 1))
    B[:, rank:] = 0.0
    Q = B @ B.T
    c = rng.normal(size=n)
    me, mi = int(rng.integers(0, 3)), int(rng.integers(0, 4))
    x0 = rng.uniform(0.2, 1.0, size=n)
    A = rng.normal(size=(me, n))
    G = rng.normal(size=(mi, n))
    return QuadraticProgram(QuadraticFunction(Q, c),
                            Polyhedron.build(n, eq=(A, A @ x0) if me else None,
                                             ineq=(G, G @ x0 + rng.uniform(0, 1, mi)) if mi else None,
                                             lower=0.0, upper=3.0))


SCENARIO_SEEDS = list(range(50))


@pytest.fixture
def ev_factory():
    return two_bus_ev


@pytest.fixture
def dc_factory():
    return two_dc


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
