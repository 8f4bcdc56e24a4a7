import numpy as np
import pytest

from conftest import SCENARIO_SEEDS, random_scenario, two_bus_ev
from gce_market.datacenter import build_datacenter_fl
from gce_market.model import FlSystemSpec, Polyhedron, QuadraticFunction
from gce_market.transport import Edge, OdPair, TransportNetwork, build_transport_fl, enumerate_routes
from gce_market.validation import validate_single
from conftest import two_dc_market


@pytest.mark.parametrize("seed", SCENARIO_SEEDS)
def test_random_scenarios_are_valid(seed):
    net, fl, _ = random_scenario(seed)
    rep = validate_single(net, fl)
    assert rep.ok, rep.as_dict()


def test_unbounded_feasible_set_flagged():
    net, *_ = two_bus_ev()
    fl = build_datacenter_fl(two_dc_market(0.25, upper=np.inf), 2)
    assert "unbounded" in validate_single(net, fl).codes()


def test_empty_feasible_set_flagged():
    net, *_ = two_bus_ev()
    poly = Polyhedron.build(1, eq=([[1.0]], [2.0]), upper=1.0)
    f = QuadraticFunction(np.eye(1), np.zeros(1))
    fl = FlSystemSpec("x", np.ones((2, 1)), poly, f, f)
    assert "infeasible" in validate_single(net, fl).codes()


def _flat_network(allow):
    # two parallel routes with constant costs: the best response is set-valued
    edges = (Edge(1, 3, 1.0, 0.0), Edge(3, 2, 0.0, 0.0), Edge(1, 4, 1.0, 0.0), Edge(4, 2, 0.0, 0.0))
    tn = TransportNetwork(4, edges, (OdPair(1, 2, 1.0),), {3: 0, 4: 1}, 1.0)
    rs = enumerate_routes(tn, explicit=[(0, [0, 1], 3), (0, [2, 3], 4)])
    return build_transport_fl(tn, rs, 2, allow_flat_preference=allow)


def test_flat_preference_rejected_unless_allowed():
    net, *_ = two_bus_ev()
    strict = validate_single(net, _flat_network(False))
    assert "not_strictly_convex" in strict.codes()
    relaxed = validate_single(net, _flat_network(True))
    assert relaxed.ok
    assert "flat_preference" in [w["code"] for w in relaxed.warnings]


def test_load_map_dimension_checked():
    net, *_ = two_bus_ev()
    f = QuadraticFunction(np.eye(2), np.zeros(2))
    fl = FlSystemSpec("x", np.ones((3, 2)), Polyhedron.build(2, lower=0.0, upper=1.0), f, f)
    assert "dimension" in validate_single(net, fl).codes()


def test_non_finite_coefficients_flagged():
    net, fl, *_ = two_bus_ev()
    bad = QuadraticFunction(np.eye(2), np.array([np.nan, 0.0]))
    fl2 = FlSystemSpec(fl.name, fl.load_map, fl.feasible, bad, bad)
    assert "non_finite" in validate_single(net, fl2).codes()


def test_report_serialises():
    net, fl, *_ = two_bus_ev()
    d = validate_single(net, fl).as_dict()
    assert d["ok"] is True
    assert d["violations"] == []
