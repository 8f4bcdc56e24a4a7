import numpy as np
import pytest

from gce_market.dispatch import economic_dispatch, verify_classical_ce
from gce_market.errors import InfeasibleError
from gce_market.model import GeneratorParams, PowerNetwork


def net2(f_max=10.0, load=(1.0, 0.0), g_max=1e6):
    return PowerNetwork([[1.0, 0.0]], [f_max], list(load),
                        [GeneratorParams(0, 1.0, g_max=g_max), GeneratorParams(1, 1.0, g_max=g_max)],
                        reference_bus=1)


def test_uncongested_prices_equalize():
    r = economic_dispatch(net2())
    assert r.generation == pytest.approx([0.5, 0.5], abs=1e-7)
    assert r.lmp == pytest.approx([1.0, 1.0], abs=1e-6)
    assert r.injections == pytest.approx([-0.5, 0.5], abs=1e-7)
    assert r.congested_lines == ()


def test_congested_line_splits_prices():
    r = economic_dispatch(net2(0.2))
    assert r.generation == pytest.approx([0.8, 0.2], abs=1e-6)
    assert r.lmp == pytest.approx([1.6, 0.4], abs=1e-6)
    assert r.congested_lines == (0,)
    # grid search over g1 with g2 = 1 - g1 and |g2| <= 0.2 (flow = g1 - 1)
    g1 = np.arange(0.0, 1.0 + 1e-12, 1e-4)
    ok = np.abs(g1 - 1.0) <= 0.2 + 1e-12
    cost = g1 ** 2 + (1 - g1) ** 2
    assert g1[ok][np.argmin(cost[ok])] == pytest.approx(0.8, abs=1e-4)
    assert r.objective == pytest.approx(cost[ok].min(), abs=1e-7)


def test_lmp_is_marginal_cost_of_bus_load():
    eps = 1e-5
    base = economic_dispatch(net2(0.2))
    for bus in (0, 1):
        d = np.zeros(2)
        d[bus] = eps
        up = economic_dispatch(net2(0.2), d).objective
        dn = economic_dispatch(net2(0.2), -d).objective
        assert (up - dn) / (2 * eps) == pytest.approx(base.lmp[bus], rel=1e-4)


def test_zero_load_zero_prices():
    r = economic_dispatch(net2(load=(0.0, 0.0)))
    assert r.generation == pytest.approx([0.0, 0.0], abs=1e-7)
    assert r.lmp == pytest.approx([0.0, 0.0], abs=1e-6)
    assert r.injections == pytest.approx([0.0, 0.0], abs=1e-7)


def test_self_consistent_dispatch_passes_all_checks():
    net = net2(0.2)
    r = economic_dispatch(net)
    rep = verify_classical_ce(net, np.zeros(2), r.generation, r.lmp)
    assert rep.passed, rep.as_dict()
    assert max(rep.rationality_residual, rep.feasibility_residual, rep.price_residual) < 1e-7


def test_perturbed_price_breaks_rationality():
    net = net2(0.2)
    r = economic_dispatch(net)
    lmp = r.lmp + np.array([0.1, 0.0])
    rep = verify_classical_ce(net, np.zeros(2), r.generation, lmp)
    assert not rep.generators_rational
    assert rep.failing_generators == (0,)
    assert net.generators[0].best_response(lmp[0]) == pytest.approx(0.85, abs=1e-6)


def test_generation_above_cap_fails_feasibility():
    net = net2(0.2, g_max=0.7)
    rep = verify_classical_ce(net, np.zeros(2), [0.8, 0.2], [1.6, 0.4])
    assert not rep.feasible


def test_infeasible_dispatch_raises_with_certificate():
    with pytest.raises(InfeasibleError) as exc:
        economic_dispatch(net2(0.1, load=(2.0, 0.0), g_max=1.0))
    assert exc.value.certificate


@pytest.mark.parametrize("seed", range(10))
def test_random_dispatch_round_trip(seed):
    from conftest import random_scenario
    net, *_ = random_scenario(seed)
    r = economic_dispatch(net)
    assert verify_classical_ce(net, np.zeros(net.n_buses), r.generation, r.lmp).passed
