"""
Two buses, one road with two routes, one unit of EV demand.

Route 1 charges at bus 0 and costs a*x1 in travel time, route 2 charges at
bus 1 and costs a flat b.  The cheap generator sits at bus 1 but is capped
at 0.9, so the line limit f_max decides where the price separates.  We
sweep f_max and print what the market (GCE) and the planner (SWM) do.
"""
import numpy as np

from gce_market import (GeneratorParams, PowerNetwork, TransportNetwork, build_transport_fl,
                        efficiency_check, enumerate_routes, regime_label, solve_gce, solve_swm)
from gce_market.transport import Edge, OdPair

a, b, q = 2.0, 1.0, 1.0
g2_max = 0.9

# road: 1 -> 3 -> 2 (congestible, charger at 3) and 1 -> 4 -> 2 (flat, charger at 4)
edges = (Edge(1, 3, 0.0, a), Edge(3, 2, 0.0, 0.0), Edge(1, 4, b, 0.0), Edge(4, 2, 0.0, 0.0))
road = TransportNetwork(4, edges, (OdPair(1, 2, 1.0),), charger_bus={3: 0, 4: 1}, charge_per_ev=q)
routes = enumerate_routes(road, explicit=[(0, [0, 1], 3), (0, [2, 3], 4)])
ev = build_transport_fl(road, routes, n_buses=2, name="ev")

# the two thresholds where the congestion pattern changes
f_hi = g2_max - (a - b) * q / a
f_lo = g2_max - (2 * a - b) * q / (2 * a)
print(f"market line binds below f_max = {f_hi:.3f}, planner line below {f_lo:.3f}\n")

print(f"{'f_max':>6} {'s1 GCE':>8} {'s1 SWM':>8} {'lmp GCE':>16} {'regime':>9} {'efficient':>9}")
for f_max in (1.0, 0.6, 0.4, 0.3, 0.2, 0.15, 0.1):
    grid = PowerNetwork(ptdf=[[1.0, 0.0]], line_limit=[f_max], stationary_load=[1.0, 0.0],
                        generators=[GeneratorParams(0, 1.0, g_max=3.0), GeneratorParams(1, 0.01, g_max=g2_max)],
                        reference_bus=1)
    gce = solve_gce(grid, ev)
    swm = solve_swm(grid, ev)
    eff = efficiency_check(grid, ev, gce, swm=swm)
    lmp = np.array2string(gce.lmp, precision=3)
    print(f"{f_max:6.2f} {gce.fl_load[0]:8.3f} {swm.fl_load[0]:8.3f} {lmp:>16} "
          f"{regime_label(gce, swm):>9} {str(eff.efficient):>9}")

# Uncongested, drivers pile onto route 1 until travel costs equalize and
# ignore the extra delay they impose on each other, so s1 is twice the
# planner's.  Once both models hit the line the power grid pins s1 and the
# two allocations agree.
