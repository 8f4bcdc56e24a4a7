"""
Sioux Falls drivers charging on a 3-bus grid.

Nodes 1-8, 9-16 and 17-24 charge at buses 0, 1 and 2.  Each OD pair gets
two routes: the shortest path charging at the origin, the second shortest
charging at the destination.  As the energy per vehicle grows the line
from bus 0 to bus 2 fills up and prices separate.
"""
import time

from gce_market import efficiency_check, example, regime_label, scenario_from_dict, solve_gce, solve_swm
from gce_market.scenario import fl_costs, sweep_points

doc = example("sioux-small")
sc = scenario_from_dict(doc)
tn = sc.fl_systems[0].meta["network"]
print(f"{tn.n_nodes} nodes, {tn.n_edges} links, {len(tn.od_pairs)} OD pairs, "
      f"{sc.fl_systems[0].decision_dim} routes\n")

print(f"{'kWh':>5} {'gen GCE':>12} {'gen SWM':>12} {'travel GCE':>14} {'lmp range GCE':>18} {'regime':>9} {'s':>5}")
for kwh, point in sweep_points(sc):
    net, fl = point.grid, point.combined_fl()
    t0 = time.perf_counter()
    gce, swm = solve_gce(net, fl), solve_swm(net, fl)
    eff = efficiency_check(net, fl, gce, swm=swm)
    travel = fl_costs(point, gce.fl_decision)["travel_cost"]
    print(f"{kwh:5g} {gce.generation_cost:12.1f} {swm.generation_cost:12.1f} {travel:14.1f} "
          f"{gce.lmp.min():8.3f}-{gce.lmp.max():<8.3f} {regime_label(gce, swm):>9} {time.perf_counter() - t0:5.1f}")
    if not eff.efficient:
        print(f"      market leaves {eff.swm_gap:.1f} $/h of social cost on the table")
