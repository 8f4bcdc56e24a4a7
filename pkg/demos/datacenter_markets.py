"""
Datacenter companies competing for compute across two sites.

Each company values workload at a site at eta and pays a waiting cost that
grows with its own load and, through theta, with the other company's load
at the same site.  Symmetric interference makes the game a potential game,
so the equilibrium comes from one QP.  Asymmetric interference breaks the
potential, and the equilibrium is found as a variational inequality by
extragradient.
"""
import numpy as np

from gce_market import (DatacenterMarket, GeneratorParams, PowerNetwork, build_datacenter_fl,
                        closed_form_dc_lmp, solve_gce, solve_gce_nonpotential, solve_swm)

I = np.eye(2)
grid = PowerNetwork([[1.0, 0.0]], [1e6], [0.0, 0.0], [GeneratorParams(0, 1.0), GeneratorParams(1, 1.0)],
                    reference_bus=1)

print("symmetric interference: prices from the QP and from the closed form")
print(f"{'theta':>6} {'GCE':>9} {'closed':>9} {'SWM':>9} {'closed':>9}")
for theta in (0.0, 0.1, 0.25, 0.4):
    mkt = DatacenterMarket((0, 1), 1.0, [[10.0, 10.0], [10.0, 10.0]], [I, I],
                           [[None, theta * I], [theta * I, None]], upper=100.0)
    fl = build_datacenter_fl(mkt, 2)
    cf = closed_form_dc_lmp(mkt, 1.0, 1.0)
    print(f"{theta:6.2f} {solve_gce(grid, fl).lmp[0]:9.5f} {cf['lmp_gce']:9.5f} "
          f"{solve_swm(grid, fl).lmp[0]:9.5f} {cf['lmp_swm']:9.5f}")
# companies ignore the waiting cost they cause each other, so they
# over-consume and the market price sits above the planner's

print("\nasymmetric interference (0.2 one way, 0.3 the other)")
asym = DatacenterMarket((0, 1), 1.0, [[10.0, 10.0], [10.0, 10.0]], [I, I],
                        [[None, 0.2 * I], [0.3 * I, None]], upper=100.0)
sol = solve_gce_nonpotential(grid, asym)
print("workloads by company and site:\n", sol.fl_decision.reshape(2, 2).round(6))
print("prices:", sol.lmp.round(6))
print(f"gap certificate {sol.kkt_residuals['vi_gap']:.2e} after {sol.iterations} iterations")
