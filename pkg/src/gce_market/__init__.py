"""Market clearing with spatially flexible loads.

Economic dispatch on a DC network, generalized competitive equilibrium
(GCE) with price-responsive flexible loads, the social-welfare benchmark
(SWM), and independent re-checks of every equilibrium condition.  Prices
are read off the nodal balance multipliers.
"""
from .datacenter import (DatacenterMarket, assemble_matrices, build_datacenter_fl, closed_form_dc_lmp,
                         fl_operator, queueing_market, sample_queueing_market, solve_gce_nonpotential,
                         solve_vi_extragradient)
from .dispatch import economic_dispatch, verify_classical_ce
from .equilibrium import (GceSolution, efficiency_check, fl_best_response, regime_label, social_cost,
                          solve_gce, solve_swm, value_function, verify_gce)
from .errors import ConvergenceError, GceError, InfeasibleError, ScenarioError
from .model import (FlSystemSpec, GeneratorParams, Polyhedron, PowerNetwork, QuadraticFunction, Scenario,
                    SolverSettings, stack_fl_systems)
from .qp import QpSolution, QuadraticProgram, solve_lp, solve_qp
from .scenario import example, load_scenario, scenario_from_dict
from .transport import TransportNetwork, build_transport_fl, check_wardrop, enumerate_routes, parse_tntp
from .validation import validate_scenario

__version__ = "0.1.0"

__all__ = [
    "DatacenterMarket", "assemble_matrices", "build_datacenter_fl", "closed_form_dc_lmp", "fl_operator",
    "queueing_market", "sample_queueing_market", "solve_gce_nonpotential", "solve_vi_extragradient",
    "economic_dispatch", "verify_classical_ce", "GceSolution", "efficiency_check", "fl_best_response",
    "regime_label", "social_cost", "solve_gce", "solve_swm", "value_function", "verify_gce",
    "ConvergenceError", "GceError", "InfeasibleError", "ScenarioError", "FlSystemSpec", "GeneratorParams",
    "Polyhedron", "PowerNetwork", "QuadraticFunction", "Scenario", "SolverSettings", "stack_fl_systems",
    "QpSolution", "QuadraticProgram", "solve_lp", "solve_qp", "example", "load_scenario", "scenario_from_dict",
    "TransportNetwork", "build_transport_fl", "check_wardrop", "enumerate_routes", "parse_tntp",
    "validate_scenario",
]
