"""Generalized competitive equilibrium (GCE) and social-welfare (SWM) solves.

Both equilibria are single convex QPs over ``(x, g, p)``: the FL value
function J(s) is never formed, the load ``s = A x`` is carried implicitly by
the FL decision.  Prices are the multipliers of the nodal balance rows.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dispatch import (CeReport, congested_lines, flow_limit_duals, joint_program,
                       verify_classical_ce)
from .model import FlSystemSpec, Polyhedron, PowerNetwork, QuadraticFunction, SolverSettings
from .qp import QuadraticProgram, solve_lp, solve_qp


@dataclass(frozen=True)
class GceSolution:
    model: str
    fl_decision: np.ndarray
    fl_load: np.ndarray
    generation: np.ndarray
    injections: np.ndarray
    lmp: np.ndarray
    line_flows: np.ndarray
    objective: float
    social_cost: float
    generation_cost: float
    congested_lines: tuple
    dual_unique: bool | None
    kkt_residuals: dict = field(default_factory=dict)
    flow_duals: np.ndarray | None = None
    iterations: int = 0

    def as_dict(self):
        arr = lambda a: [float(v) for v in np.asarray(a)]
        return {
            "model": self.model, "fl_decision": arr(self.fl_decision), "fl_load": arr(self.fl_load),
            "generation": arr(self.generation), "injections": arr(self.injections),
            "lmp": arr(self.lmp), "line_flows": arr(self.line_flows), "objective": self.objective,
            "social_cost": self.social_cost, "generation_cost": self.generation_cost,
            "congested_lines": list(self.congested_lines), "dual_unique": self.dual_unique,
            "kkt_residuals": dict(self.kkt_residuals),
            "flow_duals": arr(self.flow_duals) if self.flow_duals is not None else None,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, d):
        a = lambda k: np.asarray(d[k], float)
        return cls(d["model"], a("fl_decision"), a("fl_load"), a("generation"), a("injections"),
                   a("lmp"), a("line_flows"), float(d["objective"]), float(d["social_cost"]),
                   float(d["generation_cost"]), tuple(d["congested_lines"]), d.get("dual_unique"),
                   dict(d.get("kkt_residuals", {})),
                   a("flow_duals") if d.get("flow_duals") is not None else None, int(d.get("iterations", 0)))


def _solve_joint(net, fl, model, settings):
    pref = fl.preference if model == "gce" else fl.welfare_preference
    prob, lay = joint_program(net, fl, pref)
    sol = solve_qp(prob, settings).raise_for_status(f"{model.upper()} market clearing")
    x, g, p = sol.primal[lay.x], sol.primal[lay.g], sol.primal[lay.p]
    flows = net.line_flows(p)
    fduals = flow_limit_duals(sol, lay)
    gen_cost = net.cost(g)
    return GceSolution(
        model=model, fl_decision=x, fl_load=fl.load(x), generation=g, injections=p,
        lmp=sol.duals_eq[lay.balance_rows], line_flows=flows,
        objective=pref(x) + gen_cost, social_cost=fl.welfare_preference(x) + gen_cost,
        generation_cost=gen_cost, congested_lines=congested_lines(net, flows, fduals),
        dual_unique=sol.dual_unique, kkt_residuals=sol.kkt_residuals, flow_duals=fduals,
        iterations=sol.iterations,
    )


def solve_gce(net: PowerNetwork, fl: FlSystemSpec, settings: SolverSettings | None = None) -> GceSolution:
    """Competitive equilibrium: minimise Phi(x) + C(g) over the joint feasible set.

    Raises
    ------
    InfeasibleError
        No dispatch serves the load.
    """
    return _solve_joint(net, fl, "gce", settings)


def solve_swm(net: PowerNetwork, fl: FlSystemSpec, settings: SolverSettings | None = None) -> GceSolution:
    """Planner benchmark: minimise Phi_SW(x) + C(g); ``lmp`` holds the shadow prices."""
    return _solve_joint(net, fl, "swm", settings)


def best_response_program(fl: FlSystemSpec, lmp, preference=None) -> QuadraticProgram:
    pref = fl.preference if preference is None else preference
    lin = pref.lin + fl.load_map.T @ np.asarray(lmp, float)
    return QuadraticProgram(QuadraticFunction(pref.quad, lin, pref.const), fl.feasible)


def fl_best_response(fl: FlSystemSpec, lmp, settings: SolverSettings | None = None, *, analyze=False):
    """argmin over X of Phi(x) + lmp' A x.

    With ``analyze=True`` returns ``(x, unique)`` where ``unique`` is false
    when the minimiser set is not a singleton.
    """
    if fl.decision_dim == 0:
        return (np.zeros(0), True) if analyze else np.zeros(0)
    sol = solve_qp(best_response_program(fl, lmp), settings, analyze=analyze)
    sol.raise_for_status(f"{fl.name} best response")
    if analyze:
        return sol.primal, not sol.non_unique
    return sol.primal


def best_response_value(fl: FlSystemSpec, lmp, settings=None) -> float:
    if fl.decision_dim == 0:
        return 0.0
    prob = best_response_program(fl, lmp)
    return solve_qp(prob, settings, analyze=False).raise_for_status().objective_value


def value_function(fl: FlSystemSpec, s, welfare=False, settings=None):
    """J(s) (or J_SW(s)) by partial minimisation over ``{x in X : A x = s}``.

    Returns ``(value, x, grad)`` where ``grad`` is one choice of dJ/ds,
    read off the multipliers of ``A x = s``.
    """
    pref = fl.welfare_preference if welfare else fl.preference
    X = fl.feasible
    poly = Polyhedron(np.vstack([fl.load_map, X.eq_lhs]), np.concatenate([np.asarray(s, float), X.eq_rhs]),
                      X.ineq_lhs, X.ineq_rhs, X.lower, X.upper)
    sol = solve_qp(QuadraticProgram(pref, poly), settings).raise_for_status("value function")
    return sol.objective_value, sol.primal, sol.duals_eq[:fl.n_buses]


@dataclass(frozen=True)
class GceReport:
    ce: CeReport
    best_response_residual: float
    value_gap: float
    best_response_unique: bool
    x_feasible: bool
    tolerance: float

    @property
    def fixed_point(self) -> bool:
        return self.x_feasible and (self.best_response_residual <= self.tolerance if self.best_response_unique
                                    else self.value_gap <= self.tolerance)

    @property
    def passed(self) -> bool:
        return self.ce.passed and self.fixed_point

    def as_dict(self):
        return {"passed": self.passed, "classical_ce": self.ce.as_dict(), "fixed_point": self.fixed_point,
                "best_response_residual": self.best_response_residual, "value_gap": self.value_gap,
                "best_response_unique": self.best_response_unique, "x_feasible": self.x_feasible,
                "tolerance": self.tolerance}


def verify_gce(net: PowerNetwork, fl: FlSystemSpec, candidate: GceSolution, tol=1e-6,
               settings=None) -> GceReport:
    """Re-check a candidate against the equilibrium definition by fresh solves.

    The FL part re-solves the best response at the candidate prices and
    compares loads.  When the best-response set is not a singleton (flat
    preference directions) the load comparison is meaningless, and the
    candidate passes if its own decision attains the best-response value.
    """
    s = np.asarray(candidate.fl_load, float)
    lmp = np.asarray(candidate.lmp, float)
    ce = verify_classical_ce(net, s, candidate.generation, lmp, tol=tol, settings=settings)
    x_c = np.asarray(candidate.fl_decision, float)
    scale = 1.0 + float(np.max(np.abs(s), initial=0.0))
    if fl.decision_dim == 0:
        return GceReport(ce, 0.0, 0.0, True, True, tol * scale)
    x_br, unique = fl_best_response(fl, lmp, settings, analyze=True)
    resid = float(np.max(np.abs(fl.load(x_br) - s), initial=0.0))
    prob = best_response_program(fl, lmp)
    best = prob.objective(x_br)
    own = prob.objective(x_c)
    gap = max(own - best, 0.0) / (1.0 + abs(best))
    load_ok = float(np.max(np.abs(fl.load(x_c) - s), initial=0.0)) <= tol * scale
    feasible = fl.feasible.contains(x_c, tol=tol) and load_ok
    return GceReport(ce, resid, gap, unique, feasible, tol * scale if unique else tol)


def social_cost(fl: FlSystemSpec, solution: GceSolution) -> float:
    """Phi_SW(x) + C(g) at a solution."""
    return float(fl.welfare_preference(solution.fl_decision) + solution.generation_cost)


def gce_objective_at(fl: FlSystemSpec, net: PowerNetwork, solution: GceSolution, settings=None) -> float:
    """J(s) + C(g) at a solution, with J by partial minimisation."""
    j, _, _ = value_function(fl, solution.fl_load, welfare=False, settings=settings)
    return float(j + net.cost(solution.generation))


@dataclass(frozen=True)
class EfficiencyReport:
    efficient: bool
    min_directional_value: float
    witness_direction: tuple | None
    swm_gap: float
    mu: np.ndarray
    nu: np.ndarray
    tolerance: float

    def as_dict(self):
        wd = None
        if self.witness_direction is not None:
            wd = {"delta_s": [float(v) for v in self.witness_direction[0]],
                  "delta_g": [float(v) for v in self.witness_direction[1]]}
        return {"efficient": self.efficient, "min_directional_value": self.min_directional_value,
                "witness_direction": wd, "swm_gap": self.swm_gap,
                "mu": [float(v) for v in self.mu], "nu": [float(v) for v in self.nu],
                "tolerance": self.tolerance}


def efficiency_check(net: PowerNetwork, fl: FlSystemSpec, gce: GceSolution, tol=1e-6,
                     settings=None, swm: GceSolution | None = None) -> EfficiencyReport:
    """First-order test of whether a GCE also minimises social cost.

    ``mu`` is the welfare value-function gradient at the GCE load (the
    multipliers of ``A x = s``) and ``nu`` the generator marginal costs.  The
    linear form is minimised in x-space, at the welfare-optimal
    representative ``x_hat`` of the GCE load, which is exact even when
    ``J_SW`` has several subgradients.  A negative minimum exhibits a feasible
    direction that lowers social cost.
    """
    j_sw, x_hat, mu = value_function(fl, gce.fl_load, welfare=True, settings=settings)
    g0 = np.asarray(gce.generation, float)
    nu = net.cost_gradient(g0)
    grad_x = fl.welfare_preference.gradient(x_hat)
    prob, lay = joint_program(net, fl, fl.preference)
    c = np.zeros(prob.variable_dim)
    c[lay.x] = grad_x
    c[lay.g] = nu
    lp = solve_lp(c, prob.constraints, settings, analyze=False).raise_for_status("efficiency LP")
    z = lp.primal
    value = float(c[lay.x] @ (z[lay.x] - x_hat) + nu @ (z[lay.g] - g0))
    scale = 1.0 + abs(j_sw) + abs(net.cost(g0))
    efficient = value >= -tol * scale
    witness = None if efficient else (fl.load(z[lay.x]) - gce.fl_load, z[lay.g] - g0)
    if swm is None:
        swm = solve_swm(net, fl, settings)
    gap = float(min(social_cost(fl, gce), j_sw + net.cost(g0)) - swm.objective)
    return EfficiencyReport(bool(efficient), value, witness, gap, mu, nu, tol * scale)


def regime_label(gce: GceSolution, swm: GceSolution) -> str:
    """Congestion pattern of a GCE/SWM pair."""
    a, b = bool(gce.congested_lines), bool(swm.congested_lines)
    return {(False, False): "none", (True, False): "gce_only", (True, True): "both",
            (False, True): "swm_only"}[(a, b)]
