"""Economic dispatch, LMP extraction and classical competitive-equilibrium checks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import LARGE_LIMIT, FlSystemSpec, Polyhedron, PowerNetwork, QuadraticFunction, SolverSettings
from .qp import QuadraticProgram, QpSolution, solve_lp, solve_qp

CONGESTION_SLACK = 1e-5
CONGESTION_DUAL = 1e-6


@dataclass(frozen=True)
class JointLayout:
    """Index bookkeeping for the stacked ``(x, g, p)`` decision vector."""

    n_x: int
    n_g: int
    n_bus: int
    n_lines: int
    n_fl_eq: int
    n_fl_in: int

    @property
    def x(self):
        return slice(0, self.n_x)

    @property
    def g(self):
        return slice(self.n_x, self.n_x + self.n_g)

    @property
    def p(self):
        return slice(self.n_x + self.n_g, self.n_x + self.n_g + self.n_bus)

    @property
    def balance_rows(self):
        return slice(0, self.n_bus)

    @property
    def fl_eq_rows(self):
        return slice(self.n_bus + 1, self.n_bus + 1 + self.n_fl_eq)

    @property
    def flow_rows(self):
        """Upper then lower flow-limit rows."""
        return slice(self.n_fl_in, self.n_fl_in + 2 * self.n_lines)


def generator_incidence(net: PowerNetwork):
    """Bus-by-generator 0/1 matrix."""
    B = np.zeros((net.n_buses, len(net.generators)))
    for k, gen in enumerate(net.generators):
        B[gen.bus, k] = 1.0
    return B


def line_limit_rows(net: PowerNetwork):
    """``[H; -H] p <= [f; f]``."""
    return np.vstack([net.ptdf, -net.ptdf]), np.concatenate([net.line_limit, net.line_limit])


def injection_set(net: PowerNetwork) -> Polyhedron:
    """P = {p : 1'p = 0, -f <= Hp <= f}."""
    n = net.n_buses
    G, h = line_limit_rows(net)
    return Polyhedron.build(n, eq=(np.ones((1, n)), np.zeros(1)), ineq=(G, h))


def joint_program(net: PowerNetwork, fl: FlSystemSpec, preference: QuadraticFunction,
                  fixed_load=None):
    """Assemble the market-clearing QP over ``(x, g, p)``.

    Rows are ordered as: nodal balance ``B g - p - A x = l`` (N), system
    balance ``1'p = 0`` (1), then the FL equalities.  Inequalities are the FL
    rows, then ``Hp <= f`` and ``-Hp <= f``.  The balance multipliers are the
    marginal cost of one more MW of load, i.e. the LMPs.

    ``fixed_load`` replaces the FL block by an exogenous bus load (pure dispatch).
    """
    N, M = net.n_buses, net.n_lines
    if fixed_load is not None:
        fl = None
    nx = fl.decision_dim if fl is not None else 0
    ng = len(net.generators)
    dim = nx + ng + N
    feas = fl.feasible if fl is not None else None
    me = feas.eq_rhs.size if feas is not None else 0
    mi = feas.ineq_rhs.size if feas is not None else 0
    lay = JointLayout(nx, ng, N, M, me, mi)

    A = np.zeros((N + 1 + me, dim))
    b = np.zeros(N + 1 + me)
    A[:N, lay.g] = generator_incidence(net)
    A[:N, lay.p] = -np.eye(N)
    b[:N] = net.stationary_load
    if fl is not None:
        A[:N, lay.x] = -fl.load_map
        A[N + 1:, lay.x] = feas.eq_lhs
        b[N + 1:] = feas.eq_rhs
    else:
        b[:N] += np.asarray(fixed_load, float)
    A[N, lay.p] = 1.0

    Hf, hf = line_limit_rows(net)
    G = np.zeros((mi + 2 * M, dim))
    h = np.zeros(mi + 2 * M)
    if fl is not None and mi:
        G[:mi, lay.x] = feas.ineq_lhs
        h[:mi] = feas.ineq_rhs
    G[mi:, lay.p] = Hf
    h[mi:] = hf

    lower = np.full(dim, -np.inf)
    upper = np.full(dim, np.inf)
    if fl is not None:
        lower[lay.x] = feas.lower
        upper[lay.x] = feas.upper
    lower[lay.g] = net.g_min
    upper[lay.g] = net.g_max

    Q = np.zeros((dim, dim))
    c = np.zeros(dim)
    const = 0.0
    if fl is not None:
        Q[lay.x, lay.x] = preference.quad
        c[lay.x] = preference.lin
        const = preference.const
    Q[lay.g, lay.g] = np.diag(2.0 * net.quad_coeffs)
    c[lay.g] = net.lin_coeffs
    prob = QuadraticProgram(QuadraticFunction(Q, c, const), Polyhedron(A, b, G, h, lower, upper))
    return prob, lay


def congested_lines(net: PowerNetwork, flows, flow_duals):
    slack = net.line_limit - np.abs(flows)
    hit = (slack < CONGESTION_SLACK * (1.0 + net.line_limit)) & (flow_duals > CONGESTION_DUAL)
    return tuple(int(i) for i in np.flatnonzero(hit))


def flow_limit_duals(sol: QpSolution, lay: JointLayout):
    nu = sol.duals_ineq[lay.flow_rows]
    return nu[:lay.n_lines] + nu[lay.n_lines:]


@dataclass(frozen=True)
class DispatchResult:
    generation: np.ndarray
    injections: np.ndarray
    lmp: np.ndarray
    line_flows: np.ndarray
    congested_lines: tuple
    objective: float
    dual_unique: bool | None = None
    kkt_residuals: dict = field(default_factory=dict)


def economic_dispatch(net: PowerNetwork, fl_load=None, settings: SolverSettings | None = None) -> DispatchResult:
    """Least-cost dispatch for a fixed bus load ``stationary_load + fl_load``.

    Raises
    ------
    InfeasibleError
        Load cannot be served within generator and line limits.
    """
    s = np.zeros(net.n_buses) if fl_load is None else np.asarray(fl_load, float)
    prob, lay = joint_program(net, None, None, fixed_load=s)
    sol = solve_qp(prob, settings).raise_for_status("economic dispatch")
    p = sol.primal[lay.p]
    flows = net.line_flows(p)
    return DispatchResult(
        generation=sol.primal[lay.g], injections=p, lmp=sol.duals_eq[lay.balance_rows],
        line_flows=flows, congested_lines=congested_lines(net, flows, flow_limit_duals(sol, lay)),
        objective=net.cost(sol.primal[lay.g]), dual_unique=sol.dual_unique,
        kkt_residuals=sol.kkt_residuals,
    )


@dataclass(frozen=True)
class CeReport:
    """Outcome of the three classical-equilibrium checks."""

    generators_rational: bool
    feasible: bool
    price_optimal: bool
    rationality_residual: float
    feasibility_residual: float
    price_residual: float
    failing_generators: tuple = ()

    @property
    def passed(self) -> bool:
        return self.generators_rational and self.feasible and self.price_optimal

    def as_dict(self):
        return {"passed": self.passed, "generators_rational": self.generators_rational,
                "feasible": self.feasible, "price_optimal": self.price_optimal,
                "rationality_residual": self.rationality_residual,
                "feasibility_residual": self.feasibility_residual,
                "price_residual": self.price_residual,
                "failing_generators": list(self.failing_generators)}


def dispatch_dual_function(net: PowerNetwork, fl_load, lmp, settings=None) -> float:
    """Dual function of the dispatch problem at prices ``lmp``.

    It splits into one closed-form term per generator, an LP over P and a
    constant: ``sum_i min_g [c_i(g) - lmp_i g] + min_{p in P} lmp'p + lmp'(l + s)``.
    """
    lmp = np.asarray(lmp, float)
    total = 0.0
    for gen in net.generators:
        g = gen.best_response(lmp[gen.bus])
        total += gen.cost(g) - lmp[gen.bus] * g
    lp = solve_lp(lmp, injection_set(net), settings, analyze=False)
    if not lp.optimal:
        return -np.inf
    total += lp.objective_value
    return float(total + lmp @ (net.stationary_load + np.asarray(fl_load, float)))


def verify_classical_ce(net: PowerNetwork, fl_load, candidate_g, candidate_lmp, tol=1e-6,
                        settings=None) -> CeReport:
    """Check a dispatch/price pair against the classical equilibrium conditions.

    (i) each generator's output is its profit-maximising response to its own
    bus price, (ii) the implied injections ``g - l - s`` lie in P and
    (iii) the prices maximise the dispatch dual function, i.e. the dual value
    matches the independently re-solved primal optimum.
    Tolerances are relative to the problem scale.
    """
    g = np.asarray(candidate_g, float)
    lmp = np.asarray(candidate_lmp, float)
    s = np.asarray(fl_load, float)
    B = generator_incidence(net)

    resp = np.array([gen.best_response(lmp[gen.bus]) for gen in net.generators])
    gscale = 1.0 + float(np.max(np.abs(resp), initial=0.0))
    diff = np.abs(resp - g)
    bad = tuple(int(k) for k in np.flatnonzero(diff > tol * gscale))
    rat_res = float(np.max(diff, initial=0.0))

    p = B @ g - net.stationary_load - s
    flows = net.line_flows(p)
    pscale = 1.0 + float(np.max(np.abs(net.stationary_load + s), initial=0.0))
    viol = max(abs(float(p.sum())),
               float(np.max(np.abs(flows) - net.line_limit, initial=0.0)),
               float(np.max(net.g_min - g, initial=0.0)),
               float(np.max(g - net.g_max, initial=0.0)))
    feas_res = max(viol, 0.0)

    try:
        opt = economic_dispatch(net, s, settings).objective
        dual = dispatch_dual_function(net, s, lmp, settings)
        price_res = abs(dual - opt)
        price_ok = price_res <= tol * (1.0 + abs(opt))
    except Exception:  # infeasible dispatch: no price can be optimal
        price_res, price_ok = np.inf, False
    return CeReport(not bad, feas_res <= tol * pscale, bool(price_ok), rat_res, feas_res,
                    float(price_res), bad)


def large_limit_flags(net: PowerNetwork):
    """Which limits are stand-ins for infinity."""
    return {"lines": [int(i) for i in np.flatnonzero(net.line_limit >= LARGE_LIMIT)],
            "generators": [k for k, gen in enumerate(net.generators) if gen.g_max >= LARGE_LIMIT]}
