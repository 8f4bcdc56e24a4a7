"""Geo-distributed datacenters as a flexible load.

Company ``k`` places workload ``x^(k)`` (one entry per datacenter) and earns

    u_k = eta_k' x^(k) - 0.5 x^(k)' M_kk x^(k) - sum_{j != k} x^(k)' M_kj x^(j)

minus its energy bill.  Stacking the blocks gives ``M_ne``.  When ``M_ne`` is
symmetric the game has the potential ``0.5 x' M_ne x - eta' x`` and the
equilibrium is a QP; otherwise the equilibrium is an affine monotone VI,
solved here by extragradient and certified by a gap LP.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dispatch import congested_lines, joint_program
from .equilibrium import GceSolution
from .errors import ConvergenceError, ScenarioError
from .model import FlSystemSpec, Polyhedron, PowerNetwork, QuadraticFunction, SolverSettings
from .qp import QuadraticProgram, kkt_residuals, solve_lp, solve_qp

log = logging.getLogger(__name__)

DEFAULT_SEED = 0xC0FFEE
SYMMETRY_TOL = 1e-10


@dataclass(frozen=True)
class DatacenterMarket:
    """K companies sharing N_D datacenters.

    ``cross_blocks[k][j]`` is ``M_kj`` (ignored on the diagonal).
    ``workload`` holds the totals ``zeta_k``; ``None`` leaves totals free.
    ``lower``/``upper`` are per-company per-datacenter bounds, shape (K, N_D).
    """

    dc_bus: tuple
    energy_per_workload: float
    eta: np.ndarray
    self_blocks: tuple
    cross_blocks: tuple
    workload: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    name: str = "datacenter"

    def __post_init__(self):
        eta = np.atleast_2d(np.array(self.eta, float))
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "dc_bus", tuple(int(b) for b in self.dc_bus))
        K, nd = eta.shape
        object.__setattr__(self, "self_blocks", tuple(np.array(m, float).reshape(nd, nd) for m in self.self_blocks))
        cb = tuple(tuple(np.zeros((nd, nd)) if m is None else np.array(m, float).reshape(nd, nd) for m in row)
                   for row in self.cross_blocks) if self.cross_blocks else \
            tuple(tuple(np.zeros((nd, nd)) for _ in range(K)) for _ in range(K))
        object.__setattr__(self, "cross_blocks", cb)
        lo = np.zeros((K, nd)) if self.lower is None else np.broadcast_to(np.array(self.lower, float), (K, nd)).copy()
        up = np.full((K, nd), np.inf) if self.upper is None else np.broadcast_to(np.array(self.upper, float), (K, nd)).copy()
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)
        if self.workload is not None:
            object.__setattr__(self, "workload", np.array(self.workload, float).reshape(K))

    @property
    def n_companies(self) -> int:
        return self.eta.shape[0]

    @property
    def n_datacenters(self) -> int:
        return self.eta.shape[1]

    def check(self):
        """Raise ScenarioError on a structurally invalid market."""
        K, nd = self.eta.shape
        if len(self.dc_bus) != nd:
            raise ScenarioError(f"{len(self.dc_bus)} datacenter buses for {nd} datacenters")
        if len(self.self_blocks) != K or len(self.cross_blocks) != K or any(len(r) != K for r in self.cross_blocks):
            raise ScenarioError("block layout does not match the number of companies")
        for k, m in enumerate(self.self_blocks):
            if np.max(np.abs(m - m.T)) > 1e-12 * max(1.0, np.max(np.abs(m))):
                raise ScenarioError(f"self block of company {k} is not symmetric")
            if np.linalg.eigvalsh(m)[0] < -1e-9 * max(1.0, np.max(np.abs(m))):
                raise ScenarioError(f"self block of company {k} is not positive semidefinite")
        m_ne = assemble_matrices(self)["m_ne"]
        if np.linalg.eigvalsh(m_ne + m_ne.T)[0] <= 0:
            raise ScenarioError("M_ne + M_ne' is not positive definite; the game is not strictly monotone")
        if self.workload is not None and np.any(~(self.workload > 0)):
            raise ScenarioError("workload totals must be positive")
        if np.any(self.lower > self.upper):
            raise ScenarioError("datacenter bounds cross")
        return self

    def with_q(self, q) -> "DatacenterMarket":
        return DatacenterMarket(self.dc_bus, q, self.eta, self.self_blocks, self.cross_blocks,
                                self.workload, self.lower, self.upper, self.name)


def assemble_matrices(mkt: DatacenterMarket) -> dict:
    """Stack the blocks into ``m_ne`` and build ``m_sw = m_ne + m_ne' - blkdiag(M_kk)``."""
    K, nd = mkt.eta.shape
    m_ne = np.zeros((K * nd, K * nd))
    for k in range(K):
        for j in range(K):
            blk = mkt.self_blocks[k] if j == k else mkt.cross_blocks[k][j]
            m_ne[k * nd:(k + 1) * nd, j * nd:(j + 1) * nd] = blk
    diag = np.zeros_like(m_ne)
    for k in range(K):
        diag[k * nd:(k + 1) * nd, k * nd:(k + 1) * nd] = mkt.self_blocks[k]
    m_sw = m_ne + m_ne.T - diag
    sym = float(np.max(np.abs(m_ne - m_ne.T), initial=0.0)) <= SYMMETRY_TOL
    return {"m_ne": m_ne, "m_sw": m_sw, "symmetric": sym}


def load_map(mkt: DatacenterMarket, n_buses) -> np.ndarray:
    """A^FL = q (A^DB)' A^sum, shape (N, K N_D)."""
    K, nd = mkt.eta.shape
    A = np.zeros((n_buses, K * nd))
    for k in range(K):
        for j, bus in enumerate(mkt.dc_bus):
            if not 0 <= bus < n_buses:
                raise ScenarioError(f"datacenter {j} maps to bus {bus}, grid has {n_buses}")
            A[bus, k * nd + j] = mkt.energy_per_workload
    return A


def feasible_set(mkt: DatacenterMarket) -> Polyhedron:
    """Product over companies of ``{lower <= x^(k) <= upper, 1'x^(k) = zeta_k}``."""
    K, nd = mkt.eta.shape
    n = K * nd
    if mkt.workload is None:
        eq = None
    else:
        E = np.zeros((K, n))
        for k in range(K):
            E[k, k * nd:(k + 1) * nd] = 1.0
        eq = (E, mkt.workload)
    return Polyhedron.build(n, eq=eq, lower=mkt.lower.reshape(-1), upper=mkt.upper.reshape(-1))


def build_datacenter_fl(mkt: DatacenterMarket, n_buses, name=None) -> FlSystemSpec:
    """Potential-game FL: ``Phi = 0.5 x' M_ne x - eta' x``, ``Phi_SW = 0.5 x' M_sw x - eta' x``.

    Raises
    ------
    ScenarioError
        Asymmetric cross blocks.  Use :func:`solve_gce_nonpotential` instead.
    """
    mats = assemble_matrices(mkt)
    if not mats["symmetric"]:
        raise ScenarioError("cross-company blocks are asymmetric: no potential exists, "
                            "use the variational-inequality route (solve_gce_nonpotential)")
    eta = mkt.eta.reshape(-1)
    m_ne = 0.5 * (mats["m_ne"] + mats["m_ne"].T)
    return FlSystemSpec(name or mkt.name, load_map(mkt, n_buses), feasible_set(mkt),
                        QuadraticFunction(m_ne, -eta), QuadraticFunction(mats["m_sw"], -eta),
                        meta={"kind": "datacenter"})


def utilities(mkt: DatacenterMarket, x) -> np.ndarray:
    """Per-company utility before energy payments."""
    K, nd = mkt.eta.shape
    X = np.asarray(x, float).reshape(K, nd)
    out = np.zeros(K)
    for k in range(K):
        u = mkt.eta[k] @ X[k] - 0.5 * X[k] @ mkt.self_blocks[k] @ X[k]
        for j in range(K):
            if j != k:
                u -= X[k] @ mkt.cross_blocks[k][j] @ X[j]
        out[k] = u
    return out


def utility_gradients(mkt: DatacenterMarket, x) -> np.ndarray:
    """Stacked own-gradients ``d u_k / d x^(k)``: equals ``eta - M_ne x``."""
    return mkt.eta.reshape(-1) - assemble_matrices(mkt)["m_ne"] @ np.asarray(x, float)


def closed_form_dc_lmp(mkt: DatacenterMarket, gamma1, gamma2) -> dict:
    """Uniform LMP of an uncongested two-generator grid with no stationary load.

    ``lmp = G q (1' M^-1 eta) / (1 + G q^2 1' M^-1 1)`` with
    ``G = 2 gamma1 gamma2 / (gamma1 + gamma2)``, for ``M = M_ne`` (GCE) and
    ``M = M_sw`` (SWM).  Valid when no workload bound is active at the optimum.
    """
    mats = assemble_matrices(mkt)
    G = 2.0 * gamma1 * gamma2 / (gamma1 + gamma2)
    q = mkt.energy_per_workload
    eta = mkt.eta.reshape(-1)
    one = np.ones_like(eta)
    out = {}
    for tag, M in (("lmp_gce", mats["m_ne"]), ("lmp_swm", mats["m_sw"])):
        try:
            a = np.linalg.solve(M, eta)
            b = np.linalg.solve(M, one)
        except np.linalg.LinAlgError:
            raise ScenarioError(f"{tag}: matrix is singular") from None
        out[tag] = float(G * q * one @ a / (1.0 + G * q * q * one @ b))
    return out


def block_ones_inverse_sum(theta) -> float:
    """``1' M^-1 1`` for ``M = [[I, D], [D, I]]``, ``D = diag(theta)``, by direct solve."""
    theta = np.asarray(theta, float)
    n = theta.size
    M = np.block([[np.eye(n), np.diag(theta)], [np.diag(theta), np.eye(n)]])
    return float(np.ones(2 * n) @ np.linalg.solve(M, np.ones(2 * n)))


# --------------------------------------------------------------------------
# queueing markets


def queueing_market(tau, gamma, distance, alpha, omega, dc_bus, q, workload=None,
                    lower=0.0, upper=None, name="datacenter") -> DatacenterMarket:
    """Market from waiting-cost primitives.

    ``M_kk = diag(2 alpha + omega_k)``, ``M_kj = diag(alpha)`` and
    ``eta_kj = tau_kj - gamma_k d_kj``.
    """
    tau = np.atleast_2d(np.asarray(tau, float))
    K, nd = tau.shape
    alpha = np.asarray(alpha, float).reshape(nd)
    omega = np.asarray(omega, float).reshape(K)
    eta = tau - np.asarray(gamma, float).reshape(K, 1) * np.asarray(distance, float).reshape(K, nd)
    selfb = [np.diag(2 * alpha + omega[k]) for k in range(K)]
    cross = [[np.diag(alpha) if j != k else np.zeros((nd, nd)) for j in range(K)] for k in range(K)]
    return DatacenterMarket(dc_bus, q, eta, selfb, cross, workload, lower, upper, name)


def sample_queueing_market(n_companies, dc_bus, q, seed=DEFAULT_SEED, distance=None,
                           with_workload=True, name="datacenter") -> DatacenterMarket:
    """Draw parameters from the case-study ranges.

    tau ~ 10 U(1,2), gamma_k ~ 0.1 U(2,4), omega_k ~ 1e-4 U(1,5),
    alpha_j ~ 1e-4 U(1,2), zeta_k ~ 1e4 U(1,5).  Distances are not part of
    the published ranges; when omitted they are drawn from U(0, 30).
    """
    rng = np.random.default_rng(seed)
    K, nd = n_companies, len(dc_bus)
    tau = 10.0 * rng.uniform(1, 2, size=(K, nd))
    gamma = 0.1 * rng.uniform(2, 4, size=K)
    omega = 1e-4 * rng.uniform(1, 5, size=K)
    alpha = 1e-4 * rng.uniform(1, 2, size=nd)
    zeta = 1e4 * rng.uniform(1, 5, size=K)
    if distance is None:
        distance = rng.uniform(0, 30, size=(K, nd))
    return queueing_market(tau, gamma, distance, alpha, omega, dc_bus, q,
                           workload=zeta if with_workload else None, name=name)


# --------------------------------------------------------------------------
# variational inequality route


@dataclass(frozen=True)
class AffineOperator:
    """``G(x) = matrix @ x + offset``."""

    matrix: np.ndarray
    offset: np.ndarray

    def __call__(self, x):
        return self.matrix @ x + self.offset

    def lipschitz(self) -> float:
        return float(np.linalg.norm(self.matrix, 2)) if self.matrix.size else 0.0


@dataclass(frozen=True)
class ViSolution:
    point: np.ndarray
    gap: float
    iterations: int
    converged: bool
    gap_history: tuple = ()
    step: float = 0.0
    projection: object = field(default=None, repr=False, compare=False)


def _projector(feasible: Polyhedron, settings):
    n = feasible.dim
    simple = feasible.eq_rhs.size == 0 and feasible.ineq_rhs.size == 0
    eye = np.eye(n)

    def project(w, return_solution=False):
        if simple and not return_solution:
            return np.clip(w, feasible.lower, feasible.upper)
        sol = solve_qp(QuadraticProgram(QuadraticFunction(eye, -w), feasible), settings, analyze=False)
        sol.raise_for_status("projection")
        return (sol.primal, sol) if return_solution else sol.primal
    return project


def vi_gap(op: AffineOperator, feasible: Polyhedron, x, settings=None) -> float:
    """``sup_{y in X} G(x)'(x - y)`` by one LP; zero exactly at VI solutions."""
    gx = op(x)
    lp = solve_lp(gx, feasible, settings, analyze=False).raise_for_status("gap LP")
    return float(gx @ x - lp.objective_value)


def gap_scale(op, x):
    return 1.0 + float(np.abs(op(x)) @ np.abs(x))


def fl_operator(mkt: DatacenterMarket, n_buses, lmp=None) -> AffineOperator:
    """Own-cost operator ``M_ne x - eta + A'lmp`` of the datacenter game."""
    mats = assemble_matrices(mkt)
    off = -mkt.eta.reshape(-1)
    if lmp is not None:
        off = off + load_map(mkt, n_buses).T @ np.asarray(lmp, float)
    return AffineOperator(mats["m_ne"], off)


def solve_vi_extragradient(operator: AffineOperator, feasible: Polyhedron, lmp=None, load_map_=None,
                           settings: SolverSettings | None = None, gap_tol=1e-7, max_iter=20000,
                           step=None, x0=None, check_every=50) -> ViSolution:
    """Extragradient for the affine monotone VI ``<G(x*), x - x*> >= 0`` on ``feasible``.

    ``lmp`` with ``load_map_`` shifts the operator by ``load_map_' lmp``.
    The step is ``0.9 / L`` with ``L`` the spectral norm of the operator
    matrix.  Convergence is certified every ``check_every`` iterations by the
    gap LP: ``gap <= gap_tol * (1 + |G(x)|'|x|)``.
    """
    settings = settings or SolverSettings()
    if lmp is not None:
        if load_map_ is None:
            raise ScenarioError("lmp given without a load map")
        operator = AffineOperator(operator.matrix, operator.offset + load_map_.T @ np.asarray(lmp, float))
    L = operator.lipschitz()
    t = step if step is not None else (0.9 / L if L > 0 else 1.0)
    project = _projector(feasible, settings)
    x = project(np.zeros(feasible.dim) if x0 is None else np.asarray(x0, float))
    history = []
    gap = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        y = project(x - t * operator(x))
        x_new = project(x - t * operator(y))
        moved = float(np.max(np.abs(x_new - x), initial=0.0))
        x = x_new
        if it % check_every == 0 or moved <= 1e-14 * (1 + float(np.max(np.abs(x), initial=0.0))):
            gap = vi_gap(operator, feasible, x, settings)
            history.append(gap)
            if gap <= gap_tol * gap_scale(operator, x):
                return ViSolution(x, gap, it, True, tuple(history), t)
    gap = vi_gap(operator, feasible, x, settings)
    history.append(gap)
    return ViSolution(x, gap, it, gap <= gap_tol * gap_scale(operator, x), tuple(history), t)


def company_best_response(mkt: DatacenterMarket, x, lmp, k, n_buses, settings=None):
    """Company ``k``'s own QP with the others' workloads held at ``x``."""
    K, nd = mkt.eta.shape
    X = np.asarray(x, float).reshape(K, nd)
    A = load_map(mkt, n_buses)[:, k * nd:(k + 1) * nd]
    lin = -mkt.eta[k] + A.T @ np.asarray(lmp, float)
    for j in range(K):
        if j != k:
            lin = lin + mkt.cross_blocks[k][j] @ X[j]
    eq = None
    if mkt.workload is not None:
        eq = (np.ones((1, nd)), mkt.workload[k:k + 1])
    poly = Polyhedron.build(nd, eq=eq, lower=mkt.lower[k], upper=mkt.upper[k])
    sol = solve_qp(QuadraticProgram(QuadraticFunction(mkt.self_blocks[k], lin), poly), settings, analyze=False)
    return sol.raise_for_status(f"company {k} best response").primal


def solve_gce_nonpotential(net: PowerNetwork, mkt: DatacenterMarket, settings: SolverSettings | None = None,
                           gap_tol=1e-9, max_iter=50000) -> GceSolution:
    """Equilibrium of a non-potential datacenter market by a joint VI.

    The unknown is ``z = (x, g, p)`` over the market-clearing set and the
    operator stacks the companies' own-cost gradients with generator marginal
    costs.  Prices are the balance multipliers of the last projection
    divided by the step.

    Raises
    ------
    ConvergenceError
        Extragradient did not reach the gap tolerance.
    """
    settings = settings or SolverSettings()
    mkt.check()
    mats = assemble_matrices(mkt)
    n_bus = net.n_buses
    # any preference works here; only the constraint set of the joint program is used
    fl_shape = FlSystemSpec(mkt.name, load_map(mkt, n_bus), feasible_set(mkt),
                            QuadraticFunction(np.zeros_like(mats["m_ne"]), np.zeros(mats["m_ne"].shape[0])),
                            QuadraticFunction(np.zeros_like(mats["m_ne"]), np.zeros(mats["m_ne"].shape[0])))
    prob, lay = joint_program(net, fl_shape, fl_shape.preference)
    dim = prob.variable_dim
    Mz = np.zeros((dim, dim))
    Mz[lay.x, lay.x] = mats["m_ne"]
    Mz[lay.g, lay.g] = np.diag(2.0 * net.quad_coeffs)
    off = np.zeros(dim)
    off[lay.x] = -mkt.eta.reshape(-1)
    off[lay.g] = net.lin_coeffs
    op = AffineOperator(Mz, off)
    L = max(float(np.linalg.norm(mats["m_ne"], 2)), 2.0 * float(np.max(net.quad_coeffs)))
    t = 0.9 / L
    vi = solve_vi_extragradient(op, prob.constraints, settings=settings, gap_tol=gap_tol,
                                max_iter=max_iter, step=t)
    if not vi.converged:
        raise ConvergenceError(f"extragradient stopped at gap {vi.gap:.3g} after {vi.iterations} iterations",
                               {"gap": vi.gap})
    z = vi.point
    # multipliers: z = Proj(z - t F(z)) at the fixed point
    proj = solve_qp(QuadraticProgram(QuadraticFunction(np.eye(dim), -(z - t * op(z))), prob.constraints),
                    settings, analyze=False).raise_for_status("final projection")
    z = proj.primal
    lmp = proj.duals_eq[lay.balance_rows] / t
    duals = [proj.duals_eq / t, proj.duals_ineq / t, proj.duals_lower / t, proj.duals_upper / t]
    res = kkt_residuals(QuadraticFunction(Mz, off), prob.constraints, z, *duals)
    res["vi_gap"] = vi_gap(op, prob.constraints, z, settings)
    res["vi_iterations"] = vi.iterations
    x, g, p = z[lay.x], z[lay.g], z[lay.p]
    flows = net.line_flows(p)
    nu = proj.duals_ineq[lay.flow_rows] / t
    fduals = nu[:lay.n_lines] + nu[lay.n_lines:]
    eta = mkt.eta.reshape(-1)
    welfare = 0.5 * x @ mats["m_sw"] @ x - eta @ x
    gen_cost = net.cost(g)
    return GceSolution(
        model="gce_vi", fl_decision=x, fl_load=load_map(mkt, n_bus) @ x, generation=g, injections=p,
        lmp=lmp, line_flows=flows, objective=float(welfare + gen_cost), social_cost=float(welfare + gen_cost),
        generation_cost=gen_cost, congested_lines=congested_lines(net, flows, fduals), dual_unique=None,
        kkt_residuals=res, flow_duals=fduals, iterations=vi.iterations,
    )
