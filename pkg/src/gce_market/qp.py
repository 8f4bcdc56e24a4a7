"""Dense primal-dual interior point solver for convex QPs and LPs.

Problem form::

    min  0.5 x'Qx + c'x + d
    s.t. A_eq x  = b_eq        (multiplier mu)
         A_in x <= b_in        (multiplier nu >= 0)
         lower <= x <= upper   (multipliers w_lo, w_up >= 0)

Lagrangian sign convention::

    L = f(x) - mu'(A_eq x - b_eq) + nu'(A_in x - b_in) - w_lo'(x - lower) + w_up'(x - upper)

so ``mu`` is the sensitivity of the optimal value to ``b_eq`` (the price of
one more unit of right-hand side) and stationarity reads
``Qx + c - A_eq'mu + A_in'nu - w_lo + w_up = 0``.

The algorithm is Mehrotra's predictor-corrector on the reduced KKT system,
factored with LAPACK's Bunch-Kaufman ``sytrf``.  Nothing here is random, so
identical inputs give bit-identical outputs.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr
from scipy.linalg.lapack import get_lapack_funcs
from scipy.optimize import linprog, lsq_linear

from .errors import ConvergenceError, InfeasibleError
from .model import Polyhedron, QuadraticFunction, SolverSettings

log = logging.getLogger(__name__)

_sytrf, _sytrs = get_lapack_funcs(("sytrf", "sytrs"), dtype=np.float64)

OPTIMAL, INFEASIBLE, UNBOUNDED, MAX_ITER = "optimal", "infeasible", "unbounded", "max_iter"

_RANK_TOL = 1e-9
_POLISH_TRIGGER = 1e-7
_REG = 1e-10


@dataclass(frozen=True)
class QuadraticProgram:
    """``objective`` minimised over ``constraints``."""

    objective: QuadraticFunction
    constraints: Polyhedron

    def __post_init__(self):
        if self.objective.dim != self.constraints.dim:
            from .errors import ScenarioError
            raise ScenarioError(
                f"objective has {self.objective.dim} variables, constraints have {self.constraints.dim}")

    @property
    def variable_dim(self) -> int:
        return self.constraints.dim


@dataclass(frozen=True)
class QpSolution:
    primal: np.ndarray
    duals_eq: np.ndarray
    duals_ineq: np.ndarray
    duals_lower: np.ndarray
    duals_upper: np.ndarray
    objective_value: float
    status: str
    kkt_residuals: dict
    iterations: int
    dual_unique: bool | None = None
    non_unique: bool | None = None
    certificate: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    def raise_for_status(self, what="QP"):
        if self.status == INFEASIBLE:
            raise InfeasibleError(f"{what} is infeasible", self.certificate)
        if self.status == UNBOUNDED:
            raise InfeasibleError(f"{what} is unbounded", self.certificate)
        if self.status != OPTIMAL:
            raise ConvergenceError(f"{what} stopped after {self.iterations} iterations", self.kkt_residuals)
        return self


def kkt_residuals(obj: QuadraticFunction, poly: Polyhedron, x, mu, nu, w_lo, w_up) -> dict:
    """Relative KKT residuals of a primal-dual pair (infinity norms).

    ``w_lo``/``w_up`` entries for infinite bounds are ignored.
    """
    x = np.asarray(x, float)
    fin_lo = np.isfinite(poly.lower)
    fin_up = np.isfinite(poly.upper)
    w_lo = np.where(fin_lo, w_lo, 0.0)
    w_up = np.where(fin_up, w_up, 0.0)
    qx = obj.quad @ x
    at_mu = poly.eq_lhs.T @ mu
    gt_nu = poly.ineq_lhs.T @ nu
    r_d = qx + obj.lin - at_mu + gt_nu - w_lo + w_up
    amax = lambda v: float(np.max(np.abs(v), initial=0.0))
    stat = amax(r_d) / (1.0 + max(amax(qx), amax(obj.lin), amax(at_mu), amax(gt_nu), amax(w_lo), amax(w_up)))

    eq_res = poly.eq_lhs @ x - poly.eq_rhs
    slack_in = poly.ineq_rhs - poly.ineq_lhs @ x
    slack_lo = np.where(fin_lo, x - np.where(fin_lo, poly.lower, 0.0), 0.0)
    slack_up = np.where(fin_up, np.where(fin_up, poly.upper, 0.0) - x, 0.0)
    viol = max(amax(eq_res), amax(np.minimum(slack_in, 0)), amax(np.minimum(slack_lo, 0)),
               amax(np.minimum(slack_up, 0)))
    pscale = 1.0 + max(amax(poly.eq_rhs), amax(poly.ineq_rhs), amax(x))
    prim = viol / pscale

    duals = np.concatenate([nu, w_lo, w_up])
    dual_feas = amax(np.minimum(duals, 0.0)) / (1.0 + amax(duals))

    fx = obj(x)
    prods = np.concatenate([nu * slack_in, w_lo * slack_lo, w_up * slack_up])
    comp = amax(prods) / (1.0 + abs(fx))
    gap = abs(float(x @ r_d + mu @ eq_res + prods.sum())) / (1.0 + abs(fx))
    return {"stationarity": stat, "primal_feas": prim, "dual_feas": dual_feas,
            "complementarity": comp, "duality_gap": gap}


def _worst(res):
    return max(res[k] for k in ("stationarity", "primal_feas", "dual_feas", "complementarity", "duality_gap"))


def dual_objective(obj: QuadraticFunction, poly: Polyhedron, sol: QpSolution) -> float:
    """Wolfe dual value at the returned multipliers."""
    x = sol.primal
    fin_lo, fin_up = np.isfinite(poly.lower), np.isfinite(poly.upper)
    val = -0.5 * x @ obj.quad @ x + poly.eq_rhs @ sol.duals_eq - poly.ineq_rhs @ sol.duals_ineq
    val += np.sum(np.where(fin_lo, sol.duals_lower * np.where(fin_lo, poly.lower, 0), 0))
    val -= np.sum(np.where(fin_up, sol.duals_upper * np.where(fin_up, poly.upper, 0), 0))
    return float(val + obj.const)


# --------------------------------------------------------------------------
# presolve helpers


def _independent_rows(A, tol=_RANK_TOL):
    """Indices of a maximal independent row subset (pivoted QR on A')."""
    m = A.shape[0]
    if m == 0:
        return np.zeros(0, int)
    norms = np.max(np.abs(A), axis=1)
    nz = np.flatnonzero(norms > 0)
    if nz.size == 0:
        return np.zeros(0, int)
    As = A[nz] / norms[nz, None]
    _, r, piv = qr(As.T, mode="economic", pivoting=True)
    d = np.abs(np.diag(r))
    rank = int(np.sum(d > tol * max(d[0], 1.0) * max(As.shape)))
    return np.sort(nz[piv[:rank]])


def matrix_rank(M, tol=_RANK_TOL) -> int:
    """Numerical rank after row normalisation, via pivoted QR."""
    if M.size == 0:
        return 0
    norms = np.max(np.abs(M), axis=1)
    M = M[norms > 0] / norms[norms > 0, None]
    if M.shape[0] == 0:
        return 0
    if M.shape[0] < M.shape[1]:
        M = M.T
    _, r, _ = qr(M, mode="economic", pivoting=True)
    d = np.abs(np.diag(r))
    return int(np.sum(d > tol * max(d[0], 1.0) * max(M.shape)))


# --------------------------------------------------------------------------
# core iteration


class _Cone:
    """Stacked inequality data: general rows then lower and upper bounds.

    Slacks are ``v = h - Gx`` with ``G = [A_in; -I_lo; I_up]``.
    """

    def __init__(self, G, h, lo_idx, lo, up_idx, up, n):
        self.G, self.n = G, n
        self.lo_idx, self.up_idx = lo_idx, up_idx
        self.mg, self.ml = G.shape[0], lo_idx.size
        self.h = np.concatenate([h, -lo, up])
        self.m = self.h.size

    def apply(self, x):
        return np.concatenate([self.G @ x, -x[self.lo_idx], x[self.up_idx]])

    def apply_t(self, z):
        zg, zl, zu = self.split(z)
        out = self.G.T @ zg
        np.subtract.at(out, self.lo_idx, zl)
        np.add.at(out, self.up_idx, zu)
        return out

    def gram(self, d):
        dg, dl, du = self.split(d)
        out = self.G.T @ (dg[:, None] * self.G)
        diag = np.zeros(self.n)
        np.add.at(diag, self.lo_idx, dl)
        np.add.at(diag, self.up_idx, du)
        out[np.diag_indices(self.n)] += diag
        return out

    def split(self, z):
        a, b = self.mg, self.mg + self.ml
        return z[:a], z[a:b], z[b:]


class _Kkt:
    def __init__(self, H, A, reg=_REG):
        n, m = H.shape[0], A.shape[0]
        self.n = n
        K = np.zeros((n + m, n + m))
        K[:n, :n] = H
        K[n:, :n] = A
        K[:n, n:] = A.T
        self.K0 = K.copy()
        K[np.diag_indices(n)] += reg
        idx = np.arange(n, n + m)
        K[idx, idx] -= reg
        self.ldu, self.ipiv, info = _sytrf(K, lower=1, lwork=max(1, 64 * (n + m)))
        if info < 0:
            raise np.linalg.LinAlgError(f"sytrf argument error {info}")

    def solve(self, r1, r2, refine=2):
        rhs = np.concatenate([r1, r2])
        sol, _ = _sytrs(self.ldu, self.ipiv, rhs[:, None], lower=1)
        sol = sol[:, 0]
        for _ in range(refine):
            res = rhs - self.K0 @ sol
            if not np.all(np.isfinite(res)):
                break
            corr, _ = _sytrs(self.ldu, self.ipiv, res[:, None], lower=1)
            sol = sol + corr[:, 0]
        return sol[:self.n], sol[self.n:]


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    with np.errstate(over="ignore"):  # v floored at 1e-300 can overflow; min with 1 is still right
        return float(min(1.0, np.min(-v[neg] / dv[neg])))


def _ipm(Q, c, A, b, cone: _Cone, settings: SolverSettings, residual_fn):
    """Run predictor-corrector from a heuristic start.

    Returns ``(x, y, z, status, iterations, residuals)`` in the scaled space.
    """
    n, me, m = Q.shape[0], A.shape[0], cone.m
    # least-squares style start
    H0 = Q + cone.gram(np.ones(m))
    k0 = _Kkt(H0, A)
    x, negy = k0.solve(-c + cone.apply_t(cone.h), b)
    y = -negy
    v = cone.h - cone.apply(x)
    v = np.maximum(v, 1.0)
    z = np.ones(m)
    if not np.all(np.isfinite(x)):
        x = np.zeros(n)
        y = np.zeros(me)

    best = None
    stuck = 0
    for it in range(settings.max_iter + 1):
        res = residual_fn(x, y, z)
        worst = _worst(res)
        if best is None or worst < best[0]:
            best = (worst, x.copy(), y.copy(), z.copy(), res)
        if worst <= settings.tolerance:
            return x, y, z, OPTIMAL, it, res
        if it == settings.max_iter:
            break
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))) or \
                max(np.max(np.abs(x), initial=0), np.max(z, initial=0)) > 1e14:
            log.debug("iterates diverged at %d", it)
            break

        r_d = Q @ x + c - A.T @ y + cone.apply_t(z)
        r_p = A @ x - b
        r_v = cone.apply(x) + v - cone.h
        mu = float(v @ z) / m if m else 0.0
        d = z / v if m else np.zeros(0)
        try:
            kkt = _Kkt(Q + cone.gram(d), A)
        except np.linalg.LinAlgError:
            break

        def direction(r_c):
            # dz = V^-1 (-r_c + Z r_v + Z G dx), dv = -r_v - G dx
            t = (-r_c + z * r_v) / v if m else np.zeros(0)
            dx, neg_dy = kkt.solve(-r_d - cone.apply_t(t), -r_p)
            gdx = cone.apply(dx)
            dv = -r_v - gdx
            dz = t + d * gdx
            return dx, -neg_dy, dv, dz

        if m:
            dxa, dya, dva, dza = direction(v * z)
            a_aff = min(_max_step(v, dva), _max_step(z, dza))
            mu_aff = float((v + a_aff * dva) @ (z + a_aff * dza)) / m
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            dx, dy, dv, dz = direction(v * z + dva * dza - sigma * mu)
            alpha = min(1.0, 0.995 * min(_max_step(v, dv), _max_step(z, dz)))
        else:
            dx, dy, dv, dz = direction(np.zeros(0))
            alpha = 1.0
        if not np.all(np.isfinite(dx)):
            break
        x = x + alpha * dx
        y = y + alpha * dy
        v = v + alpha * dv
        z = z + alpha * dz
        v = np.maximum(v, 1e-300)
        z = np.maximum(z, 1e-300)
        stuck = stuck + 1 if alpha < 1e-8 else 0
        if stuck >= 5:
            break
    _, x, y, z, res = best
    return x, y, z, MAX_ITER, it, res


# --------------------------------------------------------------------------
# driver


def _empty_solution(n, poly, status, cert, its=0):
    nan = np.full(n, np.nan)
    return QpSolution(nan, np.full(poly.eq_rhs.size, np.nan), np.full(poly.ineq_rhs.size, np.nan),
                      np.full(n, np.nan), np.full(n, np.nan), np.nan, status,
                      {k: np.inf for k in ("stationarity", "primal_feas", "dual_feas",
                                            "complementarity", "duality_gap")}, its,
                      certificate=cert)


def solve_qp(problem: QuadraticProgram, settings: SolverSettings | None = None, *,
             analyze: bool = True, _classify: bool = True) -> QpSolution:
    """Solve a convex QP and recover all multipliers.

    Parameters
    ----------
    problem : QuadraticProgram
    settings : SolverSettings, optional
        ``tolerance`` bounds every relative KKT residual at exit.
    analyze : bool
        When true, run the LICQ rank test (``dual_unique``) and the
        optimal-face test (``non_unique``).  Skipping saves two pivoted QRs.

    Returns
    -------
    QpSolution
        ``status`` is one of ``optimal``, ``infeasible``, ``unbounded``,
        ``max_iter``.  Non-optimal solutions carry a ``certificate`` dict.
    """
    settings = settings or SolverSettings()
    obj, poly = problem.objective, problem.constraints
    n = poly.dim
    Q = 0.5 * (obj.quad + obj.quad.T)
    c = obj.lin.copy()
    lo, up = poly.lower, poly.upper

    crossed = np.flatnonzero(lo > up + 1e-12 * (1 + np.abs(lo)))
    if crossed.size:
        return _empty_solution(n, poly, INFEASIBLE, {"reason": "crossed bounds", "coords": crossed.tolist()})

    fixed = np.isfinite(lo) & np.isfinite(up) & (up - lo <= 1e-13 * (1 + np.abs(lo)))
    fix_idx = np.flatnonzero(fixed)
    E = np.zeros((fix_idx.size, n))
    E[np.arange(fix_idx.size), fix_idx] = 1.0
    A_all = np.vstack([poly.eq_lhs, E])
    b_all = np.concatenate([poly.eq_rhs, lo[fix_idx]])

    keep = _independent_rows(A_all)
    dropped = np.setdiff1d(np.arange(A_all.shape[0]), keep)
    if dropped.size:
        xls = np.linalg.lstsq(A_all[keep], b_all[keep], rcond=None)[0] if keep.size else np.zeros(n)
        bad = np.abs(A_all[dropped] @ xls - b_all[dropped]) > 1e-9 * (1 + np.abs(b_all[dropped]) +
                                                                     np.abs(A_all[dropped]) @ np.abs(xls))
        if np.any(bad):
            return _empty_solution(n, poly, INFEASIBLE, {"reason": "inconsistent equality rows",
                                                         "rows": dropped[bad].tolist()})

    G, h = poly.ineq_lhs, poly.ineq_rhs
    gnorm = np.max(np.abs(G), axis=1) if G.size else np.zeros(G.shape[0])
    gz = gnorm == 0
    if np.any(h[gz] < 0):
        return _empty_solution(n, poly, INFEASIBLE, {"reason": "0 <= negative rhs",
                                                     "rows": np.flatnonzero(gz & (h < 0)).tolist()})
    g_rows = np.flatnonzero(~gz)

    # scaling: unit inf-norm rows, objective by its largest coefficient
    A_k, b_k = A_all[keep], b_all[keep]
    ascale = np.max(np.abs(A_k), axis=1) if A_k.size else np.ones(A_k.shape[0])
    gscale = gnorm[g_rows]
    omega = max(float(np.max(np.abs(Q), initial=0.0)), float(np.max(np.abs(c), initial=0.0)))
    omega = omega if omega > 0 else 1.0
    Qs, cs = Q / omega, c / omega
    As, bs = A_k / ascale[:, None], b_k / ascale
    Gs, hs = G[g_rows] / gscale[:, None], h[g_rows] / gscale

    lo_idx = np.flatnonzero(np.isfinite(lo) & ~fixed)
    up_idx = np.flatnonzero(np.isfinite(up) & ~fixed)
    cone = _Cone(Gs, hs, lo_idx, lo[lo_idx], up_idx, up[up_idx], n)

    def unscale(x, y, z):
        mu_all = np.zeros(A_all.shape[0])
        mu_all[keep] = omega * y / ascale
        zg, zl, zu = cone.split(z)
        nu = np.zeros(G.shape[0])
        nu[g_rows] = omega * zg / gscale
        w_lo = np.zeros(n)
        w_up = np.zeros(n)
        w_lo[lo_idx] = omega * zl
        w_up[up_idx] = omega * zu
        # duals of pinned coordinates come from their equality rows
        mf = mu_all[poly.eq_rhs.size:]
        w_lo[fix_idx] += np.maximum(mf, 0)
        w_up[fix_idx] += np.maximum(-mf, 0)
        return mu_all[:poly.eq_rhs.size], nu, w_lo, w_up

    def residual_fn(x, y, z):
        mu, nu, w_lo, w_up = unscale(x, y, z)
        return kkt_residuals(obj, poly, x, mu, nu, w_lo, w_up)

    x, y, z, status, its, res = _ipm(Qs, cs, As, bs, cone, settings, residual_fn)
    if status == OPTIMAL:
        x, y, z, res = _polish(Qs, cs, As, bs, cone, x, y, z, res, residual_fn)
    mu, nu, w_lo, w_up = unscale(x, y, z)

    if status != OPTIMAL and _classify:
        kind, cert = _classify_failure(obj, poly, settings)
        if kind is not None:
            return _empty_solution(n, poly, kind, cert, its)
        cert = {"reason": "iteration limit", "residuals": res}
    else:
        cert = {}

    dual_unique = non_unique = None
    if analyze and status == OPTIMAL:
        dual_unique, non_unique, tight = _analyse(Q, poly, x, z, cone, A_all[keep], dropped.size > 0)
        if not dual_unique:
            polished = _min_norm_duals(Q, c, poly, x, (mu, nu, w_lo, w_up), tight, cone, fix_idx, g_rows, settings)
            if polished is not None:
                mu, nu, w_lo, w_up = polished
                res = kkt_residuals(obj, poly, x, mu, nu, w_lo, w_up)
    return QpSolution(x, mu, nu, w_lo, w_up, obj(x), status, res, its, dual_unique, non_unique, cert)


def _polish(Q, c, A, b, cone, x, y, z, res, residual_fn):
    """Active-set correction when some pair (slack, multiplier) is not resolved.

    Without strict complementarity the interior iterate sits about
    sqrt(tolerance) away from a weakly active bound.  Each candidate active
    set is imposed as equalities and one KKT solve moves onto it; the move is
    kept only if it stays feasible, keeps dual signs and does not worsen the
    residuals.
    """
    if not cone.m:
        return x, y, z, res
    G_full = _cone_matrix(cone)
    v = cone.h - G_full @ x
    both = np.minimum(v, z)
    if np.max(both) <= _POLISH_TRIGGER:
        return x, y, z, res
    strict = v < z
    candidates = [strict, strict | (both > _POLISH_TRIGGER)]
    best = (_worst(res), x, y, z, res)
    me = A.shape[0]
    for act in candidates:
        Gt = G_full[act]
        try:
            kkt = _Kkt(Q, np.vstack([A, Gt]))
            dx, w = kkt.solve(-(Q @ x + c), np.concatenate([b - A @ x, cone.h[act] - Gt @ x]))
        except np.linalg.LinAlgError:
            continue
        xn = x + dx
        zt = w[me:]
        scale = 1.0 + np.abs(cone.h)
        if not (np.all(np.isfinite(xn)) and np.all(cone.h - G_full @ xn >= -1e-12 * scale)
                and np.all(zt >= -1e-12 * (1.0 + np.max(np.abs(zt), initial=0.0)))):
            continue
        zn = np.zeros(cone.m)
        zn[act] = np.maximum(zt, 0.0)
        yn = -w[:me]
        rn = residual_fn(xn, yn, zn)
        if _worst(rn) <= best[0]:
            best = (_worst(rn), xn, yn, zn, rn)
    return best[1:]


def _cone_matrix(cone):
    return np.vstack([cone.G, -np.eye(cone.n)[cone.lo_idx], np.eye(cone.n)[cone.up_idx]])


def _analyse(Q, poly, x, z_scaled, cone, A_keep, had_dropped):
    """LICQ test and optimal-face singleton test at a converged point."""
    G_full = _cone_matrix(cone)
    v = cone.h - G_full @ x
    scale = 1.0 + np.abs(cone.h)
    tight = (v <= 1e-6 * scale) | (v < z_scaled)
    T = np.vstack([A_keep, G_full[tight]])
    rank_t = matrix_rank(T)
    dual_unique = (not had_dropped) and rank_t == T.shape[0]
    # optimal set is a singleton iff no d != 0 with T d = 0 and Q d = 0
    stacked = np.vstack([T, Q]) if Q.size else T
    non_unique = matrix_rank(stacked) < cone.n
    return bool(dual_unique), bool(non_unique), tight


def _min_norm_duals(Q, c, poly, x, duals, tight, cone, fix_idx, g_rows, settings):
    """Smallest multipliers reproducing the same stationarity combination.

    Used when the multiplier set is not a singleton (LICQ fails), so that a
    degenerate solve reports a bounded, reproducible choice instead of
    wherever the central path happened to stop.
    """
    mu, nu, w_lo, w_up = duals
    n = poly.dim
    t_g, t_l, t_u = cone.split(tight)
    rows_g = g_rows[t_g]
    lo_t = np.concatenate([cone.lo_idx[t_l], fix_idx])
    up_t = np.concatenate([cone.up_idx[t_u], fix_idx])
    I = np.eye(n)
    K = np.hstack([-poly.eq_lhs.T, poly.ineq_lhs[rows_g].T, -I[:, lo_t], I[:, up_t]])
    y0 = np.concatenate([mu, nu[rows_g], w_lo[lo_t], w_up[up_t]])
    free = mu.size
    k = K.shape[1]
    if k == 0:
        return None
    lower = np.concatenate([np.full(free, -np.inf), np.zeros(k - free)])
    # the multipliers at degenerate points are not strictly complementary,
    # so a loose tolerance would leave O(sqrt(tol)) values behind
    tight_settings = SolverSettings(tolerance=1e-14, max_iter=max(settings.max_iter, 60))
    # exact stationarity first; if round-off leaves it outside the cone, keep
    # the combination the solver actually reached
    for target in (-(Q @ x + c), K @ y0):
        feas = Polyhedron(K, target, np.zeros((0, k)), np.zeros(0), lower, np.full(k, np.inf))
        sol = solve_qp(QuadraticProgram(QuadraticFunction(np.eye(k), np.zeros(k)), feas), tight_settings,
                       analyze=False, _classify=False)
        if sol.optimal or (sol.status == MAX_ITER and _worst(sol.kkt_residuals) <= settings.tolerance):
            break
    else:
        return None
    y = sol.primal
    a, b, c = free, free + rows_g.size, free + rows_g.size + lo_t.size
    mu2 = y[:a]
    nu2 = np.zeros_like(nu)
    nu2[rows_g] = np.maximum(y[a:b], 0)
    wl2 = np.zeros(n)
    wu2 = np.zeros(n)
    np.add.at(wl2, lo_t, np.maximum(y[b:c], 0))
    np.add.at(wu2, up_t, np.maximum(y[c:], 0))
    return mu2, nu2, wl2, wu2


def _classify_failure(obj, poly, settings):
    """Phase-1 elastic LP, then a recession-direction LP."""
    n = poly.dim
    me, mi = poly.eq_rhs.size, poly.ineq_rhs.size
    # variables [x, e_plus, e_minus, w]
    k = n + 2 * me + mi
    A = np.hstack([poly.eq_lhs, np.eye(me), -np.eye(me), np.zeros((me, mi))])
    G = np.hstack([poly.ineq_lhs, np.zeros((mi, 2 * me)), -np.eye(mi)])
    lower = np.concatenate([poly.lower, np.zeros(2 * me + mi)])
    upper = np.concatenate([poly.upper, np.full(2 * me + mi, np.inf)])
    cost = np.concatenate([np.zeros(n), np.ones(2 * me + mi)])
    p1 = Polyhedron(A, poly.eq_rhs, G, poly.ineq_rhs, lower, upper)
    s1 = solve_qp(QuadraticProgram(QuadraticFunction(np.zeros((k, k)), cost), p1), settings,
                  analyze=False, _classify=False)
    if s1.optimal:
        scale = 1.0 + max(float(np.max(np.abs(poly.eq_rhs), initial=0)),
                          float(np.max(np.abs(poly.ineq_rhs), initial=0)))
        if s1.objective_value > 1e-7 * scale:
            e = s1.primal[n:]
            viol_eq = np.flatnonzero(e[:me] + e[me:2 * me] > 1e-8 * scale)
            viol_in = np.flatnonzero(e[2 * me:] > 1e-8 * scale)
            return INFEASIBLE, {"reason": "phase-1 elastic minimum is positive",
                                "phase1_objective": float(s1.objective_value),
                                "eq_rows": viol_eq.tolist(), "ineq_rows": viol_in.tolist()}
    # recession cone of the feasible set restricted to Q d = 0
    fin_lo, fin_up = np.isfinite(poly.lower), np.isfinite(poly.upper)
    d_lo = np.where(fin_lo, 0.0, -1.0)
    d_up = np.where(fin_up, 0.0, 1.0)
    rc = Polyhedron(np.vstack([poly.eq_lhs, obj.quad]), np.zeros(me + n),
                    poly.ineq_lhs, np.zeros(mi), d_lo, d_up)
    s2 = solve_qp(QuadraticProgram(QuadraticFunction(np.zeros((n, n)), obj.lin), rc), settings,
                  analyze=False, _classify=False)
    if s2.optimal and s2.objective_value < -1e-7 * (1.0 + float(np.max(np.abs(obj.lin), initial=0))):
        return UNBOUNDED, {"reason": "descent direction in recession cone",
                           "direction": s2.primal.tolist(), "slope": float(s2.objective_value)}
    return None, {}


def solve_lp(objective_lin, constraints: Polyhedron, settings: SolverSettings | None = None, *,
             analyze: bool = True) -> QpSolution:
    """LP special case of :func:`solve_qp`.

    The interior point method converges to the relative interior of the
    optimal face, so ``non_unique`` is true exactly when that face has more
    than one point.  Strongly dual-degenerate LPs with far-away bounds can
    stall it (the Newton system turns singular along the optimal face while
    the iterate is still far from the bound that closes stationarity); on an
    iteration-limit exit the LP is re-solved by dual simplex and the vertex
    is reported with its own residuals.
    """
    c = np.asarray(objective_lin, float).reshape(-1)
    n = constraints.dim
    sol = solve_qp(QuadraticProgram(QuadraticFunction(np.zeros((n, n)), c), constraints),
                   settings, analyze=analyze)
    if sol.status != MAX_ITER:
        return sol
    alt = _simplex_lp(c, constraints, settings or SolverSettings(), analyze)
    return alt if alt is not None else sol


def _simplex_lp(c, poly: Polyhedron, settings, analyze):
    res = linprog(c, A_ub=poly.ineq_lhs if poly.ineq_rhs.size else None,
                  b_ub=poly.ineq_rhs if poly.ineq_rhs.size else None,
                  A_eq=poly.eq_lhs if poly.eq_rhs.size else None,
                  b_eq=poly.eq_rhs if poly.eq_rhs.size else None,
                  bounds=np.column_stack([np.where(np.isfinite(poly.lower), poly.lower, -np.inf),
                                          np.where(np.isfinite(poly.upper), poly.upper, np.inf)]),
                  method="highs-ds", options={"dual_feasibility_tolerance": 1e-10,
                                             "primal_feasibility_tolerance": 1e-10})
    if res.status != 0:
        return None
    x = res.x
    n = x.size
    # scipy marginals are d(objective)/d(rhs); map onto the module convention
    mu = res.eqlin.marginals if poly.eq_rhs.size else np.zeros(0)
    nu = -res.ineqlin.marginals if poly.ineq_rhs.size else np.zeros(0)
    w_lo = np.maximum(res.lower.marginals, 0.0)
    w_up = np.maximum(-res.upper.marginals, 0.0)
    obj = QuadraticFunction(np.zeros((n, n)), c)
    mu, nu, w_lo, w_up = _refine_vertex_duals(c, poly, x, mu, nu, w_lo, w_up)
    kkt = kkt_residuals(obj, poly, x, mu, nu, w_lo, w_up)
    status = OPTIMAL if _worst(kkt) <= settings.tolerance else MAX_ITER
    dual_unique = non_unique = None
    if analyze and status == OPTIMAL:
        dual_unique, non_unique = _active_rank_test(poly, x)
    return QpSolution(x, mu, nu, w_lo, w_up, obj(x), status, kkt, int(res.nit), dual_unique, non_unique,
                      {"method": "dual simplex"})


def _active_rank_test(poly: Polyhedron, x, tol=1e-9):
    """LICQ and singleton tests from the active set at a vertex (LP only)."""
    n = poly.dim
    I = np.eye(n)
    slack = poly.ineq_rhs - poly.ineq_lhs @ x
    rows = [poly.eq_lhs, poly.ineq_lhs[slack <= tol * (1 + np.abs(poly.ineq_rhs))]]
    lo_t = np.isfinite(poly.lower) & (x - poly.lower <= tol * (1 + np.abs(poly.lower)))
    up_t = np.isfinite(poly.upper) & (poly.upper - x <= tol * (1 + np.abs(poly.upper)))
    rows += [I[lo_t], I[up_t & ~lo_t]]
    T = np.vstack(rows)
    rank = matrix_rank(T)
    return bool(rank == T.shape[0]), bool(rank < n)


def _refine_vertex_duals(c, poly, x, mu, nu, w_lo, w_up, tol=1e-9):
    """Sign-constrained least-squares multipliers on the active set.

    Marginals come back accurate to roughly the simplex feasibility
    tolerance; at a vertex with a large primal that error dominates the
    complementarity-weighted duality gap.
    """
    n = poly.dim
    slack = poly.ineq_rhs - poly.ineq_lhs @ x
    act = np.flatnonzero(slack <= tol * (1 + np.abs(poly.ineq_rhs)))
    lo_t = np.flatnonzero(np.isfinite(poly.lower) & (x - poly.lower <= tol * (1 + np.abs(poly.lower))))
    up_t = np.flatnonzero(np.isfinite(poly.upper) & (poly.upper - x <= tol * (1 + np.abs(poly.upper))))
    I = np.eye(n)
    K = np.hstack([-poly.eq_lhs.T, poly.ineq_lhs[act].T, -I[:, lo_t], I[:, up_t]])
    if K.shape[1] == 0:
        return mu, nu, w_lo, w_up
    a, b, e = mu.size, mu.size + act.size, mu.size + act.size + lo_t.size
    nu, w_lo, w_up = nu.copy(), w_lo.copy(), w_up.copy()
    # inactive constraints carry no multiplier at a vertex
    keep = np.zeros(nu.size, bool)
    keep[act] = True
    nu[~keep] = 0.0
    w_lo[np.setdiff1d(np.arange(n), lo_t)] = 0.0
    w_up[np.setdiff1d(np.arange(n), up_t)] = 0.0
    lb = np.concatenate([np.full(a, -np.inf), np.zeros(K.shape[1] - a)])
    fit = lsq_linear(K, -c, bounds=(lb, np.inf), method="bvls", tol=1e-15)
    if not fit.success:
        return mu, nu, w_lo, w_up
    y = np.maximum(fit.x, lb)
    mu = y[:a]
    nu[act] = y[a:b]
    w_lo[lo_t] = y[b:e]
    w_up[up_t] = y[e:]
    return mu, nu, w_lo, w_up
