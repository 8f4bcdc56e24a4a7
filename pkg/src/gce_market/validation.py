"""Structural checks run before any solve.

Every check appends to a :class:`ValidationReport` instead of raising, so a
single pass lists all problems with a scenario.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from .errors import InfeasibleError, ScenarioError
from .model import LARGE_LIMIT, FlSystemSpec, Polyhedron, PowerNetwork, QuadraticFunction, Scenario
from .qp import INFEASIBLE, OPTIMAL, solve_lp

SYM_TOL = 1e-12
PSD_TOL = 1e-9
STRICT_TOL = 1e-9


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, code, message):
        self.violations.append({"code": code, "message": message})

    def warn(self, code, message):
        self.warnings.append({"code": code, "message": message})

    def codes(self):
        return [v["code"] for v in self.violations]

    def raise_if_invalid(self):
        if not self.violations:
            return self
        msg = "; ".join(v["message"] for v in self.violations)
        if set(self.codes()) <= {"infeasible", "jointly_infeasible"}:
            raise InfeasibleError(msg, {"violations": self.violations})
        raise ScenarioError(msg)

    def as_dict(self):
        return {"ok": self.ok, "violations": list(self.violations), "warnings": list(self.warnings),
                "flags": dict(self.flags)}


def check_network(net: PowerNetwork, report: ValidationReport, allow_phantom=False):
    N, M = net.n_buses, net.n_lines
    if net.ptdf.shape != (M, N):
        report.add("dimension", f"PTDF is {net.ptdf.shape}, expected ({M}, {N})")
        return
    if net.line_limit.shape != (M,):
        report.add("dimension", f"{net.line_limit.size} line limits for {M} lines")
    elif np.any(~(net.line_limit > 0)):
        report.add("line_limit", "line limits must be positive")
    if net.reference_bus is not None:
        if not 0 <= net.reference_bus < N:
            report.add("reference_bus", f"reference bus {net.reference_bus} out of range")
        elif M and np.max(np.abs(net.ptdf[:, net.reference_bus])) > 1e-9:
            report.add("reference_bus", "PTDF column of the reference bus is not zero")
    if not np.all(np.isfinite(net.stationary_load)):
        report.add("stationary_load", "stationary load has non-finite entries")
    buses = []
    for k, gen in enumerate(net.generators):
        if not 0 <= gen.bus < N:
            report.add("generator", f"generator {k} sits at unknown bus {gen.bus}")
        if not gen.quad_coeff > 0:
            report.add("generator", f"generator {k} needs a positive quadratic coefficient")
        if gen.g_min > gen.g_max:
            report.add("generator", f"generator {k} has g_min > g_max")
        buses.append(gen.bus)
    counts = np.bincount([b for b in buses if 0 <= b < N], minlength=N)
    if np.any(counts > 1):
        report.add("generator", f"buses {np.flatnonzero(counts > 1).tolist()} carry several generators")
    if np.any(counts == 0) and not allow_phantom:
        report.add("generator", f"buses {np.flatnonzero(counts == 0).tolist()} have no generator")
    big_lines = np.flatnonzero(net.line_limit >= LARGE_LIMIT)
    big_gens = [k for k, g in enumerate(net.generators) if g.g_max >= LARGE_LIMIT]
    if big_lines.size or big_gens:
        report.flags["large_limits"] = {"lines": big_lines.tolist(), "generators": big_gens}
        report.warn("large_limits", "some limits use the large-box stand-in for infinity")


def check_quadratic(f: QuadraticFunction, name, report: ValidationReport):
    if not np.all(np.isfinite(f.quad)) or not np.all(np.isfinite(f.lin)):
        report.add("non_finite", f"{name} has non-finite coefficients")
        return False
    scale = max(1.0, float(np.max(np.abs(f.quad), initial=0.0)))
    if np.max(np.abs(f.quad - f.quad.T), initial=0.0) > SYM_TOL * scale:
        report.add("asymmetric", f"{name} has an asymmetric quadratic term")
        return False
    if f.dim and f.min_eigenvalue() < -PSD_TOL * scale:
        report.add("indefinite", f"{name} is not convex (min eigenvalue {f.min_eigenvalue():.3g})")
        return False
    return True


def reduced_min_eigenvalue(f: QuadraticFunction, poly: Polyhedron) -> float:
    """Smallest eigenvalue of Q on the null space of the equalities (and pinned coordinates)."""
    pinned = np.flatnonzero(np.isfinite(poly.lower) & (poly.lower == poly.upper))
    E = np.zeros((pinned.size, poly.dim))
    E[np.arange(pinned.size), pinned] = 1.0
    rows = np.vstack([poly.eq_lhs, E])
    Z = null_space(rows) if rows.shape[0] else np.eye(poly.dim)
    if Z.shape[1] == 0:
        return np.inf
    H = Z.T @ (0.5 * (f.quad + f.quad.T)) @ Z
    return float(np.linalg.eigvalsh(H)[0])


def check_polyhedron(poly: Polyhedron, name, report: ValidationReport, settings=None):
    """Non-empty (feasibility LP) and bounded (recession cone is {0})."""
    n = poly.dim
    if n == 0:
        return True
    feas = solve_lp(np.zeros(n), poly, settings, analyze=False)
    if feas.status == INFEASIBLE:
        report.add("infeasible", f"{name}: feasible set is empty")
        return False
    if feas.status != OPTIMAL:
        report.add("infeasible", f"{name}: feasibility LP did not converge ({feas.status})")
        return False
    fin_lo, fin_up = np.isfinite(poly.lower), np.isfinite(poly.upper)
    boxed = fin_lo & fin_up
    if np.all(boxed):
        return True
    # d in the recession cone with |d| <= 1; boxed coordinates are pinned to 0
    lo = np.where(fin_lo, 0.0, -1.0)
    up = np.where(fin_up, 0.0, 1.0)
    cone = Polyhedron(poly.eq_lhs, np.zeros(poly.eq_rhs.size), poly.ineq_lhs,
                      np.zeros(poly.ineq_rhs.size), lo, up)
    sign = np.where(fin_lo & ~fin_up, 1.0, np.where(fin_up & ~fin_lo, -1.0, 0.0))
    unbounded = []
    if np.any(sign != 0):
        r = solve_lp(-sign, cone, settings, analyze=False)
        if r.optimal and -r.objective_value > 1e-7:
            unbounded = np.flatnonzero(np.abs(r.primal) > 1e-7).tolist()
    if not unbounded:
        # sign-constrained coordinates are zero on the cone; probe the free ones
        lo2 = np.where(sign != 0, 0.0, lo)
        up2 = np.where(sign != 0, 0.0, up)
        cone2 = Polyhedron(cone.eq_lhs, cone.eq_rhs, cone.ineq_lhs, cone.ineq_rhs, lo2, up2)
        for j in np.flatnonzero(~fin_lo & ~fin_up):
            for s in (1.0, -1.0):
                c = np.zeros(n)
                c[j] = -s
                r = solve_lp(c, cone2, settings, analyze=False)
                if r.optimal and -r.objective_value > 1e-7:
                    unbounded.append(int(j))
                    break
            if unbounded:
                break
    if unbounded:
        report.add("unbounded", f"{name}: feasible set is unbounded along coordinates {unbounded[:10]}")
        return False
    return True


def check_fl(fl: FlSystemSpec, n_buses, report: ValidationReport, settings=None):
    ok = True
    if fl.load_map.shape != (n_buses, fl.feasible.dim):
        report.add("dimension", f"{fl.name}: load map is {fl.load_map.shape}, expected "
                                f"({n_buses}, {fl.feasible.dim})")
        return False
    for f, tag in ((fl.preference, "preference"), (fl.welfare_preference, "welfare preference")):
        if f.dim != fl.decision_dim:
            report.add("dimension", f"{fl.name}: {tag} has dimension {f.dim}, expected {fl.decision_dim}")
            ok = False
        else:
            ok &= check_quadratic(f, f"{fl.name} {tag}", report)
    if not ok:
        return False
    ok = check_polyhedron(fl.feasible, fl.name, report, settings)
    lam = reduced_min_eigenvalue(fl.preference, fl.feasible)
    if not lam > STRICT_TOL:
        msg = f"{fl.name}: preference is not strictly convex on the feasible affine hull (min eig {lam:.3g})"
        if fl.meta.get("allow_flat_preference"):
            report.warn("flat_preference", msg + "; best responses are set-valued")
            report.flags.setdefault("flat_preference", []).append(fl.name)
        else:
            report.add("not_strictly_convex", msg)
            ok = False
    for mname in ("zero_slope_edges",):
        if fl.meta.get(mname):
            report.warn(mname, f"{fl.name}: {len(fl.meta[mname])} edges have zero delay coefficient")
    return ok


def check_joint_feasibility(net: PowerNetwork, fl: FlSystemSpec, report: ValidationReport, settings=None):
    """Is there (x, g, p) with x in X, g within limits, p in P and p = g - l - A x?"""
    from .dispatch import joint_program
    prob, _ = joint_program(net, fl, fl.preference)
    r = solve_lp(np.zeros(prob.variable_dim), prob.constraints, settings, analyze=False)
    if r.status == INFEASIBLE:
        report.add("jointly_infeasible", "no dispatch meets the stationary and flexible load "
                                         "within generator and line limits")
        report.flags["phase1"] = r.certificate
        return False
    if r.status != OPTIMAL:
        report.add("jointly_infeasible", f"joint feasibility LP ended with status {r.status}")
        return False
    return True


def validate_scenario(scenario: Scenario, settings=None) -> ValidationReport:
    """Check every structural invariant of a scenario.

    The function is pure; calling it twice yields equal reports.
    """
    settings = settings or scenario.solver
    report = ValidationReport()
    net = scenario.grid
    check_network(net, report, allow_phantom=bool((scenario.raw or {}).get("grid", {}).get("phantom_generators")))
    specs = []
    for fl in scenario.fl_systems:
        if not isinstance(fl, FlSystemSpec):
            continue
        if check_fl(fl, net.n_buses, report, settings):
            specs.append(fl)
    if report.ok:
        combined = scenario.combined_fl()
        check_joint_feasibility(net.with_phantom_generators(), combined, report, settings)
    return report


def validate_single(net: PowerNetwork, fl: FlSystemSpec | None = None, settings=None) -> ValidationReport:
    """Convenience wrapper around :func:`validate_scenario` for one grid + FL pair."""
    fls = (fl,) if fl is not None else ()
    return validate_scenario(Scenario(net, fls), settings)
