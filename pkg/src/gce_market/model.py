"""Domain types: the DC grid, polyhedra, quadratic functions and flexible-load systems.

Everything here is an immutable container.  Arrays are copied on construction
and flagged read-only so specs can be shared freely between solves.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import block_diag

from .errors import ScenarioError

#: Stand-in for an infinite line rating or generator capacity (MW).
LARGE_LIMIT = 1e6


def _frozen(a, ndim, name, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    if arr.ndim != ndim:
        raise ScenarioError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GeneratorParams:
    """Quadratic generator ``c(g) = quad_coeff * g**2 + lin_coeff * g`` on ``[g_min, g_max]``."""

    bus: int
    quad_coeff: float
    lin_coeff: float = 0.0
    g_min: float = 0.0
    g_max: float = LARGE_LIMIT

    def cost(self, g):
        return self.quad_coeff * g * g + self.lin_coeff * g

    def marginal_cost(self, g):
        return 2.0 * self.quad_coeff * g + self.lin_coeff

    def best_response(self, price):
        """Profit-maximising output at ``price``: argmin c(g) - price*g over the bounds."""
        g = (price - self.lin_coeff) / (2.0 * self.quad_coeff)
        return float(np.clip(g, self.g_min, self.g_max))


@dataclass(frozen=True)
class PowerNetwork:
    """DC power network described by its PTDF matrix.

    ``ptdf`` maps nodal injections (N) to line flows (M).  ``reference_bus``,
    when given, must have an all-zero PTDF column.
    """

    ptdf: np.ndarray
    line_limit: np.ndarray
    stationary_load: np.ndarray
    generators: tuple
    reference_bus: int | None = None

    def __post_init__(self):
        n = len(np.atleast_1d(self.stationary_load))
        ptdf = np.array(self.ptdf, dtype=float)
        if ptdf.size == 0:
            ptdf = ptdf.reshape(0, n)
        object.__setattr__(self, "ptdf", _frozen(ptdf, 2, "ptdf"))
        object.__setattr__(self, "line_limit", _frozen(np.atleast_1d(self.line_limit) if np.size(self.line_limit) else np.zeros(0), 1, "line_limit"))
        object.__setattr__(self, "stationary_load", _frozen(np.atleast_1d(self.stationary_load), 1, "stationary_load"))
        object.__setattr__(self, "generators", tuple(self.generators))

    @property
    def n_buses(self) -> int:
        return self.stationary_load.shape[0]

    @property
    def n_lines(self) -> int:
        return self.ptdf.shape[0]

    @property
    def quad_coeffs(self):
        return np.array([g.quad_coeff for g in self.generators])

    @property
    def lin_coeffs(self):
        return np.array([g.lin_coeff for g in self.generators])

    @property
    def g_min(self):
        return np.array([g.g_min for g in self.generators])

    @property
    def g_max(self):
        return np.array([g.g_max for g in self.generators])

    def generator_order(self):
        """Generators sorted so that entry i sits at bus i (one per bus)."""
        return sorted(self.generators, key=lambda g: g.bus)

    def cost(self, g) -> float:
        g = np.asarray(g, dtype=float)
        return float(np.sum(self.quad_coeffs * g * g + self.lin_coeffs * g))

    def cost_gradient(self, g):
        return 2.0 * self.quad_coeffs * np.asarray(g, dtype=float) + self.lin_coeffs

    def line_flows(self, p):
        return self.ptdf @ np.asarray(p, dtype=float)

    def with_phantom_generators(self) -> "PowerNetwork":
        """Fill buses without a generator with zero-capacity units."""
        have = {g.bus for g in self.generators}
        extra = [GeneratorParams(bus=i, quad_coeff=1.0, g_min=0.0, g_max=0.0)
                 for i in range(self.n_buses) if i not in have]
        gens = sorted(list(self.generators) + extra, key=lambda g: g.bus)
        return PowerNetwork(self.ptdf, self.line_limit, self.stationary_load, gens, self.reference_bus)

    def replace(self, **changes) -> "PowerNetwork":
        kw = dict(ptdf=self.ptdf, line_limit=self.line_limit, stationary_load=self.stationary_load,
                  generators=self.generators, reference_bus=self.reference_bus)
        kw.update(changes)
        return PowerNetwork(**kw)

    @classmethod
    def from_lines(cls, n_buses, lines, line_limit, stationary_load, generators, reference_bus=0):
        """Build the network from a branch list ``[(from, to, reactance), ...]``.

        The PTDF is computed with ``reference_bus`` as the slack, so its column is zero.
        """
        return cls(ptdf_from_lines(n_buses, lines, reference_bus), line_limit,
                   stationary_load, generators, reference_bus)


def ptdf_from_lines(n_buses, lines, reference_bus=0):
    """DC shift-factor matrix for branches ``(from, to, reactance)``."""
    m = len(lines)
    inc = np.zeros((m, n_buses))
    b = np.zeros(m)
    for k, (i, j, x) in enumerate(lines):
        inc[k, i] = 1.0
        inc[k, j] = -1.0
        b[k] = 1.0 / x
    bbus = inc.T @ (b[:, None] * inc)
    keep = [i for i in range(n_buses) if i != reference_bus]
    theta = np.zeros((n_buses, n_buses))
    theta[np.ix_(keep, keep)] = np.linalg.inv(bbus[np.ix_(keep, keep)])
    return (b[:, None] * inc) @ theta


@dataclass(frozen=True)
class Polyhedron:
    """``{x : eq_lhs x = eq_rhs, ineq_lhs x <= ineq_rhs, lower <= x <= upper}``.

    Infinite entries in ``lower``/``upper`` mean the coordinate is unbounded
    on that side.
    """

    eq_lhs: np.ndarray
    eq_rhs: np.ndarray
    ineq_lhs: np.ndarray
    ineq_rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.lower).shape[0]
        for lhs, rhs, tag in (("eq_lhs", "eq_rhs", "equality"), ("ineq_lhs", "ineq_rhs", "inequality")):
            a = np.array(getattr(self, lhs), dtype=float)
            if a.size == 0:
                a = a.reshape(0, n)
            r = np.array(getattr(self, rhs), dtype=float).reshape(-1)
            if a.ndim != 2 or a.shape[1] != n:
                raise ScenarioError(f"{tag} matrix has {a.shape} columns, expected {n}")
            if a.shape[0] != r.shape[0]:
                raise ScenarioError(f"{tag} rows ({a.shape[0]}) and rhs ({r.shape[0]}) disagree")
            object.__setattr__(self, lhs, _frozen(a, 2, lhs))
            object.__setattr__(self, rhs, _frozen(r, 1, rhs))
        lo = _frozen(self.lower, 1, "lower")
        up = _frozen(self.upper, 1, "upper")
        if up.shape != lo.shape:
            raise ScenarioError("lower and upper bounds have different lengths")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)

    @classmethod
    def build(cls, dim, eq=None, ineq=None, lower=None, upper=None):
        eq_lhs, eq_rhs = eq if eq is not None else (np.zeros((0, dim)), np.zeros(0))
        in_lhs, in_rhs = ineq if ineq is not None else (np.zeros((0, dim)), np.zeros(0))
        lo = np.full(dim, -np.inf) if lower is None else np.broadcast_to(np.asarray(lower, float), (dim,))
        up = np.full(dim, np.inf) if upper is None else np.broadcast_to(np.asarray(upper, float), (dim,))
        return cls(eq_lhs, eq_rhs, in_lhs, in_rhs, lo, up)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains(self, x, tol=1e-8) -> bool:
        x = np.asarray(x, dtype=float)
        ok = np.all(x >= self.lower - tol * (1 + np.abs(self.lower))) if np.isfinite(self.lower).any() else True
        ok &= np.all(x <= self.upper + tol * (1 + np.abs(self.upper))) if np.isfinite(self.upper).any() else True
        if self.eq_rhs.size:
            ok &= np.all(np.abs(self.eq_lhs @ x - self.eq_rhs) <= tol * (1 + np.abs(self.eq_rhs)))
        if self.ineq_rhs.size:
            ok &= np.all(self.ineq_lhs @ x - self.ineq_rhs <= tol * (1 + np.abs(self.ineq_rhs)))
        return bool(ok)

    @staticmethod
    def product(polys: Sequence["Polyhedron"]) -> "Polyhedron":
        """Cartesian product (block-diagonal constraint matrices)."""
        def bd(mats, rows):
            cols = [p.dim for p in polys]
            out = np.zeros((sum(rows), sum(cols)))
            r = c = 0
            for m, nr, nc in zip(mats, rows, cols):
                out[r:r + nr, c:c + nc] = m
                r, c = r + nr, c + nc
            return out
        return Polyhedron(
            bd([p.eq_lhs for p in polys], [p.eq_lhs.shape[0] for p in polys]),
            np.concatenate([p.eq_rhs for p in polys]),
            bd([p.ineq_lhs for p in polys], [p.ineq_lhs.shape[0] for p in polys]),
            np.concatenate([p.ineq_rhs for p in polys]),
            np.concatenate([p.lower for p in polys]),
            np.concatenate([p.upper for p in polys]),
        )


@dataclass(frozen=True)
class QuadraticFunction:
    """``f(x) = 0.5 x'Qx + c'x + d``."""

    quad: np.ndarray
    lin: np.ndarray
    const: float = 0.0

    def __post_init__(self):
        q = np.array(self.quad, dtype=float)
        c = np.array(self.lin, dtype=float).reshape(-1)
        if q.size == 0:
            q = q.reshape(c.shape[0], c.shape[0])
        object.__setattr__(self, "quad", _frozen(q, 2, "quad"))
        object.__setattr__(self, "lin", _frozen(c, 1, "lin"))
        object.__setattr__(self, "const", float(self.const))
        if self.quad.shape != (c.shape[0], c.shape[0]):
            raise ScenarioError(f"quadratic term {self.quad.shape} does not match linear term {c.shape}")

    @property
    def dim(self) -> int:
        return self.lin.shape[0]

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.quad @ x + self.lin @ x + self.const)

    def gradient(self, x):
        return self.quad @ np.asarray(x, dtype=float) + self.lin

    def is_symmetric(self, tol=1e-12) -> bool:
        return bool(np.max(np.abs(self.quad - self.quad.T), initial=0.0) <= tol * max(1.0, np.max(np.abs(self.quad), initial=0.0)))

    def min_eigenvalue(self) -> float:
        if self.dim == 0:
            return np.inf
        return float(np.linalg.eigvalsh(0.5 * (self.quad + self.quad.T))[0])

    def scaled(self, k) -> "QuadraticFunction":
        return QuadraticFunction(k * self.quad, k * self.lin, k * self.const)

    @staticmethod
    def block_sum(funcs: Sequence["QuadraticFunction"]) -> "QuadraticFunction":
        """Separable sum over concatenated arguments."""
        return QuadraticFunction(block_diag(*[f.quad for f in funcs]),
                                 np.concatenate([f.lin for f in funcs]),
                                 sum(f.const for f in funcs))


@dataclass(frozen=True)
class FlSystemSpec:
    """Abstract spatially flexible load system.

    Decisions ``x`` live in ``feasible``; the grid sees ``s = load_map @ x``.
    ``preference`` ranks decisions for the self-interested best response and
    ``welfare_preference`` is the total disutility used by the planner.
    ``blocks`` records ``(name, start, stop)`` slices after stacking.
    """

    name: str
    load_map: np.ndarray
    feasible: Polyhedron
    preference: QuadraticFunction
    welfare_preference: QuadraticFunction
    blocks: tuple = field(default=())
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        a = np.array(self.load_map, dtype=float)
        object.__setattr__(self, "load_map", _frozen(a, 2, "load_map"))
        if not self.blocks:
            object.__setattr__(self, "blocks", ((self.name, 0, a.shape[1]),))
        else:
            object.__setattr__(self, "blocks", tuple(tuple(b) for b in self.blocks))

    @property
    def decision_dim(self) -> int:
        return self.load_map.shape[1]

    @property
    def n_buses(self) -> int:
        return self.load_map.shape[0]

    def load(self, x):
        return self.load_map @ np.asarray(x, dtype=float)

    def block(self, x, name_or_index):
        """Slice of ``x`` belonging to one stacked subsystem."""
        if isinstance(name_or_index, int):
            _, a, b = self.blocks[name_or_index]
        else:
            a, b = next((a, b) for n, a, b in self.blocks if n == name_or_index)
        return np.asarray(x)[a:b]


def stack_fl_systems(systems: Sequence[FlSystemSpec], name=None) -> FlSystemSpec:
    """Combine independent FL systems sharing one grid into a single spec.

    Decisions are concatenated, preferences add up block-diagonally and the
    bus load is ``sum_w load_map_w @ x_w``.
    """
    systems = list(systems)
    if not systems:
        raise ScenarioError("nothing to stack")
    if len(systems) == 1:
        return systems[0]
    n = systems[0].n_buses
    if any(s.n_buses != n for s in systems):
        raise ScenarioError("FL systems are attached to grids with different bus counts")
    blocks, off = [], 0
    for s in systems:
        for bname, a, b in s.blocks:
            blocks.append((bname, off + a, off + b))
        off += s.decision_dim
    return FlSystemSpec(
        name=name or "+".join(s.name for s in systems),
        load_map=np.hstack([s.load_map for s in systems]),
        feasible=Polyhedron.product([s.feasible for s in systems]),
        preference=QuadraticFunction.block_sum([s.preference for s in systems]),
        welfare_preference=QuadraticFunction.block_sum([s.welfare_preference for s in systems]),
        blocks=tuple(blocks),
        meta={"allow_flat_preference": any(s.meta.get("allow_flat_preference") for s in systems),
              "parts": tuple(s.meta for s in systems)},
    )


def empty_fl(n_buses) -> FlSystemSpec:
    """FL system with no decisions (pure dispatch mode)."""
    return FlSystemSpec("none", np.zeros((n_buses, 0)), Polyhedron.build(0),
                        QuadraticFunction(np.zeros((0, 0)), np.zeros(0)),
                        QuadraticFunction(np.zeros((0, 0)), np.zeros(0)))


@dataclass(frozen=True)
class SolverSettings:
    tolerance: float = 1e-8
    max_iter: int = 100


@dataclass(frozen=True)
class Scenario:
    """A grid, its FL systems and the solver configuration."""

    grid: PowerNetwork
    fl_systems: tuple = ()
    solver: SolverSettings = SolverSettings()
    scenario_id: str = "scenario"
    sweep: dict | None = None
    raw: dict | None = field(default=None, compare=False)

    def combined_fl(self) -> FlSystemSpec:
        specs = [s for s in self.fl_systems if isinstance(s, FlSystemSpec)]
        return stack_fl_systems(specs) if specs else empty_fl(self.grid.n_buses)
