"""
Numerical cross-checks for conservation laws.

`solve` integrates a concrete equation f u_t = (g A u_x)_x + h B u_x with a
cell-centred finite-volume method of lines and classic RK4 in time.
Convection is written as (h int B)_x - h_x int B so that both parts of the
mass flux telescope. `monitor` tracks int F dx along a trajectory together
with the boundary flux of G, and `random_point_residual` evaluates the
divergence identity at random jet points with random coefficient functions.
"""

import csv
import logging
from typing import Callable, Dict, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import sympy as sp
from pydantic import BaseModel, ConfigDict, Field, model_validator
from sympy.core.function import AppliedUndef

from app.config import get_settings
from app.conslaw import ConservedVector
from app.equations import DCEquation, evolution_form
from app.expr_core import (
    Antideriv,
    ConstraintRule,
    IntegrationFailure,
    PreconditionError,
    apply_rules,
    doit_derivatives,
    eliminate_abs,
    fn,
    function_names,
    is_zero,
    jet,
    jets_in,
    signature,
    substitute,
    t,
    total_diff_t_on_solutions,
    total_diff_x,
    u,
    x,
)
from app.parser import format_expr

logger = logging.getLogger(__name__)


class Grid(BaseModel):
    """n uniform cells on [x_lo, x_hi]; `values` are the Dirichlet data (left, right)"""

    x_lo: float = 0.0
    x_hi: float = 1.0
    n: int = Field(256, ge=16)
    boundary: Literal["periodic", "dirichlet", "noflux"] = "periodic"
    values: Tuple[float, float] = (0.0, 0.0)

    @model_validator(mode="after")
    def _check_interval(self):
        if not self.x_hi > self.x_lo:
            raise ValueError("x_hi must exceed x_lo")
        return self

    @property
    def dx(self) -> float:
        return (self.x_hi - self.x_lo) / self.n

    @property
    def centers(self) -> np.ndarray:
        return self.x_lo + (np.arange(self.n) + 0.5) * self.dx

    @property
    def faces(self) -> np.ndarray:
        return self.x_lo + np.arange(self.n + 1) * self.dx

    def face_values(self, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """u and u_x on the n + 1 faces, second order, boundary faces per `boundary`"""
        dx = self.dx
        uf = np.empty(self.n + 1)
        uxf = np.empty(self.n + 1)
        uf[1:-1] = 0.5 * (values[:-1] + values[1:])
        uxf[1:-1] = (values[1:] - values[:-1]) / dx
        if self.boundary == "periodic":
            uf[0] = uf[-1] = 0.5 * (values[-1] + values[0])
            uxf[0] = uxf[-1] = (values[0] - values[-1]) / dx
        elif self.boundary == "dirichlet":
            left, right = self.values
            uf[0], uf[-1] = left, right
            uxf[0] = (-8 * left + 9 * values[0] - values[1]) / (3 * dx)
            uxf[-1] = (8 * right - 9 * values[-1] + values[-2]) / (3 * dx)
        else:
            uf[0] = (9 * values[0] - values[1]) / 8
            uf[-1] = (9 * values[-1] - values[-2]) / 8
            uxf[0] = uxf[-1] = 0.0
        return uf, uxf


class SolveConfig(BaseModel):
    t_end: float = Field(gt=0)
    safety: float = Field(0.4, gt=0, lt=1)
    stride: int = Field(1, ge=1)
    max_steps: int = Field(1_000_000, ge=1)


class Trajectory(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    times: np.ndarray
    states: np.ndarray
    grid: Grid


# ==================== EXPRESSIONS TO ARRAYS ====================

def closed_form(expr: sp.Expr) -> sp.Expr:
    """Replace antiderivative nodes by sympy integrals; fails if one has no closed form"""
    expr = doit_derivatives(sp.sympify(expr))

    def close(node):
        (s,) = node.integrand.variables
        result = sp.integrate(closed_form(node.integrand.expr), s)
        if result.has(sp.Integral):
            raise PreconditionError(f"no closed form for {format_expr(node)}")
        return result.subs(s, node.args[1])

    return expr.replace(lambda n: isinstance(n, Antideriv), close)


def vectorize(expr: sp.Expr, args: Sequence[sp.Symbol]) -> Callable[..., np.ndarray]:
    """Numpy callable of a concrete expression, broadcasting constant results"""
    expr = closed_form(expr)
    if function_names(expr):
        raise PreconditionError(f"expression is not concrete: {format_expr(expr)}")
    compiled = sp.lambdify(list(args), expr, modules="numpy")

    def evaluate(*values):
        shape = np.broadcast(*[np.asarray(v) for v in values]).shape
        return np.broadcast_to(np.asarray(compiled(*values), dtype=float), shape).copy()

    return evaluate


def sample(expr: Union[str, sp.Expr], grid: Grid) -> np.ndarray:
    """Cell values of a profile u0(x)"""
    return vectorize(sp.sympify(expr), [x])(grid.centers)


# ==================== SOLVER ====================

class _Operator:
    """Semi-discrete right-hand side u_t = L(u) on the grid"""

    def __init__(self, eq: DCEquation, grid: Grid):
        if eq.space != "x" or eq.chart is not None:
            raise PreconditionError("numerical runs need an equation in x without a chart")
        if not eq.is_concrete():
            raise PreconditionError("numerical runs need concrete coefficients")
        self.grid = grid
        f, g, h = (eliminate_abs(c, eq.assumptions) for c in (eq.f, eq.g, eq.h))
        centers, faces = grid.centers, grid.faces
        self.f_c = vectorize(f, [x])(centers)
        if np.any(np.abs(self.f_c) < 1e-14) or not np.all(np.isfinite(self.f_c)):
            raise PreconditionError("f vanishes or is undefined on the grid")
        self.g_face = vectorize(g, [x])(faces)
        self.h_face = vectorize(h, [x])(faces)
        self.h_c = vectorize(h, [x])(centers)
        self.hx_c = vectorize(sp.diff(h, x), [x])(centers)
        self.A = vectorize(eq.A, [u])
        self.B = vectorize(eq.B, [u])
        IB = sp.integrate(eq.B, u)
        self.IB = None if IB.has(sp.Integral) else vectorize(IB, [u])
        if self.IB is None:
            logger.warning("int B has no closed form; convection falls back to central differences")

    def __call__(self, values: np.ndarray) -> np.ndarray:
        grid = self.grid
        uf, uxf = grid.face_values(values)
        diffusive = self.g_face * self.A(uf) * uxf
        total = (diffusive[1:] - diffusive[:-1]) / grid.dx
        if self.IB is not None:
            convective = self.h_face * self.IB(uf)
            total += (convective[1:] - convective[:-1]) / grid.dx - self.hx_c * self.IB(values)
        else:
            padded = np.concatenate(([2 * uf[0] - values[0]], values, [2 * uf[-1] - values[-1]]))
            total += self.h_c * self.B(values) * (padded[2:] - padded[:-2]) / (2 * grid.dx)
        return total / self.f_c

    def stable_step(self, values: np.ndarray, safety: float) -> float:
        spread = np.linspace(values.min() - 0.1, values.max() + 0.1, 64)
        a_range = self.A(spread)
        signs = np.sign(np.concatenate([self.f_c, np.outer(self.g_face, a_range).ravel()]))
        if np.any(signs != signs[0]):
            raise PreconditionError("f and g*A must keep one common sign on the run")
        f_min = np.abs(self.f_c).min()
        diffusion = np.abs(self.g_face).max() * np.abs(a_range).max()
        dt = self.grid.dx**2 * f_min / diffusion
        convection = np.abs(self.h_face).max() * np.abs(self.B(spread)).max()
        if convection > 0:
            dt = min(dt, self.grid.dx * f_min / convection)
        return safety * dt


def solve(eq: DCEquation, u0: Union[np.ndarray, sp.Expr, str], grid: Grid, cfg: SolveConfig) -> Trajectory:
    operator = _Operator(eq, grid)
    values = sample(u0, grid) if not isinstance(u0, np.ndarray) else np.asarray(u0, dtype=float).copy()
    if values.shape != (grid.n,):
        raise PreconditionError(f"initial profile must have {grid.n} cell values")
    dt = operator.stable_step(values, cfg.safety)
    if dt < 1e-14 * cfg.t_end:
        raise IntegrationFailure("step size underflow", 0.0)
    logger.info("solving on %d cells, dt = %.3g, t_end = %g", grid.n, dt, cfg.t_end)

    time, steps = 0.0, 0
    times, states = [0.0], [values.copy()]
    while cfg.t_end - time > 1e-12 * cfg.t_end:
        step = min(dt, cfg.t_end - time)
        k1 = operator(values)
        k2 = operator(values + 0.5 * step * k1)
        k3 = operator(values + 0.5 * step * k2)
        k4 = operator(values + step * k3)
        values = values + step / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        time += step
        steps += 1
        if not np.all(np.isfinite(values)):
            raise IntegrationFailure("non-finite values", time)
        if steps > cfg.max_steps:
            raise IntegrationFailure("step budget exhausted", time)
        if steps % cfg.stride == 0 or cfg.t_end - time <= 1e-12 * cfg.t_end:
            times.append(time)
            states.append(values.copy())
    return Trajectory(times=np.array(times), states=np.array(states), grid=grid)


# ==================== MONITORING ====================

def conserved_functional(traj: Trajectory, F: sp.Expr, grid: Optional[Grid] = None) -> np.ndarray:
    """
    int F(t, x, u) dx per snapshot by the trapezoid rule on the cell centres,
    closed by the boundary faces (plain cell sums on periodic grids)
    """
    grid = grid or traj.grid
    density = vectorize(F, [t, x, u])
    centers = grid.centers
    values = []
    for time, state in zip(traj.times, traj.states):
        inner = density(time, centers, state)
        total = grid.dx * inner.sum()
        if grid.boundary != "periodic":
            uf, _ = grid.face_values(state)
            ends = density(time, np.array([grid.x_lo, grid.x_hi]), np.array([uf[0], uf[-1]]))
            total += grid.dx / 4 * (ends.sum() - inner[0] - inner[-1])
        values.append(total)
    return np.array(values)


def flux_correction(traj: Trajectory, G: sp.Expr, grid: Optional[Grid] = None) -> np.ndarray:
    """int_0^t [G]_{x_lo}^{x_hi} dt per snapshot (time trapezoid); zero on periodic grids"""
    grid = grid or traj.grid
    if grid.boundary == "periodic":
        return np.zeros(len(traj.times))
    flux = vectorize(G, [t, x, u, jet(1)])
    jumps = []
    for time, state in zip(traj.times, traj.states):
        uf, uxf = grid.face_values(state)
        right = flux(time, grid.x_hi, uf[-1], uxf[-1])
        left = flux(time, grid.x_lo, uf[0], uxf[0])
        jumps.append(float(right - left))
    jumps = np.array(jumps)
    increments = 0.5 * (jumps[1:] + jumps[:-1]) * np.diff(traj.times)
    return np.concatenate(([0.0], np.cumsum(increments)))


def drift(series: Sequence[float], correction: Optional[Sequence[float]] = None) -> float:
    """max_t |Q(t) - Q(0) + correction(t)| / max(1, |Q(0)|)"""
    series = np.asarray(series, dtype=float)
    if series.size == 0:
        raise PreconditionError("empty series")
    budget = series - series[0]
    if correction is not None:
        budget = budget + np.asarray(correction, dtype=float)
    return float(np.abs(budget).max() / max(1.0, abs(series[0])))


class DriftReport(BaseModel):
    label: str = ""
    n: int
    t_end: float
    q0: float
    drift: float
    tolerance: float
    times: List[float]
    q: List[float]
    flux_correction: List[float]

    @property
    def within_tolerance(self) -> bool:
        return self.drift < self.tolerance

    def rows(self):
        scale = max(1.0, abs(self.q0))
        for time, value, correction in zip(self.times, self.q, self.flux_correction):
            yield time, value, correction, abs(value - self.q0 + correction) / scale


def monitor(
    eq: DCEquation,
    cv: ConservedVector,
    u0: Union[np.ndarray, sp.Expr, str],
    grid: Grid,
    cfg: SolveConfig,
    label: str = "",
    tolerance: Optional[float] = None,
) -> DriftReport:
    """Solve and measure the flux-corrected drift of int F dx"""
    if cv.rules:
        raise PreconditionError("bind the constrained functions of the vector before a numerical run")
    traj = solve(eq, u0, grid, cfg)
    F = eliminate_abs(cv.F, eq.assumptions)
    G = eliminate_abs(cv.G, eq.assumptions)
    q = conserved_functional(traj, F)
    correction = flux_correction(traj, G)
    report = DriftReport(
        label=label,
        n=grid.n,
        t_end=cfg.t_end,
        q0=float(q[0]),
        drift=drift(q, correction),
        tolerance=get_settings().drift_tolerance if tolerance is None else tolerance,
        times=traj.times.tolist(),
        q=q.tolist(),
        flux_correction=correction.tolist(),
    )
    logger.info("drift of %s: %.3e", label or cv.describe(), report.drift)
    return report


def write_csv(report: DriftReport, path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["t", "Q", "flux_correction", "drift"])
        for row in report.rows():
            writer.writerow([f"{value:.17g}" for value in row])


# ==================== RANDOM JET POINTS ====================

def _random_function(name: str, rng: np.random.Generator, centers: Dict[sp.Symbol, float],
                     space: sp.Symbol = x) -> sp.Expr:
    """Random cubic in the function's arguments; f, g and A stay within [1/2, 3/2] on the sampling box"""
    value = sp.S.Zero
    for var in signature(name, space):
        z = var - sp.Float(centers.get(var, 0.0))
        coefficients = rng.uniform(-1, 1, 4)
        norm = float(np.abs(coefficients).sum())
        value += sum(sp.Float(c / norm) * z**k for k, c in enumerate(coefficients))
    if name in ("f", "g", "A"):
        return 1 + value / (2 * len(signature(name, space)))
    return value


def _space_interval(eq: DCEquation, box: float) -> Tuple[float, float]:
    for assumption in eq.assumptions:
        if assumption.var == eq.space:
            if assumption.lower is not None:
                upper = assumption.upper if assumption.upper is not None else assumption.lower + 2 * box + 0.2
                return assumption.lower + 0.1, upper - 0.1
            if assumption.upper is not None:
                return assumption.upper - 2 * box - 0.1, assumption.upper - 0.1
    return -box, box


def _random_parameter(rng: np.random.Generator) -> sp.Expr:
    """Rational in [1/2, 3/2], so that rules with parameters still integrate exactly"""
    return sp.Rational(int(rng.integers(4, 13)), 8)


def _holds_numerically(lhs: sp.Expr, rhs: sp.Expr, variables: Sequence[sp.Symbol], rng: np.random.Generator,
                       lo: float, hi: float) -> bool:
    evaluate = sp.lambdify(list(variables), [lhs, rhs], modules="numpy")
    checked = 0
    for _ in range(20):
        point = [rng.uniform(0, 1) if v == t else rng.uniform(lo, hi) for v in variables]
        try:
            with np.errstate(all="raise"):
                left, right = (complex(v) for v in evaluate(*point))
        except (ArithmeticError, FloatingPointError, ValueError, TypeError):
            continue
        if not (np.isfinite(left) and np.isfinite(right)):
            continue
        if abs(left - right) > 1e-9 * max(1.0, abs(left), abs(right)):
            return False
        checked += 1
    return checked >= 5


def _linear_system(rules: Sequence[ConstraintRule]) -> Optional[Tuple[List[str], np.ndarray]]:
    """(names, M) when the rules read sigma' = M sigma with a constant matrix M"""
    names = [rule.target for rule in rules]
    placeholders = {fn(name): sp.Dummy(name) for name in names}
    matrix = []
    for rule in rules:
        rhs = rule.replacement.xreplace(placeholders)
        if rhs.free_symbols - set(placeholders.values()) or function_names(rhs):
            return None
        row = [sp.diff(rhs, z) for z in placeholders.values()]
        if any(not c.is_number for c in row) or not is_zero(rhs - sum(c * z for c, z in zip(row, placeholders.values()))):
            return None
        matrix.append([complex(c).real for c in row])
    return names, np.array(matrix, dtype=float)


def _exponential_solutions(names: List[str], matrix: np.ndarray,
                           rng: np.random.Generator) -> Optional[Dict[str, sp.Lambda]]:
    """Real solution of sigma' = M sigma from a random initial value, via the eigenbasis of M"""
    eigenvalues, basis = np.linalg.eig(matrix)
    if np.linalg.cond(basis) > 1e8:
        return None
    weights = basis @ np.diag(np.linalg.solve(basis, rng.uniform(-1, 1, len(names))))
    solutions = {}
    for i, name in enumerate(names):
        value = sp.S.Zero
        for k, lam in enumerate(eigenvalues):
            q = weights[i, k]
            value += sp.exp(sp.Float(lam.real) * t) * (
                sp.Float(q.real) * sp.cos(sp.Float(lam.imag) * t) - sp.Float(q.imag) * sp.sin(sp.Float(lam.imag) * t)
            )
        solutions[name] = sp.Lambda((t,), value)
    return solutions


def _single_solution(rule: ConstraintRule, rng: np.random.Generator, lo: float, hi: float) -> Optional[sp.Expr]:
    """Affine c0 + c1*s, else c*exp(int ratio ds) for a linear homogeneous rule in s"""
    target = sp.Function(rule.target)(*rule.args)
    space_args = [a for a in rule.args if a != t]
    candidates = []
    if space_args:
        c0, c1 = (sp.Float(c) for c in rng.uniform(0.5, 1.5, 2))
        candidates.append(c0 + c1 * space_args[0])
    if rule.wrt is not None and rule.args == (rule.wrt,):
        ratio = sp.cancel(rule.replacement / target)
        if not ratio.has(sp.Function(rule.target)):
            integral = sp.integrate(ratio, rule.wrt)
            if not integral.has(sp.Integral):
                integral = integral.replace(sp.log, lambda a: sp.log(a**2) / 2)
                candidates.append(sp.Float(rng.uniform(0.5, 1.5)) * sp.exp(integral))
    for candidate in candidates:
        lhs = candidate if rule.wrt is None else sp.diff(candidate, rule.wrt)
        rhs = doit_derivatives(rule.replacement.replace(sp.Function(rule.target), sp.Lambda(rule.args, candidate)))
        if _holds_numerically(lhs, rhs, list(rule.args), rng, lo, hi):
            return candidate
    return None


def exact_solutions(rules: Sequence[ConstraintRule], bindings: Mapping[str, sp.Expr], rng: np.random.Generator,
                    space: sp.Symbol = x, interval: Tuple[float, float] = (-1.0, 1.0)) -> Dict[str, sp.Lambda]:
    """
    Solutions of the constraint rules once the other functions and parameters
    are bound: linear constant-coefficient systems in t through the
    eigenbasis, single rules through an affine or exponential candidate that
    is checked numerically. Targets left out keep their rules.
    """
    bound = [
        ConstraintRule(target=r.target, wrt=r.wrt, args=r.args,
                       replacement=substitute(r.replacement, bindings, space=space, canonical=False))
        for r in rules
    ]
    solved: Dict[str, sp.Lambda] = {}
    in_time = [r for r in bound if r.wrt == t and r.args == (t,)]
    system = _linear_system(in_time) if in_time else None
    if system is not None:
        solved.update(_exponential_solutions(*system, rng) or {})
    for rule in bound:
        if rule.target in solved:
            continue
        candidate = _single_solution(rule, rng, *interval)
        if candidate is not None:
            solved[rule.target] = sp.Lambda(rule.args, candidate)
    for name in sorted({r.target for r in rules} - set(solved)):
        logger.warning("no exact solution for %s; the oracle falls back to its rule", name)
    return solved


def random_point_residual(
    eq: DCEquation,
    cv: ConservedVector,
    n: int = 200,
    seed: Optional[int] = None,
    box: float = 1.0,
) -> float:
    """
    max |D_tF + D_xG| / max(1, |D_tF|, |D_xG|) over n random points.

    Abstract coefficients become random cubics, parameters random rationals,
    and constrained functions exact solutions of their rules; the remaining
    integral nodes get independent random values.
    """
    rng = np.random.default_rng(get_settings().seed if seed is None else seed)
    s = eq.space_var
    rhs = evolution_form(eq).rhs
    F = eliminate_abs(cv.F, eq.assumptions)
    G = eliminate_abs(cv.G, eq.assumptions)
    lo, hi = _space_interval(eq, box)
    centers = {s: 0.5 * (lo + hi), t: 0.5}

    constrained = {rule.target for rule in cv.rules}
    parts = [F, G, rhs] + [rule.replacement for rule in cv.rules]
    names = set().union(*(function_names(p) for p in parts)) - constrained
    bindings: Dict[str, sp.Expr] = {name: _random_function(name, rng, centers, s) for name in sorted(names)}
    symbols = set()
    for p in parts:
        symbols |= p.free_symbols - {t, s} - set(jets_in(p, s).values())
    for symbol in sorted(symbols, key=str):
        bindings[symbol.name] = _random_parameter(rng)

    solved = exact_solutions(cv.rules, bindings, rng, s, (lo, hi))
    bindings.update(solved)
    remaining = tuple(rule for rule in cv.rules if rule.target not in solved)

    time_part = apply_rules(total_diff_t_on_solutions(F, rhs, s, remaining, eq.scale), remaining)
    space_part = apply_rules(total_diff_x(G, s, eq.scale), remaining)
    time_part = substitute(time_part, bindings, space=s, canonical=False)
    space_part = substitute(space_part, bindings, space=s, canonical=False)

    jets = {**jets_in(time_part, s), **jets_in(space_part, s)}
    opaque = set()
    for part in (time_part, space_part):
        opaque |= {
            node for node in part.atoms(sp.Derivative, AppliedUndef, Antideriv)
            if not isinstance(node, sp.Derivative) or isinstance(node.expr, AppliedUndef)
        }
    placeholders = {node: sp.Dummy(f"p{k}") for k, node in enumerate(sorted(opaque, key=sp.default_sort_key))}
    time_part = time_part.xreplace(placeholders)
    space_part = space_part.xreplace(placeholders)

    jet_symbols = [jets[k] for k in sorted(jets)]
    args = [t, s] + jet_symbols + list(placeholders.values())
    evaluate = sp.lambdify(args, [time_part, space_part], modules="numpy")

    worst, accepted, attempts = 0.0, 0, 0
    while accepted < n:
        attempts += 1
        if attempts > 50 * n:
            raise PreconditionError(f"only {accepted} of {n} random points could be evaluated")
        point = [rng.uniform(0, 1), rng.uniform(lo, hi)]
        point += list(rng.uniform(-box, box, len(jet_symbols)))
        point += list(rng.uniform(0.5, 1.5, len(placeholders)))
        try:
            with np.errstate(all="raise"):
                p, q = (complex(v) for v in evaluate(*point))
        except (ArithmeticError, FloatingPointError, ValueError, TypeError):
            continue
        if abs(p.imag) > 1e-12 or abs(q.imag) > 1e-12 or not (np.isfinite(p.real) and np.isfinite(q.real)):
            continue
        accepted += 1
        worst = max(worst, abs(p.real + q.real) / max(1.0, abs(p.real), abs(q.real)))
    if attempts > n:
        logger.warning("resampled %d points outside the evaluation domain", attempts - n)
    return worst
