"""
Symbolic kernel of the engine.

Expressions are plain sympy trees. This module fixes the vocabulary on top of
them (independent variables, jet variables u, u_x, u_xx, ..., named constants,
abstract coefficient functions and opaque antiderivatives) and provides the
operations everything else is built from: canonical simplification, exact zero
testing, partial and total differentiation, substitution and constraint
rewriting.
"""

import logging
import re
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import sympy as sp
from sympy.core.function import AppliedUndef, ArgumentIndexError

from app.config import get_settings

logger = logging.getLogger(__name__)


# ==================== ERRORS ====================

class DCEError(Exception):
    """Base class of every error raised by the engine"""


class BudgetExceeded(DCEError):
    def __init__(self, budget: str, limit: int):
        super().__init__(f"{budget} budget exceeded (limit {limit})")
        self.budget = budget
        self.limit = limit


class CyclicBindingError(DCEError):
    pass


class MalformedEquationError(DCEError):
    pass


class ContractViolation(DCEError):
    def __init__(self, message: str, residual: Optional[sp.Expr] = None):
        super().__init__(message if residual is None else f"{message}: residual {residual}")
        self.residual = residual


class InvalidEquationError(DCEError):
    pass


class InvalidElementError(DCEError):
    pass


class DegenerateTransformationError(DCEError):
    pass


class ShapeError(DCEError):
    pass


class ConstraintViolation(DCEError):
    pass


class PreconditionError(DCEError):
    pass


class IntegrationFailure(DCEError):
    def __init__(self, message: str, time: float):
        super().__init__(f"{message} at t = {time:g}")
        self.time = time


# ==================== VOCABULARY ====================

t, x, y = sp.symbols("t x y")
BASE_VARS = (t, x, y)

# time derivative of u; only ever used to detect malformed right-hand sides
U_T = sp.Symbol("u_t")

_JET_RE = re.compile(r"^u(?:_([xy])\1*)?$")

CONSTANT_NAMES = (
    ["eps", "mu", "lam"]
    + [f"d{i}" for i in range(1, 10)]
    + [f"eps{i}" for i in range(1, 5)]
    + ["a00", "a01", "a10", "a11"]
)

# default argument variables of the abstract functions the catalog talks about
FUNCTION_SIGNATURES: Dict[str, Tuple[str, ...]] = {
    "f": ("x",),
    "g": ("x",),
    "h": ("x",),
    "A": ("u",),
    "B": ("u",),
    "alpha": ("t", "x"),
    "sigma0": ("t",),
    "sigma1": ("t",),
    "phi": ("x",),
}


def jet(order: int, space: sp.Symbol = x) -> sp.Symbol:
    """Jet variable d^order u / d space^order (order 0 is u itself)"""
    if order < 0:
        raise ValueError("jet order must be nonnegative")
    return sp.Symbol("u" if order == 0 else "u_" + space.name * order)


u = jet(0)
u_x, u_xx, u_xxx = jet(1), jet(2), jet(3)


def jet_order(symbol: sp.Basic) -> Optional[Tuple[Optional[str], int]]:
    """(space name, order) of a jet symbol, or None for anything else"""
    if not isinstance(symbol, sp.Symbol):
        return None
    match = _JET_RE.match(symbol.name)
    if not match:
        return None
    if match.group(1) is None:
        return None, 0
    return match.group(1), len(symbol.name) - 2


def jets_in(e: sp.Expr, space: sp.Symbol = x) -> Dict[int, sp.Symbol]:
    """Jet symbols of `e` belonging to `space`, keyed by order"""
    found = {}
    for s in e.free_symbols:
        info = jet_order(s)
        if info is None:
            continue
        name, order = info
        if name is None or name == space.name:
            found[order] = s
    return found


def const(name: str) -> sp.Symbol:
    return sp.Symbol(name)


def signature(name: str, space: sp.Symbol = x) -> Tuple[sp.Symbol, ...]:
    """Argument variables of an abstract function (space-dependent ones follow `space`)"""
    names = FUNCTION_SIGNATURES.get(name, ("x",))
    return tuple(space if n == "x" else sp.Symbol(n) for n in names)


def fn(name: str, *args, space: sp.Symbol = x) -> sp.Expr:
    """Abstract function application, e.g. fn('A') -> A(u), fn('f', y) -> f(y)"""
    if not args:
        args = signature(name, space)
    return sp.Function(name)(*args)


def is_abstract(node: sp.Basic) -> bool:
    return isinstance(node, AppliedUndef)


# ==================== ANTIDERIVATIVES ====================

def _lambda_depth(e: sp.Basic) -> int:
    depth = 0
    for node in sp.preorder_traversal(e):
        if isinstance(node, Antideriv):
            depth = max(depth, 1 + _lambda_depth(node.args[0].expr))
    return depth


class Antideriv(sp.Function):
    """
    Opaque antiderivative Antideriv(Lambda(s, phi(s)), arg) = (int phi)(arg).

    Never expanded; the only rewrite is d/ds Antideriv(phi)(s) = phi(s).
    Parameters inside the integrand differentiate under the integral sign.
    """

    nargs = 2

    @classmethod
    def eval(cls, integrand, arg):
        return None

    def _eval_is_commutative(self):
        return True

    def fdiff(self, argindex=2):
        if argindex != 2:
            raise ArgumentIndexError(self, argindex)
        integrand, arg = self.args
        return integrand(arg)

    def _eval_derivative(self, s):
        integrand, arg = self.args
        result = integrand(arg) * sp.diff(arg, s)
        inner = sp.diff(integrand.expr, s)
        if inner != 0:
            result += Antideriv(sp.Lambda(integrand.variables, inner), arg)
        return result

    @property
    def integrand(self) -> sp.Lambda:
        return self.args[0]

    @property
    def integrand_name(self) -> Optional[str]:
        """Name F when the integrand is a bare abstract function F(s)"""
        lam = self.args[0]
        body = lam.expr
        if is_abstract(body) and body.args == tuple(lam.variables):
            return body.func.__name__
        return None


def antideriv(integrand: Union[str, sp.Expr, sp.Lambda], arg: sp.Expr, var: Optional[sp.Symbol] = None) -> sp.Expr:
    """
    Build an antiderivative node.

    `integrand` is a function name ('A' -> int A), a Lambda, or an expression
    in `var` (default: the first free symbol among u, x, y, t it contains).
    """
    if isinstance(integrand, sp.Lambda):
        return Antideriv(integrand, arg)
    if isinstance(integrand, str):
        body_fn = sp.Function(integrand)
        s = sp.Symbol("s0")
        return Antideriv(sp.Lambda(s, body_fn(s)), arg)
    integrand = sp.sympify(integrand)
    if var is None:
        candidates = [v for v in (u, x, y, t) if v in integrand.free_symbols]
        var = candidates[0] if candidates else x
    s = sp.Symbol(f"s{_lambda_depth(integrand)}")
    return Antideriv(sp.Lambda(s, integrand.xreplace({var: s})), arg)


# ==================== DOMAIN ASSUMPTIONS ====================

@dataclass(frozen=True)
class Assumption:
    """Sign assumption `lower < var < upper` on a base variable (None = unbounded)"""
    var: str
    lower: Optional[float] = None
    upper: Optional[float] = None

    def sample_points(self) -> List[float]:
        lo = self.lower if self.lower is not None else (self.upper - 10.0 if self.upper is not None else -10.0)
        hi = self.upper if self.upper is not None else lo + 10.0
        return [lo + (hi - lo) * k / 8.0 for k in range(1, 8)]

    def __str__(self) -> str:
        parts = []
        if self.lower is not None:
            parts.append(f"{self.var} > {self.lower:g}")
        if self.upper is not None:
            parts.append(f"{self.var} < {self.upper:g}")
        return ", ".join(parts)


def eliminate_abs(e: sp.Expr, assumptions: Sequence[Assumption]) -> sp.Expr:
    """Replace |g| by +g or -g when the sign of g is fixed on the assumed domain"""
    if not assumptions or not e.has(sp.Abs):
        return e
    by_var = {sp.Symbol(a.var): a for a in assumptions}

    def resolve(node):
        arg = node.args[0]
        free = arg.free_symbols
        if len(free) != 1:
            return node
        (var,) = free
        assumption = by_var.get(var)
        if assumption is None:
            return node
        values = [float(arg.subs(var, p)) for p in assumption.sample_points()]
        if all(v > 0 for v in values):
            return arg
        if all(v < 0 for v in values):
            return -arg
        logger.warning("sign of %s is not fixed on %s; keeping |.|", arg, assumption)
        return node

    return e.replace(lambda n: isinstance(n, sp.Abs), resolve)


# ==================== CANONICAL FORM ====================

def _size(e: sp.Basic) -> int:
    return sum(1 for _ in sp.preorder_traversal(e))


def _check_size(e: sp.Basic, budget: Optional[int]) -> None:
    limit = budget or get_settings().size_budget
    if _size(e) > limit:
        raise BudgetExceeded("expression size", limit)


def _mask(e: sp.Expr) -> Tuple[sp.Expr, Dict[sp.Symbol, sp.Expr]]:
    """Swap antiderivative nodes for placeholder symbols during heavy algebra"""
    nodes = sorted(e.atoms(Antideriv), key=sp.default_sort_key)
    mapping = {node: sp.Symbol(f"_I{k}", commutative=True) for k, node in enumerate(nodes)}
    return e.xreplace(mapping), {v: k for k, v in mapping.items()}


def _rebalance(expr: sp.Expr) -> sp.Expr:
    """
    Divide by one reference power per base with a non-integer exponent so that
    powers such as (x-1)^(mu+1/2) and (x-1)^(mu-1/2) become integer multiples
    of each other. Multiplying by a nonzero factor does not change zero-ness.
    """
    terms = [sp.powsimp(term, combine="exp") for term in sp.Add.make_args(expr)]
    refs: Dict[sp.Expr, sp.Expr] = {}
    for term in terms:
        for factor in sp.Mul.make_args(term):
            base, exponent = factor.as_base_exp()
            if base.is_number and base is not sp.E:
                continue
            if exponent.is_Integer:
                continue
            refs.setdefault(base, exponent)
    if not refs:
        return expr
    scale = sp.Mul(*[sp.Pow(base, -exponent) for base, exponent in refs.items()])
    rescaled = [sp.powsimp(term * scale, combine="exp") for term in terms]
    return sp.expand(sp.Add(*rescaled), power_exp=False)


def is_zero(e: sp.Expr, budget: Optional[int] = None) -> bool:
    """Exact zero test on canonical forms (abstract functions independent)"""
    e = sp.sympify(e)
    if e == 0:
        return True
    _check_size(e, budget)
    masked, _ = _mask(e)
    expr = sp.expand(masked, power_exp=False)
    if expr == 0:
        return True
    expr = _rebalance(expr)
    if expr == 0:
        return True
    numerator, _ = sp.fraction(sp.together(expr))
    numerator = sp.expand(numerator, power_exp=False)
    if numerator == 0:
        return True
    return _rebalance(numerator) == 0


def equal(a: sp.Expr, b: sp.Expr) -> bool:
    return is_zero(sp.sympify(a) - sp.sympify(b))


def simplify(e: sp.Expr, budget: Optional[int] = None) -> sp.Expr:
    """
    Canonical form: expanded numerator over expanded denominator with exact
    rational coefficients and sympy's fixed ordering of n-ary nodes. Zero
    expressions become the literal 0.
    """
    e = sp.sympify(e)
    _check_size(e, budget)
    if is_zero(e, budget):
        return sp.S.Zero
    masked, restore = _mask(e)
    expr = sp.cancel(sp.expand(masked, power_exp=False))
    numerator, denominator = sp.fraction(expr)
    numerator = sp.expand(numerator, power_exp=False)
    denominator = sp.expand(denominator, power_exp=False)
    result = numerator if denominator == 1 else sp.expand(numerator / denominator, power_exp=False)
    result = result.xreplace(restore)
    _check_size(result, budget)
    return result


# ==================== DIFFERENTIATION ====================

def diff(e: sp.Expr, v: sp.Symbol) -> sp.Expr:
    """Partial derivative; other symbols are held constant"""
    return sp.diff(sp.sympify(e), v)


def total_diff_x(e: sp.Expr, space: sp.Symbol = x, scale: Optional[sp.Expr] = None) -> sp.Expr:
    """
    D_x e = d e/dx + sum_k u_(k+1) d e/du_(k).

    `scale` multiplies the explicit x-derivative; it is 1/X'(x) when the jets
    refer to a new coordinate X(x) while coefficients are still written in x.
    """
    e = sp.sympify(e)
    explicit = sp.diff(e, space)
    result = explicit if scale is None else scale * explicit
    for order, symbol in jets_in(e, space).items():
        result += jet(order + 1, space) * sp.diff(e, symbol)
    return result


def total_diff_x_n(e: sp.Expr, n: int, space: sp.Symbol = x, scale: Optional[sp.Expr] = None) -> sp.Expr:
    for _ in range(n):
        e = total_diff_x(e, space, scale)
    return e


def total_diff_t_on_solutions(
    e: sp.Expr,
    rhs: sp.Expr,
    space: sp.Symbol = x,
    rules: Sequence["ConstraintRule"] = (),
    scale: Optional[sp.Expr] = None,
) -> sp.Expr:
    """D_t e with every u_(k),t replaced by D_x^k(rhs), constraint rules applied"""
    rhs = sp.sympify(rhs)
    if rhs.has(U_T):
        raise MalformedEquationError("evolution right-hand side must not contain u_t")
    e = apply_rules(sp.sympify(e), rules)
    result = sp.diff(e, t)
    for order, symbol in jets_in(e, space).items():
        coefficient = sp.diff(e, symbol)
        if coefficient != 0:
            result += coefficient * total_diff_x_n(rhs, order, space, scale)
    return apply_rules(result, rules)


def doit_derivatives(e: sp.Expr) -> sp.Expr:
    """Evaluate pending Derivative/Subs nodes left behind by function substitution"""
    return e.replace(lambda n: isinstance(n, (sp.Derivative, sp.Subs)), lambda n: n.doit())


# ==================== CONSTRAINT RULES ====================

@dataclass(frozen=True)
class ConstraintRule:
    """
    target_{wrt} = replacement (wrt set), or target = replacement (wrt None).

    The replacement is written in terms of the target's canonical arguments,
    e.g. alpha_t = -alpha_xx/f(x) or sigma0_t = a00*sigma0(t) + a10*sigma1(t).
    """
    target: str
    replacement: sp.Expr
    wrt: Optional[sp.Symbol] = None
    args: Tuple[sp.Symbol, ...] = ()

    def __post_init__(self):
        if not self.args:
            object.__setattr__(self, "args", signature(self.target))
        if self.wrt is None:
            if self.replacement.has(sp.Function(self.target)):
                raise CyclicBindingError(f"rule for {self.target} refers to {self.target}")
        elif any(self._matches(d) for d in self.replacement.atoms(sp.Derivative)):
            raise CyclicBindingError(f"rule for {self.target}_{self.wrt} is not terminating")

    def _matches(self, node: sp.Basic) -> bool:
        return (
            isinstance(node, sp.Derivative)
            and is_abstract(node.expr)
            and node.expr.func.__name__ == self.target
            and self.wrt in node.variables
        )

    def apply(self, e: sp.Expr) -> sp.Expr:
        if self.wrt is None:
            func = sp.Function(self.target)
            if not e.has(func):
                return e
            return doit_derivatives(e.replace(func, sp.Lambda(self.args, self.replacement)))

        def rewrite(node):
            counts = dict(node.variable_count)
            counts[self.wrt] -= 1
            result = self.replacement.xreplace(dict(zip(self.args, node.expr.args)))
            remaining = [(v, c) for v, c in counts.items() if c > 0]
            return sp.diff(result, *[item for pair in remaining for item in pair]) if remaining else result

        return e.replace(self._matches, rewrite)

    def __str__(self) -> str:
        lhs = self.target if self.wrt is None else f"{self.target}_{self.wrt}"
        return f"{lhs} = {self.replacement}"


def apply_rules(e: sp.Expr, rules: Sequence[ConstraintRule], depth: Optional[int] = None) -> sp.Expr:
    """Apply rules to a fixpoint within the configured rewrite depth"""
    if not rules:
        return e
    limit = depth or get_settings().rewrite_depth
    for _ in range(limit):
        new = e
        for rule in rules:
            new = rule.apply(new)
        if new == e:
            return e
        e = new
    raise BudgetExceeded("rewrite depth", limit)


# ==================== SUBSTITUTION ====================

BindingKey = Union[str, sp.Symbol]


def _key_name(key: BindingKey) -> str:
    return key if isinstance(key, str) else key.name


def _references(value: sp.Expr) -> set:
    names = {s.name for s in value.free_symbols}
    names |= {f.func.__name__ for f in value.atoms(AppliedUndef)}
    for node in value.atoms(Antideriv):
        names |= {f.func.__name__ for f in node.args[0].expr.atoms(AppliedUndef)}
    return names


def _check_acyclic(bindings: Mapping[BindingKey, sp.Expr]) -> None:
    graph = {_key_name(k): _references(sp.sympify(v)) & {_key_name(q) for q in bindings} for k, v in bindings.items()}
    for name, refs in graph.items():
        if name in refs and sp.Function(name) in {f.func for f in sp.sympify(bindings_value(bindings, name)).atoms(AppliedUndef)}:
            raise CyclicBindingError(f"binding for {name} refers to itself")
    state: Dict[str, int] = {}

    def visit(node: str, trail: List[str]):
        state[node] = 1
        for nxt in graph.get(node, ()):
            if nxt == node:
                continue
            if state.get(nxt) == 1:
                raise CyclicBindingError("cyclic bindings: " + " -> ".join(trail + [node, nxt]))
            if nxt not in state:
                visit(nxt, trail + [node])
        state[node] = 2

    for name in graph:
        if name not in state:
            visit(name, [])


def bindings_value(bindings: Mapping[BindingKey, sp.Expr], name: str) -> sp.Expr:
    for k, v in bindings.items():
        if _key_name(k) == name:
            return v
    raise KeyError(name)


def function_names(e: sp.Expr) -> set:
    names = {f.func.__name__ for f in e.atoms(AppliedUndef)}
    for node in e.atoms(Antideriv):
        names |= function_names(node.args[0].expr)
    return names


def substitute(
    e: sp.Expr,
    bindings: Mapping[BindingKey, sp.Expr],
    antiderivs: Optional[Mapping[str, sp.Expr]] = None,
    space: sp.Symbol = x,
    canonical: bool = True,
) -> sp.Expr:
    """
    Simultaneous substitution of symbols and abstract functions, then simplify.

    Function bindings are keyed by name and written in the function's own
    argument variables ({'A': u**2, 'h': 1/x}); `antiderivs` supplies closed
    forms for opaque antiderivatives ({'B': u**2/2} for int B), each checked by
    differentiation.
    """
    e = sp.sympify(e)
    bindings = {k: sp.sympify(v) for k, v in bindings.items()}
    _check_acyclic(bindings)
    if antiderivs:
        e = _close_antiderivs(e, antiderivs, bindings, space)
    present = function_names(e)
    function_bindings = {}
    symbol_bindings = {}
    for key, value in bindings.items():
        name = _key_name(key)
        if isinstance(key, str) and (name in FUNCTION_SIGNATURES or name in present) and name not in {"t", "x", "y", "u"}:
            if isinstance(value, sp.Lambda):
                function_bindings[name] = value
            else:
                function_bindings[name] = sp.Lambda(signature(name, space), value)
        else:
            symbol_bindings[sp.Symbol(name)] = value
    for name, lam in function_bindings.items():
        e = e.replace(sp.Function(name), lam)
    if symbol_bindings:
        e = e.subs(symbol_bindings, simultaneous=True)
    e = doit_derivatives(e)
    return simplify(e) if canonical else e


def _close_antiderivs(e, antiderivs, bindings, space):
    closed = {}
    for name, form in antiderivs.items():
        form = sp.sympify(form)
        var = signature(name, space)[0]
        integrand = bindings.get(name, fn(name, var))
        if isinstance(integrand, sp.Lambda):
            integrand = integrand(var)
        difference = sp.diff(form, var) - integrand
        # logs of trig functions differentiate to forms only sympy.simplify brings back
        if not is_zero(difference) and sp.simplify(difference) != 0:
            raise ContractViolation(f"closed form for int {name} does not differentiate to {integrand}", difference)
        closed[name] = sp.Lambda(var, form)

    def close(node):
        name = node.integrand_name
        if name in closed:
            return closed[name](node.args[1])
        return node

    return e.replace(lambda n: isinstance(n, Antideriv) and n.integrand_name in closed, close)


# ==================== CONSTANCY ====================

def scope_variables(e: sp.Expr) -> List[sp.Symbol]:
    return [s for s in e.free_symbols if s in BASE_VARS or jet_order(s) is not None]


def is_constant(e: sp.Expr, variables: Optional[Iterable[sp.Symbol]] = None) -> Optional[sp.Expr]:
    """The constant value of `e` if every base/jet derivative vanishes, else None"""
    e = sp.sympify(e)
    scope = set(variables or ()) | set(scope_variables(e))
    for node in e.atoms(AppliedUndef) | e.atoms(Antideriv):
        scope |= {s for s in node.free_symbols if s in BASE_VARS or jet_order(s) is not None}
    for v in scope:
        if not is_zero(sp.diff(e, v)):
            return None
    return simplify(e)
