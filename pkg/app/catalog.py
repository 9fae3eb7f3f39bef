"""
Classification of equations f(x)u_t = (A(u)u_x)_x + h(x)B(u)u_x with
nontrivial conservation laws, as executable data.

Two lists are kept: one up to the usual equivalence group (ids T3.*) and one
up to the extended group preserving g = 1 (ids T4.*). Every case knows its
constraints and builds its equation and conserved vectors for given
parameter values; `classify` matches a concrete or partly abstract g = 1
equation against all of them.

Cases that the classification states in an implicit coordinate y are stored
in y, where B - eps*A is 0 or 1. `x_relation` is the element
x = int exp(eps int h dy) dy taking them to the listed B; `x_form` gives the
same case in x, with y(x) the opaque antiderivative int exp(-eps H),
H = int h, and E = exp(eps H).
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import sympy as sp
from pydantic import BaseModel, ConfigDict

from app.conslaw import ConservedVector, verify
from app.equations import DCEquation
from app.expr_core import (
    Antideriv,
    Assumption,
    ConstraintRule,
    ConstraintViolation,
    DCEError,
    PreconditionError,
    antideriv,
    eliminate_abs,
    fn,
    function_names,
    is_constant,
    is_zero,
    jet,
    simplify,
    substitute,
    t,
    u,
    u_x,
    x,
    y,
)
from app.parser import format_expr
from app.transforms import EquivalenceElement, ExtendedG1, PointTransformation, UsualG, push_conserved_vector

logger = logging.getLogger(__name__)

eps, mu = sp.symbols("eps mu")
a00, a01, a10, a11 = sp.symbols("a00 a01 a10 a11")

f, h, A, B = fn("f"), fn("h"), fn("A"), fn("B")
fy, hy = fn("f", space=y), fn("h", space=y)
alpha = fn("alpha")
sigma0, sigma1 = fn("sigma0"), fn("sigma1")

X_GT_1 = Assumption("x", lower=1.0)


def int_of(expr: sp.Expr, var: sp.Symbol = u, arg: Optional[sp.Expr] = None) -> sp.Expr:
    """Opaque antiderivative of expr(var) at arg; int A(u) prints as Int[A](u)"""
    arg = var if arg is None else arg
    expr = sp.sympify(expr)
    if expr == A and var == u:
        return antideriv("A", arg)
    if expr == B and var == u:
        return antideriv("B", arg)
    if (expr == h and var == x) or (expr == hy and var == y):
        return antideriv("h", arg)
    if not function_names(expr) and not expr.has(Antideriv):
        closed = sp.integrate(expr, var)
        if not closed.has(sp.Integral):
            return closed.subs(var, arg)
    return antideriv(expr, arg, var=var)


def aux_y(eps_value: sp.Expr, h_expr: sp.Expr = h) -> Tuple[sp.Expr, sp.Expr]:
    """(y, E): y' = exp(-eps H), E = exp(eps H) with H = int h; (x, 1) when eps = 0"""
    if is_zero(eps_value):
        return x, sp.S.One
    s = sp.Symbol("_s")
    H_at_s = int_of(h_expr, x, s)
    y_ = int_of(sp.exp(-eps_value * H_at_s), s, x)
    return y_, sp.exp(eps_value * int_of(h_expr, x))


def weighted_vector(w: sp.Expr, f_expr: sp.Expr, h_expr: sp.Expr, A_expr: sp.Expr, c: sp.Expr = 1,
                    rules: Sequence[ConstraintRule] = (), space: sp.Symbol = x) -> ConservedVector:
    """
    (w f u, -w (A u_s + c h u) + w_s int A): conserved for B = c when w is
    linear in the space variable s and w_t f = c (w h)_s.
    """
    flux = -w * (A_expr * jet(1, space) + c * h_expr * u) + sp.diff(w, space) * int_of(A_expr)
    return ConservedVector(F=w * f_expr * u, G=flux, rules=tuple(rules), space=space.name)


# ==================== CASE BUILDERS ====================

Built = Tuple[DCEquation, List[ConservedVector]]


def unit_g(space: str = "x", **coefficients) -> DCEquation:
    """Every catalog equation has g = 1"""
    return DCEquation.abstract(space=space, g=1, **coefficients)


def _t3_1(p) -> Built:
    eq = unit_g(h=1)
    return eq, [ConservedVector(F=f * u, G=-A * u_x - int_of(B))]


def _t3_2(p) -> Built:
    eq = unit_g(h=1 / x)
    return eq, [ConservedVector(F=x * f * u, G=-x * A * u_x + int_of(A) - int_of(B))]


# T3.3-T3.6 in y: B - eps*A is 0 or 1 there, eps only enters the relation to x

def _t3_3(p) -> Built:
    eq = unit_g("y", B=0)
    return eq, [
        weighted_vector(sp.S.One, fy, hy, A, c=0, space=y),
        weighted_vector(y, fy, hy, A, c=0, space=y),
    ]


def _z_polynomial(s) -> sp.Expr:
    return a01 * s**2 + (a00 - a11) * s - a10


SIGMA_RULES = (
    ConstraintRule(target="sigma0", wrt=t, replacement=a00 * sigma0 + a10 * sigma1),
    ConstraintRule(target="sigma1", wrt=t, replacement=a01 * sigma0 + a11 * sigma1),
)


def _t3_4(p) -> Built:
    Z = _z_polynomial(y)
    h_rule = ConstraintRule(target="h", wrt=y, args=(y,),
                            replacement=-hy * (sp.diff(Z, y) + a00 + a11) / (2 * Z))
    eq = unit_g("y", f=-hy / Z, B=1)
    return eq, [weighted_vector(sigma1 * y + sigma0, eq.f, hy, A, rules=(h_rule,) + SIGMA_RULES, space=y)]


def _t3_5(p) -> Built:
    eq = unit_g("y", f=sp.diff(hy, y), B=1)
    return eq, [weighted_vector(sp.exp(t), eq.f, hy, A, space=y)]


def _t3_6(p) -> Built:
    eq = unit_g("y", f=sp.diff(hy, y) + hy / y, B=1)
    return eq, [weighted_vector(sp.exp(t) * y, eq.f, hy, A, space=y)]


# the same four cases written in x, with y(x) and E(x) from aux_y

def _t3_3_x(p) -> Built:
    e = p["eps"]
    y_, E = aux_y(e)
    eq = unit_g(B=e * A)
    return eq, [
        ConservedVector(F=y_ * E * f * u, G=-y_ * E * A * u_x + int_of(A)),
        ConservedVector(F=E * f * u, G=-E * A * u_x),
    ]


def _t3_4_x(p) -> Built:
    e = p["eps"]
    y_, E = aux_y(e)
    Z = _z_polynomial(y_)
    h_rule = ConstraintRule(target="h", wrt=x, replacement=-e * h**2 - h * (a01 * y_ + a00) / (E * Z))
    eq = unit_g(f=-h / (E * Z), B=e * A + 1)
    w = sigma1 * y_ + sigma0
    vector = ConservedVector(
        F=w * E * eq.f * u,
        G=-w * E * (A * u_x + h * u) + sigma1 * int_of(A),
        rules=(h_rule,) + SIGMA_RULES,
    )
    return eq, [vector]


def _t3_5_x(p) -> Built:
    e = p["eps"]
    _, E = aux_y(e)
    eq = unit_g(f=sp.diff(h, x) + e * h**2, B=e * A + 1)
    return eq, [ConservedVector(F=sp.exp(t) * E * eq.f * u, G=-sp.exp(t) * E * (A * u_x + h * u))]


def _t3_6_x(p) -> Built:
    e = p["eps"]
    y_, E = aux_y(e)
    eq = unit_g(f=sp.diff(h, x) + e * h**2 + h / (E * y_), B=e * A + 1)
    vector = ConservedVector(
        F=sp.exp(t) * y_ * E * eq.f * u,
        G=-sp.exp(t) * (y_ * E * A * u_x + y_ * E * h * u - int_of(A)),
    )
    return eq, [vector]


def _t3_7(p) -> Built:
    k = 1 / h
    eq = unit_g(f=-h * sp.diff(k, x, 2), A=1)
    vector = ConservedVector(
        F=sp.exp(t) * sp.diff(k, x, 2) * u,
        G=sp.exp(t) * (k * u_x - sp.diff(k, x) * u + int_of(B)),
    )
    return eq, [vector]


ALPHA_RULE = ConstraintRule(target="alpha", wrt=t, replacement=-sp.Derivative(alpha, x, 2) / f)


def _t3_8(p) -> Built:
    eq = unit_g(A=1, B=0)
    vector = ConservedVector(F=alpha * f * u, G=-alpha * u_x + sp.diff(alpha, x) * u, rules=(ALPHA_RULE,))
    return eq, [vector]


def _t4_2a(p) -> Built:
    eq = unit_g(B=0)
    return eq, [
        ConservedVector(F=f * u, G=-A * u_x),
        ConservedVector(F=x * f * u, G=-x * A * u_x + int_of(A)),
    ]


def _t4_2b(p) -> Built:
    eq = unit_g(f=1, h=1, B=1)
    return eq, [weighted_vector(sp.S.One, 1, 1, A), weighted_vector(x + t, 1, 1, A)]


def _t4_2c(p) -> Built:
    eq = unit_g(f=sp.exp(x), h=sp.exp(x), B=1)
    return eq, [
        ConservedVector(F=sp.exp(x + t) * u, G=-sp.exp(t) * (A * u_x + sp.exp(x) * u)),
        ConservedVector(
            F=sp.exp(x + t) * (x + t) * u,
            G=-sp.exp(t) * (x + t) * (A * u_x + sp.exp(x) * u) + sp.exp(t) * int_of(A),
        ),
    ]


def _t4_2d(p) -> Built:
    m = p["mu"]
    eq = unit_g(f=x**(m - 1), h=x**m, B=1, assumptions=(Assumption("x", lower=0.0),))
    return eq, [
        ConservedVector(F=x**(m - 1) * sp.exp(m * t) * u, G=-sp.exp(m * t) * (A * u_x + x**m * u)),
        ConservedVector(
            F=x**m * sp.exp((m + 1) * t) * u,
            G=sp.exp((m + 1) * t) * (-x * A * u_x - x**(m + 1) * u + int_of(A)),
        ),
    ]


def _profile_t4_3(m):
    return sp.exp(m / x) * x**-3, sp.exp(m / x) / x


def _t4_3(p) -> Built:
    m = p["mu"]
    f_p, h_p = _profile_t4_3(m)
    eq = unit_g(f=f_p, h=h_p, B=1)
    return eq, [
        weighted_vector(sp.exp(-m * t) * x, f_p, h_p, A),
        weighted_vector(sp.exp(-m * t) * (t * x - 1), f_p, h_p, A),
    ]


def _profile_t4_4(m):
    return (sp.Abs(x - 1)**(m - sp.Rational(3, 2)) * sp.Abs(x + 1)**(-m - sp.Rational(3, 2)),
            sp.Abs(x - 1)**(m - sp.Rational(1, 2)) * sp.Abs(x + 1)**(-m - sp.Rational(1, 2)))


def _t4_4(p) -> Built:
    m = p["mu"]
    f_p, h_p = _profile_t4_4(m)
    eq = unit_g(f=f_p, h=h_p, B=1, assumptions=(X_GT_1,))
    return eq, [
        weighted_vector(sp.exp((2 * m + 1) * t) * (x - 1), f_p, h_p, A),
        weighted_vector(sp.exp((2 * m - 1) * t) * (x + 1), f_p, h_p, A),
    ]


def _profile_t4_5(m):
    return (sp.exp(m * sp.atan(x)) * (x**2 + 1)**sp.Rational(-3, 2),
            sp.exp(m * sp.atan(x)) * (x**2 + 1)**sp.Rational(-1, 2))


def _t4_5(p) -> Built:
    m = p["mu"]
    f_p, h_p = _profile_t4_5(m)
    eq = unit_g(f=f_p, h=h_p, B=1)
    return eq, [
        weighted_vector(sp.exp(m * t) * (x * sp.cos(t) + sp.sin(t)), f_p, h_p, A),
        weighted_vector(sp.exp(m * t) * (x * sp.sin(t) - sp.cos(t)), f_p, h_p, A),
    ]


def _t4_6(p) -> Built:
    eq = unit_g(f=sp.diff(h, x), B=1)
    return eq, [weighted_vector(sp.exp(t), eq.f, h, A)]


def _t4_7(p) -> Built:
    eq = unit_g(f=sp.diff(h, x) + h / x, B=1)
    return eq, [weighted_vector(sp.exp(t) * x, eq.f, h, A)]


# ==================== THE CATALOG ====================

@dataclass(frozen=True)
class CatalogCase:
    """One row of a classification list"""

    id: str
    family: int
    constraints: Tuple[str, ...]
    builder: Callable[[Dict[str, sp.Expr]], Built]
    parameters: Dict[str, sp.Expr] = field(default_factory=dict)
    allowed: Dict[str, Tuple[sp.Expr, ...]] = field(default_factory=dict)
    requires_nonconstant_B: bool = False
    coordinate: str = "x"
    notes: Tuple[str, ...] = ()
    x_builder: Optional[Callable[[Dict[str, sp.Expr]], Built]] = None

    def build(self, **parameters) -> Built:
        values = dict(self.parameters)
        unknown = set(parameters) - set(values)
        if unknown:
            raise ConstraintViolation(f"{self.id} has no parameters {sorted(unknown)}")
        values.update({k: sp.sympify(v) for k, v in parameters.items()})
        for name, options in self.allowed.items():
            if values[name] not in options:
                raise ConstraintViolation(f"{self.id}: {name} must be one of {list(options)}")
        return self.builder(values)

    def x_form(self, **parameters) -> Built:
        """The case written in x; the stored form when it already is"""
        if self.x_builder is None:
            return self.build(**parameters)
        values = dict(self.parameters)
        values.update({k: sp.sympify(v) for k, v in parameters.items()})
        return self.x_builder(values)

    def x_relation(self, **parameters) -> ExtendedG1:
        """Element x = int exp(eps int h dy) dy from the stored y form to the listed B"""
        if self.coordinate != "y":
            raise PreconditionError(f"{self.id} is stored in x")
        values = dict(self.parameters)
        values.update({k: sp.sympify(v) for k, v in parameters.items()})
        return ExtendedG1(d8=values["eps"])

    def equation(self, **parameters) -> DCEquation:
        return self.build(**parameters)[0]

    def templates(self, **parameters) -> List[ConservedVector]:
        return self.build(**parameters)[1]

    def render(self) -> str:
        eq, vectors = self.build()
        lines = [f"{self.id}: {'; '.join(self.constraints)}", f"  equation: {eq.describe()}"]
        if eq.assumptions:
            lines.append("  assume: " + ", ".join(str(a) for a in eq.assumptions))
        if self.parameters:
            lines.append("  parameters: " + ", ".join(
                f"{k} = {format_expr(v)}" for k, v in self.parameters.items()))
        for k, cv in enumerate(vectors, start=1):
            lines.append(f"  vector {k}: {cv.describe()}")
            for rule in cv.rules:
                lines.append(f"    with {rule.target}{'_' + rule.wrt.name if rule.wrt is not None else ''}"
                             f" = {format_expr(rule.replacement)}")
        lines += [f"  note: {n}" for n in self.notes]
        return "\n".join(lines)


_Y_NOTE = ("stored in y, where the equation reads f(y)u_t = (A(u)u_y)_y + h(y)(B - eps*A)u_y; "
           "x = int exp(eps int h dy) dy carries it to the listed B")

CASES: Tuple[CatalogCase, ...] = (
    CatalogCase("T3.1", 3, ("h = 1",), _t3_1),
    CatalogCase("T3.2", 3, ("h = x^(-1)",), _t3_2),
    CatalogCase("T3.3", 3, ("B = eps*A",), _t3_3, {"eps": eps}, coordinate="y", notes=(_Y_NOTE,),
                x_builder=_t3_3_x),
    CatalogCase(
        "T3.4", 3,
        ("B = eps*A + 1", "f = -h/Z", "h_y = -h*(Z_y + a00 + a11)/(2*Z)",
         "Z = a01*y^2 + (a00 - a11)*y - a10", "sigma0_t = a00*sigma0 + a10*sigma1",
         "sigma1_t = a01*sigma0 + a11*sigma1"),
        _t3_4, {"eps": eps}, coordinate="y",
        notes=(_Y_NOTE, "(sigma0, sigma1) runs over a fundamental system of the linear ODEs; "
                        "the single template spans both conserved vectors"),
        x_builder=_t3_4_x,
    ),
    CatalogCase("T3.5", 3, ("B = eps*A + 1", "f = h_y"), _t3_5, {"eps": eps}, coordinate="y",
                notes=(_Y_NOTE,), x_builder=_t3_5_x),
    CatalogCase("T3.6", 3, ("B = eps*A + 1", "f = h_y + h/y"), _t3_6, {"eps": eps},
                coordinate="y", notes=(_Y_NOTE,), x_builder=_t3_6_x),
    CatalogCase("T3.7", 3, ("A = 1", "B_u != 0", "f = -h*(h^(-1))_xx"), _t3_7, requires_nonconstant_B=True),
    CatalogCase("T3.8", 3, ("A = 1", "B = 0", "f*alpha_t + alpha_xx = 0"), _t3_8),
    CatalogCase("T4.1", 4, ("h = 1",), _t3_1),
    CatalogCase("T4.2a", 4, ("B = 0",), _t4_2a),
    CatalogCase("T4.2b", 4, ("B = 1", "f = 1", "h = 1"), _t4_2b),
    CatalogCase("T4.2c", 4, ("B = 1", "f = exp(x)", "h = exp(x)"), _t4_2c),
    CatalogCase("T4.2d", 4, ("B = 1", "f = x^(mu - 1)", "h = x^mu"), _t4_2d, {"mu": mu}),
    CatalogCase("T4.3", 4, ("B = 1", "f = exp(mu/x)*x^(-3)", "h = exp(mu/x)*x^(-1)", "mu in {0, 1}"),
                _t4_3, {"mu": sp.S.Zero}, allowed={"mu": (sp.S.Zero, sp.S.One)}),
    CatalogCase("T4.4", 4,
                ("B = 1", "f = abs(x - 1)^(mu - 3/2)*abs(x + 1)^(-mu - 3/2)",
                 "h = abs(x - 1)^(mu - 1/2)*abs(x + 1)^(-mu - 1/2)"),
                _t4_4, {"mu": mu}, notes=("verified on the branch x > 1",)),
    CatalogCase("T4.5", 4,
                ("B = 1", "f = exp(mu*atan(x))*(x^2 + 1)^(-3/2)", "h = exp(mu*atan(x))*(x^2 + 1)^(-1/2)"),
                _t4_5, {"mu": mu}),
    CatalogCase("T4.6", 4, ("B = 1", "f = h_x"), _t4_6),
    CatalogCase("T4.7", 4, ("B = 1", "f = h_x + h/x"), _t4_7),
    CatalogCase("T4.8", 4, ("A = 1", "B_u != 0", "f = -h*(h^(-1))_xx"), _t3_7, requires_nonconstant_B=True),
    CatalogCase("T4.9", 4, ("A = 1", "B = 0", "f*alpha_t + alpha_xx = 0"), _t3_8),
)

_BY_ID = {case.id: case for case in CASES}


def list_cases(family: int) -> List[CatalogCase]:
    if family not in (3, 4):
        raise PreconditionError("family must be 3 or 4")
    return [case for case in CASES if case.family == family]


def get_case(case_id: str) -> CatalogCase:
    try:
        return _BY_ID[case_id]
    except KeyError:
        raise PreconditionError(f"unknown catalog case {case_id!r}") from None


# ==================== NOTE REDUCTIONS ====================

@dataclass(frozen=True)
class NoteReduction:
    """Point transformation taking a special case onto T4.2a with f = target_f"""

    source: str
    branch: str
    parameters: Dict[str, sp.Expr]
    transformation: PointTransformation
    target_f: sp.Expr


def note_reductions(mu_value: sp.Expr = sp.Integer(2)) -> List[NoteReduction]:
    """The three reductions onto T4.2a; 2d is given for mu = mu_value and for mu = -1"""
    m = sp.sympify(mu_value)
    if is_zero(m + 1):
        raise PreconditionError("mu_value selects the mu + 1 != 0 branch; mu = -1 is always included")
    q = (m + 1) * t + 1
    return [
        NoteReduction("T4.2b", "", {}, PointTransformation(T=t, X=x + t, Tinv=t, Xinv=x - t), sp.S.One),
        NoteReduction("T4.2c", "", {},
                      PointTransformation(T=sp.exp(t), X=x + t, Tinv=sp.log(t), Xinv=x - sp.log(t)), sp.exp(x)),
        NoteReduction(
            "T4.2d", "mu + 1 != 0", {"mu": m},
            PointTransformation(T=(sp.exp((m + 1) * t) - 1) / (m + 1), X=sp.exp(t) * x,
                                Tinv=sp.log(q) / (m + 1), Xinv=x * q**(-1 / (m + 1))),
            x**(m - 1),
        ),
        NoteReduction("T4.2d", "mu + 1 = 0", {"mu": sp.Integer(-1)},
                      PointTransformation(T=t, X=sp.exp(t) * x, Tinv=t, Xinv=x * sp.exp(-t)), x**-2),
    ]


NOTE_REDUCTIONS = (
    "T4.2b -> T4.2a: t~ = t, x~ = x + t, u~ = u",
    "T4.2c -> T4.2a: t~ = exp(t), x~ = x + t, u~ = u",
    "T4.2d (mu + 1 != 0) -> T4.2a: t~ = (exp((mu + 1)*t) - 1)/(mu + 1), x~ = exp(t)*x, u~ = u",
    "T4.2d (mu + 1 = 0) -> T4.2a: t~ = t, x~ = exp(t)*x, u~ = u",
)


# ==================== INSTANTIATION ====================

def _closed_antiderivs(bindings: Mapping[str, sp.Expr], space: sp.Symbol = x) -> Dict[str, sp.Expr]:
    closed = {}
    for name, var in (("A", u), ("B", u), ("h", space)):
        value = bindings.get(name)
        if value is None or isinstance(value, sp.Lambda):
            continue
        value = sp.sympify(value)
        if function_names(value) or value.has(Antideriv):
            continue
        integral = sp.integrate(value, var)
        if not integral.has(sp.Integral):
            closed[name] = integral
    return closed


def _bind_rules(rules: Sequence[ConstraintRule], bindings, antiderivs, space: sp.Symbol = x
                ) -> Tuple[ConstraintRule, ...]:
    """Check rules whose target is bound; keep the others with bound replacements"""
    kept = []
    for rule in rules:
        replacement = substitute(rule.replacement, bindings, antiderivs, space=space)
        if rule.target not in bindings:
            kept.append(ConstraintRule(target=rule.target, replacement=replacement, wrt=rule.wrt, args=rule.args))
            continue
        lhs = substitute(sp.Function(rule.target)(*rule.args), bindings, antiderivs, space=space)
        if rule.wrt is not None:
            lhs = sp.diff(lhs, rule.wrt)
        residual = simplify(lhs - replacement)
        if residual != 0:
            raise ConstraintViolation(f"binding of {rule.target} violates {rule}: residual {format_expr(residual)}")
    return tuple(kept)


def instantiate(
    case: CatalogCase,
    bindings: Mapping[str, sp.Expr],
    antiderivs: Optional[Mapping[str, sp.Expr]] = None,
    x_form: bool = False,
) -> Built:
    """
    Concrete equation and vectors of a case. Parameter slots (eps, mu) are
    taken from `bindings`; everything else is substituted, written in the
    case's coordinate (in x with x_form). Closed forms of int A, int B and
    int h are computed when the bound function integrates.
    """
    parameters = {k: v for k, v in bindings.items() if k in case.parameters}
    rest = {k: sp.sympify(v) for k, v in bindings.items() if k not in case.parameters}
    eq, vectors = case.x_form(**parameters) if x_form else case.build(**parameters)
    s = eq.space_var

    closed = _closed_antiderivs(rest, s)
    closed.update(antiderivs or {})

    for name, value in eq.coefficients().items():
        if name not in rest or value == fn(name, space=s):
            continue
        residual = simplify(substitute(value, rest, closed, space=s) - substitute(rest[name], rest, closed, space=s))
        if residual != 0:
            raise ConstraintViolation(f"{case.id} fixes {name} = {format_expr(value)}, "
                                      f"got {format_expr(rest[name])}")

    bound_eq = eq.bind(rest, closed)
    if case.requires_nonconstant_B and not function_names(bound_eq.B) and is_zero(sp.diff(bound_eq.B, u)):
        raise ConstraintViolation(f"{case.id} requires B_u != 0")

    results = []
    for k, cv in enumerate(vectors, start=1):
        bound = ConservedVector(
            F=substitute(cv.F, rest, closed, space=s),
            G=substitute(cv.G, rest, closed, space=s),
            rules=_bind_rules(cv.rules, rest, closed, s),
            space=cv.space,
        )
        report = verify(bound_eq, bound)
        if not report.verified:
            raise ConstraintViolation(
                f"{case.id} vector {k} does not hold for these bindings: residual {format_expr(report.residual)}"
            )
        results.append(bound)
    logger.info("instantiated %s: %s", case.id, bound_eq.describe())
    return bound_eq, results


# ==================== DETECTORS ====================

def detect_proportional(B_expr: sp.Expr, A_expr: sp.Expr) -> Optional[sp.Expr]:
    """eps with B = eps*A, or None"""
    if is_zero(A_expr):
        raise PreconditionError("A vanishes identically")
    return is_constant(simplify(B_expr / A_expr), [u])


def detect_affine(B_expr: sp.Expr, A_expr: sp.Expr) -> Optional[Tuple[sp.Expr, sp.Expr]]:
    """(eps, c) with B = eps*A + c and c != 0, or None"""
    A_u = sp.diff(A_expr, u)
    if is_zero(A_u):
        raise PreconditionError("A_u vanishes identically")
    slope = is_constant(simplify(sp.diff(B_expr, u) / A_u), [u])
    if slope is None:
        return None
    offset = is_constant(simplify(B_expr - slope * A_expr), [u])
    if offset is None or offset == 0:
        return None
    return slope, offset


def _affine_split(B_expr, A_expr) -> Optional[Tuple[sp.Expr, sp.Expr]]:
    if is_zero(sp.diff(A_expr, u)):
        c = is_constant(B_expr, [u])
        return None if c is None or c == 0 else (sp.S.Zero, c)
    return detect_affine(B_expr, A_expr)


# ==================== CLASSIFICATION ====================

class CaseMatch(BaseModel):
    """A matched case: parameter values, the elements relating it to the input, verified vectors"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    case_id: str
    parameters: Dict[str, sp.Expr] = {}
    chain: Tuple[EquivalenceElement, ...] = ()
    vectors: Tuple[ConservedVector, ...] = ()

    def render(self) -> str:
        lines = [self.case_id]
        if self.parameters:
            lines.append("  parameters: " + ", ".join(f"{k} = {format_expr(v)}" for k, v in self.parameters.items()))
        for element in self.chain:
            lines.append(f"  via {describe_element(element)}")
        for k, cv in enumerate(self.vectors, start=1):
            lines.append(f"  vector {k}: {cv.describe()}")
            lines += [f"    with {rule.target}_{rule.wrt} = {format_expr(rule.replacement)}"
                      for rule in cv.rules if rule.wrt is not None]
        return "\n".join(lines)


class ClassificationResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    equation: DCEquation
    matches: Tuple[CaseMatch, ...] = ()

    @property
    def case_ids(self) -> List[str]:
        return [m.case_id for m in self.matches]

    def render(self) -> str:
        if not self.matches:
            return "no catalog case matches"
        return "\n".join(m.render() for m in self.matches)


def describe_element(element: EquivalenceElement) -> str:
    fields = sorted(element.model_fields_set - {"kind"})
    args = ", ".join(f"{name}={format_expr(getattr(element, name))}" for name in fields
                     if getattr(element, name) is not None)
    return f"{element.kind}({args})"


class _Classifier:
    """Checks one g = 1 equation against every case; each check proposes vectors that must verify"""

    def __init__(self, eq: DCEquation):
        self.eq = eq
        self.f = eliminate_abs(eq.f, eq.assumptions)
        self.h = eliminate_abs(eq.h, eq.assumptions)
        self.A, self.B = eq.A, eq.B
        self.IA = int_of(self.A)
        self.IB = int_of(self.B)
        self.matches: List[CaseMatch] = []

    def add(self, case_ids: Sequence[str], vectors: Sequence[ConservedVector], parameters=None, chain=()) -> None:
        verified = []
        for cv in vectors:
            report = verify(self.eq, cv)
            if report.verified:
                verified.append(cv)
            else:
                logger.debug("candidate %s for %s refuted", cv.describe(), case_ids)
        if not verified:
            return
        for case_id in case_ids:
            if case_id not in [m.case_id for m in self.matches]:
                self.matches.append(CaseMatch(case_id=case_id, parameters=dict(parameters or {}),
                                              chain=tuple(chain), vectors=tuple(verified)))

    def run(self) -> List[CaseMatch]:
        for check in (self.constant_h, self.inverse_linear_h, self.proportional, self.affine,
                      self.affine_x_weight, self.quadratic_z, self.constant_A, self.profiles):
            try:
                check()
            except DCEError as error:
                logger.debug("%s skipped: %s", check.__name__, error)
        order = {case.id: k for k, case in enumerate(CASES)}
        return sorted(self.matches, key=lambda m: order[m.case_id])

    # T3.1 / T4.1
    def constant_h(self):
        c = is_constant(self.h, [x])
        if c is None:
            return
        vector = ConservedVector(F=self.f * u, G=-self.A * u_x - c * self.IB)
        chain = (UsualG(eps3=c),) if c not in (0, 1) else ()
        self.add(("T3.1", "T4.1"), [vector], chain=chain)

    # T3.2: 1/h = a (x + beta)
    def inverse_linear_h(self):
        k = simplify(1 / self.h)
        a = is_constant(sp.diff(k, x), [x])
        if a is None or a == 0:
            return
        beta = simplify(k / a - x)
        xi = x + beta
        vector = ConservedVector(F=xi * self.f * u, G=-xi * self.A * u_x + self.IA - self.IB / a)
        self.add(("T3.2",), [vector], {"a": a, "beta": beta},
                 chain=(UsualG(X=xi, Xinv=x - beta, eps3=1 / a),))

    # T3.3 / T4.2a
    def proportional(self):
        e = detect_proportional(self.B, self.A)
        if e is None:
            return
        y_, E = aux_y(e, self.h)
        vectors = [
            ConservedVector(F=y_ * E * self.f * u, G=-y_ * E * self.A * u_x + self.IA),
            ConservedVector(F=E * self.f * u, G=-E * self.A * u_x),
        ]
        self.add(("T3.3",) + (("T4.2a",) if e == 0 else ()), vectors, {"eps": e})

    # T3.5 / T4.6: lam = c (h_x + eps h^2)/f
    def affine(self):
        split = _affine_split(self.B, self.A)
        if split is None:
            return
        e, c = split
        lam_value = is_constant(simplify(c * (sp.diff(self.h, x) + e * self.h**2) / self.f), [x])
        if lam_value is None or lam_value == 0:
            return
        _, E = aux_y(e, self.h)
        weight = sp.exp(lam_value * t) * E
        vector = ConservedVector(F=weight * self.f * u, G=-weight * (self.A * u_x + c * self.h * u))
        ids = ("T3.5", "T4.6") if e == 0 else ("T3.5",)
        self.add(ids, [vector], {"eps": e, "c": c, "lam": lam_value}, chain=(UsualG(d1=lam_value, eps3=c),))

    # T3.6 / T4.7: lam = c (h_x + eps h^2 + h/(E y))/f
    def affine_x_weight(self):
        split = _affine_split(self.B, self.A)
        if split is None:
            return
        e, c = split
        y_, E = aux_y(e, self.h)
        P = y_ * E
        lam_value = is_constant(simplify(c * (sp.diff(self.h, x) + e * self.h**2 + self.h / P) / self.f), [x])
        if lam_value is None or lam_value == 0:
            return
        weight = sp.exp(lam_value * t)
        vector = ConservedVector(
            F=weight * P * self.f * u,
            G=-weight * (P * self.A * u_x + c * P * self.h * u - self.IA),
        )
        ids = ("T3.6", "T4.7") if e == 0 else ("T3.6",)
        self.add(ids, [vector], {"eps": e, "c": c, "lam": lam_value}, chain=(UsualG(d1=lam_value, eps3=c),))

    # T3.4: Z = -c h/(E f) quadratic in y, -E Z (h_x + eps h^2)/h = a01 y + a00; d/dy = E d/dx
    def quadratic_z(self):
        split = _affine_split(self.B, self.A)
        if split is None or function_names(self.h) or function_names(self.f):
            return
        e, c = split
        y_, E = aux_y(e, self.h)
        if y_.has(Antideriv):
            return

        def d_y(expr):
            return simplify(E * sp.diff(expr, x))

        Z = simplify(-c * self.h / (E * self.f))
        if Z == 0:
            return
        Z_y = d_y(Z)
        z2 = _const(d_y(Z_y) / 2)
        if z2 is None:
            return
        z1 = _const(Z_y - 2 * z2 * y_)
        z0 = None if z1 is None else _const(Z - z2 * y_**2 - z1 * y_)
        Q = simplify(-E * Z * (sp.diff(self.h, x) + e * self.h**2) / self.h)
        q1 = _const(d_y(Q))
        q0 = None if q1 is None else _const(Q - q1 * y_)
        if z0 is None or q0 is None or simplify(q1 - z2) != 0:
            return
        values = {a01: z2, a00: q0, a11: simplify(q0 - z1), a10: -z0}
        rules = tuple(ConstraintRule(target=r.target, wrt=r.wrt, replacement=r.replacement.xreplace(values))
                      for r in SIGMA_RULES)
        w = sigma1 * y_ + sigma0
        vector = ConservedVector(
            F=w * E * self.f * u,
            G=-w * E * (self.A * u_x + c * self.h * u) + sigma1 * self.IA,
            rules=rules,
        )
        self.add(("T3.4",), [vector], {str(k): v for k, v in values.items()} | {"eps": e, "c": c})

    # T3.7 / T4.8 and T3.8 / T4.9: A = a constant
    def constant_A(self):
        a = is_constant(self.A, [u])
        if a is None:
            return
        if not function_names(self.B) and not is_zero(sp.diff(self.B, u)):
            k = simplify(1 / self.h)
            k2 = sp.diff(k, x, 2)
            if simplify(self.f + self.h * k2) == 0:
                vector = ConservedVector(
                    F=sp.exp(a * t) * k2 * u,
                    G=sp.exp(a * t) * (a * k * u_x - a * sp.diff(k, x) * u + self.IB),
                )
                self.add(("T3.7", "T4.8"), [vector], {"a": a}, chain=(UsualG(d1=a, eps2=1 / a),))
        if is_zero(self.B) or is_zero(self.h):
            rule = ConstraintRule(target="alpha", wrt=t, replacement=-a * sp.Derivative(alpha, x, 2) / self.f)
            vectors = [
                ConservedVector(F=alpha * self.f * u, G=-a * alpha * u_x + a * sp.diff(alpha, x) * u, rules=(rule,)),
                ConservedVector(F=self.f * u, G=-a * u_x),
                ConservedVector(F=x * self.f * u, G=-a * x * u_x + a * u),
            ]
            c = is_constant(self.f, [x])
            if c is not None:
                weight = x**2 - 2 * a * t / c
                vectors.append(ConservedVector(F=weight * self.f * u, G=-a * weight * u_x + 2 * a * x * u))
            self.add(("T3.8", "T4.9"), vectors, {"a": a}, chain=(UsualG(d1=a, eps2=1 / a),))

    # T4.2b-d, T4.3-5: explicit profiles up to t~ = d1 t, x~ = d5 x and the eps scalings
    def profiles(self):
        split = _affine_split(self.B, self.A)
        if split is None or split[0] != 0 or function_names(self.h) or function_names(self.f):
            return
        c = split[1]
        log_h = simplify(sp.diff(self.h, x) / self.h)
        for case_id, detect in _PROFILE_DETECTORS:
            found = detect(log_h)
            if found is None:
                continue
            parameters, d5 = found
            try:
                self.profile(case_id, parameters, d5, c)
            except DCEError as error:
                logger.debug("%s profile skipped: %s", case_id, error)

    def profile(self, case_id: str, parameters: Dict[str, sp.Expr], d5: sp.Expr, c: sp.Expr):
        case = get_case(case_id)
        source, templates = case.build(**parameters)
        assumptions = source.assumptions or self.eq.assumptions
        f_p = eliminate_abs(source.f, assumptions).xreplace({x: x / d5})
        h_p = eliminate_abs(source.h, assumptions).xreplace({x: x / d5})
        e1 = is_constant(simplify(c * self.h / h_p), [x])
        if e1 is None or e1 == 0:
            return
        d1 = is_constant(simplify(self.f * d5 / (e1 * f_p)), [x])
        if d1 is None or d1 == 0:
            return
        e2 = e1 * d5
        element = UsualG(d1=d1, X=d5 * x, Xinv=x / d5, eps1=e1, eps2=e2, eps3=c)
        pt = element.point_transformation()
        scaled_A = {A: A / e2, antideriv("A", u): antideriv("A", u) / e2}
        concrete_A = {A: self.A / e2, antideriv("A", u): self.IA / e2}
        vectors = []
        for template in templates:
            F = eliminate_abs(template.F, assumptions)
            G = eliminate_abs(template.G, assumptions)
            if function_names(self.A):
                F, G = F.xreplace(scaled_A), G.xreplace(scaled_A)
            else:
                F, G = F.xreplace(concrete_A), G.xreplace(concrete_A)
            vectors.append(push_conserved_vector(pt, ConservedVector(F=F, G=G)))
        values = dict(parameters)
        values.update({"d1": d1, "d5": d5, "eps1": e1, "eps2": e2, "eps3": c})
        self.add((case_id,), vectors, values, chain=(element,))


def _const(e):
    return is_constant(simplify(e), [x])


def _detect_2b(log_h):
    return ({}, sp.S.One) if is_zero(log_h) else None


def _detect_2c(log_h):
    k = _const(log_h)
    return None if k is None or k == 0 else ({}, 1 / k)


def _detect_2d(log_h):
    m = _const(x * log_h)
    return None if m is None else ({"mu": m}, sp.S.One)


def _detect_t4_3(log_h):
    m = _const(-x**2 * log_h - x)
    if m is None:
        return None
    return ({"mu": sp.S.Zero}, sp.S.One) if m == 0 else ({"mu": sp.S.One}, m)


def _detect_t4_4(log_h):
    m = _const((log_h * (x**2 - 1) + x) / 2)
    return None if m is None else ({"mu": m}, sp.S.One)


def _detect_t4_5(log_h):
    m = _const(log_h * (x**2 + 1) + x)
    return None if m is None else ({"mu": m}, sp.S.One)


_PROFILE_DETECTORS = (
    ("T4.2b", _detect_2b),
    ("T4.2c", _detect_2c),
    ("T4.2d", _detect_2d),
    ("T4.3", _detect_t4_3),
    ("T4.4", _detect_t4_4),
    ("T4.5", _detect_t4_5),
)


def classify(eq: DCEquation) -> ClassificationResult:
    """All catalog cases the g = 1 equation matches, each with vectors verified on eq"""
    if eq.space != "x" or eq.chart is not None:
        raise PreconditionError("classification works on equations in x without a chart")
    if not is_zero(eq.g - 1):
        raise PreconditionError("classify needs g = 1; run normalize_g first")
    matches = _Classifier(eq).run()
    logger.info("classified %s: %s", eq.describe(), ", ".join(m.case_id for m in matches) or "no match")
    return ClassificationResult(equation=eq, matches=tuple(matches))


# ==================== EXPORT ====================

def case_to_dict(case: CatalogCase) -> dict:
    eq, vectors = case.build()
    return {
        "id": case.id,
        "family": case.family,
        "constraints": list(case.constraints),
        "parameters": {k: format_expr(v) for k, v in case.parameters.items()},
        "coordinate": case.coordinate,
        "equation": {name: format_expr(v) for name, v in eq.coefficients().items()},
        "assumptions": [str(a) for a in eq.assumptions],
        "vectors": [
            {"F": format_expr(cv.F), "G": format_expr(cv.G), "rules": [
                {"target": r.target, "wrt": r.wrt.name if r.wrt is not None else None,
                 "replacement": format_expr(r.replacement)} for r in cv.rules
            ]}
            for cv in vectors
        ],
        "notes": list(case.notes),
    }


def export_catalog() -> dict:
    return {"schema": 1, "cases": [case_to_dict(case) for case in CASES], "reductions": list(NOTE_REDUCTIONS)}
