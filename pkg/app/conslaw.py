"""
Conserved vectors (F, G) with D_tF + D_xG = 0 on solutions: representation,
verification, trivial parts and equivalence up to D_x H / D_t H terms.
"""

import logging
import re
from typing import Dict, List, Optional, Sequence, Tuple

import sympy as sp
from pydantic import BaseModel, ConfigDict, model_validator

from app.equations import DCEquation, evolution_form
from app.expr_core import (
    ConstraintRule,
    MalformedEquationError,
    ShapeError,
    U_T,
    apply_rules,
    eliminate_abs,
    jets_in,
    simplify,
    substitute,
    t,
    total_diff_t_on_solutions,
    total_diff_x,
    u,
    x,
    y,
)
from app.parser import Block, ParseError, Scope, format_expr, parse_block, parse_expr

logger = logging.getLogger(__name__)

VERIFIED = "verified"
REFUTED = "refuted"


class ConservedVector(BaseModel):
    """Density F(t, x, u) and flux G(t, x, u, u_x), with constraint rules for α, σ, ..."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    F: sp.Expr
    G: sp.Expr
    rules: Tuple[ConstraintRule, ...] = ()
    space: str = "x"

    @model_validator(mode="before")
    @classmethod
    def _canonical(cls, data):
        if isinstance(data, dict):
            data = dict(data)
            for name in ("F", "G"):
                if name in data:
                    data[name] = simplify(sp.sympify(data[name]))
            data["rules"] = tuple(data.get("rules") or ())
        return data

    @model_validator(mode="after")
    def _check_shape(self):
        space = x if self.space == "x" else y
        if self.F.has(U_T) or self.G.has(U_T):
            raise ShapeError("conserved vectors must not contain u_t")
        if any(order >= 1 for order in jets_in(self.F, space)):
            raise ShapeError(f"density depends on derivatives of u: {format_expr(self.F)}")
        if any(order >= 2 for order in jets_in(self.G, space)):
            raise ShapeError(f"flux depends on second or higher derivatives of u: {format_expr(self.G)}")
        return self

    @property
    def space_var(self) -> sp.Symbol:
        return x if self.space == "x" else y

    def __add__(self, other: "ConservedVector") -> "ConservedVector":
        rules = self.rules + tuple(r for r in other.rules if r not in self.rules)
        return ConservedVector(F=self.F + other.F, G=self.G + other.G, rules=rules, space=self.space)

    def __mul__(self, factor) -> "ConservedVector":
        factor = sp.sympify(factor)
        return ConservedVector(F=factor * self.F, G=factor * self.G, rules=self.rules, space=self.space)

    __rmul__ = __mul__

    def bind(self, bindings, antiderivs=None) -> "ConservedVector":
        space = self.space_var
        return ConservedVector(
            F=substitute(self.F, bindings, antiderivs, space=space),
            G=substitute(self.G, bindings, antiderivs, space=space),
            rules=self.rules,
            space=self.space,
        )

    def describe(self) -> str:
        return f"({format_expr(self.F)}, {format_expr(self.G)})"


class VerificationReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    residual: sp.Expr
    verdict: str
    rhs: sp.Expr

    @property
    def verified(self) -> bool:
        return self.verdict == VERIFIED


def divergence_on_solutions(eq: DCEquation, cv: ConservedVector) -> sp.Expr:
    """D_tF + D_xG with u_t eliminated, before canonicalization"""
    if cv.space != eq.space:
        raise MalformedEquationError("equation and conserved vector use different space variables")
    ev = evolution_form(eq)
    s = eq.space_var
    F = eliminate_abs(cv.F, eq.assumptions)
    G = eliminate_abs(cv.G, eq.assumptions)
    total = total_diff_t_on_solutions(F, ev.rhs, s, cv.rules, eq.scale) + total_diff_x(G, s, eq.scale)
    return eliminate_abs(apply_rules(total, cv.rules), eq.assumptions)


def verify(eq: DCEquation, cv: ConservedVector) -> VerificationReport:
    """Residual of the divergence identity on solutions; zero means verified"""
    residual = simplify(divergence_on_solutions(eq, cv))
    verdict = VERIFIED if residual == 0 else REFUTED
    logger.debug("verify %s on %s: %s", cv.describe(), eq.describe(), verdict)
    return VerificationReport(residual=residual, verdict=verdict, rhs=evolution_form(eq).rhs)


def add_trivial_part(cv: ConservedVector, H: sp.Expr) -> ConservedVector:
    """(F + D_xH, G - D_tH); H must not involve derivatives of u"""
    H = sp.sympify(H)
    s = cv.space_var
    if any(order >= 1 for order in jets_in(H, s)) or H.has(U_T):
        raise ShapeError("H may depend on t, x and u only")
    D_t = sp.diff(H, t) + sp.diff(H, u) * U_T
    return ConservedVector(F=cv.F + total_diff_x(H, s), G=cv.G - D_t, rules=cv.rules, space=cv.space)


# ==================== EQUIVALENCE ====================

def _ansatz(prefix: str) -> Tuple[sp.Expr, List[sp.Symbol]]:
    monomials = [sp.S.One, t, x, u, t * u, x * u, t * x]
    coefficients = sp.symbols(f"{prefix}0:{len(monomials)}")
    return sum(c * m for c, m in zip(coefficients, monomials)), list(coefficients)


def _linear_conditions(expr: sp.Expr, unknowns: Sequence[sp.Symbol], space: sp.Symbol) -> List[sp.Expr]:
    """
    Split expr (linear in the unknowns) into conditions on the unknowns: the
    coefficient of every distinct non-constant factor must vanish.
    """
    numerator, _ = sp.fraction(sp.together(simplify(expr)))
    numerator = sp.expand(numerator, power_exp=False)
    variables = [t, space, u] + list(jets_in(numerator, space).values())
    groups: Dict[sp.Expr, sp.Expr] = {}
    for term in sp.Add.make_args(numerator):
        constant, dependent = term.as_independent(*variables, as_Add=False)
        groups[dependent] = groups.get(dependent, sp.S.Zero) + constant
    return [condition for condition in groups.values() if condition != 0]


def span_witness(
    cv: ConservedVector,
    basis: Sequence[ConservedVector],
    eq: DCEquation,
) -> Optional[Tuple[List[sp.Expr], sp.Expr]]:
    """
    Constants k_j and H from the finite ansatz with
    cv = sum k_j basis_j + (D_xH, -D_tH) on solutions, or None.
    """
    s = eq.space_var
    rhs = evolution_form(eq).rhs
    H, h_unknowns = _ansatz("_c")
    k_unknowns = list(sp.symbols(f"_k0:{len(basis)}")) if basis else []
    combination_F = sum((k * b.F for k, b in zip(k_unknowns, basis)), sp.S.Zero)
    combination_G = sum((k * b.G for k, b in zip(k_unknowns, basis)), sp.S.Zero)
    D_t_H = sp.diff(H, t) + sp.diff(H, u) * rhs
    unknowns = h_unknowns + k_unknowns
    conditions = _linear_conditions(cv.F - combination_F - total_diff_x(H, s), unknowns, s)
    conditions += _linear_conditions(cv.G - combination_G + D_t_H, unknowns, s)
    if not conditions:
        return [sp.S.Zero] * len(basis), sp.S.Zero
    solutions = sp.solve(conditions, unknowns, dict=True)
    if not solutions:
        return None
    solution = solutions[0]
    free = {c: 0 for c in unknowns}
    resolved = {c: simplify(sp.sympify(solution.get(c, c)).xreplace(free)) for c in unknowns}
    if any(v.free_symbols & set(unknowns) for v in resolved.values()):
        return None
    ks = [resolved[k] for k in k_unknowns]
    witness = simplify(H.xreplace(resolved))
    return ks, witness


def is_equivalent(cv1: ConservedVector, cv2: ConservedVector, eq: DCEquation) -> Optional[sp.Expr]:
    """
    H with cv2 = cv1 + (D_xH, -D_tH) on solutions, searched in
    H = c0 + c1 t + c2 x + c3 u + c4 t u + c5 x u + c6 t x; None if not found.
    """
    difference = ConservedVector(F=cv2.F - cv1.F, G=cv2.G - cv1.G, rules=cv1.rules + cv2.rules, space=cv1.space)
    found = span_witness(difference, [], eq)
    return None if found is None else found[1]


def pull_back(element, cv: ConservedVector) -> ConservedVector:
    """
    Vector of the source equation whose image under `element` is cv: the
    inverse point transformation pushes cv back.
    """
    from app.transforms import PointTransformation, push_conserved_vector

    pt = element if isinstance(element, PointTransformation) else element.point_transformation()
    return push_conserved_vector(pt.invert(), cv)


# ==================== FILES ====================

_RULE_LHS = re.compile(r"^\s*([A-Za-z][A-Za-z0-9]*)(?:_([a-z]))?\s*=\s*(.+)$")


def rule_from_text(text: str, scope: Optional[Scope] = None, line: int = 1) -> ConstraintRule:
    """'alpha_t = -alpha_xx/f(x)' or 'f = -h(x)/Z(x)'"""
    match = _RULE_LHS.match(text)
    if not match:
        raise ParseError("expected 'name_var = expression'", line, 1, {"NAME"})
    name, wrt, body = match.groups()
    replacement = parse_expr(body, scope, line=line, col=match.start(3) + 1)
    return ConstraintRule(target=name, replacement=replacement, wrt=sp.Symbol(wrt) if wrt else None)


def cv_from_block(block: Block) -> ConservedVector:
    missing = [k for k in ("F", "G") if k not in block.values]
    if missing:
        raise MalformedEquationError(f"conserved-vector file lacks {', '.join(missing)}")
    rules = tuple(
        rule_from_text(text, block.scope, number) for text, number in block.directives.get("constraint", [])
    )
    space = (block.directive("space") or ["x"])[0]
    return ConservedVector(F=block.values["F"], G=block.values["G"], rules=rules, space=space)


def cv_from_text(text: str) -> ConservedVector:
    return cv_from_block(parse_block(text))


def cv_to_text(cv: ConservedVector) -> str:
    lines = [f"F = {format_expr(cv.F)}", f"G = {format_expr(cv.G)}"]
    for rule in cv.rules:
        lhs = rule.target if rule.wrt is None else f"{rule.target}_{rule.wrt}"
        lines.append(f"constraint: {lhs} = {format_expr(rule.replacement)}")
    return "\n".join(lines) + "\n"
