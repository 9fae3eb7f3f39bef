"""
Members of the class f(x)u_t = (g(x)A(u)u_x)_x + h(x)B(u)u_x.
"""

import logging
from typing import Dict, List, Mapping, Optional, Tuple

import sympy as sp
from pydantic import BaseModel, ConfigDict, model_validator

from app.expr_core import (
    BASE_VARS,
    Assumption,
    ContractViolation,
    InvalidEquationError,
    MalformedEquationError,
    PreconditionError,
    U_T,
    eliminate_abs,
    fn,
    function_names,
    is_zero,
    jet,
    jet_order,
    simplify,
    substitute,
    t,
    total_diff_x,
    u,
    x,
    y,
)
from app.parser import Block, format_expr, parse_assumption, parse_block

logger = logging.getLogger(__name__)

COEFFICIENTS = ("f", "g", "h", "A", "B")


def _has_jets(e: sp.Expr) -> bool:
    # order >= 1 only; u itself is a legitimate argument of A and B
    return any((jet_order(s) or (None, 0))[1] >= 1 for s in e.free_symbols) or e.has(U_T)


class DCEquation(BaseModel):
    """
    Arbitrary-element tuple (f, g, h, A, B).

    `chart` is set on equations carried in parametric form: coefficients stay
    written in the old space variable while jets refer to the new coordinate
    X(old), so D_new = (1/X') d/d(old).
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    f: sp.Expr
    g: sp.Expr
    h: sp.Expr
    A: sp.Expr
    B: sp.Expr
    space: str = "x"
    assumptions: Tuple[Assumption, ...] = ()
    chart: Optional[sp.Expr] = None

    @model_validator(mode="before")
    @classmethod
    def _sympify(cls, data):
        if isinstance(data, dict):
            data = dict(data)
            for name in COEFFICIENTS:
                if name in data:
                    data[name] = sp.sympify(data[name])
            if data.get("assumptions") is not None:
                data["assumptions"] = tuple(data["assumptions"])
        return data

    @model_validator(mode="after")
    def _check_invariants(self):
        if self.space not in ("x", "y"):
            raise InvalidEquationError(f"space variable must be x or y, got {self.space!r}")
        for name in ("f", "g", "h"):
            value = getattr(self, name)
            if value.has(u) or _has_jets(value):
                raise InvalidEquationError(f"{name} must not depend on u or its derivatives")
        for name in ("A", "B"):
            value = getattr(self, name)
            if _has_jets(value) or any(v in value.free_symbols for v in BASE_VARS):
                raise InvalidEquationError(f"{name} must depend on u only")
        for name in ("f", "g", "A"):
            if is_zero(getattr(self, name)):
                raise InvalidEquationError(f"{name} vanishes identically (f*g*A must be nonzero)")
        return self

    @classmethod
    def abstract(cls, space: str = "x", **overrides) -> "DCEquation":
        """Equation with every coefficient not in `overrides` left abstract"""
        var = x if space == "x" else y
        values = {name: fn(name, space=var) for name in COEFFICIENTS}
        values.update({k: sp.sympify(v) for k, v in overrides.items() if k in COEFFICIENTS})
        extra = {k: v for k, v in overrides.items() if k not in COEFFICIENTS}
        return cls(space=space, **values, **extra)

    @property
    def space_var(self) -> sp.Symbol:
        return x if self.space == "x" else y

    @property
    def scale(self) -> Optional[sp.Expr]:
        if self.chart is None:
            return None
        return 1 / sp.diff(self.chart, self.space_var)

    def coefficients(self) -> Dict[str, sp.Expr]:
        return {name: getattr(self, name) for name in COEFFICIENTS}

    def replace_coefficients(self, **changes) -> "DCEquation":
        data = self.coefficients()
        data.update({k: simplify(v) for k, v in changes.items()})
        return DCEquation(space=self.space, assumptions=self.assumptions, chart=self.chart, **data)

    def bind(self, bindings: Mapping[str, sp.Expr], antiderivs: Optional[Mapping[str, sp.Expr]] = None) -> "DCEquation":
        """Substitute concrete functions/constants into every coefficient"""
        data = {
            name: substitute(value, bindings, antiderivs, space=self.space_var)
            for name, value in self.coefficients().items()
        }
        return DCEquation(space=self.space, assumptions=self.assumptions, chart=self.chart, **data)

    def is_concrete(self) -> bool:
        return not any(function_names(v) for v in self.coefficients().values())

    def describe(self) -> str:
        parts = [f"{name} = {format_expr(value)}" for name, value in self.coefficients().items()]
        return ", ".join(parts)


class EvolutionForm(BaseModel):
    """u_t = rhs(t, x, u, u_x, u_xx)"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    rhs: sp.Expr
    space: str = "x"
    scale: Optional[sp.Expr] = None

    @property
    def space_var(self) -> sp.Symbol:
        return x if self.space == "x" else y

    def diffusion_coefficient(self) -> sp.Expr:
        return simplify(sp.diff(self.rhs, jet(2, self.space_var)))


def evolution_form(eq: DCEquation) -> EvolutionForm:
    """rhs = [(g A u_x)_x + h B u_x] / f, canonical"""
    s = eq.space_var
    ux = jet(1, s)
    f, g, h = (eliminate_abs(c, eq.assumptions) for c in (eq.f, eq.g, eq.h))
    flux = total_diff_x(g * eq.A * ux, s, eq.scale)
    rhs = simplify((flux + h * eq.B * ux) / f)
    if is_zero(sp.diff(rhs, jet(2, s))):
        raise InvalidEquationError("evolution form has no diffusion term")
    return EvolutionForm(rhs=rhs, space=eq.space, scale=eq.scale)


def same_equation(eq1: DCEquation, eq2: DCEquation) -> bool:
    """True iff both tuples give the same evolution equation"""
    if eq1.space != eq2.space:
        raise PreconditionError("equations live in different space variables")
    if (eq1.chart is None) != (eq2.chart is None) or (
        eq1.chart is not None and not is_zero(eq1.chart - eq2.chart)
    ):
        raise PreconditionError("equations are written in different charts")
    return is_zero(evolution_form(eq1).rhs - evolution_form(eq2).rhs)


def normalize_g(eq: DCEquation, X: sp.Expr, Xinv: Optional[sp.Expr] = None):
    """
    Map eq to g = 1 with x~ = X(x), where X' = 1/g is checked.

    With a closed inverse Xinv (x in terms of x~, written in the space
    variable) the result is re-expressed in x~; otherwise it is returned in
    parametric form with `chart = X`.
    """
    from app.transforms import Factor

    s = eq.space_var
    residual = simplify(sp.diff(X, s) - 1 / eq.g)
    if residual != 0:
        raise ContractViolation("X is not an antiderivative of 1/g", residual)
    element = Factor(X=X, Xinv=Xinv)
    return element.apply_to_equation(eq), element


def shift_b(eq: DCEquation, c: sp.Expr, Phi: sp.Expr):
    """
    Trade B for B + c*A with the gauge element eps4 = c; Phi is a closed form
    of the integral of h/g. The equation itself does not change.
    """
    from app.transforms import Gauge

    element = Gauge(eps4=c, Phi=Phi)
    return element.apply_to_equation(eq), element


# ==================== FILES ====================

def equation_from_block(block: Block) -> DCEquation:
    missing = [name for name in COEFFICIENTS if name not in block.values]
    space = (block.directive("space") or ["x"])[0]
    if space not in ("x", "y"):
        raise MalformedEquationError(f"space must be x or y, got {space!r}")
    var = x if space == "x" else y
    values = {name: block.values.get(name, fn(name, space=var)) for name in COEFFICIENTS}
    if missing:
        logger.info("coefficients %s left abstract", ", ".join(missing))
    assumptions: List[Assumption] = [
        parse_assumption(text, number) for text, number in block.directives.get("assume", [])
    ]
    chart = block.values.get("chart")
    return DCEquation(space=space, assumptions=tuple(assumptions), chart=chart, **values)


def equation_from_text(text: str) -> DCEquation:
    return equation_from_block(parse_block(text))


def equation_to_text(eq: DCEquation) -> str:
    lines = [f"{name} = {format_expr(value)}" for name, value in eq.coefficients().items()]
    if eq.space != "x":
        lines.insert(0, f"space: {eq.space}")
    lines += [f"assume: {a}" for a in eq.assumptions]
    if eq.chart is not None:
        lines.append(f"chart = {format_expr(eq.chart)}")
    return "\n".join(lines) + "\n"
