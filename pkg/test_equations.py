"""
Tests for the equation tuple (f, g, h, A, B): validation, evolution form,
sameness and the normalizing transformations
"""

import os
import sys
from dotenv import load_dotenv

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
load_dotenv()

import pytest
import sympy as sp

from app.equations import (
    DCEquation, equation_from_text, equation_to_text, evolution_form, normalize_g, same_equation, shift_b
)
from app.expr_core import (
    ContractViolation, InvalidEquationError, PreconditionError, fn, is_zero, jet, u, u_x, u_xx, x, y
)

FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures")


def _fixture(name: str) -> str:
    with open(os.path.join(FIXTURES, name)) as handle:
        return handle.read()


def test_burgers_fixture_evolution_form():
    eq = equation_from_text(_fixture("burgers.eq"))
    assert eq.is_concrete()
    assert is_zero(evolution_form(eq).rhs - (u_xx + u * u_x))


def test_abstract_evolution_form():
    eq = DCEquation.abstract()
    f, g, h, A, B = (fn(n) for n in ("f", "g", "h", "A", "B"))
    expected = (sp.diff(g, x) * A * u_x + g * sp.diff(A, u) * u_x**2 + g * A * u_xx + h * B * u_x) / f
    form = evolution_form(eq)
    assert is_zero(form.rhs - expected)
    assert is_zero(form.diffusion_coefficient() - g * A / f)


def test_coefficients_are_validated():
    with pytest.raises(InvalidEquationError):
        DCEquation(f=u, g=1, h=1, A=1, B=1)
    with pytest.raises(InvalidEquationError):
        DCEquation(f=1, g=1, h=1, A=x, B=1)
    with pytest.raises(InvalidEquationError):
        DCEquation(f=1, g=1, h=1, A=1, B=u_x)
    with pytest.raises(InvalidEquationError):
        DCEquation(f=0, g=1, h=1, A=1, B=1)
    with pytest.raises(InvalidEquationError):
        DCEquation(f=1, g=1, h=1, A=1, B=1, space="z")


def test_missing_coefficients_stay_abstract():
    eq = equation_from_text("g = 1\nB = 0\n")
    assert eq.f == fn("f")
    assert eq.A == fn("A")
    assert not eq.is_concrete()


def test_scaled_tuple_is_the_same_equation():
    eq = DCEquation(f=1, g=1, h=1, A=1, B=u)
    doubled = DCEquation(f=2, g=2, h=2, A=1, B=u)
    assert same_equation(eq, doubled)
    assert not same_equation(eq, eq.replace_coefficients(B=2 * u))


def test_different_space_variables_are_not_compared():
    with pytest.raises(PreconditionError):
        same_equation(DCEquation(f=1, g=1, h=0, A=1, B=0),
                      DCEquation(f=1, g=1, h=0, A=1, B=0, space="y"))


def test_equation_in_y():
    eq = equation_from_text("space: y\nf = 1\ng = 1\nh = 0\nA = 1\nB = 0\n")
    assert eq.space_var == y
    assert evolution_form(eq).rhs == jet(2, y)


def test_text_round_trip():
    eq = equation_from_text(_fixture("inverse_cube.eq"))
    again = equation_from_text(equation_to_text(eq))
    for name, value in eq.coefficients().items():
        assert is_zero(getattr(again, name) - value), name
    assert [str(a) for a in again.assumptions] == [str(a) for a in eq.assumptions]


def test_bind_substitutes_every_coefficient():
    eq = DCEquation.abstract(g=1).bind({"f": x, "h": 1 / x, "A": u, "B": 1})
    assert eq.is_concrete()
    assert is_zero(evolution_form(eq).rhs - (u * u_xx + u_x**2 + u_x / x) / x)


def test_normalize_g():
    eq = DCEquation(f=1, g=x, h=0, A=1, B=0)
    image, element = normalize_g(eq, sp.log(x), sp.exp(x))
    assert image.g == 1
    assert is_zero(image.f - sp.exp(x))
    assert element.kind == "factor"
    with pytest.raises(ContractViolation):
        normalize_g(eq, x**2)


def test_normalize_g_without_inverse_keeps_a_chart():
    eq = DCEquation(f=1, g=1 / (1 + x**2 + x**4), h=0, A=1, B=0)
    X = x + x**3 / 3 + x**5 / 5
    image, _ = normalize_g(eq, X)
    assert image.chart is not None
    assert is_zero(image.g - 1)


def test_shift_b_keeps_the_equation():
    eq = DCEquation(f=1, g=1, h=1, A=1, B=u)
    image, element = shift_b(eq, 1, x)
    assert is_zero(image.B - (u + 1))
    assert same_equation(eq, image)
    assert not element.is_local()


def test_u_dependent_coefficients_are_accepted():
    burgers = DCEquation(f=1, g=1, h=1, A=1, B=u)
    assert burgers.B == u
    assert is_zero(evolution_form(burgers).rhs - (u_xx + u * u_x))
    porous = DCEquation(f=x, g=1, h=1 / x, A=u**2 + 1, B=sp.exp(u))
    assert porous.is_concrete()
    with pytest.raises(InvalidEquationError):
        DCEquation(f=1, g=1, h=u, A=1, B=u)


def test_declared_inverses_are_checked():
    eq = DCEquation(f=1, g=1 / x, h=0, A=1, B=0)
    image, _ = normalize_g(eq, x**2 / 2, sp.sqrt(2 * x))
    assert is_zero(image.g - 1)
    with pytest.raises(ContractViolation):
        normalize_g(DCEquation(f=1, g=x, h=0, A=1, B=0), sp.log(x), sp.exp(2 * x))
