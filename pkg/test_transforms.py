"""
Tests for point transformations and the equivalence-group elements
"""

import os
import sys
from dotenv import load_dotenv

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
load_dotenv()

import pytest
import sympy as sp

from app.conslaw import ConservedVector, verify
from app.equations import DCEquation, equation_from_text, evolution_form, same_equation
from app.expr_core import (
    ContractViolation, DegenerateTransformationError, InvalidElementError, PreconditionError,
    fn, is_zero, t, u, u_x, u_xx, x
)
from app.transforms import (
    Composite, ExtendedG1, Factor, Gauge, PointTransformation, UsualG, apply_point_to_evolution,
    compose, conjugate, divergence_defect, element_from_text, f_normalizer, g_normalizer, push_conserved_vector
)

FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures")

BURGERS = DCEquation(f=1, g=1, h=1, A=1, B=u)


def _fixture(name: str) -> str:
    with open(os.path.join(FIXTURES, name)) as handle:
        return handle.read()


def _same_coefficients(eq1: DCEquation, eq2: DCEquation) -> bool:
    return all(is_zero(getattr(eq1, n) - getattr(eq2, n)) for n in ("f", "g", "h", "A", "B"))


# ==================== POINT TRANSFORMATIONS ====================

def test_galilean_boost_of_burgers():
    pt = element_from_text(_fixture("galilean.tr"))
    assert isinstance(pt, PointTransformation)
    image = apply_point_to_evolution(pt, evolution_form(BURGERS))
    assert is_zero(image.rhs - (u_xx + u * u_x - u_x))


def test_parabolic_scaling_of_heat_equation():
    heat = DCEquation(f=1, g=1, h=0, A=1, B=0)
    pt = PointTransformation(T=4 * t, X=2 * x)
    assert is_zero(apply_point_to_evolution(pt, evolution_form(heat)).rhs - u_xx)


def test_degenerate_point_transformations():
    with pytest.raises(DegenerateTransformationError):
        PointTransformation(T=t + x, X=t + x)
    with pytest.raises(DegenerateTransformationError):
        PointTransformation(U=sp.Integer(2))
    with pytest.raises(InvalidElementError):
        PointTransformation(U=u + x)


def test_declared_inverse_is_checked():
    with pytest.raises(ContractViolation):
        PointTransformation(X=2 * x, Tinv=t, Xinv=x / 3)


def test_invert_then_compose_is_identity():
    pt = PointTransformation(T=2 * t, X=x + 1, U=3 * u)
    identity = pt.invert().compose(pt)
    assert (identity.T, identity.X, identity.U) == (t, x, u)


def test_push_mass_law_through_galilean_boost():
    pt = element_from_text(_fixture("galilean.tr"))
    mass = ConservedVector(F=u, G=-u_x - u**2 / 2)
    image = push_conserved_vector(pt, mass)
    assert is_zero(image.F - u)
    assert is_zero(image.G - (u - u_x - u**2 / 2))
    boosted = DCEquation(f=1, g=1, h=1, A=1, B=u - 1)
    assert verify(boosted, image).verified


def test_divergence_defect_vanishes():
    cv = ConservedVector(F=x * fn("f") * u, G=-x * fn("A") * u_x + u**2)
    for pt in (PointTransformation(T=2 * t, X=3 * x + 1), PointTransformation(X=x + t)):
        assert divergence_defect(pt, cv) == 0
    polynomial = ConservedVector(F=u**2, G=x * u_x)
    assert divergence_defect(PointTransformation(X=x + t, U=2 * u + 1), polynomial) == 0


COVARIANCE_MAPS = (
    PointTransformation(T=2 * t, X=3 * x + 1),
    PointTransformation(X=x + t),
    PointTransformation(T=t + 1, X=2 * x - t, U=2 * u + 1),
    PointTransformation(X=x * sp.exp(t)),
    PointTransformation(T=2 * t + 3, X=2 * t - x, U=-u),
)

COVARIANCE_VECTORS = (
    ConservedVector(F=x * (1 + x**2) * u, G=-x * (1 + u**2) * u_x + u**2),
    ConservedVector(F=u**2, G=x * u_x),
    ConservedVector(F=sp.exp(x) * u, G=t * u * u_x),
    ConservedVector(F=u**3 + t * x, G=-u_x + x * u),
)


def test_divergence_is_covariant_on_twenty_pairs():
    count = 0
    for pt in COVARIANCE_MAPS:
        for cv in COVARIANCE_VECTORS:
            assert divergence_defect(pt, cv) == 0, (pt, cv.describe())
            count += 1
    assert count == 20


def test_log_exp_inverses_are_accepted():
    pt = PointTransformation(X=sp.log(x), Tinv=t, Xinv=sp.exp(x))
    assert pt.inverse_maps()[1] == sp.exp(x)
    assert UsualG(X=sp.exp(x), Xinv=sp.log(x)).inverse_x() == sp.log(x)
    with pytest.raises(ContractViolation):
        UsualG(X=sp.exp(x), Xinv=sp.log(2 * x))


# ==================== USUAL AND FACTOR ELEMENTS ====================

def test_usual_element_from_file():
    element = element_from_text(_fixture("scale.tr"))
    image = element.apply_to_equation(BURGERS)
    assert (image.f, image.g, image.h, image.A) == (1, 2, sp.Rational(1, 3), 1)
    assert is_zero(image.B - 3 * u)


def test_usual_element_agrees_with_its_point_transformation():
    eq = DCEquation(f=x, g=1, h=x**2, A=u, B=1)
    element = UsualG(d1=2, eps3=3, X=2 * x + 1, Xinv=(x - 1) / 2)
    image = element.apply_to_equation(eq)
    pushed = apply_point_to_evolution(element.point_transformation(), evolution_form(eq))
    assert is_zero(evolution_form(image).rhs - pushed.rhs)


def test_usual_compose_and_invert():
    first = UsualG(d1=3, d2=1, eps2=2, X=x + 1, Xinv=x - 1)
    second = UsualG(d1=2, eps2=5, X=2 * x, Xinv=x / 2)
    both = compose(second, first)
    assert (both.d1, both.d2, both.eps2) == (6, 2, 10)
    assert is_zero(both.X - (2 * x + 2))
    back = first.invert().compose(first)
    assert (back.d1, back.d2, back.eps2) == (1, 0, 1)
    assert is_zero(back.X - x)


def test_factor_elements_have_no_scalings():
    with pytest.raises(InvalidElementError):
        Factor(eps1=2)
    assert isinstance(compose(Factor(d1=2), Factor(d3=3)), Factor)


def test_usual_element_without_inverse_keeps_a_chart():
    element = UsualG(X=x + x**3)
    image = element.apply_to_equation(DCEquation(f=1, g=1, h=0, A=1, B=0))
    assert image.chart is not None
    assert image.assumptions == ()


# ==================== GAUGE ELEMENTS ====================

def test_gauge_elements_leave_the_equation_unchanged():
    eq = DCEquation(f=1 + x**2, g=1, h=x, A=1 + u**2, B=u)
    scales = [1, 2, -1, sp.Rational(1, 2), 3]
    shifts = [0, 1, -2, sp.Rational(1, 3), 5]
    count = 0
    for k, eps1 in enumerate(scales):
        for j, eps4 in enumerate(shifts):
            element = Gauge(eps1=eps1, eps2=k + 1, eps3=j - 3 if j != 3 else 7, eps4=eps4, Phi=x**2 / 2)
            assert same_equation(eq, element.apply_to_equation(eq)), (eps1, eps4)
            count += 1
    assert count == 25


def test_gauge_shift_from_file():
    element = element_from_text(_fixture("shift.tr"))
    assert isinstance(element, Gauge)
    image = element.apply_to_equation(BURGERS)
    assert is_zero(image.B - (u + 2))
    assert is_zero(image.f - sp.exp(-2 * x))


def test_gauge_invert_undoes_the_element():
    eq = DCEquation(f=1 + x**2, g=1, h=1, A=1 + u, B=u**2)
    element = Gauge(eps1=2, eps2=3, eps3=5, eps4=1, Phi=x)
    restored = element.invert().apply_to_equation(element.apply_to_equation(eq))
    assert _same_coefficients(eq, restored)
    assert is_zero(compose(element.invert(), element).eps4)


def test_gauge_rejects_a_wrong_integral():
    with pytest.raises(ContractViolation):
        Gauge(eps4=1, Phi=x**2).apply_to_equation(BURGERS)


def test_gauge_with_abstract_integral():
    eq = DCEquation.abstract(g=1)
    image = Gauge(eps4=1).apply_to_equation(eq)
    assert same_equation(eq, image)


# ==================== EXTENDED AND COMPOSITE ELEMENTS ====================

def test_extended_element_matches_its_decomposition():
    eq = DCEquation(f=1, g=1, h=1, A=u, B=0)
    element = ExtendedG1(d8=1, Phi=x, Psi=sp.exp(x), Xinv=sp.log(x))
    image = element.apply_to_equation(eq)
    gauge, usual = element.decompose(eq)
    assert _same_coefficients(image, usual.apply_to_equation(gauge.apply_to_equation(eq)))
    assert image.g == 1
    assert is_zero(image.f - 1 / x**2)


def test_extended_element_needs_unit_g():
    with pytest.raises(PreconditionError):
        ExtendedG1(d1=2).apply_to_equation(DCEquation(f=1, g=x, h=0, A=1, B=0))


def test_composite_and_conjugate():
    usual = UsualG(d1=2, X=2 * x, Xinv=x / 2)
    gauge = Gauge(eps4=1)
    chain = conjugate(gauge, usual)
    assert isinstance(chain, Composite)
    assert len(chain.elements) == 3
    eq = DCEquation(f=1, g=1, h=1, A=1, B=u)
    assert same_equation(eq, chain.apply_to_equation(eq))
    mixed = compose(usual, gauge)
    assert isinstance(mixed, Composite)
    assert mixed.elements == (gauge, usual)


def test_element_files_are_validated():
    with pytest.raises(InvalidElementError):
        element_from_text("d1 = 2\n")
    with pytest.raises(InvalidElementError):
        element_from_text("kind: rotation\n")
    with pytest.raises(InvalidElementError):
        element_from_text("kind: gauge\nd1 = 2\n")
    assert isinstance(equation_from_text("g = 1"), DCEquation)


def test_g_normalizer_maps_to_unit_g():
    eq = DCEquation(f=1, g=2, h=1, A=1, B=u)
    image = g_normalizer(x / 2, 2 * x).apply_to_equation(eq)
    assert image.g == 1
    assert is_zero(image.f - 2)
    assert is_zero(image.B - u)


def test_f_normalizer_maps_to_unit_f():
    eq = DCEquation(f=sp.exp(x), g=1, h=0, A=1, B=0)
    image, element = f_normalizer(eq, sp.exp(x), sp.log(x))
    assert is_zero(image.f - 1)
    assert is_zero(image.g - x)
    assert element.kind == "factor"
    with pytest.raises(ContractViolation):
        f_normalizer(eq, x**2)
