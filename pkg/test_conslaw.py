"""
Tests for conserved vectors: on-solution verification, trivial parts,
equivalence witnesses and the .cv file format
"""

import os
import sys
from dotenv import load_dotenv

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
load_dotenv()

import pytest
import sympy as sp

from app.conslaw import (
    REFUTED, VERIFIED, ConservedVector, add_trivial_part, cv_from_text, cv_to_text, is_equivalent, pull_back,
    rule_from_text, span_witness, verify
)
from app.equations import DCEquation, equation_from_text
from app.expr_core import (
    MalformedEquationError, ShapeError, U_T, antideriv, fn, is_zero, t, u, u_x, u_xx, x
)

FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures")

BURGERS = DCEquation(f=1, g=1, h=1, A=1, B=u)
HEAT = DCEquation(f=1, g=1, h=0, A=1, B=0)


def _fixture(name: str) -> str:
    with open(os.path.join(FIXTURES, name)) as handle:
        return handle.read()


def test_mass_of_burgers_is_conserved():
    eq = equation_from_text(_fixture("burgers.eq"))
    report = verify(eq, cv_from_text(_fixture("mass.cv")))
    assert report.verified
    assert report.verdict == VERIFIED == "verified"
    assert report.residual == 0


def test_missing_convective_flux_is_refuted():
    report = verify(BURGERS, cv_from_text(_fixture("wrong.cv")))
    assert not report.verified
    assert report.verdict == REFUTED == "refuted"
    assert is_zero(report.residual - u * u_x)


def test_energy_of_burgers_is_refuted():
    assert not verify(BURGERS, cv_from_text(_fixture("energy.cv"))).verified


def test_zero_vector_is_always_conserved():
    assert verify(DCEquation.abstract(), ConservedVector(F=0, G=0)).verified


def test_constant_h_vector_with_abstract_coefficients():
    eq = DCEquation.abstract(g=1, h=1)
    cv = ConservedVector(F=fn("f") * u, G=-fn("A") * u_x - antideriv("B", u))
    assert verify(eq, cv).verified


def test_inverse_linear_h_vector():
    eq = DCEquation.abstract(g=1, h=1 / x)
    cv = ConservedVector(F=x * fn("f") * u, G=-x * fn("A") * u_x + antideriv("A", u) - antideriv("B", u))
    assert verify(eq, cv).verified


def test_first_moment_without_convection():
    eq = equation_from_text(_fixture("no_convection.eq"))
    assert verify(eq, cv_from_text(_fixture("abstract_cv.cv"))).verified
    assert verify(equation_from_text(_fixture("power_law.eq")), cv_from_text(_fixture("moment.cv"))).verified


def test_constrained_heat_vector():
    heat = equation_from_text(_fixture("heat.eq"))
    cv = cv_from_text(_fixture("heat_alpha.cv"))
    assert len(cv.rules) == 1
    assert verify(heat, cv).verified
    unconstrained = ConservedVector(F=cv.F, G=cv.G)
    assert not verify(heat, unconstrained).verified


def test_linear_combinations_stay_conserved():
    eq = DCEquation.abstract(g=1, h=1, B=0)
    first = ConservedVector(F=fn("f") * u, G=-fn("A") * u_x)
    second = ConservedVector(F=x * fn("f") * u, G=-x * fn("A") * u_x + antideriv("A", u))
    assert verify(eq, 3 * first + second * sp.Rational(1, 2)).verified


def test_shape_is_enforced():
    with pytest.raises(ShapeError):
        ConservedVector(F=u_x, G=0)
    with pytest.raises(ShapeError):
        ConservedVector(F=u, G=u_xx)
    with pytest.raises(ShapeError):
        ConservedVector(F=u, G=U_T)


def test_space_mismatch_is_rejected():
    with pytest.raises(MalformedEquationError):
        verify(HEAT, ConservedVector(F=u, G=0, space="y"))


def test_trivial_part_keeps_the_verdict():
    mass = ConservedVector(F=u, G=-u_x)
    shifted = add_trivial_part(mass, t)
    assert is_zero(shifted.G - (-u_x - 1))
    assert verify(HEAT, shifted).verified
    assert add_trivial_part(mass, 0) == mass
    wrong = ConservedVector(F=u, G=0)
    assert not verify(HEAT, add_trivial_part(wrong, x * t)).verified
    with pytest.raises(ShapeError):
        add_trivial_part(mass, x * u)


def test_equivalence_witness():
    mass = ConservedVector(F=u, G=-u_x)
    assert is_equivalent(mass, mass, HEAT) == 0
    assert is_equivalent(mass, ConservedVector(F=u, G=-u_x - 1), HEAT) == t
    assert is_equivalent(mass, ConservedVector(F=x * u, G=-x * u_x + u), HEAT) is None


def test_span_witness_finds_coefficients():
    mass = ConservedVector(F=u, G=-u_x)
    moment = ConservedVector(F=x * u, G=-x * u_x + u)
    target = ConservedVector(F=2 * u + 3 * x * u, G=-2 * u_x - 3 * x * u_x + 3 * u - 1)
    ks, H = span_witness(target, [mass, moment], HEAT)
    assert ks == [2, 3]
    assert H == t


def test_cv_text_round_trip():
    cv = cv_from_text(_fixture("heat_alpha.cv"))
    again = cv_from_text(cv_to_text(cv))
    assert is_zero(again.F - cv.F)
    assert is_zero(again.G - cv.G)
    assert [str(r) for r in again.rules] == [str(r) for r in cv.rules]


def test_rule_from_text():
    rule = rule_from_text("sigma0_t = a00*sigma0 + a10*sigma1")
    assert rule.target == "sigma0"
    assert rule.wrt == t
    algebraic = rule_from_text("f = -h/x")
    assert algebraic.wrt is None


def test_cv_file_needs_both_components():
    with pytest.raises(MalformedEquationError):
        cv_from_text("F = u\n")


def test_pull_back_undoes_the_push_forward():
    from app.transforms import PointTransformation, UsualG, push_conserved_vector

    mass = ConservedVector(F=u, G=-u_x - u**2 / 2)
    shift = PointTransformation(T=t, X=x + t, Tinv=t, Xinv=x - t)
    image = push_conserved_vector(shift, mass)
    assert is_zero(image.G - (u - u_x - u**2 / 2))
    back = pull_back(shift, image)
    assert is_zero(back.F - mass.F)
    assert is_zero(back.G - mass.G)

    slow = UsualG(d1=2)
    back = pull_back(slow, push_conserved_vector(slow.point_transformation(), mass))
    assert is_zero(back.F - mass.F)
    assert is_zero(back.G - mass.G)
