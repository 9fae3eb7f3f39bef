"""
Tests for the classification lists: every template verifies, instantiation
checks its constraints, and the classifier finds each case again
"""

import os
import sys
from dotenv import load_dotenv

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
load_dotenv()

import pytest
import sympy as sp

from app.catalog import (
    CASES, NOTE_REDUCTIONS, aux_y, case_to_dict, classify, detect_affine, detect_proportional,
    export_catalog, get_case, instantiate, int_of, list_cases, note_reductions
)
from app.conslaw import span_witness, verify
from app.equations import DCEquation, evolution_form
from app.expr_core import (
    Assumption, ConstraintViolation, PreconditionError, antideriv, fn, is_zero, u, x, y
)
from app.transforms import apply_point_to_evolution, push_conserved_vector


def _ids(eq: DCEquation):
    return classify(eq).case_ids


# ==================== LISTS ====================

def test_list_sizes():
    assert len(list_cases(3)) == 8
    assert len(list_cases(4)) == 12
    assert len(CASES) == 20
    assert [c.id for c in list_cases(3)] == [f"T3.{k}" for k in range(1, 9)]


def test_unknown_lookups():
    with pytest.raises(PreconditionError):
        list_cases(5)
    with pytest.raises(PreconditionError):
        get_case("T9.9")


def test_every_template_verifies():
    for case in CASES:
        eq, vectors = case.build()
        assert vectors, case.id
        for k, cv in enumerate(vectors, start=1):
            report = verify(eq, cv)
            assert report.verified, f"{case.id} vector {k}: {report.residual}"


def test_catalog_equations_have_unit_g():
    for case in CASES:
        for eq, _ in (case.build(), case.x_form()):
            assert eq.g == 1, case.id


def test_implicit_coordinate_cases_are_stored_in_y():
    stored = [case.id for case in CASES if case.coordinate == "y"]
    assert stored == ["T3.3", "T3.4", "T3.5", "T3.6"]
    for case_id in stored:
        eq, vectors = get_case(case_id).build(eps=2)
        assert eq.space == "y"
        assert eq.h == fn("h", space=y)
        assert all(cv.space == "y" for cv in vectors)
    rules = get_case("T3.4").templates()[0].rules
    assert [(r.target, r.wrt) for r in rules][0] == ("h", y)
    assert get_case("T3.4").constraints[1:3] == ("f = -h/Z", "h_y = -h*(Z_y + a00 + a11)/(2*Z)")


def test_x_relation_carries_the_y_form_to_the_listed_b():
    A = fn("A")
    for case_id, offset in (("T3.3", 0), ("T3.5", 1), ("T3.6", 1)):
        case = get_case(case_id)
        element = case.x_relation(eps=2)
        assert element.d8 == 2
        image = element.apply_to_equation(case.equation())
        assert is_zero(image.B - (2 * A + offset)), case_id
        assert image.g == 1
        assert image.chart is not None
    assert is_zero(get_case("T3.3").x_relation(eps=0).apply_to_equation(get_case("T3.3").equation()).B)
    with pytest.raises(PreconditionError):
        get_case("T3.1").x_relation()


def test_x_forms_verify():
    for case_id in ("T3.3", "T3.4", "T3.5", "T3.6"):
        for e in (0, 2):
            eq, vectors = get_case(case_id).x_form(eps=e)
            assert eq.space == "x"
            assert is_zero(eq.B - e * fn("A") - (0 if case_id == "T3.3" else 1))
            for cv in vectors:
                assert verify(eq, cv).verified, (case_id, e)


def test_templates_for_specific_parameters():
    for case_id, parameters in [
        ("T3.3", {"eps": 0}), ("T3.3", {"eps": 2}), ("T3.5", {"eps": 0}), ("T3.6", {"eps": 0}),
        ("T4.2d", {"mu": 2}), ("T4.2d", {"mu": -1}), ("T4.3", {"mu": 1}), ("T4.4", {"mu": 1}),
        ("T4.5", {"mu": 0}),
    ]:
        eq, vectors = get_case(case_id).build(**parameters)
        for cv in vectors:
            assert verify(eq, cv).verified, (case_id, parameters)


def test_build_rejects_bad_parameters():
    with pytest.raises(ConstraintViolation):
        get_case("T4.3").build(mu=2)
    with pytest.raises(ConstraintViolation):
        get_case("T3.1").build(eps=1)


def test_render_and_export():
    text = get_case("T3.8").render()
    assert text.startswith("T3.8: A = 1; B = 0")
    assert "with alpha_t" in text
    data = export_catalog()
    assert data["schema"] == 1
    assert len(data["cases"]) == 20
    assert data["reductions"] == list(NOTE_REDUCTIONS)
    row = case_to_dict(get_case("T3.8"))
    assert row["vectors"][0]["rules"][0]["target"] == "alpha"
    assert row["vectors"][0]["rules"][0]["wrt"] == "t"
    assert case_to_dict(get_case("T4.4"))["assumptions"] == ["x > 1"]


# ==================== HELPERS ====================

def test_int_of():
    assert int_of(u) == u**2 / 2
    assert int_of(fn("A")) == antideriv("A", u)
    assert int_of(fn("h"), x) == antideriv("h", x)
    assert aux_y(0) == (x, 1)
    y_, E = aux_y(2, sp.Integer(1))
    assert is_zero(sp.diff(y_, x) - sp.exp(-2 * x))
    assert is_zero(E - sp.exp(2 * x))


def test_detectors():
    assert detect_proportional(2 * u, u) == 2
    assert detect_proportional(0, 1 + u) == 0
    assert detect_proportional(u**2, u) is None
    with pytest.raises(PreconditionError):
        detect_proportional(u, 0)
    assert detect_affine(2 * u + 3, u) == (2, 3)
    assert detect_affine(2 * u, u) is None
    assert detect_affine(u**3, u) is None
    with pytest.raises(PreconditionError):
        detect_affine(1, 1)


# ==================== INSTANTIATION ====================

def test_instantiate_burgers():
    eq, vectors = instantiate(get_case("T3.1"), {"f": 1, "A": 1, "B": u})
    assert eq.is_concrete()
    assert is_zero(vectors[0].G - (-sp.Symbol("u_x") - u**2 / 2))


def test_instantiate_parametric_cases():
    eq, vectors = instantiate(get_case("T3.3"), {"eps": 2, "h": 1, "A": 1, "f": 1}, x_form=True)
    assert is_zero(eq.B - 2)
    assert len(vectors) == 2
    eq, vectors = instantiate(get_case("T3.5"), {"h": y**2, "A": 1})
    assert eq.space == "y"
    assert is_zero(eq.f - 2 * y)
    assert len(vectors) == 1
    eq, vectors = instantiate(get_case("T3.4"), {"h": 1 / y, "A": 1, "a00": 1, "a01": 0, "a10": 0, "a11": 0})
    assert is_zero(eq.f + y**-2)
    assert [r.target for r in vectors[0].rules] == ["sigma0", "sigma1"]
    with pytest.raises(ConstraintViolation):
        instantiate(get_case("T3.4"), {"h": y, "A": 1, "a00": 1, "a01": 0, "a10": 0, "a11": 0})
    eq, vectors = instantiate(get_case("T4.2d"), {"mu": 2, "A": 1 + u})
    assert is_zero(eq.f - x)
    assert all(verify(eq, cv).verified for cv in vectors)


def test_instantiate_with_trigonometric_h():
    eq, vectors = instantiate(get_case("T3.7"), {"h": 1 / sp.cos(x), "B": u})
    assert is_zero(eq.f - 1)
    assert is_zero(vectors[0].F + sp.exp(sp.Symbol("t")) * sp.cos(x) * u)


def test_instantiate_keeps_unbound_rules():
    _, vectors = instantiate(get_case("T3.8"), {"f": 1})
    assert [r.target for r in vectors[0].rules] == ["alpha"]


def test_instantiate_rejects_inconsistent_bindings():
    with pytest.raises(ConstraintViolation):
        instantiate(get_case("T3.1"), {"h": x})
    with pytest.raises(ConstraintViolation):
        instantiate(get_case("T3.7"), {"h": 1 / sp.cos(x), "B": 1})
    with pytest.raises(ConstraintViolation):
        instantiate(get_case("T4.2b"), {"f": 2})
    with pytest.raises(ConstraintViolation):
        instantiate(get_case("T4.3"), {"mu": 2})


# ==================== CLASSIFICATION ====================

def test_classify_burgers():
    result = classify(DCEquation(f=1, g=1, h=1, A=1, B=u))
    assert result.case_ids == ["T3.1", "T4.1"]
    assert "T3.1" in result.render()


def test_classify_preconditions():
    with pytest.raises(PreconditionError):
        classify(DCEquation(f=1, g=x, h=1, A=1, B=u))


def test_classify_without_match():
    result = classify(DCEquation(f=1, g=1, h=x, A=1 + u, B=u**3))
    assert result.case_ids == []
    assert result.render() == "no catalog case matches"


def test_classify_finds_each_case_again():
    expectations = [
        (dict(f=1, h=1, A=u, B=2 * u), {"T3.3"}),
        (dict(f=-1 / x**2, h=1 / x, A=u, B=1), {"T3.2", "T3.4"}),
        (dict(f=1 + x**2, h=x, A=u, B=u + 1), {"T3.5"}),
        (dict(f=3 * x, h=x**2, A=1, B=1), {"T3.6", "T4.7"}),
        (dict(f=1, h=1 / sp.cos(x), A=1, B=u), {"T3.7", "T4.8"}),
        (dict(f=1, h=1, A=1 + u, B=1), {"T4.2b"}),
        (dict(f=sp.exp(x), h=sp.exp(x), A=1 + u, B=1), {"T4.2c"}),
        (dict(f=x, h=x**2, A=1 + u, B=1), {"T4.2d"}),
        (dict(f=x**-3, h=1 / x, A=1 + u, B=1), {"T4.3"}),
        (dict(f=sp.exp(1 / x) * x**-3, h=sp.exp(1 / x) / x, A=1 + u, B=1), {"T4.3"}),
        (dict(f=2 * x, h=x**2, A=1 + u, B=1), {"T4.6"}),
        (dict(f=2, h=x, A=1 + u, B=1), {"T4.7"}),
        (dict(f=1 / (2 * x**2 * sp.log(x)), h=1 / (2 * x), A=1 + u, B=3 + 2 * u), {"T3.6"}),
        (dict(f=-1 / (2 * x**2 * sp.log(x)), h=1 / (2 * x), A=1 + u, B=3 + 2 * u), {"T3.4", "T3.6"}),
    ]
    for coefficients, expected in expectations:
        ids = set(_ids(DCEquation(g=1, **coefficients)))
        assert expected <= ids, (coefficients, ids)


def test_instantiated_cases_are_classified_again():
    fixtures = [
        ("T3.1", {"f": 1, "A": 1, "B": u}, False),
        ("T3.2", {"f": -1 / x**2, "A": u, "B": 1}, False),
        ("T3.3", {"eps": 2, "h": 1, "A": u, "f": 1}, True),
        ("T3.5", {"eps": 1, "h": x, "A": u}, True),
        ("T3.6", {"eps": 0, "h": x**2, "A": 1}, True),
        ("T3.7", {"h": 1 / sp.cos(x), "B": u}, False),
        ("T4.2b", {"A": 1 + u}, False),
        ("T4.2c", {"A": 1 + u}, False),
        ("T4.2d", {"mu": 2, "A": 1 + u}, False),
        ("T4.3", {"mu": 0, "A": 1 + u}, False),
        ("T4.3", {"mu": 1, "A": 1 + u}, False),
        ("T4.5", {"mu": 1, "A": 1 + u}, False),
        ("T4.6", {"h": x**2, "A": 1 + u}, False),
        ("T4.7", {"h": x, "A": 1 + u}, False),
        ("T4.1", {"f": 1, "A": 1, "B": u}, False),
    ]
    for case_id, bindings, in_x in fixtures:
        eq, _ = instantiate(get_case(case_id), bindings, x_form=in_x)
        assert eq.is_concrete(), case_id
        assert case_id in _ids(eq), (case_id, eq)


def test_classify_implicit_coordinate_cases_with_nonzero_eps():
    eq = DCEquation(f=-1 / (2 * x**2 * sp.log(x)), g=1, h=1 / (2 * x), A=1 + u, B=3 + 2 * u)
    matches = {m.case_id: m for m in classify(eq).matches}
    quadratic = matches["T3.4"]
    assert quadratic.parameters["eps"] == 2
    assert quadratic.parameters["a11"] == -1
    assert quadratic.parameters["a01"] == 0
    assert matches["T3.6"].parameters["lam"] == -1
    for match in matches.values():
        for cv in match.vectors:
            assert verify(eq, cv).verified, match.case_id


def test_classify_profile_with_square_roots():
    f_p = (x - 1) ** sp.Rational(-1, 2) * (x + 1) ** sp.Rational(-5, 2)
    h_p = (x - 1) ** sp.Rational(1, 2) * (x + 1) ** sp.Rational(-3, 2)
    eq = DCEquation(f=f_p, g=1, h=h_p, A=1 + u, B=1, assumptions=(Assumption("x", lower=1.0),))
    assert "T4.4" in _ids(eq)
    f_q = sp.exp(sp.atan(x)) * (x**2 + 1) ** sp.Rational(-3, 2)
    h_q = sp.exp(sp.atan(x)) * (x**2 + 1) ** sp.Rational(-1, 2)
    assert "T4.5" in _ids(DCEquation(f=f_q, g=1, h=h_q, A=1 + u, B=1))


def test_classify_heat_like_equation_with_abstract_h():
    eq = DCEquation.abstract(f=x, g=1, A=1, B=0)
    ids = _ids(eq)
    assert {"T3.3", "T4.2a", "T3.8", "T4.9"} <= set(ids)
    match = next(m for m in classify(eq).matches if m.case_id == "T3.8")
    assert any(cv.rules for cv in match.vectors)


def test_matched_vectors_verify_on_the_input():
    eq = DCEquation(f=x, g=1, h=x**2, A=1 + u, B=1)
    for match in classify(eq).matches:
        for cv in match.vectors:
            assert verify(eq, cv).verified, match.case_id


# ==================== REDUCTIONS ====================

def test_note_reductions_map_onto_the_b_zero_case():
    reductions = note_reductions()
    assert len(reductions) == 4
    for reduction in reductions:
        source = get_case(reduction.source).equation(**reduction.parameters)
        target = DCEquation.abstract(f=reduction.target_f, g=1, B=0)
        image = apply_point_to_evolution(reduction.transformation, evolution_form(source))
        assert is_zero(image.rhs - evolution_form(target).rhs), reduction.source + " " + reduction.branch


def test_pushed_vectors_land_in_the_b_zero_span():
    for reduction in note_reductions()[:2]:
        source, vectors = get_case(reduction.source).build(**reduction.parameters)
        target, basis = get_case("T4.2a").build()
        target = target.replace_coefficients(f=reduction.target_f)
        basis = [cv.bind({"f": reduction.target_f}) for cv in basis]
        for cv in vectors:
            pushed = push_conserved_vector(reduction.transformation, cv)
            assert verify(target, pushed).verified
            assert span_witness(pushed, basis, target) is not None


def test_note_reductions_reject_the_special_branch():
    with pytest.raises(PreconditionError):
        note_reductions(-1)
