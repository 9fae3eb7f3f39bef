"""
Tests for the expression language: tokens, precedence, functions,
antiderivatives, printing and key-value blocks
"""

import os
import random
import sys
from dotenv import load_dotenv

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
load_dotenv()

import pytest
import sympy as sp

from app.expr_core import Antideriv, U_T, antideriv, fn, is_zero, t, u, u_x, u_xx, x
from app.parser import ParseError, Scope, format_expr, parse_assumption, parse_block, parse_expr


def test_precedence_and_power():
    assert parse_expr("1 + 2*x^2") == 1 + 2 * x**2
    assert parse_expr("-x^2") == -(x**2)
    assert parse_expr("2^-1") == sp.Rational(1, 2)
    assert parse_expr("(x+1)/(x-1)") == (x + 1) / (x - 1)


def test_numbers_are_exact():
    assert parse_expr("0.5") == sp.Rational(1, 2)
    assert parse_expr("1/3") == sp.Rational(1, 3)


def test_jets_and_elementary_functions():
    assert parse_expr("u*u_xx + u_x") == u * u_xx + u_x
    assert parse_expr("u_t") == U_T
    assert parse_expr("exp(x) + ln(x)") == sp.exp(x) + sp.log(x)
    assert parse_expr("E^x") == sp.exp(x)
    assert parse_expr("sin(pi*x)") == sp.sin(sp.pi * x)


def test_abstract_functions_default_to_their_arguments():
    assert parse_expr("f") == fn("f")
    assert parse_expr("A(u)") == fn("A")
    assert parse_expr("alpha") == fn("alpha")
    assert parse_expr("h(2*x)") == sp.Function("h")(2 * x)


def test_subscripts_and_primes():
    assert parse_expr("alpha_xx") == sp.Derivative(fn("alpha"), x, 2)
    assert parse_expr("alpha_t") == sp.Derivative(fn("alpha"), t)
    assert is_zero(parse_expr("A'(u)") - sp.diff(fn("A"), u))
    with pytest.raises(ParseError):
        parse_expr("A_x")


def test_antiderivatives():
    node = parse_expr("Int[A](u)")
    assert isinstance(node, Antideriv)
    assert node == antideriv("A", u)
    bound = parse_expr("Int[s0 -> s0^2](u)")
    assert sp.diff(bound, u) == u**2


def test_unknown_identifier_reports_position():
    with pytest.raises(ParseError) as info:
        parse_expr("x + zeta")
    assert info.value.line == 1
    assert info.value.column == 5


def test_declared_constants_parse():
    assert parse_expr("zeta*x", Scope().declare(constants=["zeta"])) == sp.Symbol("zeta") * x


def test_incomplete_expression_lists_expected_tokens():
    with pytest.raises(ParseError) as info:
        parse_expr("x +")
    assert "NAME" in info.value.expected
    with pytest.raises(ParseError):
        parse_expr("x $ 1")


def test_format_round_trip():
    for text in ["x^2*u_x + Int[A](u)", "exp(-x)*f(x)", "-u*u_x + ln(x)", "A_u(u)*u_x^2"]:
        expr = parse_expr(text)
        assert is_zero(parse_expr(format_expr(expr)) - expr), text


def test_format_uses_engine_syntax():
    assert format_expr(x**2) == "x^2"
    assert format_expr(sp.log(x)) == "ln(x)"
    assert format_expr(antideriv("B", u)) == "Int[B](u)"


def test_parse_block_with_directives():
    block = parse_block(
        "# diffusion\n"
        "symbols: k\n"
        "f = k*x   # weighted\n"
        "A = u\n"
        "assume: x > 0\n"
    )
    assert block.values["f"] == sp.Symbol("k") * x
    assert block.values["A"] == u
    assert block.directive("assume") == ["x > 0"]


def test_parse_block_errors_carry_line_numbers():
    with pytest.raises(ParseError) as info:
        parse_block("f = 1\nf = 2\n")
    assert info.value.line == 2
    with pytest.raises(ParseError) as info:
        parse_block("f = 1\n= 3\n")
    assert info.value.line == 2


def test_parse_assumption():
    assumption = parse_assumption("x > 1")
    assert (assumption.var, assumption.lower, assumption.upper) == ("x", 1.0, None)
    bounded = parse_assumption("x > 0, x < 2")
    assert (bounded.lower, bounded.upper) == (0.0, 2.0)
    with pytest.raises(ParseError):
        parse_assumption("x >> 1")


LEAVES = [x, t, u, u_x, u_xx, sp.Integer(2), sp.Integer(-3), sp.Rational(1, 3), sp.pi, fn("f"), fn("A"),
          antideriv("A", u)]


def _random_tree(rng: random.Random, depth: int) -> sp.Expr:
    if depth == 0 or rng.random() < 0.25:
        return rng.choice(LEAVES)
    a = _random_tree(rng, depth - 1)
    op = rng.choice(["+", "-", "*", "/", "^2", "^3", "inv", "exp", "sin", "cos", "ln", "sqrt"])
    if op in ("+", "-", "*", "/"):
        b = _random_tree(rng, depth - 1)
        return {"+": a + b, "-": a - b, "*": a * b, "/": a / (1 + b**2)}[op]
    if op in ("^2", "^3"):
        return a ** int(op[1])
    if op == "inv":
        return 1 / (a**2 + 1)
    if op in ("ln", "sqrt"):
        return {"ln": sp.log, "sqrt": sp.sqrt}[op](a**2 + 1)
    return {"exp": sp.exp, "sin": sp.sin, "cos": sp.cos}[op](a)


def test_format_round_trip_on_random_trees():
    rng = random.Random(20240501)
    for _ in range(1000):
        expr = _random_tree(rng, 3)
        text = format_expr(expr)
        parsed = parse_expr(text)
        assert parsed == expr or is_zero(parsed - expr), text
