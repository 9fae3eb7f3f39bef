"""
Text syntax for expressions and for the key-value blocks of equation,
conserved-vector and transformation files.

Grammar (see GRAMMAR.md for the EBNF):

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := ('-' | '+') unary | power
    power   := primary ('^' unary)?          right-associative
    primary := NUMBER | '(' expr ')' | JET | 'Int' '[' integrand ']' '(' expr ')'
             | NAME | NAME '(' args ')' | NAME "'"+ '(' expr ')'

Parsing is a hand-written tokenizer plus recursive descent; printing is a
sympy StrPrinter subclass emitting the same syntax.
"""

import logging
import re
from collections import namedtuple
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

import sympy as sp
from sympy.core.function import AppliedUndef
from sympy.printing.str import StrPrinter

from app.expr_core import (
    CONSTANT_NAMES,
    FUNCTION_SIGNATURES,
    U_T,
    Antideriv,
    Assumption,
    DCEError,
    jet,
    signature,
    t,
    x,
    y,
)

logger = logging.getLogger(__name__)


class ParseError(DCEError):
    def __init__(self, message: str, line: int, column: int, expected: Iterable[str] = ()):
        self.line = line
        self.column = column
        self.expected = sorted(set(expected))
        hint = f" (expected one of: {', '.join(self.expected)})" if self.expected else ""
        super().__init__(f"line {line}, column {column}: {message}{hint}")


Token = namedtuple("Token", "kind text line col")

_TOKEN_RE = re.compile(
    r"(?P<ws>[ \t]+)"
    r"|(?P<number>\d+(?:\.\d+)?)"
    r"|(?P<jet>u_(?:x+|y+|t)(?![A-Za-z0-9_])|u(?![A-Za-z0-9_']))"
    r"|(?P<name>[A-Za-z][A-Za-z0-9]*(?:_[a-z]+)?)"
    r"|(?P<arrow>->)"
    r"|(?P<op>[-+*/^(),\[\]'])"
)

ELEMENTARY = {
    "exp": sp.exp,
    "ln": sp.log,
    "log": sp.log,
    "abs": sp.Abs,
    "sin": sp.sin,
    "cos": sp.cos,
    "atan": sp.atan,
    "sqrt": sp.sqrt,
}

NAMED_NUMBERS = {"E": sp.E, "pi": sp.pi}

BASE = {"t": t, "x": x, "y": y}

_EXPR_START = frozenset({"NUMBER", "NAME", "u", "(", "-", "+", "Int"})


def tokenize(text: str, line: int = 1, col: int = 1) -> List[Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if not match:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col + pos)
        kind = match.lastgroup
        if kind != "ws":
            tokens.append(Token(kind, match.group(), line, col + pos))
        pos = match.end()
    tokens.append(Token("eof", "", line, col + len(text)))
    return tokens


@dataclass
class Scope:
    """Identifiers known to the parser beyond the built-in vocabulary"""
    constants: FrozenSet[str] = frozenset(CONSTANT_NAMES)
    functions: FrozenSet[str] = frozenset(FUNCTION_SIGNATURES)
    bound: Tuple[str, ...] = ()

    def declare(self, constants: Iterable[str] = (), functions: Iterable[str] = ()) -> "Scope":
        return Scope(self.constants | set(constants), self.functions | set(functions), self.bound)


class _Parser:
    def __init__(self, tokens: List[Token], scope: Scope):
        self.tokens = tokens
        self.index = 0
        self.scope = scope

    @property
    def current(self) -> Token:
        return self.tokens[self.index]

    def advance(self) -> Token:
        token = self.tokens[self.index]
        self.index += 1
        return token

    def fail(self, message: str, expected: Iterable[str] = ()):
        token = self.current
        raise ParseError(message, token.line, token.col, expected)

    def expect(self, text: str) -> Token:
        if self.current.text != text:
            found = self.current.text or "end of input"
            self.fail(f"found {found!r}", {text})
        return self.advance()

    # ----- grammar -----

    def parse(self) -> sp.Expr:
        result = self.expr()
        if self.current.kind != "eof":
            self.fail(f"unexpected {self.current.text!r}", {"+", "-", "*", "/", "^", "end of input"})
        return result

    def expr(self) -> sp.Expr:
        result = self.term()
        while self.current.text in ("+", "-"):
            op = self.advance().text
            rhs = self.term()
            result = result + rhs if op == "+" else result - rhs
        return result

    def term(self) -> sp.Expr:
        result = self.unary()
        while self.current.text in ("*", "/"):
            op = self.advance().text
            rhs = self.unary()
            result = result * rhs if op == "*" else result / rhs
        return result

    def unary(self) -> sp.Expr:
        if self.current.text == "-":
            self.advance()
            return -self.unary()
        if self.current.text == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> sp.Expr:
        base = self.primary()
        if self.current.text == "^":
            self.advance()
            return sp.Pow(base, self.unary())
        return base

    def primary(self) -> sp.Expr:
        token = self.current
        if token.kind == "number":
            self.advance()
            return sp.Rational(token.text)
        if token.kind == "jet":
            self.advance()
            if token.text == "u_t":
                return U_T
            if token.text == "u":
                return jet(0)
            space = x if token.text[2] == "x" else y
            return jet(len(token.text) - 2, space)
        if token.text == "(":
            self.advance()
            inner = self.expr()
            self.expect(")")
            return inner
        if token.kind == "name":
            return self.name()
        if token.kind == "eof":
            self.fail("unexpected end of input", _EXPR_START)
        self.fail(f"unexpected {token.text!r}", _EXPR_START)

    def args(self) -> List[sp.Expr]:
        self.expect("(")
        items = [self.expr()]
        while self.current.text == ",":
            self.advance()
            items.append(self.expr())
        self.expect(")")
        return items

    def name(self) -> sp.Expr:
        token = self.advance()
        text = token.text
        if text == "Int":
            return self.antiderivative()
        if text in self.scope.bound:
            return sp.Symbol(text)
        if text in ELEMENTARY:
            (arg,) = self._single_arg(text)
            return ELEMENTARY[text](arg)
        if text in NAMED_NUMBERS:
            return NAMED_NUMBERS[text]
        if text in BASE:
            return BASE[text]
        if text in self.scope.constants:
            return sp.Symbol(text)
        base, _, suffix = text.partition("_")
        if base in self.scope.functions:
            return self.function(token, base, suffix)
        raise ParseError(f"unknown identifier {text!r} (declare it with 'symbols:')",
                         token.line, token.col)

    def _single_arg(self, name: str) -> List[sp.Expr]:
        items = self.args()
        if len(items) != 1:
            self.fail(f"{name} takes one argument")
        return items

    def function(self, token: Token, name: str, suffix: str) -> sp.Expr:
        func = sp.Function(name)
        primes = 0
        while self.current.text == "'":
            self.advance()
            primes += 1
        if primes:
            if suffix:
                self.fail("primes and subscripts cannot be mixed")
            (arg,) = self._single_arg(name)
            s = sp.Symbol("s")
            return sp.diff(func(s), s, primes).subs(s, arg)
        args = self.args() if self.current.text == "(" else list(signature(name))
        applied = func(*args)
        if not suffix:
            return applied
        variables = []
        names = [a.name for a in args if isinstance(a, sp.Symbol)]
        for letter in suffix:
            if letter not in names:
                raise ParseError(f"{name} has no argument {letter!r}", token.line, token.col, names)
            variables.append(sp.Symbol(letter))
        return sp.Derivative(applied, *variables)

    def antiderivative(self) -> sp.Expr:
        self.expect("[")
        if self.current.kind == "name" and self.tokens[self.index + 1].text == "]":
            name = self.advance().text
            if name not in self.scope.functions:
                self.fail(f"unknown function {name!r}")
            self.expect("]")
            (arg,) = self._single_arg("Int")
            s = sp.Symbol("s0")
            return Antideriv(sp.Lambda(s, sp.Function(name)(s)), arg)
        bound = self.current
        if bound.kind != "name" or not re.fullmatch(r"s\d+", bound.text):
            self.fail("expected a function name or a bound variable s0, s1, ...", {"NAME", "s0"})
        self.advance()
        self.expect("->")
        outer = self.scope
        self.scope = Scope(outer.constants, outer.functions, outer.bound + (bound.text,))
        body = self.expr()
        self.scope = outer
        self.expect("]")
        (arg,) = self._single_arg("Int")
        return Antideriv(sp.Lambda(sp.Symbol(bound.text), body), arg)


def parse_expr(text: str, scope: Optional[Scope] = None, line: int = 1, col: int = 1) -> sp.Expr:
    """Parse one expression; errors carry line/column and the expected-token set"""
    tokens = tokenize(text, line, col)
    return _Parser(tokens, scope or Scope()).parse()


# ==================== PRINTING ====================

class ExprPrinter(StrPrinter):
    """StrPrinter emitting the engine's own syntax (^, ln, Int[...], f_x(x), A'(.))"""

    def _print_Pow(self, expr, rational=False):
        return super()._print_Pow(expr, rational).replace("**", "^")

    def _print_log(self, expr):
        return f"ln({self._print(expr.args[0])})"

    def _print_Abs(self, expr):
        return f"abs({self._print(expr.args[0])})"

    def _print_Exp1(self, expr):
        return "E"

    def _print_Antideriv(self, expr):
        arg = self._print(expr.args[1])
        name = expr.integrand_name
        if name is not None:
            return f"Int[{name}]({arg})"
        lam = expr.args[0]
        return f"Int[{self._print(lam.variables[0])} -> {self._print(lam.expr)}]({arg})"

    def _print_Derivative(self, expr):
        inner = expr.expr
        if isinstance(inner, AppliedUndef) and all(isinstance(a, sp.Symbol) for a in inner.args):
            suffix = "".join(v.name * count for v, count in expr.variable_count)
            args = ", ".join(self._print(a) for a in inner.args)
            return f"{inner.func.__name__}_{suffix}({args})"
        return super()._print_Derivative(expr)

    def _print_Subs(self, expr):
        derivative, (var,), (point,) = expr.args
        if isinstance(derivative, sp.Derivative) and isinstance(derivative.expr, AppliedUndef):
            order = sum(count for _, count in derivative.variable_count)
            return f"{derivative.expr.func.__name__}{chr(39) * order}({self._print(point)})"
        return super()._print_Subs(expr)


_printer = ExprPrinter({"order": None})


def format_expr(e: sp.Expr) -> str:
    """Deterministic text that parses back to the same expression"""
    return _printer.doprint(sp.sympify(e))


# ==================== KEY-VALUE BLOCKS ====================

@dataclass
class Block:
    """A parsed file: `key = expr` entries plus `directive: text` lines"""
    values: Dict[str, sp.Expr] = field(default_factory=dict)
    directives: Dict[str, List[Tuple[str, int]]] = field(default_factory=dict)
    scope: Scope = field(default_factory=Scope)

    def directive(self, name: str) -> List[str]:
        return [text for text, _ in self.directives.get(name, [])]


_ASSUME_RE = re.compile(r"^\s*([txy])\s*([<>])\s*(-?\d+(?:\.\d+)?)\s*$")


def parse_assumption(text: str, line: int = 1) -> Assumption:
    """'x > 1' style sign assumption; several may be joined with ','"""
    lower = upper = None
    var = None
    for part in text.split(","):
        match = _ASSUME_RE.match(part)
        if not match:
            raise ParseError(f"cannot read assumption {part.strip()!r}", line, 1, {"x > 1", "x < 2"})
        name, op, value = match.groups()
        if var is not None and name != var:
            raise ParseError("one variable per assumption line", line, 1)
        var = name
        if op == ">":
            lower = float(value)
        else:
            upper = float(value)
    return Assumption(var, lower, upper)


def parse_block(text: str, scope: Optional[Scope] = None) -> Block:
    """
    Read a key-value block. `#` starts a comment. `symbols:` and `functions:`
    lines extend the vocabulary for all following lines.
    """
    block = Block(scope=scope or Scope())
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        head = re.match(r"^\s*([A-Za-z][A-Za-z0-9_]*)\s*(=|:)", line)
        if not head:
            raise ParseError("expected 'name = expression' or 'directive: value'", number, 1, {"NAME"})
        key, sep = head.group(1), head.group(2)
        body = line[head.end():]
        col = head.end() + 1
        if sep == ":":
            if key == "symbols":
                block.scope = block.scope.declare(constants=_names(body))
            elif key == "functions":
                block.scope = block.scope.declare(functions=_names(body))
            block.directives.setdefault(key, []).append((body.strip(), number))
            continue
        if key in block.values:
            raise ParseError(f"duplicate key {key!r}", number, 1)
        block.values[key] = parse_expr(body, block.scope, line=number, col=col)
    return block


def _names(text: str) -> List[str]:
    return [n for n in re.split(r"[\s,]+", text.strip()) if n]
