"""A small arithmetic language for rates and diffusion coefficients.

Grammar (BNF)::

    expr    ::= term (("+" | "-") term)*
    term    ::= unary (("*" | "/") unary)*
    unary   ::= "-" unary | primary
    primary ::= NUMBER | "pi" | "z" | "mu" "[" INT "]"
              | FUNC "(" expr ("," expr)* ")" | "(" expr ")"
    FUNC    ::= "exp" | "log" | "sin" | "cos" | "sqrt" | "min" | "max"

Binary operators are left associative. There are deliberately no
conditionals, so every expression is continuous where it is defined.

Trees are frozen dataclasses and compare structurally. Calling a tree
evaluates it with numpy broadcasting::

    >>> e = parse_expression("1 + mu[0]*exp(-z)")
    >>> float(e(np.array([0.5, 0.5]), 0.0))
    1.5
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import (
    ExpressionSyntaxError,
    IndexOutOfRange,
    ModelEvaluationError,
    ModelError,
    UnknownIdentifier,
)

MAX_SOURCE_BYTES = 64 * 1024
MAX_DEPTH = 64

_FUNCS = {"exp": 1, "log": 1, "sin": 1, "cos": 1, "sqrt": 1, "min": 2, "max": 2}


class Expr:
    """Base node. ``expr(mu, z)`` evaluates with broadcasting."""

    precedence = 4

    def __call__(self, mu, z):
        mu = np.asarray(mu, dtype=float)
        z = np.asarray(z, dtype=float)
        with np.errstate(all="ignore"):
            out = self._eval(mu, z)
        out = np.broadcast_to(out, np.broadcast_shapes(mu.shape[:-1], z.shape))
        if not np.all(np.isfinite(out)):
            raise ModelEvaluationError(f"non-finite value from {to_source(self)!r}")
        return out

    def _eval(self, mu, z):
        raise NotImplementedError

    def depth(self) -> int:
        return 1

    def max_mu_index(self) -> int:
        return -1

    def uses(self, kind) -> bool:
        return isinstance(self, kind)

    def __str__(self):
        return to_source(self)


@dataclass(frozen=True)
class Num(Expr):
    value: float

    def _eval(self, mu, z):
        return np.float64(self.value)


@dataclass(frozen=True)
class Pi(Expr):
    def _eval(self, mu, z):
        return np.float64(math.pi)


@dataclass(frozen=True)
class Z(Expr):
    def _eval(self, mu, z):
        return z


@dataclass(frozen=True)
class Mu(Expr):
    index: int

    def _eval(self, mu, z):
        if self.index >= mu.shape[-1]:
            raise IndexOutOfRange(f"mu[{self.index}] with q = {mu.shape[-1]}")
        return mu[..., self.index]

    def max_mu_index(self):
        return self.index


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr
    precedence = 3

    def _eval(self, mu, z):
        return -self.arg._eval(mu, z)

    def depth(self):
        return 1 + self.arg.depth()

    def max_mu_index(self):
        return self.arg.max_mu_index()

    def uses(self, kind):
        return isinstance(self, kind) or self.arg.uses(kind)


@dataclass(frozen=True)
class _Binary(Expr):
    left: Expr
    right: Expr
    symbol = "?"

    def depth(self):
        return 1 + max(self.left.depth(), self.right.depth())

    def max_mu_index(self):
        return max(self.left.max_mu_index(), self.right.max_mu_index())

    def uses(self, kind):
        return isinstance(self, kind) or self.left.uses(kind) or self.right.uses(kind)


class Add(_Binary):
    symbol, precedence = "+", 1

    def _eval(self, mu, z):
        return self.left._eval(mu, z) + self.right._eval(mu, z)


class Sub(_Binary):
    symbol, precedence = "-", 1

    def _eval(self, mu, z):
        return self.left._eval(mu, z) - self.right._eval(mu, z)


class Mul(_Binary):
    symbol, precedence = "*", 2

    def _eval(self, mu, z):
        return self.left._eval(mu, z) * self.right._eval(mu, z)


class Div(_Binary):
    symbol, precedence = "/", 2

    def _eval(self, mu, z):
        den = self.right._eval(mu, z)
        if np.any(den == 0):
            raise ModelEvaluationError(f"division by zero in {to_source(self)!r}")
        return self.left._eval(mu, z) / den


_BINARY = {"+": Add, "-": Sub, "*": Mul, "/": Div}


@dataclass(frozen=True)
class Call(Expr):
    func: str
    args: tuple

    def _eval(self, mu, z):
        vals = [a._eval(mu, z) for a in self.args]
        f = self.func
        if f == "log":
            if np.any(vals[0] <= 0):
                raise ModelEvaluationError(f"log of non-positive value in {to_source(self)!r}")
            return np.log(vals[0])
        if f == "sqrt":
            if np.any(vals[0] < 0):
                raise ModelEvaluationError(f"sqrt of negative value in {to_source(self)!r}")
            return np.sqrt(vals[0])
        if f == "min":
            return np.minimum(vals[0], vals[1])
        if f == "max":
            return np.maximum(vals[0], vals[1])
        return getattr(np, f)(vals[0])

    def depth(self):
        return 1 + max(a.depth() for a in self.args)

    def max_mu_index(self):
        return max(a.max_mu_index() for a in self.args)

    def uses(self, kind):
        return isinstance(self, kind) or any(a.uses(kind) for a in self.args)


def Exp(arg):
    return Call("exp", (arg,))


def Log(arg):
    return Call("log", (arg,))


def Sin(arg):
    return Call("sin", (arg,))


def Cos(arg):
    return Call("cos", (arg,))


def Sqrt(arg):
    return Call("sqrt", (arg,))


# --- printing -------------------------------------------------------------

def to_source(node: Expr) -> str:
    """Render ``node`` so that reparsing yields an equal tree."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Pi):
        return "pi"
    if isinstance(node, Z):
        return "z"
    if isinstance(node, Mu):
        return f"mu[{node.index}]"
    if isinstance(node, Neg):
        inner = to_source(node.arg)
        if node.arg.precedence < Neg.precedence:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(node, _Binary):
        left = to_source(node.left)
        right = to_source(node.right)
        if node.left.precedence < node.precedence:
            left = f"({left})"
        # left-associative grammar: an equal-precedence right child needs parens
        if node.right.precedence <= node.precedence:
            right = f"({right})"
        return f"{left} {node.symbol} {right}"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(to_source(a) for a in node.args)})"
    raise TypeError(f"not an expression node: {node!r}")


# --- parsing --------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/(),\[\]]))"
)


def _tokenize(src):
    tokens = []
    pos = 0
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            bad = pos + (len(src[pos:]) - len(src[pos:].lstrip()))
            raise ExpressionSyntaxError(f"unexpected character {src[bad]!r}", bad,
                                        ("number", "identifier", "operator"))
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src, q):
        self.tokens = _tokenize(src)
        self.i = 0
        self.q = q
        self.depth = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, text, pos = self.peek()
        if text != value or kind == "end":
            raise ExpressionSyntaxError(f"unexpected {text or 'end of input'!r}", pos, (repr(value),))
        return self.take()

    def enter(self):
        self.depth += 1
        if self.depth > MAX_DEPTH:
            raise ExpressionSyntaxError("expression nested too deeply", self.peek()[2])

    def expr(self):
        self.enter()
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            node = _BINARY[op](node, self.term())
        self.depth -= 1
        return node

    def term(self):
        node = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            node = _BINARY[op](node, self.unary())
        return node

    def unary(self):
        if self.peek()[:2] == ("op", "-"):
            self.take()
            self.enter()
            node = Neg(self.unary())
            self.depth -= 1
            return node
        return self.primary()

    def primary(self):
        kind, text, pos = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if text == "pi":
                return Pi()
            if text == "z":
                return Z()
            if text == "mu":
                self.expect("[")
                ikind, itext, ipos = self.take()
                if ikind != "num" or not itext.isdigit():
                    raise ExpressionSyntaxError(f"bad species index {itext!r}", ipos, ("integer",))
                index = int(itext)
                if self.q is not None and index >= self.q:
                    raise IndexOutOfRange(f"mu[{index}] at position {pos} but q = {self.q}")
                self.expect("]")
                return Mu(index)
            if text in _FUNCS:
                self.expect("(")
                args = [self.expr()]
                while self.peek()[:2] == ("op", ","):
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != _FUNCS[text]:
                    raise ExpressionSyntaxError(
                        f"{text} takes {_FUNCS[text]} argument(s), got {len(args)}", pos)
                return Call(text, tuple(args))
            raise UnknownIdentifier(f"unknown identifier {text!r} at position {pos}")
        if (kind, text) == ("op", "("):
            node = self.expr()
            self.expect(")")
            return node
        raise ExpressionSyntaxError(f"unexpected {text or 'end of input'!r}", pos,
                                    ("number", "pi", "z", "mu", "(", "-") + tuple(_FUNCS))


def parse_expression(src: str, q: int | None = None) -> Expr:
    """Parse ``src`` into an expression tree.

    ``q`` bounds the admissible ``mu[i]`` indices when given.
    """
    if not isinstance(src, str):
        raise ModelError(f"expression must be a string, got {type(src).__name__}")
    if len(src.encode("utf-8")) > MAX_SOURCE_BYTES:
        raise ModelError("expression source exceeds 64 KiB")
    parser = _Parser(src, q)
    node = parser.expr()
    kind, text, pos = parser.peek()
    if kind != "end":
        raise ExpressionSyntaxError(f"unexpected {text!r}", pos, ("+", "-", "*", "/", "end of input"))
    return node


def as_expression(value, q: int | None = None):
    """Coerce a string, number, tree or callable into something evaluable."""
    if isinstance(value, Expr):
        if q is not None and value.max_mu_index() >= q:
            raise IndexOutOfRange(f"mu[{value.max_mu_index()}] but q = {q}")
        return value
    if isinstance(value, str):
        return parse_expression(value, q)
    if isinstance(value, (int, float)):
        return Num(float(value))
    if callable(value):
        return value
    raise ModelError(f"cannot interpret {value!r} as an expression")
