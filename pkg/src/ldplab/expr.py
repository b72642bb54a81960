"""Small arithmetic expression language for user-defined scalar/vector fields.

Expressions use variables ``x1..xn`` (or ``t`` for moduli, ``eps`` for drift
families), the operators ``+ - * / ^`` and a fixed set of functions.  The
evaluator is strict: ``log``/``sqrt`` of a nonpositive/negative argument and
division by zero raise :class:`EvaluationError` instead of propagating NaN.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ParseError",
    "EvaluationError",
    "parse_expression",
    "Expression",
]


class ParseError(ValueError):
    """Syntax error with source position and offending token."""

    def __init__(self, message, position, token=""):
        super().__init__(f"{message} at position {position}" + (f" (near {token!r})" if token else ""))
        self.position = position
        self.token = token


class EvaluationError(ArithmeticError):
    """Raised when an expression hits an invalid numeric domain."""


# ---------------------------------------------------------------------------
# Tokenizer

_OPS = set("+-*/^(),")


@dataclass
class _Token:
    kind: str  # 'num', 'ident', 'op', 'end'
    text: str
    pos: int


def _tokenize(text):
    tokens = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c in _OPS:
            tokens.append(_Token("op", c, i))
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            seen_e = False
            while j < n and (text[j].isdigit() or text[j] == "." or text[j] in "eE"
                             or (seen_e and text[j] in "+-" and text[j - 1] in "eE")):
                if text[j] in "eE":
                    if seen_e:
                        break
                    # only treat as exponent if followed by digit or sign+digit
                    k = j + 1
                    if k < n and text[k] in "+-":
                        k += 1
                    if k >= n or not text[k].isdigit():
                        break
                    seen_e = True
                j += 1
            try:
                float(text[i:j])
            except ValueError:
                raise ParseError("malformed number", i, text[i:j])
            tokens.append(_Token("num", text[i:j], i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(_Token("ident", text[i:j], i))
            i = j
            continue
        raise ParseError("unexpected character", i, c)
    tokens.append(_Token("end", "", n))
    return tokens


# ---------------------------------------------------------------------------
# AST

class Node:
    def eval(self, env):  # pragma: no cover - interface
        raise NotImplementedError

    def text(self):  # pragma: no cover - interface
        raise NotImplementedError


@dataclass
class Num(Node):
    value: float

    def eval(self, env):
        return self.value

    def text(self):
        return repr(self.value)


@dataclass
class Var(Node):
    name: str

    def eval(self, env):
        return env[self.name]

    def text(self):
        return self.name


@dataclass
class Neg(Node):
    arg: Node

    def eval(self, env):
        return -self.arg.eval(env)

    def text(self):
        return f"(-{self.arg.text()})"


@dataclass
class BinOp(Node):
    op: str
    left: Node
    right: Node

    def eval(self, env):
        a = self.left.eval(env)
        b = self.right.eval(env)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if self.op == "/":
            if np.any(b == 0):
                raise EvaluationError("division by zero")
            return a / b
        if self.op == "^":
            with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
                out = np.power(np.asarray(a, dtype=float), b)
            if not np.all(np.isfinite(out)):
                raise EvaluationError("non-finite result of exponentiation")
            return out
        raise AssertionError(self.op)

    def text(self):
        return f"({self.left.text()} {self.op} {self.right.text()})"


def _checked(name, fn, domain=None):
    def wrapper(*args):
        if domain is not None:
            bad = domain(*args)
            if np.any(bad):
                raise EvaluationError(f"{name}: argument outside domain")
        return fn(*args)

    return wrapper


_FUNCTIONS = {
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "tanh": (1, np.tanh),
    "exp": (1, _checked("exp", np.exp, domain=lambda a: np.asarray(a) > 700)),
    "log": (1, _checked("log", np.log, domain=lambda a: np.asarray(a) <= 0)),
    "sqrt": (1, _checked("sqrt", np.sqrt, domain=lambda a: np.asarray(a) < 0)),
    "abs": (1, np.abs),
    "min": (-2, lambda *a: np.minimum.reduce(np.broadcast_arrays(*a))),
    "max": (-2, lambda *a: np.maximum.reduce(np.broadcast_arrays(*a))),
}


@dataclass
class Call(Node):
    name: str
    args: list

    def eval(self, env):
        arity, fn = _FUNCTIONS[self.name]
        return fn(*[a.eval(env) for a in self.args])

    def text(self):
        return f"{self.name}({', '.join(a.text() for a in self.args)})"


# ---------------------------------------------------------------------------
# Parser (recursive descent; ^ binds tightest, right-associative)

class _Parser:
    def __init__(self, tokens, variables):
        self.tokens = tokens
        self.i = 0
        self.variables = variables

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text):
        tok = self.take()
        if tok.kind != "op" or tok.text != text:
            raise ParseError(f"expected {text!r}", tok.pos, tok.text)
        return tok

    def parse(self):
        node = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            raise ParseError("trailing input", tok.pos, tok.text)
        return node

    def expr(self):
        node = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.take().text
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.take().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        tok = self.peek()
        if tok.kind == "op" and tok.text == "-":
            self.take()
            return Neg(self.unary())
        if tok.kind == "op" and tok.text == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        tok = self.peek()
        if tok.kind == "op" and tok.text == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        tok = self.take()
        if tok.kind == "num":
            return Num(float(tok.text))
        if tok.kind == "ident":
            nxt = self.peek()
            if nxt.kind == "op" and nxt.text == "(":
                if tok.text not in _FUNCTIONS:
                    raise ParseError("unknown function", tok.pos, tok.text)
                self.take()
                args = [self.expr()]
                while self.peek().kind == "op" and self.peek().text == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                arity, _ = _FUNCTIONS[tok.text]
                if arity >= 0 and len(args) != arity:
                    raise ParseError(f"{tok.text} takes {arity} argument(s), got {len(args)}",
                                     tok.pos, tok.text)
                if arity < 0 and len(args) < -arity:
                    raise ParseError(f"{tok.text} takes at least {-arity} arguments, got {len(args)}",
                                     tok.pos, tok.text)
                return Call(tok.text, args)
            if tok.text not in self.variables:
                raise ParseError("unknown identifier", tok.pos, tok.text)
            return Var(tok.text)
        if tok.kind == "op" and tok.text == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise ParseError("unexpected token", tok.pos, tok.text)


@dataclass
class Expression:
    """A parsed scalar expression over a fixed variable set."""

    root: Node
    variables: tuple
    source: str

    def __call__(self, **env):
        missing = [v for v in self.variables if v not in env]
        if missing:
            raise EvaluationError(f"missing variables {missing}")
        out = self.root.eval(env)
        out = np.asarray(out, dtype=float)
        if not np.all(np.isfinite(out)):
            raise EvaluationError(f"non-finite value from {self.source!r}")
        return out

    def text(self):
        return self.root.text()


def parse_expression(text, variables):
    """Parse one scalar expression using the given variable names."""
    tokens = _tokenize(text)
    parser = _Parser(tokens, set(variables))
    root = parser.parse()
    return Expression(root=root, variables=tuple(variables), source=text)
