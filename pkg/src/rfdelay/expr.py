"""A small infix expression language for system definitions.

Grammar::

    expr   := term   { ("+" | "-") term }
    term   := factor { ("*" | "/") factor }
    factor := "-" factor | power
    power  := atom [ "^" factor ]
    atom   := NUMBER | name | call | "(" expr ")"
    call   := UNARY "(" expr ")" | BINARY "(" expr "," expr ")"
    name   := "t" | "s" | "R" | "T" | "pi"
            | ("x" | "nu") "[" INT "]" | "xi" "[" INT "]" "[" INT "]"

    UNARY  := "exp" | "sin" | "cos" | "tanh" | "abs" | "sqrt"
    BINARY := "pow" | "min" | "max"

Indices are 1-based.  ``xi[0][j]`` is the current state, ``xi[i][j]`` the
value delayed by the i-th discrete delay; ``x[j]`` is shorthand for
``xi[0][j]`` (inside a kernel it is the history value at ``s``).  There are
no conditionals or loops.  Evaluation is vectorised over numpy arrays.
"""

import math
import re
from dataclasses import dataclass

import numpy as np


class ExprError(ValueError):
    """Malformed expression text."""

    def __init__(self, message, pos=None):
        self.pos = pos
        super().__init__(message if pos is None else f"{message} at position {pos}")


class UnknownIdentifier(ExprError):
    pass


class ArityError(ExprError):
    pass


class EvaluationError(ArithmeticError):
    """Raised when an expression produces a non-finite value or leaves its domain."""


UNARY = ("exp", "sin", "cos", "tanh", "abs", "sqrt")
BINARY = ("pow", "min", "max")
SCALARS = ("t", "s", "R", "T")
INDEXED = {"x": 1, "nu": 1, "xi": 2}

_NP_UNARY = {
    "exp": np.exp, "sin": np.sin, "cos": np.cos, "tanh": np.tanh, "abs": np.abs,
}


@dataclass(frozen=True)
class Num:
    value: float

    def pretty(self):
        r = repr(float(self.value))
        return f"({r})" if self.value < 0 or r.startswith("-") else r


@dataclass(frozen=True)
class Var:
    name: str
    index: tuple = ()

    def pretty(self):
        return self.name + "".join(f"[{i}]" for i in self.index)


@dataclass(frozen=True)
class Unary:
    op: str
    arg: object

    def pretty(self):
        if self.op == "neg":
            return f"(-{self.arg.pretty()})"
        return f"{self.op}({self.arg.pretty()})"


@dataclass(frozen=True)
class Binary:
    op: str
    left: object
    right: object

    _INFIX = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}

    def pretty(self):
        if self.op in ("min", "max"):
            return f"{self.op}({self.left.pretty()}, {self.right.pretty()})"
        return f"({self.left.pretty()} {self._INFIX[self.op]} {self.right.pretty()})"


def pretty(node):
    return node.pretty()


def free_vars(node):
    """Set of (name, index) pairs referenced by the expression."""
    if isinstance(node, Var):
        return {(node.name, node.index)}
    if isinstance(node, Unary):
        return free_vars(node.arg)
    if isinstance(node, Binary):
        return free_vars(node.left) | free_vars(node.right)
    return set()


_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^(),\[\]]))"
)


def _tokenize(text):
    pos = 0
    out = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ExprError(f"unexpected character {text[pos:].lstrip()[:1]!r}",
                            pos + len(text[pos:]) - len(text[pos:].lstrip()))
        kind = m.lastgroup
        out.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    out.append(("end", "", len(text)))
    return out


class _Parser:
    def __init__(self, text):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self, value=None):
        tok = self.toks[self.i]
        if value is not None and tok[1] != value:
            found = tok[1] or "end of input"
            raise ExprError(f"expected {value!r}, found {found!r}", tok[2])
        self.i += 1
        return tok

    def parse(self):
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ExprError(f"unexpected {tok[1]!r}", tok[2])
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = "add" if self.take()[1] == "+" else "sub"
            node = Binary(op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek()[1] in ("*", "/"):
            op = "mul" if self.take()[1] == "*" else "div"
            node = Binary(op, node, self.factor())
        return node

    def factor(self):
        if self.peek()[1] == "-":
            self.take()
            arg = self.factor()
            if isinstance(arg, Num):
                return Num(-arg.value)
            return Unary("neg", arg)
        return self.power()

    def power(self):
        node = self.atom()
        if self.peek()[1] == "^":
            self.take()
            node = Binary("pow", node, self.factor())
        return node

    def index(self):
        self.take("[")
        kind, value, pos = self.take()
        if kind != "num" or not value.isdigit():
            raise ExprError("index must be a non-negative integer", pos)
        self.take("]")
        return int(value)

    def atom(self):
        kind, value, pos = self.take()
        if kind == "num":
            return Num(float(value))
        if value == "(":
            node = self.expr()
            self.take(")")
            return node
        if kind != "name":
            raise ExprError(f"unexpected {value or 'end of input'!r}", pos)
        if value in UNARY or value in BINARY:
            self.take("(")
            args = [self.expr()]
            while self.peek()[1] == ",":
                self.take()
                args.append(self.expr())
            self.take(")")
            want = 1 if value in UNARY else 2
            if len(args) != want:
                raise ArityError(f"{value} takes {want} argument(s), got {len(args)}", pos)
            return Unary(value, args[0]) if want == 1 else Binary(value, *args)
        if value == "pi":
            return Num(math.pi)
        if value in SCALARS:
            return Var(value)
        if value in INDEXED:
            idx = tuple(self.index() for _ in range(INDEXED[value]))
            if value == "xi":
                if idx[1] < 1:
                    raise ExprError("component index starts at 1", pos)
            elif idx[0] < 1:
                raise ExprError("component index starts at 1", pos)
            return Var(value, idx)
        raise UnknownIdentifier(f"unknown identifier {value!r}", pos)


def parse_expr(text):
    """Parse expression text into an AST of Num / Var / Unary / Binary nodes."""
    return _Parser(text).parse()


# ------------------------------------------------------------------ evaluation
def compile_expr(node):
    """Return a function ``env -> array`` evaluating `node` with numpy.

    `env` maps ``t``, ``s``, ``R``, ``T`` to scalars or arrays and ``x``,
    ``nu`` to arrays with components on the last axis, ``xi`` to arrays of
    shape (..., l+1, n).
    """
    if isinstance(node, Num):
        v = float(node.value)
        return lambda env: v
    if isinstance(node, Var):
        name, idx = node.name, node.index
        if not idx:
            return lambda env: env[name]
        if name == "xi":
            i, j = idx[0], idx[1] - 1
            return lambda env: env["xi"][..., i, j]
        j = idx[0] - 1
        return lambda env: env[name][..., j]
    if isinstance(node, Unary):
        f = compile_expr(node.arg)
        if node.op == "neg":
            return lambda env: -f(env)
        if node.op == "sqrt":
            def _sqrt(env):
                a = np.asarray(f(env))
                if np.any(a < 0):
                    raise EvaluationError("sqrt of a negative number")
                return np.sqrt(a)
            return _sqrt
        g = _NP_UNARY[node.op]
        return lambda env: g(f(env))
    if isinstance(node, Binary):
        a, b = compile_expr(node.left), compile_expr(node.right)
        op = node.op
        if op == "add":
            return lambda env: a(env) + b(env)
        if op == "sub":
            return lambda env: a(env) - b(env)
        if op == "mul":
            return lambda env: a(env) * b(env)
        if op == "div":
            def _div(env):
                den = np.asarray(b(env))
                if np.any(den == 0):
                    raise EvaluationError("division by zero")
                return a(env) / den
            return _div
        if op == "pow":
            rhs = node.right
            if isinstance(rhs, Num) and float(rhs.value).is_integer() and 0 <= rhs.value <= 16:
                k = int(rhs.value)
                return lambda env: _int_power(a(env), k)

            def _pow(env):
                base, ex = np.asarray(a(env), float), np.asarray(b(env), float)
                bad = (base < 0) & (ex != np.round(ex))
                if np.any(bad) or np.any((base == 0) & (ex < 0)):
                    raise EvaluationError("pow outside its real domain")
                return np.power(base, ex)
            return _pow
        if op == "min":
            return lambda env: np.minimum(a(env), b(env))
        if op == "max":
            return lambda env: np.maximum(a(env), b(env))
    raise TypeError(f"not an expression node: {node!r}")


def _int_power(a, k):
    if k == 0:
        return np.ones_like(np.asarray(a, float))
    out = a
    for _ in range(k - 1):
        out = out * a
    return out


class Expression:
    """Parsed expression with its compiled evaluator."""

    def __init__(self, source):
        self.ast = parse_expr(source) if isinstance(source, str) else source
        self.text = self.ast.pretty()
        self._fn = compile_expr(self.ast)

    def __call__(self, env):
        with np.errstate(all="ignore"):
            out = self._fn(env)
        if not np.all(np.isfinite(out)):
            raise EvaluationError(f"non-finite value from {self.text}")
        return out

    def free_vars(self):
        return free_vars(self.ast)

    def is_zero(self):
        return isinstance(self.ast, Num) and self.ast.value == 0.0

    def __repr__(self):
        return f"Expression({self.text!r})"

    def __eq__(self, other):
        return isinstance(other, Expression) and self.ast == other.ast

    def __hash__(self):
        return hash(self.ast)
