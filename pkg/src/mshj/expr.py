"""Arithmetic expressions over named coordinates.

Text is parsed into an immutable tree of ``Const``, ``Var``, ``Unary`` and
``Binary`` nodes.  Evaluation is vectorized over a batch of points and carries
a truncated second-order Taylor jet (value, gradient, Hessian) with respect to
a chosen list of variables, so every derivative the residual modules need is
exact up to rounding.

Grammar, loosest to tightest::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := ('-' | '+') unary | power
    power   := primary ('^' unary)?          # right-associative
    primary := number | name | name '(' expr ')' | '(' expr ')'

so ``-2^2`` is ``-(2^2)`` and ``2^3^2`` is ``2^(3^2)``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, Sequence, Union

import numpy as np

from .errors import DomainError, ExprSyntaxError, UnboundVariable, UnknownFunction

FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "asin")
BINARY_OPS = ("+", "-", "*", "/", "^")


@dataclass(frozen=True)
class Const:
    value: float

    def __post_init__(self):
        v = float(self.value)
        if not math.isfinite(v) or v < 0:
            # negative literals do not exist in the grammar; they are neg(c)
            raise ValueError(f"constant must be finite and non-negative, got {v!r}")
        object.__setattr__(self, "value", v + 0.0)  # folds -0.0 into 0.0


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # "neg" or one of FUNCTIONS
    arg: "Node"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Node"
    right: "Node"


Node = Union[Const, Var, Unary, Binary]


# ---------------------------------------------------------------- parsing

_TOKEN_RE = re.compile(
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<id>[A-Za-z][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^(),])"
)
_PRIMARY_START = frozenset({"number", "identifier", "(", "-", "+"})
_AFTER_OPERAND = frozenset({"+", "-", "*", "/", "^"})


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    i = 0
    while i < len(text):
        if text[i].isspace():
            i += 1
            continue
        m = _TOKEN_RE.match(text, i)
        if m is None:
            raise ExprSyntaxError(
                f"unexpected character {text[i]!r}", text, _byte_offset(text, i), _PRIMARY_START
            )
        kind = m.lastgroup
        tok = m.group()
        if kind == "num":
            tokens.append(("number", tok, i))
        elif kind == "id":
            tokens.append(("identifier", tok, i))
        else:
            tokens.append((tok, tok, i))
        i = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


def _byte_offset(text: str, char_index: int) -> int:
    return len(text[:char_index].encode("utf-8"))


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0
        self.depth = 0

    def peek(self) -> str:
        return self.tokens[self.pos][0]

    def take(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def fail(self, message: str, expected):
        kind, tok, where = self.tokens[self.pos]
        found = "end of input" if kind == "end" else repr(tok)
        raise ExprSyntaxError(f"{message}, found {found}", self.text,
                              _byte_offset(self.text, where), frozenset(expected))

    def operand_followers(self):
        closers = {")"} if self.depth else {"end"}
        return _AFTER_OPERAND | closers

    def parse(self) -> Node:
        node = self.expr()
        if self.peek() != "end":
            self.fail("unexpected token", self.operand_followers())
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek() in ("+", "-"):
            op = self.take()[0]
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek() in ("*", "/"):
            op = self.take()[0]
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek() == "-":
            self.take()
            return Unary("neg", self.unary())
        if self.peek() == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Node:
        base = self.primary()
        if self.peek() == "^":
            self.take()
            return Binary("^", base, self.unary())
        return base

    def primary(self) -> Node:
        kind, tok, where = self.tokens[self.pos]
        if kind == "number":
            self.take()
            return Const(float(tok))
        if kind == "identifier":
            self.take()
            if self.peek() == "(":
                if tok not in FUNCTIONS:
                    raise UnknownFunction(tok, _byte_offset(self.text, where))
                self.take()
                arg = self.group()
                return Unary(tok, arg)
            return Var(tok)
        if kind == "(":
            self.take()
            return self.group()
        self.fail("expected an operand", _PRIMARY_START)

    def group(self) -> Node:
        self.depth += 1
        node = self.expr()
        if self.peek() != ")":
            self.fail("unclosed parenthesis", _AFTER_OPERAND | {")"})
        self.take()
        self.depth -= 1
        return node


@lru_cache(maxsize=4096)
def parse(text: str) -> Node:
    """Parse expression text into a tree."""
    return _Parser(text).parse()


# --------------------------------------------------------------- printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _prec(node: Node) -> int:
    if isinstance(node, Binary):
        return _PREC[node.op]
    if isinstance(node, Unary) and node.op == "neg":
        return 3
    return 5


def to_text(node: Node) -> str:
    """Print a tree so that ``parse(to_text(t)) == t``."""
    if isinstance(node, Const):
        v = node.value
        return str(int(v)) if v.is_integer() and v < 1e15 else repr(v)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Unary):
        if node.op == "neg":
            inner = to_text(node.arg)
            return f"-({inner})" if _prec(node.arg) < 3 else f"-{inner}"
        return f"{node.op}({to_text(node.arg)})"
    left, right = to_text(node.left), to_text(node.right)
    if node.op == "^":
        if _prec(node.left) <= 4:
            left = f"({left})"
        if _prec(node.right) < 3:
            right = f"({right})"
        return f"{left}^{right}"
    p = _PREC[node.op]
    if _prec(node.left) < p:
        left = f"({left})"
    if _prec(node.right) <= p:
        right = f"({right})"
    sep = " " if p == 1 else ""
    return f"{left}{sep}{node.op}{sep}{right}"


def variables(node: Node) -> frozenset[str]:
    if isinstance(node, Var):
        return frozenset((node.name,))
    if isinstance(node, Unary):
        return variables(node.arg)
    if isinstance(node, Binary):
        return variables(node.left) | variables(node.right)
    return frozenset()


def rename(node: Node, mapping: Mapping[str, str]) -> Node:
    if isinstance(node, Var):
        return Var(mapping.get(node.name, node.name))
    if isinstance(node, Unary):
        return Unary(node.op, rename(node.arg, mapping))
    if isinstance(node, Binary):
        return Binary(node.op, rename(node.left, mapping), rename(node.right, mapping))
    return node


def as_node(expr: Union[str, Node, float, int]) -> Node:
    """Accept text, a tree, or a plain number."""
    if isinstance(expr, (Const, Var, Unary, Binary)):
        return expr
    if isinstance(expr, (int, float, np.floating, np.integer)):
        v = float(expr)
        return Const(v) if v >= 0 else Unary("neg", Const(-v))
    return parse(str(expr))


# ------------------------------------------------------------ evaluation


class Jet:
    """Value, gradient (d, N) and Hessian (d, d, N) of a batch of points.

    ``grad``/``hess`` of None stand for zero, and ``val`` may be a Python
    float when the subtree does not depend on any batched input.
    """

    __slots__ = ("val", "grad", "hess")

    def __init__(self, val, grad=None, hess=None):
        self.val = val
        self.grad = grad
        self.hess = hess


def _scale(c, a):
    return None if a is None else c * a


def _lin(ca, a, cb, b):
    if a is None:
        return _scale(cb, b)
    if b is None:
        return ca * a
    return ca * a + cb * b


def _add(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _outer(g1, g2):
    return g1[:, None, :] * g2[None, :, :]


def _sym_outer(g1, g2):
    if g1 is None or g2 is None:
        return None
    # [i,j] and [j,i] add the same two products, so this is exactly symmetric
    return _outer(g1, g2) + _outer(g2, g1)


def _first_bad(mask) -> int:
    idx = np.flatnonzero(np.atleast_1d(mask))
    return int(idx[0]) if idx.size else 0


class _Evaluator:
    def __init__(self, columns: Mapping[str, object], wrt: Sequence[str], order: int):
        if len(set(wrt)) != len(wrt):
            raise ValueError(f"duplicate differentiation variables in {list(wrt)}")
        self.columns = columns
        self.index = {name: k for k, name in enumerate(wrt)}
        self.order = order
        self.dim = len(wrt)

    def domain(self, node, mask, reason):
        if np.any(mask):
            raise DomainError(to_text(node), reason, _first_bad(mask))

    def run(self, node: Node) -> Jet:
        if isinstance(node, Const):
            return Jet(node.value)
        if isinstance(node, Var):
            return self.var(node.name)
        if isinstance(node, Unary):
            return self.unary(node, self.run(node.arg))
        return self.binary(node, self.run(node.left), self.run(node.right))

    def var(self, name: str) -> Jet:
        if name not in self.columns:
            raise UnboundVariable(name)
        val = self.columns[name]
        k = self.index.get(name)
        if k is None or self.order == 0:
            return Jet(val)
        size = np.shape(val)[0] if np.ndim(val) else 1
        grad = np.zeros((self.dim, size))
        grad[k] = 1.0
        return Jet(val, grad, None)

    def chain1(self, a: Jet, f0, f1, f2) -> Jet:
        if self.order == 0 or a.grad is None:
            return Jet(f0)
        grad = f1 * a.grad
        hess = None
        if self.order == 2:
            hess = _add(_scale(f1, a.hess), f2 * _outer(a.grad, a.grad))
        return Jet(f0, grad, hess)

    def unary(self, node: Unary, a: Jet) -> Jet:
        op, x = node.op, a.val
        need_d = self.order > 0 and a.grad is not None
        if op == "neg":
            return Jet(-x, _scale(-1.0, a.grad), _scale(-1.0, a.hess))
        if op == "sin":
            s, c = np.sin(x), np.cos(x)
            return self.chain1(a, s, c, -s)
        if op == "cos":
            s, c = np.sin(x), np.cos(x)
            return self.chain1(a, c, -s, -c)
        if op == "tan":
            t = np.tan(x)
            d1 = 1.0 + t * t
            return self.chain1(a, t, d1, 2.0 * t * d1)
        if op == "exp":
            e = np.exp(x)
            return self.chain1(a, e, e, e)
        if op == "log":
            self.domain(node, np.asarray(x) <= 0, "log of non-positive value")
            return self.chain1(a, np.log(x), 1.0 / x, -1.0 / (x * x))
        if op == "sqrt":
            self.domain(node, np.asarray(x) < 0, "sqrt of negative value")
            r = np.sqrt(x)
            if not need_d:
                return Jet(r)
            self.domain(node, np.asarray(x) == 0, "sqrt is not differentiable at 0")
            return self.chain1(a, r, 0.5 / r, -0.25 / (r * x))
        if op == "abs":
            return self.chain1(a, np.abs(x), np.sign(x), 0.0)
        if op == "asin":
            self.domain(node, np.abs(x) > 1, "asin argument outside [-1, 1]")
            if not need_d:
                return Jet(np.arcsin(x))
            self.domain(node, np.abs(x) == 1, "asin is not differentiable at +-1")
            w = 1.0 - x * x
            d1 = 1.0 / np.sqrt(w)
            return self.chain1(a, np.arcsin(x), d1, x * d1 / w)
        raise ValueError(f"unknown unary op {op!r}")

    def mul(self, a: Jet, b: Jet) -> Jet:
        val = a.val * b.val
        if self.order == 0:
            return Jet(val)
        grad = _lin(b.val, a.grad, a.val, b.grad)
        hess = None
        if self.order == 2:
            hess = _add(_lin(b.val, a.hess, a.val, b.hess), _sym_outer(a.grad, b.grad))
        return Jet(val, grad, hess)

    def div(self, node, a: Jet, b: Jet) -> Jet:
        self.domain(node, np.asarray(b.val) == 0, "division by zero")
        q = a.val / b.val
        if self.order == 0:
            return Jet(q)
        gq = _scale(1.0 / b.val, _lin(1.0, a.grad, -q, b.grad))
        hess = None
        if self.order == 2:
            s = _sym_outer(gq, b.grad)
            h = _lin(1.0, a.hess, -q, b.hess)
            if s is not None:
                h = -s if h is None else h - s
            hess = _scale(1.0 / b.val, h)
        return Jet(q, gq, hess)

    def ipow(self, node, a: Jet, k: int) -> Jet:
        if k == 0:
            return Jet(1.0)
        if k < 0:
            return self.div(node, Jet(1.0), self.ipow(node, a, -k))
        result = None
        base = a
        while True:
            if k & 1:
                result = base if result is None else self.mul(result, base)
            k >>= 1
            if not k:
                return result
            base = self.mul(base, base)

    def power(self, node: Binary, a: Jet, b: Jet) -> Jet:
        x, y = a.val, b.val
        if b.grad is None and np.ndim(y) == 0 and float(y).is_integer() and abs(y) <= 2**31:
            return self.ipow(node, a, int(y))
        self.domain(node, np.asarray(x) <= 0, "non-integer power of non-positive base")
        f = np.power(x, y)
        if self.order == 0 or (a.grad is None and b.grad is None):
            return Jet(f)
        lx = np.log(x)
        fx = y * f / x
        if b.grad is None:
            return self.chain1(a, f, fx, y * (y - 1.0) * f / (x * x))
        fy = f * lx
        grad = _lin(fx, a.grad, fy, b.grad)
        hess = None
        if self.order == 2:
            fxx = y * (y - 1.0) * f / (x * x)
            fxy = f * (1.0 + y * lx) / x
            fyy = f * lx * lx
            hess = _add(_lin(fx, a.hess, fy, b.hess), _scale(fxy, _sym_outer(a.grad, b.grad)))
            if a.grad is not None:
                hess = _add(hess, fxx * _outer(a.grad, a.grad))
            hess = _add(hess, fyy * _outer(b.grad, b.grad))
        return Jet(f, grad, hess)

    def binary(self, node: Binary, a: Jet, b: Jet) -> Jet:
        op = node.op
        if op == "+":
            return Jet(a.val + b.val, _add(a.grad, b.grad), _add(a.hess, b.hess))
        if op == "-":
            return Jet(a.val - b.val, _lin(1.0, a.grad, -1.0, b.grad),
                       _lin(1.0, a.hess, -1.0, b.hess))
        if op == "*":
            return self.mul(a, b)
        if op == "/":
            return self.div(node, a, b)
        if op == "^":
            return self.power(node, a, b)
        raise ValueError(f"unknown binary op {op!r}")


def jet(node: Node, columns: Mapping[str, object], wrt: Sequence[str] = (), order: int = 0,
        size: int | None = None) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
    """Evaluate ``node`` over a batch of points.

    ``columns`` maps every variable name to a scalar or a length-N array.
    Returns dense arrays ``(val (N,), grad (d, N), hess (d, d, N))`` with
    ``grad``/``hess`` set to None when ``order`` does not ask for them.
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    if size is None:
        size = max((np.shape(v)[0] for v in columns.values() if np.ndim(v)), default=1)
    ev = _Evaluator(columns, wrt, order)
    with np.errstate(all="ignore"):
        out = ev.run(node)
    val = np.broadcast_to(np.asarray(out.val, dtype=float), (size,)).copy()
    bad = ~np.isfinite(val)
    if bad.any():
        raise DomainError(to_text(node), "non-finite value", _first_bad(bad))
    d = len(wrt)
    grad = hess = None
    if order >= 1:
        grad = np.zeros((d, size)) if out.grad is None else np.broadcast_to(out.grad, (d, size)).copy()
    if order == 2:
        hess = np.zeros((d, d, size)) if out.hess is None else np.broadcast_to(out.hess, (d, d, size)).copy()
    return val, grad, hess


def evaluate(node: Node | str, env: Mapping[str, float]) -> float:
    """Evaluate at a single point."""
    node = as_node(node)
    val, _, _ = jet(node, {k: float(v) for k, v in env.items()}, (), 0, 1)
    return float(val[0])


def derive(node: Node | str, env: Mapping[str, float], wrt: Sequence[str], order: int = 1):
    """Value, gradient over ``wrt`` and (order 2) Hessian at a single point."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    node = as_node(node)
    val, grad, hess = jet(node, {k: float(v) for k, v in env.items()}, wrt, order, 1)
    return float(val[0]), grad[:, 0], (hess[:, :, 0] if hess is not None else None)
