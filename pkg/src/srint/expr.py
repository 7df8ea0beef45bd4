"""Small arithmetic expression language for weights and external fields.

Expressions are written over the variables ``x0..x{d-1}`` (and ``y0..y{d-1}``
for two-point kernels), e.g. ``"1 + (x0 + y0)/2"``. Evaluation is vectorized:
variables may be bound to numpy arrays of equal length.

Grammar, loosest to tightest::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := primary ('^' unary)?          # right-associative
    primary := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

MAX_SOURCE_BYTES = 64 * 1024

FUNCTIONS = {
    "exp": (1, 1),
    "sin": (1, 1),
    "cos": (1, 1),
    "sqrt": (1, 1),
    "abs": (1, 1),
    "min": (2, None),
    "max": (2, None),
}

_VAR_RE = re.compile(r"[xy](0|[1-9][0-9]*)\Z")


class ExprError(ValueError):
    """Base class for parse and evaluation failures."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class ExprDomainError(ExprError):
    pass


class UnboundVariableError(ExprError):
    pass


# --- AST -------------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Node = Union[Const, Var, Neg, BinOp, Call]


# --- tokenizer -------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:[0-9]+\.?[0-9]*|\.[0-9]+)(?:[eE][+-]?[0-9]+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    offset: int


def _tokenize(text: str) -> list[_Tok]:
    raw = text.encode("utf-8")
    if len(raw) > MAX_SOURCE_BYTES:
        raise ExprSyntaxError("expression longer than 64 KiB", MAX_SOURCE_BYTES)
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", _byte_offset(text, pos))
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(_Tok(kind, m.group(), _byte_offset(text, pos)))
        pos = m.end()
    tokens.append(_Tok("eof", "", len(raw)))
    return tokens


def _byte_offset(text: str, char_pos: int) -> int:
    return len(text[:char_pos].encode("utf-8"))


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.tokens[self.i]

    def _advance(self) -> _Tok:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def _expect(self, text: str) -> None:
        if self.tok.text != text or self.tok.kind != "op":
            raise ExprSyntaxError(f"expected {text!r}, got {self._describe()}", self.tok.offset)
        self._advance()

    def _describe(self) -> str:
        return "end of input" if self.tok.kind == "eof" else repr(self.tok.text)

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "eof":
            raise ExprSyntaxError(f"unexpected {self._describe()}", self.tok.offset)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self._advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self._advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.tok.kind == "op" and self.tok.text == "-":
            self._advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.primary()
        if self.tok.kind == "op" and self.tok.text == "^":
            self._advance()
            return BinOp("^", base, self.unary())
        return base

    def primary(self) -> Node:
        t = self.tok
        if t.kind == "num":
            self._advance()
            return Const(float(t.text))
        if t.kind == "name":
            self._advance()
            if self.tok.kind == "op" and self.tok.text == "(":
                return self._call(t)
            if t.text in FUNCTIONS:
                raise ExprSyntaxError(f"function {t.text!r} needs arguments", self.tok.offset)
            if not _VAR_RE.match(t.text):
                raise ExprSyntaxError(f"unknown identifier {t.text!r}", t.offset)
            return Var(t.text)
        if t.kind == "op" and t.text == "(":
            self._advance()
            node = self.expr()
            self._expect(")")
            return node
        raise ExprSyntaxError(f"unexpected {self._describe()}", t.offset)

    def _call(self, name_tok: _Tok) -> Node:
        if name_tok.text not in FUNCTIONS:
            raise ExprSyntaxError(f"unknown function {name_tok.text!r}", name_tok.offset)
        self._expect("(")
        args = [self.expr()]
        while self.tok.kind == "op" and self.tok.text == ",":
            self._advance()
            args.append(self.expr())
        self._expect(")")
        lo, hi = FUNCTIONS[name_tok.text]
        if len(args) < lo or (hi is not None and len(args) > hi):
            raise ExprSyntaxError(
                f"{name_tok.text}() takes {lo if hi == lo else f'at least {lo}'} argument(s), got {len(args)}",
                name_tok.offset,
            )
        return Call(name_tok.text, tuple(args))


# --- printing --------------------------------------------------------------


def to_text(node: Node) -> str:
    """Fully parenthesized source text; ``parse(to_text(n)) == n``."""
    if isinstance(node, Const):
        if node.value < 0 or not np.isfinite(node.value):
            raise ExprError(f"constant {node.value} has no literal form")
        return repr(float(node.value))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_text(node.operand)})"
    if isinstance(node, BinOp):
        return f"({to_text(node.left)} {node.op} {to_text(node.right)})"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(to_text(a) for a in node.args)})"
    raise TypeError(node)


# --- evaluation ------------------------------------------------------------


def _variables(node: Node, acc: set) -> set:
    if isinstance(node, Var):
        acc.add(node.name)
    elif isinstance(node, Neg):
        _variables(node.operand, acc)
    elif isinstance(node, BinOp):
        _variables(node.left, acc)
        _variables(node.right, acc)
    elif isinstance(node, Call):
        for a in node.args:
            _variables(a, acc)
    return acc


def _eval(node: Node, env: Mapping[str, np.ndarray]):
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        try:
            return env[node.name]
        except KeyError:
            raise UnboundVariableError(f"variable {node.name!r} is not bound") from None
    if isinstance(node, Neg):
        return -_eval(node.operand, env)
    if isinstance(node, BinOp):
        a = _eval(node.left, env)
        b = _eval(node.right, env)
        with np.errstate(all="ignore"):
            if node.op == "+":
                return a + b
            if node.op == "-":
                return a - b
            if node.op == "*":
                return a * b
            if node.op == "/":
                if np.any(np.asarray(b) == 0):
                    raise ExprDomainError("division by zero")
                return a / b
            out = np.power(np.asarray(a, dtype=float), b)
        if np.any(np.isnan(out) & ~np.isnan(np.asarray(a, dtype=float))):
            raise ExprDomainError("fractional power of a negative number")
        return out
    if isinstance(node, Call):
        args = [_eval(a, env) for a in node.args]
        f = node.func
        if f == "sqrt":
            if np.any(np.asarray(args[0]) < 0):
                raise ExprDomainError("sqrt of a negative number")
            return np.sqrt(args[0])
        if f == "min":
            out = args[0]
            for a in args[1:]:
                out = np.minimum(out, a)
            return out
        if f == "max":
            out = args[0]
            for a in args[1:]:
                out = np.maximum(out, a)
            return out
        with np.errstate(over="ignore"):
            return {"exp": np.exp, "sin": np.sin, "cos": np.cos, "abs": np.abs}[f](args[0])
    raise TypeError(node)


@dataclass(frozen=True)
class Expr:
    """A parsed expression with its source text."""

    ast: Node
    source: str

    @property
    def variables(self) -> frozenset:
        return frozenset(_variables(self.ast, set()))

    @property
    def uses_y(self) -> bool:
        return any(v.startswith("y") for v in self.variables)

    def __call__(self, x, y=None):
        return evaluate(self, x, y)

    def __str__(self) -> str:
        return self.source


def parse(text: str) -> Expr:
    """Parse ``text`` into an :class:`Expr`.

    Raises :class:`ExprSyntaxError` carrying the byte offset of the problem.
    """
    return Expr(_Parser(text).parse(), text)


def _bind(prefix: str, pts, env: dict) -> int | None:
    arr = np.asarray(pts, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim == 1:
        for a, v in enumerate(arr):
            env[f"{prefix}{a}"] = float(v)
        return None
    for a in range(arr.shape[1]):
        env[f"{prefix}{a}"] = arr[:, a]
    return arr.shape[0]


def evaluate(expr: Expr | str, x: Sequence[float] | np.ndarray, y=None):
    """Evaluate at a point ``x`` (shape (d,)) or a batch (shape (n, d)).

    Returns a float for a single point and an array of shape (n,) for a batch.
    """
    if isinstance(expr, str):
        expr = parse(expr)
    env: dict = {}
    n = _bind("x", x, env)
    if y is not None:
        ny = _bind("y", y, env)
        n = n if n is not None else ny
    out = _eval(expr.ast, env)
    if n is None:
        return float(out)
    return np.broadcast_to(np.asarray(out, dtype=float), (n,)).copy()


def constant(value: float) -> Expr:
    v = float(value)
    return Expr(Const(v) if v >= 0 else Neg(Const(-v)), repr(v))


def check_positive(expr: Expr, samples: np.ndarray, two_point: bool = False, what: str = "weight") -> float:
    """Reject expressions whose minimum over ``samples`` is not strictly positive."""
    vals = evaluate(expr, samples, samples if two_point else None)
    lo = float(np.min(vals))
    if not lo > 0:
        raise ExprDomainError(f"{what} {expr.source!r} must be positive on the region (min {lo:.3g})")
    return lo
