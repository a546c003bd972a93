"""Integer trip-count expressions over operator shape parameters.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | atom
    atom   := INT | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

``/`` is floor division.  Functions: ``ceil_div``, ``max``, ``min``.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass
from typing import Iterable, Mapping, Union


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at offset {position}")
        self.position = position


class NegativeTripWarning(UserWarning):
    pass


FUNCTIONS = {"ceil_div": 2, "max": 2, "min": 2}


@dataclass(frozen=True)
class Num:
    value: int


@dataclass(frozen=True)
class Name:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple["Expr", ...]


Expr = Union[Num, Name, BinOp, Neg, Call]

_TOKEN = re.compile(r"\s*(?:(\d+)|([A-Za-z_][A-Za-z0-9_]*)|(.))")


def _tokenize(text: str):
    pos = 0
    out = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m.group(0).strip() == "":
            break
        start = m.start(m.lastindex)
        if m.group(1):
            out.append(("int", m.group(1), start))
        elif m.group(2):
            out.append(("name", m.group(2), start))
        else:
            ch = m.group(3)
            if ch not in "+-*/(),":
                raise ExprSyntaxError(f"unexpected character {ch!r}", start)
            out.append(("op", ch, start))
        pos = m.end()
    out.append(("end", "", len(text)))
    return out


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, pos = self.take()
        if val != value:
            raise ExprSyntaxError(f"expected {value!r}, found {val or 'end of input'!r}", pos)

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Neg(self.unary())
        return self.atom()

    def atom(self):
        kind, val, pos = self.take()
        if kind == "int":
            return Num(int(val))
        if kind == "name":
            if self.peek()[:2] == ("op", "("):
                if val not in FUNCTIONS:
                    raise ExprSyntaxError(f"unknown function {val!r}", pos)
                self.take()
                args = [self.expr()]
                while self.peek()[:2] == ("op", ","):
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != FUNCTIONS[val]:
                    raise ExprSyntaxError(f"{val} takes {FUNCTIONS[val]} arguments, got {len(args)}", pos)
                return Call(val, tuple(args))
            return Name(val)
        if (kind, val) == ("op", "("):
            node = self.expr()
            self.expect(")")
            return node
        raise ExprSyntaxError(f"unexpected {val or 'end of input'!r}", pos)


def parse_expr(text: str, params: Iterable[str] | None = None) -> Expr:
    """Parse ``text``; when ``params`` is given every name must be drawn from it."""
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression", 0)
    p = _Parser(text)
    tree = p.expr()
    kind, val, pos = p.peek()
    if kind != "end":
        raise ExprSyntaxError(f"unexpected {val!r}", pos)
    if params is not None:
        unknown = names(tree) - set(params)
        if unknown:
            raise ExprError(f"names outside the parameter alphabet: {sorted(unknown)}")
    return tree


def names(e: Expr) -> set[str]:
    if isinstance(e, Name):
        return {e.name}
    if isinstance(e, BinOp):
        return names(e.left) | names(e.right)
    if isinstance(e, Neg):
        return names(e.operand)
    if isinstance(e, Call):
        return set().union(*(names(a) for a in e.args))
    return set()


def _floordiv(a: int, b: int) -> int:
    if b == 0:
        raise ExprError("division by zero")
    return a // b


def _eval(e: Expr, env: Mapping[str, int]) -> int:
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Name):
        try:
            return int(env[e.name])
        except KeyError:
            raise ExprError(f"unbound parameter {e.name!r}") from None
    if isinstance(e, Neg):
        return -_eval(e.operand, env)
    if isinstance(e, BinOp):
        a, b = _eval(e.left, env), _eval(e.right, env)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        return _floordiv(a, b)
    a, b = (_eval(x, env) for x in e.args)
    if e.func == "ceil_div":
        return -_floordiv(-a, b)
    return max(a, b) if e.func == "max" else min(a, b)


def eval_expr(e: Expr | str, env: Mapping[str, int]) -> int:
    if isinstance(e, str):
        e = parse_expr(e)
    value = _eval(e, env)
    if value < 0:
        warnings.warn(f"trip expression {to_text(e)!r} evaluated to {value}; clamped to 0", NegativeTripWarning)
        return 0
    return value


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def to_text(e: Expr) -> str:
    if isinstance(e, Num):
        return str(e.value)
    if isinstance(e, Name):
        return e.name
    if isinstance(e, Neg):
        inner = to_text(e.operand)
        return f"-{inner}" if isinstance(e.operand, (Num, Name, Call, Neg)) else f"-({inner})"
    if isinstance(e, Call):
        return f"{e.func}({', '.join(to_text(a) for a in e.args)})"
    prec = _PREC[e.op]
    left = to_text(e.left)
    if isinstance(e.left, BinOp) and _PREC[e.left.op] < prec:
        left = f"({left})"
    right = to_text(e.right)
    if isinstance(e.right, BinOp) and _PREC[e.right.op] <= prec:
        right = f"({right})"
    return f"{left} {e.op} {right}"
