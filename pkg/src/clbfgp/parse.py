"""Infix expression parser.

Grammar (lowest to highest precedence)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | '+' unary | power
    power  := atom ('^' INT)?
    atom   := NUMBER | IDENT | IDENT '(' expr (',' expr)* ')' | '(' expr ')'

``^`` only accepts a non-negative integer literal exponent.  Functions are
``sin``, ``cos``, ``exp``, ``min`` and ``max``.
"""

from __future__ import annotations

import re
from typing import Sequence

from .expr import Expr, const, param, var

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<id>[A-Za-z_][A-Za-z_0-9']*)"
    r"|(?P<op>\*\*|[-+*/^(),]))"
)
_FUNCS = {"sin": 1, "cos": 1, "exp": 1, "min": None, "max": None}


class ExprSyntaxError(ValueError):
    def __init__(self, msg: str, pos: int, text: str):
        super().__init__(f"{msg} at position {pos}: {text[:pos]}<*>{text[pos:]}")
        self.pos = pos


class UnknownIdentifier(ExprSyntaxError):
    pass


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    out = []
    pos = 0
    text_len = len(text)
    while pos < text_len:
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ExprSyntaxError("unexpected character", pos, text)
        kind = m.lastgroup
        start = m.start(kind)
        tok = m.group(kind)
        out.append((kind, "^" if tok == "**" else tok, start))
        pos = m.end()
    out.append(("end", "", text_len))
    return out


class _Parser:
    def __init__(self, text, var_names, param_policy, param_names, constants):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.vars = {name: k for k, name in enumerate(var_names)}
        self.tunable = param_policy == "tunable"
        self.params = {name: k for k, name in enumerate(param_names or ())}
        self.constants = dict(constants or {})

    def peek(self):
        return self.toks[self.i]

    def take(self, value=None):
        tok = self.toks[self.i]
        if value is not None and tok[1] != value:
            raise ExprSyntaxError(f"expected {value!r}", tok[2], self.text)
        self.i += 1
        return tok

    def parse(self) -> Expr:
        e = self.expr()
        kind, tok, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {tok!r}", pos, self.text)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            e = Expr("add" if op == "+" else "sub", (e, rhs))
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.unary()
            e = Expr("mul" if op == "*" else "div", (e, rhs))
        return e

    def unary(self) -> Expr:
        kind, tok, _ = self.peek()
        if kind == "op" and tok == "-":
            self.take()
            literal = self.peek()[0] == "num"
            inner = self.unary()
            # "-2.5" is a negative literal; "-(2.5)" stays a negation
            if literal and inner.op == "const":
                return const(-inner.value, inner.tunable)
            return Expr("neg", (inner,))
        if kind == "op" and tok == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[1] == "^" and self.peek()[0] == "op":
            self.take()
            kind, tok, pos = self.take()
            if kind != "num" or not re.fullmatch(r"\d+", tok):
                raise ExprSyntaxError("exponent must be a non-negative integer literal", pos, self.text)
            return Expr("pow", (base,), float(int(tok)))
        return base

    def atom(self) -> Expr:
        kind, tok, pos = self.take()
        if kind == "num":
            return const(float(tok), self.tunable)
        if kind == "op" and tok == "(":
            e = self.expr()
            self.take(")")
            return e
        if kind == "id":
            if tok in _FUNCS and self.peek()[1] == "(":
                self.take("(")
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.take(")")
                arity = _FUNCS[tok]
                if arity is not None and len(args) != arity:
                    raise ExprSyntaxError(f"{tok} takes {arity} argument", pos, self.text)
                return Expr(tok, tuple(args))
            if tok in self.vars:
                return var(self.vars[tok])
            if tok in self.params:
                return param(self.params[tok])
            if tok in self.constants:
                return const(self.constants[tok])
            raise UnknownIdentifier(f"unknown identifier {tok!r}", pos, self.text)
        raise ExprSyntaxError(f"unexpected {tok or 'end of input'!r}", pos, self.text)


def parse_expr(text: str, var_names: Sequence[str], param_policy: str = "structural",
               param_names: Sequence[str] | None = None,
               constants: dict[str, float] | None = None) -> Expr:
    """Parse infix ``text`` into an :class:`Expr`.

    ``var_names[i]`` maps to ``var(i)``.  ``param_policy`` decides what numeric
    literals become: ``"structural"`` constants or ``"tunable"`` ones.
    Identifiers in ``param_names`` become ``param`` leaves, and identifiers in
    ``constants`` (e.g. ``{"pi": math.pi}``) become structural constants.
    """
    if param_policy not in ("structural", "tunable"):
        raise ValueError(f"unknown param_policy {param_policy!r}")
    return _Parser(text, list(var_names), param_policy, param_names, constants).parse()


def parse_list(text: str, var_names: Sequence[str], **kw) -> list[Expr]:
    """Parse a comma separated list, optionally wrapped in braces or brackets."""
    s = text.strip()
    if s[:1] in "{[" and s[-1:] in "}]":
        s = s[1:-1]
    parts, depth, start = [], 0, 0
    for k, ch in enumerate(s):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "," and depth == 0:
            parts.append(s[start:k])
            start = k + 1
    parts.append(s[start:])
    return [parse_expr(p, var_names, **kw) for p in parts if p.strip()]
