"""Tiny arithmetic expression language for user Hamiltonians.

Grammar (``^`` and ``**`` both mean power, right associative)::

    expr   := term (('+'|'-') term)*
    term   := unary (('*'|'/') unary)*
    unary  := '-' unary | power
    power  := atom (('^'|'**') unary)?
    atom   := number | 'x1' | 'x2' | func '(' expr (',' expr)? ')' | '(' expr ')'
    func   := exp | cos | sin | pow

Expressions are parsed into a small AST and evaluated with numpy; nothing is
ever passed to ``eval``.  Evaluation works for complex inputs, which is what
the complex-step derivatives in :mod:`graphspde.hamiltonian` rely on.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np


class ExpressionError(ValueError):
    pass


_TOKEN = re.compile(r"\s*(?:(\d+\.\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?)"
                    r"|(\*\*|[-+*/^(),])|([A-Za-z_][A-Za-z_0-9]*))")
_FUNCS = {"exp": (1, np.exp), "cos": (1, np.cos), "sin": (1, np.sin), "pow": (2, None)}
_VARS = ("x1", "x2")


def tokenize(text: str):
    pos, out = 0, []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ExpressionError(f"unexpected character at {pos}: {text[pos:pos + 10]!r}")
        num, op, name = m.groups()
        if num is not None:
            out.append(("num", float(num)))
        elif op is not None:
            out.append(("op", "^" if op == "**" else op))
        else:
            out.append(("name", name))
        pos = m.end()
    out.append(("end", None))
    return out


@dataclass(frozen=True)
class Node:
    kind: str
    value: object = None
    args: tuple = ()


class _Parser:
    def __init__(self, tokens):
        self.toks = tokens
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self, kind=None, value=None):
        tok = self.toks[self.i]
        if (kind and tok[0] != kind) or (value is not None and tok[1] != value):
            raise ExpressionError(f"expected {value or kind}, got {tok[1]!r}")
        self.i += 1
        return tok

    def expr(self):
        node = self.term()
        while self.peek() in (("op", "+"), ("op", "-")):
            op = self.take()[1]
            node = Node(op, args=(node, self.term()))
        return node

    def term(self):
        node = self.unary()
        while self.peek() in (("op", "*"), ("op", "/")):
            op = self.take()[1]
            node = Node(op, args=(node, self.unary()))
        return node

    def unary(self):
        if self.peek() == ("op", "-"):
            self.take()
            return Node("neg", args=(self.unary(),))
        if self.peek() == ("op", "+"):
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek() == ("op", "^"):
            self.take()
            return Node("^", args=(base, self.unary()))
        return base

    def atom(self):
        kind, val = self.peek()
        if kind == "num":
            self.take()
            return Node("num", val)
        if kind == "name":
            self.take()
            if val in _VARS:
                return Node("var", _VARS.index(val))
            if val in _FUNCS:
                nargs = _FUNCS[val][0]
                self.take("op", "(")
                args = [self.expr()]
                for _ in range(nargs - 1):
                    self.take("op", ",")
                    args.append(self.expr())
                self.take("op", ")")
                return Node("call", val, tuple(args))
            raise ExpressionError(f"unknown name {val!r}")
        if (kind, val) == ("op", "("):
            self.take()
            node = self.expr()
            self.take("op", ")")
            return node
        raise ExpressionError(f"unexpected token {val!r}")


def parse(text: str) -> Node:
    p = _Parser(tokenize(text))
    node = p.expr()
    if p.peek()[0] != "end":
        raise ExpressionError(f"trailing input after position {p.i}")
    return node


def _power(a, b):
    # integer exponents via repeated multiplication keep negative bases real
    if np.isscalar(b) and float(b).is_integer() and abs(b) <= 64:
        n = int(b)
        if n < 0:
            return 1.0 / _power(a, -n)
        out = np.ones_like(a)
        for _ in range(n):
            out = out * a
        return out
    return np.power(a, b)


def evaluate(node: Node, x1, x2):
    k = node.kind
    if k == "num":
        return node.value
    if k == "var":
        return x1 if node.value == 0 else x2
    if k == "neg":
        return -evaluate(node.args[0], x1, x2)
    if k == "call":
        if node.value == "pow":
            return _power(evaluate(node.args[0], x1, x2), evaluate(node.args[1], x1, x2))
        return _FUNCS[node.value][1](evaluate(node.args[0], x1, x2))
    a = evaluate(node.args[0], x1, x2)
    if k == "^":
        return _power(a, evaluate(node.args[1], x1, x2))
    b = evaluate(node.args[1], x1, x2)
    if k == "+":
        return a + b
    if k == "-":
        return a - b
    if k == "*":
        return a * b
    if k == "/":
        return a / b
    raise ExpressionError(f"bad node {k}")


def compile_expression(text: str):
    """Return ``f(x) -> H`` for ``x`` of shape ``(..., 2)``."""
    tree = parse(text)

    def f(x):
        x = np.asarray(x)
        return evaluate(tree, x[..., 0], x[..., 1]) + 0 * x[..., 0]

    return f
