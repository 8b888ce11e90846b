"""A small arithmetic expression language for user-supplied coefficients.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('+' | '-') unary | power
    power  := atom (('^' | '**') unary)?
    atom   := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

Names are the variables declared by the caller (``t`` and ``v`` for model
coefficients, ``x`` for test functions) and the constants ``pi`` and ``e``.
Functions: ``exp``, ``log``, ``sin``, ``cos`` (one argument) and ``pow``
(two arguments).  Parse errors carry the 1-based column of the offending
token.  Expressions evaluate elementwise on numpy arrays and can be
differentiated symbolically.
"""

from __future__ import annotations

import math
import re

import numpy as np

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>\*\*|[-+*/^(),]))"
)
_FUNCS = {"exp": 1, "log": 1, "sin": 1, "cos": 1, "pow": 2}
_CONSTS = {"pi": math.pi, "e": math.e}


class ExpressionError(ValueError):
    def __init__(self, message, position):
        super().__init__(f"{message} at column {position}")
        self.position = position


def _tokenize(text):
    pos, out = 0, []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m:
            col = pos + len(text[pos:]) - len(text[pos:].lstrip()) + 1
            raise ExpressionError(f"unexpected character {text[col - 1]!r}", col)
        kind = m.lastgroup
        out.append((kind, m.group(kind), m.start(kind) + 1))
        pos = m.end()
    out.append(("end", "", len(text) + 1))
    return out


class _Parser:
    def __init__(self, text, variables):
        self.tokens = _tokenize(text)
        self.i = 0
        self.variables = set(variables)

    def peek(self):
        return self.tokens[self.i]

    def take(self, value=None):
        tok = self.tokens[self.i]
        if value is not None and tok[1] != value:
            found = tok[1] or "end of input"
            raise ExpressionError(f"expected {value!r}, found {found!r}", tok[2])
        self.i += 1
        return tok

    def parse(self):
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ExpressionError(f"unexpected {tok[1]!r}", tok[2])
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            node = (op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            node = (op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            operand = self.unary()
            return ("neg", operand) if op == "-" else operand
        return self.power()

    def power(self):
        node = self.atom()
        if self.peek()[1] in ("^", "**"):
            self.take()
            node = ("^", node, self.unary())
        return node

    def atom(self):
        kind, value, col = self.take()
        if kind == "num":
            return ("num", float(value))
        if kind == "name":
            if self.peek()[1] == "(":
                if value not in _FUNCS:
                    raise ExpressionError(f"unknown function {value!r}", col)
                self.take("(")
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.take(")")
                if len(args) != _FUNCS[value]:
                    raise ExpressionError(
                        f"{value} takes {_FUNCS[value]} argument(s), got {len(args)}", col
                    )
                if value == "pow":
                    return ("^", args[0], args[1])
                return ("call", value, args[0])
            if value in self.variables:
                return ("var", value)
            if value in _CONSTS:
                return ("num", _CONSTS[value])
            raise ExpressionError(f"unknown name {value!r}", col)
        if value == "(":
            node = self.expr()
            self.take(")")
            return node
        raise ExpressionError(f"unexpected {value or 'end of input'!r}", col)


def _eval(node, env):
    kind = node[0]
    if kind == "num":
        return node[1]
    if kind == "var":
        return env[node[1]]
    if kind == "neg":
        return -_eval(node[1], env)
    if kind == "call":
        return getattr(np, node[1])(_eval(node[2], env))
    a, b = _eval(node[1], env), _eval(node[2], env)
    if kind == "+":
        return a + b
    if kind == "-":
        return a - b
    if kind == "*":
        return a * b
    if kind == "/":
        return a / b
    return np.power(a, b)


def _num(x):
    return ("num", float(x))


def _is_num(node, value=None):
    return node[0] == "num" and (value is None or node[1] == value)


def _simplify(node):
    kind = node[0]
    if kind in ("+", "-", "*", "/", "^"):
        a, b = node[1], node[2]
        if _is_num(a) and _is_num(b):
            return _num(_eval(node, {}))
        if kind == "+":
            if _is_num(a, 0.0):
                return b
            if _is_num(b, 0.0):
                return a
        if kind == "-" and _is_num(b, 0.0):
            return a
        if kind == "-" and _is_num(a, 0.0):
            return ("neg", b)
        if kind == "*":
            if _is_num(a, 0.0) or _is_num(b, 0.0):
                return _num(0.0)
            if _is_num(a, 1.0):
                return b
            if _is_num(b, 1.0):
                return a
        if kind == "/" and _is_num(b, 1.0):
            return a
        if kind == "^" and _is_num(b, 1.0):
            return a
        if kind == "^" and _is_num(b, 0.0):
            return _num(1.0)
    if kind == "neg" and _is_num(node[1]):
        return _num(-node[1][1])
    return node


def _diff(node, var):
    kind = node[0]
    if kind == "num":
        return _num(0.0)
    if kind == "var":
        return _num(1.0 if node[1] == var else 0.0)
    if kind == "neg":
        return _simplify(("neg", _diff(node[1], var)))
    if kind == "call":
        arg = node[2]
        da = _diff(arg, var)
        outer = {
            "exp": node,
            "log": ("/", _num(1.0), arg),
            "sin": ("call", "cos", arg),
            "cos": ("neg", ("call", "sin", arg)),
        }[node[1]]
        return _simplify(("*", outer, da))
    a, b = node[1], node[2]
    da, db = _diff(a, var), _diff(b, var)
    if kind in ("+", "-"):
        return _simplify((kind, da, db))
    if kind == "*":
        return _simplify(("+", _simplify(("*", da, b)), _simplify(("*", a, db))))
    if kind == "/":
        num = _simplify(("-", _simplify(("*", da, b)), _simplify(("*", a, db))))
        return _simplify(("/", num, ("^", b, _num(2.0))))
    # power rule; a general exponent goes through exp(b log a)
    if _is_num(db, 0.0):
        lowered = _simplify(("^", a, _simplify(("-", b, _num(1.0)))))
        return _simplify(("*", _simplify(("*", b, lowered)), da))
    inner = _simplify(("+", _simplify(("*", db, ("call", "log", a))), _simplify(("*", b, ("/", da, a)))))
    return _simplify(("*", node, inner))


class Expression:
    """A parsed expression; call with keyword arrays for each variable."""

    def __init__(self, text, variables, _tree=None):
        self.text = text
        self.variables = tuple(variables)
        self.tree = _tree if _tree is not None else _Parser(text, variables).parse()

    def __call__(self, **values):
        missing = set(self.variables) - set(values)
        if missing:
            raise TypeError(f"missing variable(s): {', '.join(sorted(missing))}")
        out = _eval(self.tree, values)
        shape = np.broadcast(*[np.asarray(values[v]) for v in self.variables]).shape
        return np.broadcast_to(np.asarray(out, dtype=float), shape)

    def diff(self, var):
        if var not in self.variables:
            raise ValueError(f"{var!r} is not a variable of this expression")
        return Expression(f"d/d{var}({self.text})", self.variables, _tree=_diff(self.tree, var))

    def __repr__(self):
        return f"Expression({self.text!r})"


def parse(text, variables):
    return Expression(text, variables)
