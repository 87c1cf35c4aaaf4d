"""Arithmetic expression language for periodic coefficient fields.

Coefficients of the reaction-diffusion problem (diffusion matrix entries,
drift components, reaction term) are given as small arithmetic expressions
in the cell variables x1..xN and, for reactions, the state variable u.

Grammar (standard precedence, whitespace-insensitive)::

    sum     :=  term (('+' | '-') term)*
    term    :=  unary (('*' | '/') unary)*
    unary   :=  '-' unary | power
    power   :=  atom ('^' unary)?          # right-associative
    atom    :=  NUMBER | 'pi' | 'u' | 'x<k>' | name '(' sum (',' sum)* ')'
              | '(' sum ')'

Functions: sin, cos, exp, tanh, abs (unary), min, max (binary).  There are
no conditionals and no user-defined functions, so the node set is closed
under differentiation with respect to u (min/max/abs are rejected by
`derivative_u`).  Named parameters may be supplied to the parser; they are
inlined at parse time and may themselves be numbers or expression strings.

Expressions are immutable and evaluation is pure, so they are safe to share
across concurrent workers.
"""

import math
import re
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np

__all__ = [
    "Expr", "Num", "PiConst", "Var", "UVar", "Neg", "BinOp", "Call",
    "CoefficientField", "FieldLangError", "ExprSyntaxError",
    "UnknownIdentifier", "ArityError", "VariableOutOfRange", "UForbidden",
    "DomainError", "NotDifferentiable", "parse_expr", "eval_expr",
    "derivative_u", "validate_periodicity",
]


class FieldLangError(Exception):
    """Base class for expression-language errors."""


class ExprSyntaxError(FieldLangError):
    """Malformed source text; `offset` is the character offset of the issue."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class UnknownIdentifier(FieldLangError):
    pass


class ArityError(FieldLangError):
    pass


class VariableOutOfRange(FieldLangError):
    pass


class UForbidden(FieldLangError):
    pass


class DomainError(FieldLangError):
    """Division by zero or invalid power during evaluation."""


class NotDifferentiable(FieldLangError):
    """Expression contains nodes outside the differentiable subset."""


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

_FUNCTIONS = {"sin": 1, "cos": 1, "exp": 1, "tanh": 1, "abs": 1,
              "min": 2, "max": 2}

_PREC_ADD, _PREC_MUL, _PREC_UNARY, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


class Expr:
    """Immutable expression node. Subclasses form the whole AST."""

    def evaluate(self, x, u=None):
        """Evaluate on coordinate arrays `x` (sequence of N arrays/scalars).

        Arrays broadcast; scalars in give scalars out.  Raises DomainError
        on division by zero or invalid powers.
        """
        raise NotImplementedError

    def uses_u(self):
        return any(c.uses_u() for c in self.children())

    def max_var_index(self):
        return max((c.max_var_index() for c in self.children()), default=0)

    def children(self):
        return ()

    def _prec(self):
        return _PREC_ATOM

    def __str__(self):
        raise NotImplementedError


@dataclass(frozen=True)
class Num(Expr):
    value: float

    def evaluate(self, x, u=None):
        return self.value

    def __str__(self):
        return repr(self.value)


@dataclass(frozen=True)
class PiConst(Expr):
    def evaluate(self, x, u=None):
        return math.pi

    def __str__(self):
        return "pi"


@dataclass(frozen=True)
class Var(Expr):
    index: int  # 1-based: x1..xN

    def evaluate(self, x, u=None):
        return x[self.index - 1]

    def max_var_index(self):
        return self.index

    def __str__(self):
        return f"x{self.index}"


@dataclass(frozen=True)
class UVar(Expr):
    def evaluate(self, x, u=None):
        if u is None:
            raise TypeError("expression references u but no u value was supplied")
        return u

    def uses_u(self):
        return True

    def __str__(self):
        return "u"


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr

    def evaluate(self, x, u=None):
        return -self.arg.evaluate(x, u)

    def children(self):
        return (self.arg,)

    def _prec(self):
        return _PREC_UNARY

    def __str__(self):
        a = str(self.arg)
        if self.arg._prec() < _PREC_UNARY:
            a = f"({a})"
        return f"-{a}"


@dataclass(frozen=True)
class BinOp(Expr):
    op: str  # one of + - * / ^
    left: Expr
    right: Expr

    def evaluate(self, x, u=None):
        a = self.left.evaluate(x, u)
        b = self.right.evaluate(x, u)
        op = self.op
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            if np.any(np.asarray(b) == 0):
                raise DomainError("division by zero")
            return a / b
        # power
        a_arr, b_arr = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        if np.any((a_arr == 0) & (b_arr < 0)):
            raise DomainError("zero raised to a negative power")
        with np.errstate(all="ignore"):
            out = np.power(a_arr, b_arr)
        if np.any(np.isnan(out)):
            raise DomainError("invalid power (negative base, fractional exponent)")
        if np.isscalar(a) and np.isscalar(b):
            return float(out)
        return out

    def children(self):
        return (self.left, self.right)

    def _prec(self):
        return {"+": _PREC_ADD, "-": _PREC_ADD,
                "*": _PREC_MUL, "/": _PREC_MUL, "^": _PREC_POW}[self.op]

    def __str__(self):
        prec = self._prec()
        left, right = str(self.left), str(self.right)
        # Parenthesize so that reparsing reproduces the tree exactly.
        if self.op == "^":
            if self.left._prec() <= prec:
                left = f"({left})"
            if self.right._prec() < _PREC_UNARY:
                right = f"({right})"
        else:
            if self.left._prec() < prec:
                left = f"({left})"
            if self.right._prec() <= prec:
                right = f"({right})"
        return f"{left}{self.op}{right}"


_UFUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "tanh": np.tanh,
           "abs": np.abs, "min": np.minimum, "max": np.maximum}


@dataclass(frozen=True)
class Call(Expr):
    name: str
    args: tuple

    def evaluate(self, x, u=None):
        vals = [a.evaluate(x, u) for a in self.args]
        out = _UFUNCS[self.name](*vals)
        if all(np.isscalar(v) for v in vals):
            return float(out)
        return out

    def children(self):
        return self.args

    def __str__(self):
        return f"{self.name}({','.join(str(a) for a in self.args)})"


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
  | (?P<ws>\s+)
""", re.VERBOSE)

_VAR_RE = re.compile(r"^x([1-9][0-9]*)$")


class _Parser:
    def __init__(self, source, n_vars, allow_u, params, _active):
        self.source = source
        self.n_vars = n_vars
        self.allow_u = allow_u
        self.params = params or {}
        self._active = _active  # param names being expanded (cycle guard)
        self.tokens = self._tokenize(source)
        self.pos = 0

    @staticmethod
    def _tokenize(source):
        tokens = []
        i = 0
        while i < len(source):
            m = _TOKEN_RE.match(source, i)
            if m is None:
                raise ExprSyntaxError(f"unexpected character {source[i]!r}", i)
            if m.lastgroup != "ws":
                tokens.append((m.lastgroup, m.group(), i))
            i = m.end()
        tokens.append(("end", "", len(source)))
        return tokens

    def _peek(self):
        return self.tokens[self.pos]

    def _next(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def _expect(self, value):
        kind, text, offset = self._next()
        if text != value:
            raise ExprSyntaxError(f"expected {value!r}, found {text!r}", offset)

    def parse(self):
        expr = self._sum()
        kind, text, offset = self._peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected trailing input {text!r}", offset)
        return expr

    def _sum(self):
        expr = self._term()
        while self._peek()[1] in ("+", "-"):
            op = self._next()[1]
            expr = BinOp(op, expr, self._term())
        return expr

    def _term(self):
        expr = self._unary()
        while self._peek()[1] in ("*", "/"):
            op = self._next()[1]
            expr = BinOp(op, expr, self._unary())
        return expr

    def _unary(self):
        if self._peek()[1] == "-":
            self._next()
            return Neg(self._unary())
        return self._power()

    def _power(self):
        base = self._atom()
        if self._peek()[1] == "^":
            self._next()
            return BinOp("^", base, self._unary())
        return base

    def _atom(self):
        kind, text, offset = self._next()
        if kind == "num":
            return Num(float(text))
        if text == "(":
            expr = self._sum()
            self._expect(")")
            return expr
        if kind == "ident":
            return self._ident(text, offset)
        raise ExprSyntaxError(f"unexpected token {text!r}", offset)

    def _ident(self, name, offset):
        if self._peek()[1] == "(":
            if name not in _FUNCTIONS:
                raise UnknownIdentifier(f"unknown function {name!r} (offset {offset})")
            self._next()
            args = [self._sum()]
            while self._peek()[1] == ",":
                self._next()
                args.append(self._sum())
            self._expect(")")
            if len(args) != _FUNCTIONS[name]:
                raise ArityError(
                    f"{name} takes {_FUNCTIONS[name]} argument(s), got {len(args)}")
            return Call(name, tuple(args))
        if name == "pi":
            return PiConst()
        if name == "u":
            if not self.allow_u:
                raise UForbidden(f"u is not allowed in this expression (offset {offset})")
            return UVar()
        m = _VAR_RE.match(name)
        if m:
            index = int(m.group(1))
            if index > self.n_vars:
                raise VariableOutOfRange(
                    f"x{index} exceeds declared dimension {self.n_vars}")
            return Var(index)
        if name in self.params:
            if name in self._active:
                raise ExprSyntaxError(f"circular parameter reference {name!r}", offset)
            value = self.params[name]
            if isinstance(value, str):
                sub = _Parser(value, self.n_vars, self.allow_u, self.params,
                              self._active | {name})
                return sub.parse()
            return Num(float(value))
        raise UnknownIdentifier(f"unknown identifier {name!r} (offset {offset})")


def parse_expr(source: str, n_vars: int, allow_u: bool = False,
               params: Optional[Mapping[str, Union[float, str]]] = None) -> Expr:
    """Parse an expression over x1..x<n_vars> (and u when `allow_u`).

    `params` maps parameter names to numbers or expression strings; they are
    inlined at parse time.
    """
    if not source or not source.strip():
        raise ExprSyntaxError("empty expression", 0)
    return _Parser(source, n_vars, allow_u, params, frozenset()).parse()


def eval_expr(e: Expr, x: Sequence[float], u: Optional[float] = None) -> float:
    """Scalar evaluation at point `x` (length-N sequence), optional u."""
    return float(e.evaluate(tuple(float(c) for c in x), u))


# ---------------------------------------------------------------------------
# Differentiation with respect to u
# ---------------------------------------------------------------------------

def _contains_nondifferentiable(e):
    if isinstance(e, Call) and e.name in ("min", "max", "abs"):
        return True
    return any(_contains_nondifferentiable(c) for c in e.children())


def _is_zero(e):
    return isinstance(e, Num) and e.value == 0.0


def _is_one(e):
    return isinstance(e, Num) and e.value == 1.0


def _add(a, b):
    if _is_zero(a):
        return b
    if _is_zero(b):
        return a
    return BinOp("+", a, b)


def _sub(a, b):
    if _is_zero(b):
        return a
    if _is_zero(a):
        return Neg(b)
    return BinOp("-", a, b)


def _mul(a, b):
    if _is_zero(a) or _is_zero(b):
        return Num(0.0)
    if _is_one(a):
        return b
    if _is_one(b):
        return a
    return BinOp("*", a, b)


def _div(a, b):
    if _is_zero(a):
        return Num(0.0)
    if _is_one(b):
        return a
    return BinOp("/", a, b)


def _d(e):
    if isinstance(e, (Num, PiConst, Var)):
        return Num(0.0)
    if isinstance(e, UVar):
        return Num(1.0)
    if isinstance(e, Neg):
        d = _d(e.arg)
        return Num(0.0) if _is_zero(d) else Neg(d)
    if isinstance(e, BinOp):
        a, b = e.left, e.right
        if e.op == "+":
            return _add(_d(a), _d(b))
        if e.op == "-":
            return _sub(_d(a), _d(b))
        if e.op == "*":
            return _add(_mul(_d(a), b), _mul(a, _d(b)))
        if e.op == "/":
            return _sub(_div(_d(a), b),
                        _div(_mul(a, _d(b)), BinOp("*", b, b)))
        # power: closed only for u-free exponents (no log node in the grammar)
        if b.uses_u():
            raise NotDifferentiable("u in the exponent of ^ is not supported")
        da = _d(a)
        if _is_zero(da):
            return Num(0.0)
        return _mul(_mul(b, BinOp("^", a, _sub(b, Num(1.0)))), da)
    if isinstance(e, Call):
        (arg,) = e.args
        da = _d(arg)
        if _is_zero(da):
            return Num(0.0)
        outer = {
            "sin": lambda a: Call("cos", (a,)),
            "cos": lambda a: Neg(Call("sin", (a,))),
            "exp": lambda a: Call("exp", (a,)),
            "tanh": lambda a: _sub(Num(1.0), BinOp("^", Call("tanh", (a,)), Num(2.0))),
        }[e.name](arg)
        return _mul(outer, da)
    raise NotDifferentiable(f"cannot differentiate node {type(e).__name__}")


def derivative_u(e: Expr) -> Expr:
    """Symbolic partial derivative with respect to u.

    Raises NotDifferentiable when the expression contains min/max/abs or a
    u-dependent exponent; the remaining node set is closed under d/du.
    """
    if _contains_nondifferentiable(e):
        raise NotDifferentiable("expression contains min/max/abs")
    return _d(e)


# ---------------------------------------------------------------------------
# Coefficient fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoefficientField:
    """A scalar, vector, or symmetric-matrix function of x (and u).

    `entries` holds one Expr per component: a single entry for scalars, N
    entries for vectors, and the upper triangle in row-major order for
    matrices (N=2: a11, a12, a22).  Matrix evaluation is symmetric by
    construction.
    """
    kind: str            # "scalar" | "vector" | "matrix"
    n_vars: int
    entries: tuple
    declared_periodic: bool = True
    sources: tuple = ()  # original expression strings, for reports

    def __post_init__(self):
        expected = {"scalar": 1, "vector": self.n_vars,
                    "matrix": self.n_vars * (self.n_vars + 1) // 2}[self.kind]
        if len(self.entries) != expected:
            raise ValueError(
                f"{self.kind} field over {self.n_vars} variables needs "
                f"{expected} entries, got {len(self.entries)}")

    def uses_u(self):
        return any(e.uses_u() for e in self.entries)

    def _tri_index(self, i, j):
        # upper-triangle, row-major, with symmetric lookup
        if i > j:
            i, j = j, i
        n = self.n_vars
        return i * n - i * (i - 1) // 2 + (j - i)

    def entry(self, i: int = 0, j: Optional[int] = None) -> Expr:
        """Component expression: scalar (), vector (i), matrix (i, j); 0-based."""
        if self.kind == "scalar":
            return self.entries[0]
        if self.kind == "vector":
            return self.entries[i]
        return self.entries[self._tri_index(i, j)]

    def __call__(self, x, u=None):
        """Evaluate the scalar field (convenience for kind == 'scalar')."""
        if self.kind != "scalar":
            raise ValueError("direct call is defined for scalar fields only")
        return self.entries[0].evaluate(x, u)


def validate_periodicity(field: CoefficientField, seed: int = 42,
                         n_samples: int = 100, tol: float = 1e-10,
                         strict: bool = True):
    """Check 1-periodicity of every component along the N unit lattice vectors.

    Samples `n_samples` random points; returns the worst absolute mismatch.
    When `strict`, raises ValueError if the field is declared periodic but
    fails the check; otherwise the caller judges the returned mismatch.
    """
    rng = np.random.default_rng(seed)
    n = field.n_vars
    pts = rng.uniform(-2.0, 3.0, size=(n_samples, n))
    worst = 0.0
    for expr in field.entries:
        if expr.uses_u():
            u = rng.uniform(0.0, 1.0, size=n_samples)
        else:
            u = None
        base = expr.evaluate(tuple(pts[:, k] for k in range(n)), u)
        for k in range(n):
            shifted = pts.copy()
            shifted[:, k] += 1.0
            moved = expr.evaluate(tuple(shifted[:, m] for m in range(n)), u)
            worst = max(worst, float(np.max(np.abs(np.asarray(moved) - np.asarray(base)))))
    if strict and field.declared_periodic and worst > tol:
        raise ValueError(f"field declared periodic but mismatch {worst:.3e} > {tol:.1e}")
    return worst
