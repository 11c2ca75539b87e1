"""Sparse multivariate polynomials over state variables x1..xn and disturbances w1..wm.

Terms are stored as ``{exponent tuple: float}``; exponents list the state variables
first, then the disturbance variables.  Every operation returns a new polynomial with
coefficients below :data:`PRUNE_TOL` dropped, so two polynomials compare equal exactly
when their pruned term maps agree.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

PRUNE_TOL = 1e-12

Monomial = tuple[int, ...]


class PolynomialError(ValueError):
    pass


class ContextMismatch(PolynomialError):
    pass


class UnrepresentableTerm(PolynomialError):
    def __init__(self, monomial: Monomial, text: str):
        super().__init__(f"term {text} is not in the basis")
        self.monomial = monomial


class ParseError(PolynomialError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


@dataclass(frozen=True)
class Variables:
    """Variable declaration: ``n`` state variables followed by ``m`` disturbances."""

    n: int
    m: int = 0

    def __post_init__(self):
        if self.n < 0 or self.m < 0:
            raise ValueError("variable counts must be nonnegative")

    @property
    def arity(self) -> int:
        return self.n + self.m

    @cached_property
    def names(self) -> tuple[str, ...]:
        return tuple(f"x{i + 1}" for i in range(self.n)) + tuple(f"w{j + 1}" for j in range(self.m))

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(name) from None


def grlex_key(mono: Monomial):
    """Graded lexicographic order, x variables before w variables."""
    return (sum(mono), tuple(-e for e in mono))


def monomial_str(mono: Monomial, ctx: Variables) -> str:
    parts = []
    for name, e in zip(ctx.names, mono):
        if e == 1:
            parts.append(name)
        elif e > 1:
            parts.append(f"{name}^{e}")
    return "*".join(parts) if parts else "1"


def _pruned(terms: Mapping[Monomial, float]) -> dict[Monomial, float]:
    return {k: float(v) for k, v in terms.items() if abs(v) >= PRUNE_TOL}


class Polynomial:
    """Immutable sparse polynomial bound to a :class:`Variables` context."""

    __slots__ = ("ctx", "_terms")

    def __init__(self, ctx: Variables, terms: Mapping[Monomial, float] | None = None):
        self.ctx = ctx
        clean = {}
        for mono, c in (terms or {}).items():
            mono = tuple(int(e) for e in mono)
            if len(mono) != ctx.arity:
                raise PolynomialError(f"monomial {mono} has wrong length for {ctx.arity} variables")
            if min(mono, default=0) < 0:
                raise PolynomialError(f"negative exponent in {mono}")
            clean[mono] = clean.get(mono, 0.0) + float(c)
        self._terms = _pruned(clean)

    @classmethod
    def _raw(cls, ctx: Variables, terms: dict[Monomial, float]) -> "Polynomial":
        p = object.__new__(cls)
        p.ctx = ctx
        p._terms = _pruned(terms)
        return p

    # constructors
    @classmethod
    def constant(cls, ctx: Variables, c: float) -> "Polynomial":
        return cls._raw(ctx, {(0,) * ctx.arity: float(c)})

    @classmethod
    def zero(cls, ctx: Variables) -> "Polynomial":
        return cls._raw(ctx, {})

    @classmethod
    def var(cls, ctx: Variables, name: str) -> "Polynomial":
        mono = [0] * ctx.arity
        mono[ctx.index(name)] = 1
        return cls._raw(ctx, {tuple(mono): 1.0})

    @classmethod
    def monomial(cls, ctx: Variables, mono: Monomial, coeff: float = 1.0) -> "Polynomial":
        return cls(ctx, {tuple(mono): coeff})

    @classmethod
    def from_coeffs(cls, ctx: Variables, basis: Sequence[Monomial], coeffs) -> "Polynomial":
        terms: dict[Monomial, float] = {}
        for mono, c in zip(basis, coeffs):
            terms[mono] = terms.get(mono, 0.0) + float(c)
        return cls._raw(ctx, terms)

    # accessors
    @property
    def terms(self) -> dict[Monomial, float]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def support(self) -> list[Monomial]:
        return sorted(self._terms, key=grlex_key)

    def coeff(self, mono: Monomial) -> float:
        return self._terms.get(tuple(mono), 0.0)

    def __len__(self):
        return len(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def degree(self) -> int:
        return max((sum(m) for m in self._terms), default=0)

    def depends_on_w(self) -> bool:
        n = self.ctx.n
        return any(any(m[n:]) for m in self._terms)

    def max_exponents(self) -> tuple[int, ...]:
        if not self._terms:
            return (0,) * self.ctx.arity
        return tuple(int(v) for v in np.max(np.array(list(self._terms)), axis=0))

    # ring operations
    def _check(self, other: "Polynomial"):
        if other.ctx != self.ctx:
            raise ContextMismatch(f"context {self.ctx} differs from {other.ctx}")

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            self._check(other)
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(self.ctx, float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        out = dict(self._terms)
        for k, v in other._terms.items():
            out[k] = out.get(k, 0.0) + v
        return Polynomial._raw(self.ctx, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial._raw(self.ctx, {k: -v for k, v in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return other - self

    def scale(self, c: float) -> "Polynomial":
        c = float(c)
        return Polynomial._raw(self.ctx, {k: v * c for k, v in self._terms.items()})

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        self._check(other)
        out: dict[Monomial, float] = {}
        get = out.get
        for ka, va in self._terms.items():
            for kb, vb in other._terms.items():
                k = tuple(a + b for a, b in zip(ka, kb))
                out[k] = get(k, 0.0) + va * vb
        return Polynomial._raw(self.ctx, out)

    def __rmul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(other)
        return NotImplemented

    def __pow__(self, k: int):
        if not isinstance(k, (int, np.integer)) or k < 0:
            raise PolynomialError("power must be a nonnegative integer")
        result = Polynomial.constant(self.ctx, 1.0)
        base = self
        k = int(k)
        while k:
            if k & 1:
                result = result * base
            k >>= 1
            if k:
                base = base * base
        return result

    def __eq__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.ctx, other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.ctx == other.ctx and self._terms == other._terms

    __hash__ = None

    # evaluation
    def exponent_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        monos = self.support()
        exps = np.array(monos, dtype=np.int64).reshape(len(monos), self.ctx.arity)
        coeffs = np.array([self._terms[m] for m in monos], dtype=float)
        return exps, coeffs

    def __call__(self, point) -> float:
        point = np.asarray(point, dtype=float)
        if point.shape != (self.ctx.arity,):
            raise PolynomialError(f"point has shape {point.shape}, expected ({self.ctx.arity},)")
        total = 0.0
        for mono, c in self._terms.items():
            term = c
            for xi, e in zip(point, mono):
                if e:
                    term *= xi ** e
            total += term
        return float(total)

    evaluate = __call__

    def evaluate_many(self, points) -> np.ndarray:
        """Evaluate at each row of ``points`` (shape ``(N, arity)``)."""
        from ._kernels import poly_eval

        points = np.ascontiguousarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != self.ctx.arity:
            raise PolynomialError(f"points must have shape (N, {self.ctx.arity})")
        exps, coeffs = self.exponent_matrix()
        return poly_eval(exps, coeffs, points)

    # printing
    def __str__(self) -> str:
        if not self._terms:
            return "0"
        out = []
        for i, mono in enumerate(self.support()):
            c = self._terms[mono]
            body = repr(abs(c))
            if any(mono):
                body = f"{body}*{monomial_str(mono, self.ctx)}"
            if i == 0:
                out.append(f"-{body}" if c < 0 else body)
            else:
                out.append(f"- {body}" if c < 0 else f"+ {body}")
        return " ".join(out)

    def __repr__(self):
        return f"Polynomial({self})"

    # composition and coefficient access
    def compose(self, subst: Sequence["Polynomial"]) -> "Polynomial":
        return compose(self, subst)

    def extract_coeffs(self, basis: Sequence[Monomial]) -> np.ndarray:
        return extract_coeffs(self, basis)


def x_dot_x(ctx: Variables) -> Polynomial:
    terms = {}
    for i in range(ctx.n):
        mono = [0] * ctx.arity
        mono[i] = 2
        terms[tuple(mono)] = 1.0
    return Polynomial(ctx, terms)


def w_dot_w(ctx: Variables) -> Polynomial:
    terms = {}
    for j in range(ctx.m):
        mono = [0] * ctx.arity
        mono[ctx.n + j] = 2
        terms[tuple(mono)] = 1.0
    return Polynomial(ctx, terms)


class PowerCache:
    """Memoised powers of substitution polynomials, shared across many compositions."""

    def __init__(self, subst: Sequence[Polynomial]):
        self.subst = list(subst)
        self._cache: list[dict[int, Polynomial]] = [{} for _ in self.subst]

    def power(self, i: int, k: int) -> Polynomial:
        cache = self._cache[i]
        if k not in cache:
            if k == 0:
                cache[k] = Polynomial.constant(self.subst[i].ctx, 1.0)
            elif k == 1:
                cache[k] = self.subst[i]
            else:
                cache[k] = self.power(i, k // 2) * self.power(i, k - k // 2)
        return cache[k]

    def monomial(self, mono: Monomial) -> Polynomial:
        ctx = self.subst[0].ctx
        out = Polynomial.constant(ctx, 1.0)
        for i, e in enumerate(mono[: len(self.subst)]):
            if e:
                out = out * self.power(i, e)
        return out


def compose(p: Polynomial, subst: Sequence[Polynomial], cache: PowerCache | None = None) -> Polynomial:
    """Replace each state variable of ``p`` with the matching substitute polynomial."""
    n = p.ctx.n
    if len(subst) != n:
        raise PolynomialError(f"compose needs {n} substitutes, got {len(subst)}")
    for s in subst:
        if s.ctx != p.ctx:
            raise ContextMismatch("substitutes must share the polynomial's context")
    if p.depends_on_w():
        raise PolynomialError("compose expects a polynomial in the state variables only")
    cache = cache or PowerCache(subst)
    out: dict[Monomial, float] = {}
    for mono, c in p.items():
        for k, v in cache.monomial(mono).items():
            out[k] = out.get(k, 0.0) + c * v
    return Polynomial._raw(p.ctx, out)


def extract_coeffs(p: Polynomial, basis: Sequence[Monomial]) -> np.ndarray:
    index = {tuple(m): i for i, m in enumerate(basis)}
    v = np.zeros(len(basis))
    for mono, c in p.items():
        if mono not in index:
            raise UnrepresentableTerm(mono, monomial_str(mono, p.ctx))
        v[index[mono]] = c
    return v


def monomials_up_to(num_vars: int, degree: int) -> list[tuple[int, ...]]:
    """All exponent vectors in ``num_vars`` variables with total degree <= degree, grlex."""

    def level(d, slots):
        if slots == 1:
            yield (d,)
            return
        for e in range(d, -1, -1):
            for rest in level(d - e, slots - 1):
                yield (e,) + rest

    if num_vars == 0:
        return [()]
    return [m for d in range(degree + 1) for m in level(d, num_vars)]


def embed(monos: Iterable[tuple[int, ...]], ctx: Variables, positions: Sequence[int]) -> list[Monomial]:
    """Lift monomials over a subset of variables into full-context exponent vectors."""
    lifted = []
    for m in monos:
        full = [0] * ctx.arity
        for pos, e in zip(positions, m):
            full[pos] = e
        lifted.append(tuple(full))
    return lifted


# --- parser -----------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)|(?P<id>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*^()]))"
)


def _tokenize(text: str):
    pos = 0
    tokens = []
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        start = m.start(m.lastgroup)
        kind = m.lastgroup
        value = m.group(kind)
        if kind == "op" and value == "**":
            value = "^"
        tokens.append((kind, value, start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, ctx: Variables):
        self.text = text
        self.ctx = ctx
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, v, pos = self.take()
        if v != value:
            raise ParseError(f"expected {value!r}, found {v or 'end of input'!r}", pos)

    def parse(self) -> Polynomial:
        if self.peek()[0] == "end":
            raise ParseError("empty expression", 0)
        p = self.expr()
        kind, v, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected {v!r}", pos)
        return p

    def expr(self) -> Polynomial:
        p = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            q = self.term()
            p = p + q if op == "+" else p - q
        return p

    def term(self) -> Polynomial:
        sign = 1.0
        while self.peek()[1] in ("+", "-"):
            if self.take()[1] == "-":
                sign = -sign
        p = self.factor()
        while self.peek()[1] == "*":
            self.take()
            p = p * self.factor()
        return p.scale(sign) if sign < 0 else p

    def factor(self) -> Polynomial:
        p = self.base()
        if self.peek()[1] == "^":
            self.take()
            kind, v, pos = self.take()
            if kind != "num" or not v.isdigit():
                raise ParseError(f"exponent must be a nonnegative integer, found {v or 'end of input'!r}", pos)
            p = p ** int(v)
        return p

    def base(self) -> Polynomial:
        kind, v, pos = self.take()
        if kind == "num":
            value = float(v)
            if not math.isfinite(value):
                raise ParseError(f"number {v!r} is not finite", pos)
            return Polynomial.constant(self.ctx, value)
        if kind == "id":
            if v not in self.ctx.names:
                raise ParseError(f"undeclared identifier {v!r}", pos)
            return Polynomial.var(self.ctx, v)
        if v == "(":
            p = self.expr()
            self.expect(")")
            return p
        raise ParseError(f"unexpected {v or 'end of input'!r}", pos)


def parse(text: str, ctx: Variables) -> Polynomial:
    """Parse an expression over ``x1..xn, w1..wm`` into an expanded polynomial."""
    return _Parser(text, ctx).parse()
