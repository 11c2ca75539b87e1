"""SOS programs: affine polynomial constraints compiled to a standard-form SDP.

A program holds unknown polynomials (free or SOS-shaped, over a fixed monomial basis),
unknown scalars (optionally bounded below) and constraints of the form
``expression in SOS``, where the expression is affine in the unknowns.  Compilation
gives each SOS constraint a Gram block over a monomial basis and emits one
coefficient-matching equality row per monomial.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .moments import DisturbanceModel, expect_w
from .poly import (Monomial, Polynomial, PowerCache, UnrepresentableTerm, Variables, compose, embed,
                   grlex_key, monomial_str, monomials_up_to)
from .sdp import SdpProblem, SdpSolution, Settings, Status, solve

log = logging.getLogger(__name__)


class BilinearError(ValueError):
    def __init__(self, left: Sequence[str], right: Sequence[str]):
        super().__init__(f"product of unknowns {sorted(left)} and {sorted(right)} is bilinear")
        self.factors = (tuple(left), tuple(right))


class SosError(RuntimeError):
    def __init__(self, message: str, status: Status | None = None):
        super().__init__(message)
        self.status = status


# --- Gram bases and certificates ----------------------------------------------


def gram_basis(ctx: Variables, degree: int, subset: str = "x") -> list[Monomial]:
    """All monomials of degree <= degree/2 in x (``subset="x"``) or in (x, w) (``"joint"``)."""
    if degree < 0 or degree % 2:
        raise ValueError(f"Gram basis needs an even nonnegative degree, got {degree}")
    if subset == "x":
        positions = list(range(ctx.n))
    elif subset == "joint":
        positions = list(range(ctx.arity))
    else:
        raise ValueError(f"unknown subset {subset!r}")
    return embed(monomials_up_to(len(positions), degree // 2), ctx, positions)


@dataclass
class GramCertificate:
    ctx: Variables
    basis: list[Monomial]
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        k = len(self.basis)
        if self.matrix.shape != (k, k):
            raise ValueError(f"Gram matrix shape {self.matrix.shape} does not match basis length {k}")

    def polynomial(self) -> Polynomial:
        terms: dict[Monomial, float] = {}
        B, Q = self.basis, self.matrix
        for i in range(len(B)):
            for j in range(len(B)):
                mono = tuple(a + b for a, b in zip(B[i], B[j]))
                terms[mono] = terms.get(mono, 0.0) + Q[i, j]
        return Polynomial(self.ctx, terms)

    @property
    def min_eigenvalue(self) -> float:
        if not len(self.basis):
            return 0.0
        return float(np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.T))[0])

    def scaled(self, c: float) -> "GramCertificate":
        return GramCertificate(self.ctx, list(self.basis), c * self.matrix)

    def to_dict(self) -> dict:
        return {"basis": [list(m) for m in self.basis], "matrix": self.matrix.tolist()}

    @classmethod
    def from_dict(cls, ctx: Variables, d: dict) -> "GramCertificate":
        return cls(ctx, [tuple(m) for m in d["basis"]], np.array(d["matrix"], dtype=float).reshape(len(d["basis"]), -1))


def validate_gram(p: Polynomial, g: GramCertificate) -> tuple[float, float]:
    """Return (max coefficient mismatch between p and z'Qz, smallest Gram eigenvalue)."""
    products = {tuple(a + b for a, b in zip(u, v)) for u in g.basis for v in g.basis}
    for mono in p.support():
        if mono not in products:
            raise UnrepresentableTerm(mono, monomial_str(mono, p.ctx))
    diff = p - g.polynomial()
    residual = max((abs(c) for _, c in diff.items()), default=0.0)
    return residual, g.min_eigenvalue


# --- affine expressions ---------------------------------------------------------


class AffineExpr:
    """``const + sum_k coordinate_k * image_k`` over the program's unknown coordinates.

    ``images[name][j]`` is the polynomial multiplying coordinate ``j`` of unknown
    ``name`` (a scalar has one coordinate; a polynomial unknown one per basis monomial).
    """

    __slots__ = ("ctx", "const", "images")

    def __init__(self, ctx: Variables, const: Polynomial | None = None, images: dict | None = None):
        self.ctx = ctx
        self.const = const if const is not None else Polynomial.zero(ctx)
        self.images: dict[str, list[Polynomial]] = images or {}

    @property
    def unknowns(self) -> list[str]:
        return list(self.images)

    def _lift(self, other) -> "AffineExpr":
        if isinstance(other, AffineExpr):
            return other
        if isinstance(other, Polynomial):
            return AffineExpr(self.ctx, other)
        if isinstance(other, (int, float, np.floating, np.integer)):
            return AffineExpr(self.ctx, Polynomial.constant(self.ctx, float(other)))
        return NotImplemented

    def __add__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return NotImplemented
        images = {k: list(v) for k, v in self.images.items()}
        for k, v in other.images.items():
            if k in images:
                images[k] = [a + b for a, b in zip(images[k], v)]
            else:
                images[k] = list(v)
        return AffineExpr(self.ctx, self.const + other.const, images)

    __radd__ = __add__

    def __neg__(self):
        return self.map(lambda p: -p)

    def __sub__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return NotImplemented
        return other + (-self)

    def __mul__(self, other):
        if isinstance(other, AffineExpr):
            if self.images and other.images:
                raise BilinearError(self.unknowns, other.unknowns)
            if not other.images:
                other = other.const
            else:
                return other * self.const
        if isinstance(other, (Polynomial, int, float, np.floating, np.integer)):
            return self.map(lambda p: p * other)
        return NotImplemented

    __rmul__ = __mul__

    def map(self, fn: Callable[[Polynomial], Polynomial]) -> "AffineExpr":
        """Apply a linear map of polynomials to every part of the expression."""
        return AffineExpr(self.ctx, fn(self.const), {k: [fn(p) for p in v] for k, v in self.images.items()})

    def compose(self, subst: Sequence[Polynomial], cache: PowerCache | None = None) -> "AffineExpr":
        cache = cache or PowerCache(subst)
        return self.map(lambda p: compose(p, subst, cache))

    def expect(self, d: DisturbanceModel) -> "AffineExpr":
        return self.map(lambda p: expect_w(p, d))

    def support(self) -> set[Monomial]:
        sup = set(m for m, _ in self.const.items())
        for imgs in self.images.values():
            for p in imgs:
                sup.update(m for m, _ in p.items())
        return sup

    def evaluate(self, values: dict[str, np.ndarray]) -> Polynomial:
        terms = dict(self.const.items())
        for name, imgs in self.images.items():
            coords = np.atleast_1d(values[name])
            for c, p in zip(coords, imgs):
                if c != 0.0:
                    for mono, v in p.items():
                        terms[mono] = terms.get(mono, 0.0) + c * v
        return Polynomial(self.ctx, terms)


# --- programs ------------------------------------------------------------------


@dataclass
class _PolyUnknown:
    name: str
    basis: list[Monomial]
    sos: bool
    bound: float | None


@dataclass
class _ScalarUnknown:
    name: str
    lower: float | None


@dataclass
class _Constraint:
    name: str
    expr: AffineExpr


class SosProgram:
    def __init__(self, ctx: Variables, newton: bool = True):
        self.ctx = ctx
        self.newton = newton
        self.polys: dict[str, _PolyUnknown] = {}
        self.scalars: dict[str, _ScalarUnknown] = {}
        self.constraints: list[_Constraint] = []
        self.objective: AffineExpr | None = None

    def _fresh(self, name):
        if name in self.polys or name in self.scalars:
            raise ValueError(f"unknown {name!r} already declared")

    def poly(self, name: str, basis: Sequence[Monomial], sos: bool = False, bound: float | None = None) -> AffineExpr:
        """Declare an unknown polynomial over ``basis``.

        ``sos=True`` adds the membership constraint ``name in SOS`` (the degree must be
        even).  ``bound`` boxes every coefficient to ``[-bound, bound]``.
        """
        self._fresh(name)
        basis = sorted({tuple(m) for m in basis}, key=grlex_key)
        if sos and max((sum(m) for m in basis), default=0) % 2:
            raise ValueError(f"SOS unknown {name!r} must have even degree")
        self.polys[name] = _PolyUnknown(name, basis, sos, bound)
        expr = AffineExpr(self.ctx, None, {name: [Polynomial.monomial(self.ctx, m) for m in basis]})
        if sos:
            self.constraints.append(_Constraint(name, expr))
        return expr

    def sos_poly(self, name: str, degree: int, subset: str = "x") -> AffineExpr:
        positions = range(self.ctx.n) if subset == "x" else range(self.ctx.arity)
        basis = embed(monomials_up_to(len(positions), degree), self.ctx, list(positions))
        return self.poly(name, basis, sos=True)

    def scalar(self, name: str, lower: float | None = None) -> AffineExpr:
        self._fresh(name)
        self.scalars[name] = _ScalarUnknown(name, lower)
        return AffineExpr(self.ctx, None, {name: [Polynomial.constant(self.ctx, 1.0)]})

    def add_sos(self, name: str, expr: AffineExpr | Polynomial):
        if isinstance(expr, Polynomial):
            expr = AffineExpr(self.ctx, expr)
        if any(c.name == name for c in self.constraints):
            raise ValueError(f"constraint {name!r} already exists")
        for k in expr.images:
            if k not in self.polys and k not in self.scalars:
                raise ValueError(f"constraint {name!r} uses undeclared unknown {k!r}")
        self.constraints.append(_Constraint(name, expr))

    def maximize(self, expr: AffineExpr):
        for k in expr.images:
            if k not in self.scalars:
                raise ValueError("the objective may only involve scalar unknowns")
        if expr.const.degree() > 0:
            raise ValueError("objective must be a scalar expression")
        self.objective = expr

    def compile(self) -> "CompiledSos":
        return compile_program(self)

    def solve(self, settings: Settings | None = None) -> "SosResult":
        return solve_program(self, settings)


# --- compilation ------------------------------------------------------------------


def _newton_filter(candidates: list[Monomial], support: set[Monomial]) -> list[Monomial]:
    """Keep monomials b with 2b in the convex hull of ``support``."""
    if not candidates or not support:
        return []
    pts = np.array(sorted(support), dtype=float)
    cand = np.array(candidates, dtype=float) * 2.0
    active = np.flatnonzero(pts.max(axis=0) > 0)
    # coordinates never present in the support must be zero
    inactive = np.setdiff1d(np.arange(pts.shape[1]), active)
    keep = ~(cand[:, inactive] > 0).any(axis=1) if len(inactive) else np.ones(len(cand), bool)
    keep &= (cand[:, active] <= pts[:, active].max(axis=0) + 1e-9).all(axis=1)
    P = pts[:, active]
    Cc = cand[:, active]
    if P.shape[1] == 0:
        return [candidates[i] for i in np.flatnonzero(keep & (Cc.sum(axis=1) == 0 if Cc.size else keep))]
    inside = None
    if len(P) > P.shape[1] + 1:
        try:
            from scipy.spatial import ConvexHull

            hull = ConvexHull(P)
            inside = (Cc @ hull.equations[:, :-1].T + hull.equations[:, -1] <= 1e-9).all(axis=1)
        except Exception:  # degenerate hull, fall back to LPs
            inside = None
    if inside is None:
        from scipy.optimize import linprog

        inside = np.zeros(len(Cc), dtype=bool)
        A_eq = np.vstack([P.T, np.ones(len(P))])
        for i in np.flatnonzero(keep):
            res = linprog(np.zeros(len(P)), A_eq=A_eq, b_eq=np.append(Cc[i], 1.0), bounds=(0, None),
                          method="highs")
            inside[i] = res.status == 0
    keep &= inside
    return [candidates[i] for i in np.flatnonzero(keep)]


def _diagonal_prune(basis: list[Monomial], support: set[Monomial]) -> list[Monomial]:
    """Drop b when x^(2b) can only arise from Q[b, b] and is absent from the support."""
    basis = list(basis)
    while True:
        pair_count: dict[Monomial, int] = {}
        for i, u in enumerate(basis):
            for v in basis[i + 1:]:
                mono = tuple(a + b for a, b in zip(u, v))
                pair_count[mono] = pair_count.get(mono, 0) + 1
        drop = [u for u in basis if tuple(2 * a for a in u) not in support
                and not pair_count.get(tuple(2 * a for a in u))]
        if not drop:
            return basis
        basis = [u for u in basis if u not in drop]


def constraint_basis(ctx: Variables, support: set[Monomial], newton: bool = True) -> list[Monomial]:
    """Gram basis for an SOS constraint whose coefficients live on ``support``."""
    if not support:
        return []
    uses_w = any(any(m[ctx.n:]) for m in support)
    degree = max(sum(m) for m in support)
    full = gram_basis(ctx, 2 * (degree // 2), "joint" if uses_w else "x")
    if not newton:
        return full
    return _diagonal_prune(_newton_filter(full, support), support)


@dataclass
class CompiledSos:
    program: SosProgram
    problem: SdpProblem | None
    coord_map: dict[str, list[tuple[str, int, float]]]  # unknown -> per-coordinate (kind, index, offset)
    blocks: dict[str, tuple[str, int, list[Monomial]]]  # constraint -> (kind, index, basis)
    infeasible_rows: list[str] = field(default_factory=list)

    @property
    def size_summary(self) -> dict:
        p = self.problem
        if p is None:
            return {}
        return {"rows": p.m, "blocks": list(p.block_sizes), "nonneg": p.n_nonneg, "free": p.n_free}


def compile_program(prog: SosProgram) -> CompiledSos:
    ctx = prog.ctx
    n_free = 0
    n_nonneg = 0
    coord_map: dict[str, list[tuple[str, int, float]]] = {}
    for name, sc in prog.scalars.items():
        if sc.lower is None:
            coord_map[name] = [("free", n_free, 0.0)]
            n_free += 1
        else:
            coord_map[name] = [("nonneg", n_nonneg, float(sc.lower))]
            n_nonneg += 1
    for name, pu in prog.polys.items():
        coord_map[name] = [("free", n_free + j, 0.0) for j in range(len(pu.basis))]
        n_free += len(pu.basis)

    rows_psd: list[list[float]] = []
    rows_nn: list[list[float]] = []
    rows_free: list[list[float]] = []
    rhs: list[float] = []
    block_sizes: list[int] = []
    blocks: dict[str, tuple[str, int, list[Monomial]]] = {}
    infeasible: list[str] = []

    def add_row(entries_psd, entries_nn, entries_free, value):
        if not entries_psd and not entries_nn and not entries_free:
            return value
        r = len(rhs)
        rhs.append(value)
        rows_psd.extend([r, *e] for e in entries_psd)
        rows_nn.extend([r, *e] for e in entries_nn)
        rows_free.extend([r, *e] for e in entries_free)
        return 0.0

    # coefficient box bounds
    for name, pu in prog.polys.items():
        if pu.bound is None:
            continue
        C = float(pu.bound)
        for kind, idx, _ in coord_map[name]:
            lo, hi = n_nonneg, n_nonneg + 1
            n_nonneg += 2
            add_row([], [[lo, -1.0]], [[idx, 1.0]], -C)
            add_row([], [[hi, 1.0]], [[idx, 1.0]], C)

    for con in prog.constraints:
        expr = con.expr
        support = expr.support()
        basis = constraint_basis(ctx, support, prog.newton)
        if basis and max(sum(m) for m in basis) == 0 and len(basis) == 1:
            kind, index = "nonneg", n_nonneg
            n_nonneg += 1
        elif basis:
            kind, index = "psd", len(block_sizes)
            block_sizes.append(len(basis))
        else:
            kind, index = "none", -1
        blocks[con.name] = (kind, index, basis)

        gram_terms: dict[Monomial, list[tuple[int, int, float]]] = {}
        for i in range(len(basis)):
            for j in range(i, len(basis)):
                mono = tuple(a + b for a, b in zip(basis[i], basis[j]))
                gram_terms.setdefault(mono, []).append((i, j, 1.0 if i == j else 2.0))
        coeffs: dict[Monomial, list[tuple[str, int, float]]] = {}
        for name, imgs in expr.images.items():
            for j, img in enumerate(imgs):
                ref = coord_map[name][j]
                for mono, c in img.items():
                    coeffs.setdefault(mono, []).append((ref[0], ref[1], c, ref[2]))
        for mono in sorted(support | set(gram_terms), key=grlex_key):
            value = expr.const.coeff(mono)
            ent_psd, ent_nn, ent_free = [], [], []
            for i, j, v in gram_terms.get(mono, []):
                if kind == "psd":
                    ent_psd.append([index, i, j, v])
                else:
                    ent_nn.append([index, v])
            acc_nn: dict[int, float] = {}
            acc_free: dict[int, float] = {}
            for ckind, idx, c, offset in coeffs.get(mono, []):
                value += offset * c
                if ckind == "free":
                    acc_free[idx] = acc_free.get(idx, 0.0) - c
                else:
                    acc_nn[idx] = acc_nn.get(idx, 0.0) - c
            ent_nn += [[i, v] for i, v in acc_nn.items() if v != 0.0]
            ent_free += [[i, v] for i, v in acc_free.items() if v != 0.0]
            leftover = add_row(ent_psd, ent_nn, ent_free, value)
            if abs(leftover) > 1e-12:
                infeasible.append(f"{con.name}: coefficient of {monomial_str(mono, ctx)} is fixed at "
                                  f"{leftover:g} but no unknown or Gram entry can match it")

    if infeasible or not rhs:
        return CompiledSos(prog, None, coord_map, blocks, infeasible)

    c_nn = np.zeros(n_nonneg)
    c_free = np.zeros(n_free)
    offset = 0.0
    if prog.objective is not None:
        offset = prog.objective.const.coeff((0,) * ctx.arity)
        for name, imgs in prog.objective.images.items():
            kind, idx, lo = coord_map[name][0]
            w = imgs[0].coeff((0,) * ctx.arity)
            if kind == "free":
                c_free[idx] += w
            else:
                c_nn[idx] += w
                offset += w * lo
    problem = SdpProblem(block_sizes, n_nonneg, n_free, np.array(rhs), rows_psd, rows_nn, rows_free,
                         c_nonneg=c_nn, c_free=c_free, offset=offset)
    return CompiledSos(prog, problem, coord_map, blocks)


# --- solving and recovery -------------------------------------------------------------


@dataclass
class SosResult:
    status: Status
    values: dict[str, object] = field(default_factory=dict)
    grams: dict[str, GramCertificate] = field(default_factory=dict)
    objective: float | None = None
    solution: SdpSolution | None = None
    compiled: CompiledSos | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status.usable

    def constraint_residuals(self) -> dict[str, tuple[float, float]]:
        """validate_gram for every constraint, re-evaluated from the recovered unknowns."""
        prog = self.compiled.program
        raw = _raw_values(self)
        out = {}
        for con in prog.constraints:
            p = con.expr.evaluate(raw)
            out[con.name] = validate_gram(p, self.grams[con.name])
        return out


def _raw_values(result: SosResult) -> dict[str, np.ndarray]:
    prog = result.compiled.program
    raw = {}
    for name, pu in prog.polys.items():
        raw[name] = result.values[name].extract_coeffs(pu.basis)
    for name in prog.scalars:
        raw[name] = np.array([result.values[name]])
    return raw


def recover(compiled: CompiledSos, sol: SdpSolution) -> SosResult:
    if not sol.status.usable:
        raise SosError(f"cannot recover certificates from a {sol.status.value} solution", sol.status)
    prog = compiled.program
    ctx = prog.ctx

    def coord_value(kind, idx, offset):
        return (sol.u[idx] if kind == "free" else sol.x_nonneg[idx]) + offset

    values: dict[str, object] = {}
    for name, sc in prog.scalars.items():
        values[name] = float(coord_value(*compiled.coord_map[name][0]))
    for name, pu in prog.polys.items():
        coeffs = [coord_value(*ref) for ref in compiled.coord_map[name]]
        values[name] = Polynomial.from_coeffs(ctx, pu.basis, coeffs)
    grams = {}
    for cname, (kind, idx, basis) in compiled.blocks.items():
        if kind == "psd":
            mat = sol.X[idx]
        elif kind == "nonneg":
            mat = np.array([[sol.x_nonneg[idx]]])
        else:
            mat = np.zeros((0, 0))
        grams[cname] = GramCertificate(ctx, basis, mat)
    return SosResult(sol.status, values, grams, sol.objective, sol, compiled, list(sol.notes))


def solve_program(prog: SosProgram, settings: Settings | None = None) -> SosResult:
    compiled = compile_program(prog)
    if compiled.problem is None:
        if compiled.infeasible_rows:
            return SosResult(Status.PRIMAL_INFEASIBLE, compiled=compiled, notes=list(compiled.infeasible_rows))
        raise SosError("program has no constraints")
    log.debug("compiled SOS program: %s", compiled.size_summary)
    sol = solve(compiled.problem, settings)
    if not sol.status.usable:
        return SosResult(sol.status, objective=None, solution=sol, compiled=compiled, notes=list(sol.notes))
    return recover(compiled, sol)
