"""Dense primal-dual interior-point solver for small standard-form SDPs.

Problem (maximize form, as stored)::

    maximize    <C, X> + c_l . x_l + c_f . u
    subject to  A(X) + A_l x_l + B u = b
                X_k >= 0 (PSD blocks),  x_l >= 0,  u free

Constraint rows are stored as triplets.  A PSD triplet ``(row, block, p, q, v)`` with
``p <= q`` contributes ``v * X_block[p, q]`` to ``row``; only upper-triangle entries are
decision entries.  Objective entries use the same convention.

Internally the solver minimizes the negated objective with an infeasible-start
path-following method: Nesterov-Todd scaling, Mehrotra predictor-corrector, free
variables kept in an augmented Schur system.  Infeasibility is declared from
approximate Farkas rays read off the iterates, with a dual-objective divergence
cutoff as a fallback heuristic.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg as sla
from scipy import sparse

from ._kernels import schur_block

log = logging.getLogger(__name__)


class Status(str, Enum):
    OPTIMAL = "Optimal"
    FEASIBLE = "Feasible"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"
    DUAL_INFEASIBLE = "DualInfeasible"
    STALLED = "Stalled"
    ITERATION_LIMIT = "IterationLimit"

    @property
    def usable(self) -> bool:
        return self in (Status.OPTIMAL, Status.FEASIBLE)


class SdpError(ValueError):
    pass


@dataclass
class Settings:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iter: int = 100
    infeas_tol: float = 1e-8
    divergence: float = 1e10
    step_fraction: float = 0.98
    phase1_tol: float = 1e-6
    accept_tol: float = 1e-6  # primal residual accepted as Feasible when the method stalls
    phase1: bool = True
    facial_reduction: bool = True
    backend: str | None = None


@dataclass
class SdpProblem:
    block_sizes: list[int]
    n_nonneg: int
    n_free: int
    b: np.ndarray
    psd: np.ndarray  # (E, 5): row, block, p, q, value
    nonneg: np.ndarray  # (E, 3): row, index, value
    free: np.ndarray  # (E, 3): row, index, value
    c_psd: np.ndarray = None  # (E, 4): block, p, q, value
    c_nonneg: np.ndarray = None
    c_free: np.ndarray = None
    offset: float = 0.0

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        self.block_sizes = [int(s) for s in self.block_sizes]
        self.psd = np.asarray(self.psd, dtype=float).reshape(-1, 5)
        self.nonneg = np.asarray(self.nonneg, dtype=float).reshape(-1, 3)
        self.free = np.asarray(self.free, dtype=float).reshape(-1, 3)
        self.c_psd = np.zeros((0, 4)) if self.c_psd is None else np.asarray(self.c_psd, dtype=float).reshape(-1, 4)
        self.c_nonneg = np.zeros(self.n_nonneg) if self.c_nonneg is None else np.asarray(self.c_nonneg, dtype=float)
        self.c_free = np.zeros(self.n_free) if self.c_free is None else np.asarray(self.c_free, dtype=float)
        self.validate()

    @property
    def m(self) -> int:
        return len(self.b)

    def validate(self):
        m = self.m
        if m == 0 and not self.block_sizes and not self.n_nonneg and not self.n_free:
            raise SdpError("structurally empty problem")
        if self.c_nonneg.shape != (self.n_nonneg,) or self.c_free.shape != (self.n_free,):
            raise SdpError("objective vector sizes do not match the variables")
        if any(s <= 0 for s in self.block_sizes):
            raise SdpError("block sizes must be positive")
        for name, arr, idx_col, bound in (("nonneg", self.nonneg, 1, self.n_nonneg),
                                          ("free", self.free, 1, self.n_free)):
            if len(arr) and (arr[:, idx_col].min() < 0 or arr[:, idx_col].max() >= bound):
                raise SdpError(f"{name} variable index out of range")
        if len(self.psd):
            blk = self.psd[:, 1].astype(int)
            if blk.min() < 0 or blk.max() >= len(self.block_sizes):
                raise SdpError("block index out of range")
            sizes = np.array(self.block_sizes)[blk]
            p, q = self.psd[:, 2], self.psd[:, 3]
            if (p < 0).any() or (p > q).any() or (q >= sizes).any():
                raise SdpError("PSD entries must satisfy 0 <= p <= q < block size")
        referenced = np.zeros(m, dtype=bool)
        for arr in (self.psd, self.nonneg, self.free):
            if len(arr):
                rows = arr[:, 0].astype(int)
                if rows.min() < 0 or rows.max() >= m:
                    raise SdpError("row index out of range")
                referenced[rows[arr[:, -1] != 0]] = True
        if not referenced.all():
            raise SdpError(f"equality row {int(np.argmin(referenced))} references no variable")

    # --- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": "sosreach-sdp-triplet/1",
            "sense": "maximize",
            "block_sizes": self.block_sizes,
            "n_nonneg": self.n_nonneg,
            "n_free": self.n_free,
            "b": self.b.tolist(),
            "rows": {
                "psd": [[int(r), int(k), int(p), int(q), float(v)] for r, k, p, q, v in self.psd],
                "nonneg": [[int(r), int(i), float(v)] for r, i, v in self.nonneg],
                "free": [[int(r), int(i), float(v)] for r, i, v in self.free],
            },
            "objective": {
                "psd": [[int(k), int(p), int(q), float(v)] for k, p, q, v in self.c_psd],
                "nonneg": self.c_nonneg.tolist(),
                "free": self.c_free.tolist(),
                "offset": self.offset,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SdpProblem":
        if d.get("format") != "sosreach-sdp-triplet/1":
            raise SdpError("unrecognised SDP serialization format")
        return cls(
            block_sizes=d["block_sizes"], n_nonneg=d["n_nonneg"], n_free=d["n_free"], b=d["b"],
            psd=d["rows"]["psd"], nonneg=d["rows"]["nonneg"], free=d["rows"]["free"],
            c_psd=d["objective"]["psd"], c_nonneg=d["objective"]["nonneg"],
            c_free=d["objective"]["free"], offset=d["objective"].get("offset", 0.0),
        )

    def dump(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    # --- evaluation helpers (in the stored, maximize, convention) ---------------
    def apply(self, X: list[np.ndarray], x_l: np.ndarray, u: np.ndarray) -> np.ndarray:
        out = np.zeros(self.m)
        if len(self.psd):
            r, k, p, q = (self.psd[:, i].astype(int) for i in range(4))
            vals = np.array([X[kk][pp, qq] for kk, pp, qq in zip(k, p, q)])
            np.add.at(out, r, self.psd[:, 4] * vals)
        for arr, vec in ((self.nonneg, x_l), (self.free, u)):
            if len(arr):
                np.add.at(out, arr[:, 0].astype(int), arr[:, 2] * vec[arr[:, 1].astype(int)])
        return out

    def objective_value(self, X, x_l, u) -> float:
        val = self.offset + float(self.c_nonneg @ x_l) + float(self.c_free @ u)
        for k, p, q, v in self.c_psd:
            val += v * X[int(k)][int(p), int(q)]
        return val


@dataclass
class SdpSolution:
    status: Status
    X: list[np.ndarray]
    x_nonneg: np.ndarray
    u: np.ndarray
    y: np.ndarray
    Z: list[np.ndarray]
    objective: float
    dual_objective: float
    gap: float
    primal_residual: float
    dual_residual: float
    iterations: int
    notes: list[str] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "status": self.status.value,
            "objective": self.objective,
            "dual_objective": self.dual_objective,
            "gap": self.gap,
            "primal_residual": self.primal_residual,
            "dual_residual": self.dual_residual,
            "iterations": self.iterations,
            "notes": list(self.notes),
        }


class _Block:
    """Constraint data and symmetric-matrix helpers for one PSD block."""

    def __init__(self, size, rows, p, q, v, m):
        self.n = size
        self.rows, self.p, self.q, self.v = rows, p, q, v
        self.m = m
        self.diag = p == q

    def apply(self, X):
        return np.bincount(self.rows, self.v * X[self.p, self.q], minlength=self.m)

    def adjoint(self, y):
        vals = y[self.rows] * self.v
        S = np.zeros((self.n, self.n))
        np.add.at(S, (self.p, self.q), 0.5 * vals)
        np.add.at(S, (self.q, self.p), 0.5 * vals)
        return S

    def row_norms_sq(self):
        w = np.where(self.diag, self.v**2, 0.5 * self.v**2)
        return np.bincount(self.rows, w, minlength=self.m)


def _sym_from_entries(n, p, q, v):
    S = np.zeros((n, n))
    np.add.at(S, (p, q), 0.5 * v)
    np.add.at(S, (q, p), 0.5 * v)
    return S


def _nt_scaling(X, Z):
    Lx = np.linalg.cholesky(X)
    Lz = np.linalg.cholesky(Z)
    U, s, Vt = np.linalg.svd(Lz.T @ Lx)
    G = Lx @ (Vt.T / np.sqrt(s))
    Ginv = (G.T @ Z) / s[:, None]
    return G, Ginv, s


def _max_step(lam, d):
    """Largest a with diag(lam) + a*d PSD (d symmetric, in scaled coordinates)."""
    r = 1.0 / np.sqrt(lam)
    ev = np.linalg.eigvalsh(r[:, None] * d * r[None, :])
    lo = ev[0]
    return math.inf if lo >= 0 else -1.0 / lo


def _max_step_lp(x, dx):
    neg = dx < 0
    if not neg.any():
        return math.inf
    return float(np.min(-x[neg] / dx[neg]))


def solve(problem: SdpProblem, settings: Settings | None = None, **overrides) -> SdpSolution:
    """Solve ``problem``; never raises on numerical trouble (reports ``Stalled``)."""
    s = settings or Settings()
    if overrides:
        s = Settings(**{**s.__dict__, **overrides})
    if s.facial_reduction:
        from .facial import reduce

        red = reduce(problem)
        if red.infeasible:
            return _infeasible_solution(problem, red.certificate, red.notes)
        if red.changed:
            sol = _solve_core(red.problem, s)
            return _lift(problem, red, sol)
    return _solve_core(problem, s)


def _solve_core(problem: SdpProblem, s: Settings) -> SdpSolution:
    sol = _Solver(problem, s).run()
    if s.phase1 and sol.status in (Status.STALLED, Status.ITERATION_LIMIT) and sol.primal_residual > s.accept_tol:
        sol = _phase1_check(problem, s, sol)
    return sol


def _infeasible_solution(problem: SdpProblem, y: np.ndarray, notes: list[str]) -> SdpSolution:
    return SdpSolution(Status.PRIMAL_INFEASIBLE, [np.zeros((k, k)) for k in problem.block_sizes],
                       np.zeros(problem.n_nonneg), np.zeros(problem.n_free), y,
                       [np.zeros((k, k)) for k in problem.block_sizes], math.nan, math.nan, math.nan,
                       math.inf, math.nan, 0, list(notes))


def _lift(problem: SdpProblem, red, sol: SdpSolution) -> SdpSolution:
    """Embed a solution of the facially reduced problem into the original variable shapes."""
    X, Z = [], []
    it_x, it_z = iter(sol.X), iter(sol.Z)
    for size, keep in zip(problem.block_sizes, red.keep_index):
        Xf, Zf = np.zeros((size, size)), np.zeros((size, size))
        if len(keep):
            Xf[np.ix_(keep, keep)] = next(it_x)
            Zf[np.ix_(keep, keep)] = next(it_z)
        X.append(Xf)
        Z.append(Zf)
    x_l = np.zeros(problem.n_nonneg)
    x_l[red.keep_nonneg] = sol.x_nonneg
    y = np.zeros(problem.m)
    y[red.keep_rows] = sol.y
    return SdpSolution(sol.status, X, x_l, sol.u, y, Z, sol.objective, sol.dual_objective, sol.gap,
                       sol.primal_residual, sol.dual_residual, sol.iterations, red.notes + sol.notes)


def elastic_problem(problem: SdpProblem) -> SdpProblem:
    """Same rows with slacks p, n >= 0 added (row r gets +p_r - n_r); maximize -(sum p + n)."""
    m = problem.m
    rows = np.arange(m, dtype=float)
    base = problem.n_nonneg
    extra = np.vstack([np.column_stack([rows, base + rows, np.ones(m)]),
                       np.column_stack([rows, base + m + rows, -np.ones(m)])])
    nonneg = np.vstack([problem.nonneg, extra]) if len(problem.nonneg) else extra
    c_nonneg = np.concatenate([np.zeros(problem.n_nonneg), -np.ones(2 * m)])
    return SdpProblem(list(problem.block_sizes), problem.n_nonneg + 2 * m, problem.n_free, problem.b,
                      problem.psd, nonneg, problem.free, c_nonneg=c_nonneg,
                      c_free=np.zeros(problem.n_free))


def _phase1_check(problem: SdpProblem, s: Settings, sol: SdpSolution) -> SdpSolution:
    """Decide infeasibility of a run that failed to converge by minimizing the l1 row violation."""
    aux = _Solver(elastic_problem(problem), Settings(**{**s.__dict__, "phase1": False})).run()
    if not aux.status.usable:
        sol.notes.append(f"elastic phase-1 inconclusive ({aux.status.value})")
        return sol
    violation = -aux.objective
    b_norm = 1.0 + float(np.max(np.abs(problem.b), initial=0.0))
    sol.notes.append(f"elastic phase-1: minimal l1 row violation {violation:.3e}")
    if violation > s.phase1_tol * b_norm and aux.gap < 1e-3:
        sol.status = Status.PRIMAL_INFEASIBLE
        sol.y = aux.y
    return sol


class _Solver:
    def __init__(self, prob: SdpProblem, s: Settings):
        self.prob, self.s = prob, s
        m = prob.m
        self.m = m
        # row equilibration
        norms = np.zeros(m)
        psd = prob.psd
        if len(psd):
            r = psd[:, 0].astype(int)
            w = np.where(psd[:, 2] == psd[:, 3], psd[:, 4] ** 2, 0.5 * psd[:, 4] ** 2)
            norms += np.bincount(r, w, minlength=m)
        for arr in (prob.nonneg, prob.free):
            if len(arr):
                norms += np.bincount(arr[:, 0].astype(int), arr[:, 2] ** 2, minlength=m)
        self.rscale = 1.0 / np.sqrt(np.maximum(norms, 1e-300))
        self.b = prob.b * self.rscale

        self.blocks = []
        blk = psd[:, 1].astype(int) if len(psd) else np.zeros(0, int)
        for k, size in enumerate(prob.block_sizes):
            sel = blk == k
            rows = psd[sel, 0].astype(np.int64)
            self.blocks.append(_Block(size, rows, psd[sel, 2].astype(np.int64), psd[sel, 3].astype(np.int64),
                                      psd[sel, 4] * self.rscale[rows], m))
        # minimize the negated objective
        self.C = []
        cblk = prob.c_psd[:, 0].astype(int) if len(prob.c_psd) else np.zeros(0, int)
        for k, size in enumerate(prob.block_sizes):
            sel = cblk == k
            self.C.append(-_sym_from_entries(size, prob.c_psd[sel, 1].astype(int), prob.c_psd[sel, 2].astype(int),
                                             prob.c_psd[sel, 3]))
        self.c_l = -prob.c_nonneg
        self.c_u = -prob.c_free

        def spmat(arr, ncols):
            if not len(arr):
                return sparse.csr_matrix((m, ncols))
            rows = arr[:, 0].astype(int)
            return sparse.csr_matrix((arr[:, 2] * self.rscale[rows], (rows, arr[:, 1].astype(int))), shape=(m, ncols))

        self.A_l = spmat(prob.nonneg, prob.n_nonneg)
        self.B = spmat(prob.free, prob.n_free).toarray()
        self.nu = sum(prob.block_sizes) + prob.n_nonneg
        self.free_qr = None
        self.free_null = []
        if prob.n_free:
            Q, R, piv = sla.qr(self.B, pivoting=True)
            d = np.abs(np.diag(R))
            r = int(np.sum(d > 1e-12 * max(1.0, float(d[0]) if len(d) else 1.0)))
            self.free_qr = (Q[:, :r], Q[:, r:], R, piv, r)
            # free columns that are linear combinations of others (or unused)
            self.free_null = list(piv[r:])

    # operators
    def A(self, X, x_l):
        out = self.A_l @ x_l if self.prob.n_nonneg else np.zeros(self.m)
        for blk, Xk in zip(self.blocks, X):
            out = out + blk.apply(Xk)
        return out

    def residuals(self, X, x_l, u, y, Z, z_l):
        rp = self.b - self.A(X, x_l) - self.B @ u
        Rd = [Ck - Zk - blk.adjoint(y) for Ck, Zk, blk in zip(self.C, Z, self.blocks)]
        rl = self.c_l - z_l - self.A_l.T @ y
        ru = self.c_u - self.B.T @ y
        return rp, Rd, rl, ru

    def initial_point(self):
        b_inf = np.abs(self.b)
        X, Z = [], []
        for blk, Ck in zip(self.blocks, self.C):
            n = blk.n
            an = np.sqrt(blk.row_norms_sq())
            used = an > 0
            xi = max(10.0, math.sqrt(n), n * float(np.max((1 + b_inf[used]) / (1 + an[used]), initial=0)))
            eta = max(10.0, math.sqrt(n), float(np.max(an, initial=0)), float(np.linalg.norm(Ck)))
            X.append(xi * np.eye(n))
            Z.append(eta * np.eye(n))
        nl = self.prob.n_nonneg
        if nl:
            an = np.sqrt(np.asarray(self.A_l.multiply(self.A_l).sum(axis=1)).ravel())
            used = an > 0
            xi = max(10.0, float(np.max((1 + b_inf[used]) / (1 + an[used]), initial=0)))
            cn = np.sqrt(np.asarray(self.A_l.multiply(self.A_l).sum(axis=0)).ravel())
            eta = max(10.0, float(np.max(cn, initial=0)), float(np.max(np.abs(self.c_l), initial=0)))
        else:
            xi = eta = 10.0
        x_l = xi * np.ones(nl)
        z_l = eta * np.ones(nl)
        return X, x_l, np.zeros(self.prob.n_free), np.zeros(self.m), Z, z_l

    def run(self) -> SdpSolution:
        s = self.s
        X, x_l, u, y, Z, z_l = self.initial_point()
        b_norm = 1.0 + float(np.max(np.abs(self.prob.b), initial=0.0))
        c_norm = 1.0 + max([float(np.max(np.abs(c), initial=0)) for c in self.C]
                           + [float(np.max(np.abs(self.c_l), initial=0)), float(np.max(np.abs(self.c_u), initial=0))])
        best = None
        status = Status.ITERATION_LIMIT
        notes: list[str] = []
        it = 0
        stall = 0
        for it in range(s.max_iter + 1):
            rp, Rd, rl, ru = self.residuals(X, x_l, u, y, Z, z_l)
            pobj = sum(float(np.sum(Ck * Xk)) for Ck, Xk in zip(self.C, X)) + float(self.c_l @ x_l) + float(self.c_u @ u)
            dobj = float(self.b @ y)
            xz = sum(float(np.sum(Xk * Zk)) for Xk, Zk in zip(X, Z)) + float(x_l @ z_l)
            mu = xz / self.nu if self.nu else 0.0
            # residuals in the original row scaling
            p_res = float(np.max(np.abs(rp / self.rscale), initial=0.0)) / b_norm
            d_res = max([float(np.max(np.abs(R), initial=0)) for R in Rd]
                        + [float(np.max(np.abs(rl), initial=0)), float(np.max(np.abs(ru), initial=0))]) / c_norm
            gap = max(abs(pobj - dobj), xz) / (1.0 + min(abs(pobj), abs(dobj)))
            state = (X, x_l, u, y, Z, z_l, pobj, dobj, gap, p_res, d_res)
            if best is None or _better(state, best):
                best = state
            log.debug("it %d pobj %.6e dobj %.6e gap %.2e pres %.2e dres %.2e mu %.2e", it, pobj, dobj, gap,
                      p_res, d_res, mu)
            if p_res <= s.feas_tol and d_res <= s.feas_tol and gap <= s.gap_tol:
                status = Status.OPTIMAL
                best = state
                break
            # approximate Farkas rays
            if dobj > 0:
                ray = (sum(float(np.linalg.norm(Ck - R)) for Ck, R in zip(self.C, Rd))
                       + float(np.linalg.norm(self.c_l - rl)) + float(np.linalg.norm(self.c_u - ru))) / dobj
                if ray < s.infeas_tol or (dobj > s.divergence and ray < 1e-3):
                    status = Status.PRIMAL_INFEASIBLE
                    if ray >= s.infeas_tol:
                        notes.append("primal infeasibility declared by dual-objective divergence heuristic")
                    best = state
                    break
            if pobj < 0:
                ray = float(np.linalg.norm(self.b - rp)) / -pobj
                if ray < s.infeas_tol or (-pobj > s.divergence and ray < 1e-3):
                    status = Status.DUAL_INFEASIBLE
                    if ray >= s.infeas_tol:
                        notes.append("dual infeasibility declared by primal-objective divergence heuristic")
                    best = state
                    break
            if it == s.max_iter:
                status = Status.ITERATION_LIMIT
                break
            # iterates drifting far from the best point seen: numerical trouble, keep the best
            if best is not state and p_res > max(1e3 * best[9], 1e-6) and best[9] <= 1e-6:
                notes.append(f"iterates degraded at iteration {it}; returning the best point")
                status = Status.STALLED
                break
            if mu <= 1e-14 * (1.0 + abs(pobj)) and best is not state:
                notes.append(f"complementarity exhausted at iteration {it} without meeting tolerances")
                status = Status.STALLED
                break
            try:
                step = self.step(X, x_l, u, y, Z, z_l, rp, Rd, rl, ru, mu)
            except (np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
                notes.append(f"numerical breakdown at iteration {it}: {exc}")
                status = Status.STALLED
                break
            X, x_l, u, y, Z, z_l, ap, ad = step
            if max(ap, ad) < 1e-9:
                stall += 1
                if stall >= 3:
                    notes.append(f"step length collapsed at iteration {it}")
                    status = Status.STALLED
                    break
            else:
                stall = 0
        X, x_l, u, y, Z, z_l, pobj, dobj, gap, p_res, d_res = best
        if status in (Status.STALLED, Status.ITERATION_LIMIT) and p_res <= s.accept_tol:
            notes.append(f"terminated early ({status.value}) at a primal-feasible point")
            status = Status.FEASIBLE
        # the internal problem minimizes -objective; report in maximize form
        return SdpSolution(
            status=status, X=[0.5 * (Xk + Xk.T) for Xk in X], x_nonneg=x_l, u=u, y=y * self.rscale,
            Z=Z, objective=-pobj + self.prob.offset, dual_objective=-dobj + self.prob.offset, gap=gap,
            primal_residual=p_res, dual_residual=d_res, iterations=it, notes=notes,
        )

    def step(self, X, x_l, u, y, Z, z_l, rp, Rd, rl, ru, mu):
        s = self.s
        m = self.m
        scal = [_nt_scaling(Xk, Zk) for Xk, Zk in zip(X, Z)]
        W = [G @ G.T for G, _, _ in scal]
        d_l = x_l / z_l
        lam_l = np.sqrt(x_l * z_l)

        M = np.zeros((m, m))
        for blk, Wk in zip(self.blocks, W):
            if len(blk.rows):
                M += schur_block(Wk, blk.rows, blk.p, blk.q, blk.v, m, s.backend)
        if self.prob.n_nonneg:
            Al = self.A_l
            M += (Al.multiply(d_l[None, :]) @ Al.T).toarray()
        fq = self.free_qr
        if fq is None:
            Mr = M
        else:
            Q1, Q2, R, piv, r = fq
            Mr = Q2.T @ M @ Q2
        chol, use_lu = None, False
        if Mr.shape[0]:
            jitter = 1e-15 * max(1.0, float(np.max(np.abs(np.diag(Mr)), initial=0.0)))
            try:
                chol = sla.cho_factor(Mr + jitter * np.eye(len(Mr)), check_finite=True)
            except np.linalg.LinAlgError:
                chol, use_lu = sla.lu_factor(Mr + jitter * np.eye(len(Mr)), check_finite=True), True

        def msolve(rhs):
            if use_lu:
                return sla.lu_solve(chol, rhs)
            return sla.cho_solve(chol, rhs)

        def newton(r1, r2):
            """Solve M dy + B du = r1, B' dy = r2 with the free columns eliminated."""
            if fq is None:
                dy = msolve(r1)
                dy += msolve(r1 - M @ dy)
                return dy, np.zeros(0)
            Q1, Q2, R, piv, r = fq
            a = sla.solve_triangular(R[:r, :r], r2[piv[:r]], trans="T")
            dy = Q1 @ a
            if Q2.shape[1]:
                t = Q2.T @ (r1 - M @ dy)
                c = msolve(t)
                c += msolve(t - Mr @ c)
                dy = dy + Q2 @ c
            du = np.zeros(len(piv))
            du[piv[:r]] = sla.solve_triangular(R[:r, :r], Q1.T @ (r1 - M @ dy))
            return dy, du

        def solve_dir(Rc, Rc_l):
            rhs = rp.copy()
            for blk, Wk, Rck, Rdk in zip(self.blocks, W, Rc, Rd):
                rhs += -blk.apply(Rck) + blk.apply(Wk @ Rdk @ Wk)
            if self.prob.n_nonneg:
                rhs += -(self.A_l @ Rc_l) + self.A_l @ (d_l * rl)
            dy, du = newton(rhs, ru)
            dZ = [Rdk - blk.adjoint(dy) for Rdk, blk in zip(Rd, self.blocks)]
            dX = [Rck - Wk @ dZk @ Wk for Rck, Wk, dZk in zip(Rc, W, dZ)]
            dX = [0.5 * (d + d.T) for d in dX]
            dz_l = rl - self.A_l.T @ dy
            dx_l = Rc_l - d_l * dz_l
            return dX, dx_l, du, dy, dZ, dz_l

        def scaled(dX, dZ):
            xs = [Ginv @ d @ Ginv.T for (G, Ginv, lam), d in zip(scal, dX)]
            zs = [G.T @ d @ G for (G, Ginv, lam), d in zip(scal, dZ)]
            return xs, zs

        def steps(xs, zs, dx_l, dz_l):
            ap = min([_max_step(lam, d) for (_, _, lam), d in zip(scal, xs)] + [_max_step_lp(x_l, dx_l), math.inf])
            ad = min([_max_step(lam, d) for (_, _, lam), d in zip(scal, zs)] + [_max_step_lp(z_l, dz_l), math.inf])
            return ap, ad

        def lyap(lam, R):
            return 2.0 * R / (lam[:, None] + lam[None, :])

        # predictor
        Rc = [G @ lyap(lam, -np.diag(lam**2)) @ G.T for G, _, lam in scal]
        Rc_l = -x_l
        dX, dx_l, du, dy, dZ, dz_l = solve_dir(Rc, Rc_l)
        xs, zs = scaled(dX, dZ)
        ap, ad = steps(xs, zs, dx_l, dz_l)
        ap, ad = min(1.0, ap), min(1.0, ad)
        xz_aff = sum(float(np.sum((Xk + ap * dk) * (Zk + ad * ek))) for Xk, dk, Zk, ek in zip(X, dX, Z, dZ))
        xz_aff += float((x_l + ap * dx_l) @ (z_l + ad * dz_l))
        mu_aff = xz_aff / self.nu if self.nu else 0.0
        sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0

        # corrector
        Rc = []
        for (G, _, lam), xa, za in zip(scal, xs, zs):
            jordan = 0.5 * (xa @ za + za @ xa)
            R = sigma * mu * np.eye(len(lam)) - np.diag(lam**2) - jordan
            Rc.append(G @ lyap(lam, R) @ G.T)
        # LP block in the same scaled form: lam * (xs + zs) = sigma mu - lam^2 - xs_a zs_a
        if self.prob.n_nonneg:
            g_l = np.sqrt(d_l)
            xa_l, za_l = dx_l / g_l, dz_l * g_l
            Rc_l = g_l * (sigma * mu - lam_l**2 - xa_l * za_l) / lam_l
        else:
            Rc_l = np.zeros(0)
        dX, dx_l, du, dy, dZ, dz_l = solve_dir(Rc, Rc_l)
        xs, zs = scaled(dX, dZ)
        ap, ad = steps(xs, zs, dx_l, dz_l)
        ap = min(1.0, s.step_fraction * ap)
        ad = min(1.0, s.step_fraction * ad)
        X = [Xk + ap * d for Xk, d in zip(X, dX)]
        Z = [Zk + ad * d for Zk, d in zip(Z, dZ)]
        X = [0.5 * (Xk + Xk.T) for Xk in X]
        Z = [0.5 * (Zk + Zk.T) for Zk in Z]
        return X, x_l + ap * dx_l, u + ap * du, y + ad * dy, Z, z_l + ad * dz_l, ap, ad


def _better(a, b) -> bool:
    """Prefer the iterate with the smaller primal residual, then smaller gap."""
    pa, pb = a[9], b[9]
    if max(pa, pb) > 1e-8 and not math.isclose(pa, pb, rel_tol=0.1):
        return pa < pb
    return a[8] <= b[8]
