"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Set ``SOSREACH_DISABLE_NUMBA=1`` to force the numpy implementations (also used
automatically when numba is not importable).  Both paths compute the same values;
tests compare them on random inputs.
"""
from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("SOSREACH_DISABLE_NUMBA", "").strip().lower()

try:
    if _FLAG in ("1", "true", "yes"):
        raise ImportError("numba disabled by SOSREACH_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


# --- Schur complement assembly ------------------------------------------------
#
# A block's constraint operator is a list of entries (row, p, q, v), p <= q, meaning
# row `row` contains v * X[p, q].  For a scaling matrix W the Schur complement
# M[r, s] = <A_r, W A_s W> picks up, for every pair of entries e, f,
#     v_e v_f (W[p_e, p_f] W[q_e, q_f] + W[p_e, q_f] W[q_e, p_f]) / 2.


def _schur_numpy(W, rows, p, q, v, m, chunk=1024):
    from scipy import sparse

    M = np.zeros((m, m))
    E = len(rows)
    if E == 0:
        return M
    # scatter matrix: entry -> row
    S = sparse.csr_matrix((np.ones(E), (np.arange(E), rows)), shape=(E, m))
    for start in range(0, E, chunk):
        sl = slice(start, min(E, start + chunk))
        K = W[p[sl]][:, p] * W[q[sl]][:, q] + W[p[sl]][:, q] * W[q[sl]][:, p]
        K *= 0.5 * v[sl, None] * v[None, :]
        M += S[sl].T @ (S.T @ K.T).T
    return M


def _eval_numpy(exps, coeffs, points):
    if len(coeffs) == 0:
        return np.zeros(points.shape[0])
    out = np.zeros(points.shape[0])
    maxe = int(exps.max()) if exps.size else 0
    # power table: pw[k][:, j] = points[:, j] ** k
    pw = np.ones((maxe + 1,) + points.shape)
    for k in range(1, maxe + 1):
        pw[k] = pw[k - 1] * points
    cols = np.arange(points.shape[1])
    for t in range(len(coeffs)):
        term = np.full(points.shape[0], coeffs[t])
        for j in cols:
            e = exps[t, j]
            if e:
                term *= pw[e, :, j]
        out += term
    return out


if HAVE_NUMBA:

    @njit(cache=True)
    def _schur_numba(W, rows, p, q, v, m):
        M = np.zeros((m, m))
        E = rows.shape[0]
        for e in range(E):
            pe = p[e]
            qe = q[e]
            re = rows[e]
            ve = v[e]
            for f in range(e, E):
                pf = p[f]
                qf = q[f]
                k = 0.5 * ve * v[f] * (W[pe, pf] * W[qe, qf] + W[pe, qf] * W[qe, pf])
                rf = rows[f]
                M[re, rf] += k
                if f != e:
                    M[rf, re] += k
        return M

    @njit(cache=True)
    def _eval_numba(exps, coeffs, points):
        N, d = points.shape
        T = coeffs.shape[0]
        out = np.zeros(N)
        maxe = 0
        for t in range(T):
            for j in range(d):
                if exps[t, j] > maxe:
                    maxe = exps[t, j]
        pw = np.ones((maxe + 1, d))
        for i in range(N):
            for j in range(d):
                for k in range(1, maxe + 1):
                    pw[k, j] = pw[k - 1, j] * points[i, j]
            s = 0.0
            for t in range(T):
                term = coeffs[t]
                for j in range(d):
                    term *= pw[exps[t, j], j]
                s += term
            out[i] = s
        return out


def schur_block(W, rows, p, q, v, m, backend: str | None = None) -> np.ndarray:
    """Schur complement contribution of one PSD block under scaling ``W``."""
    W = np.ascontiguousarray(W, dtype=float)
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    p = np.ascontiguousarray(p, dtype=np.int64)
    q = np.ascontiguousarray(q, dtype=np.int64)
    v = np.ascontiguousarray(v, dtype=float)
    if _use_numba(backend):
        return _schur_numba(W, rows, p, q, v, int(m))
    return _schur_numpy(W, rows, p, q, v, int(m))


def poly_eval(exps, coeffs, points, backend: str | None = None) -> np.ndarray:
    """Evaluate sum_t coeffs[t] * prod_j points[:, j] ** exps[t, j]."""
    exps = np.ascontiguousarray(exps, dtype=np.int64)
    coeffs = np.ascontiguousarray(coeffs, dtype=float)
    points = np.ascontiguousarray(points, dtype=float)
    if _use_numba(backend):
        return _eval_numba(exps, coeffs, points)
    return _eval_numpy(exps, coeffs, points)


def _use_numba(backend):
    if backend is None:
        return HAVE_NUMBA
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is unavailable or disabled")
        return True
    if backend == "numpy":
        return False
    raise ValueError(f"unknown backend {backend!r}")
