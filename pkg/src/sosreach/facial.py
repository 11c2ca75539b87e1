"""Diagonal facial reduction for standard-form SDPs.

Each round solves the LP

    find y   with  B'y = 0,  (A'y restricted to a PSD block) diagonal and >= 0,
                   A_l'y >= 0,  b'y <= 0
    maximize sum of the diagonal / LP entries (each capped at 1).

For every feasible point, b'y = sum_p d_p X_pp + sum_i s_i x_i.  If b'y < 0 the problem
is infeasible.  If b'y = 0, every X_pp with d_p > 0 (and every x_i with s_i > 0) is
zero, so that Gram row/column (or LP variable) can be deleted.  Rounds repeat until
nothing more is removed.  This exposes weak infeasibility that interior-point
iterations cannot detect on their own.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

log = logging.getLogger(__name__)

POSITIVE_TOL = 1e-7
MAX_ROUNDS = 30


@dataclass
class Reduction:
    problem: object  # reduced SdpProblem, or None when infeasibility was proven
    keep_index: list[np.ndarray]  # per original block: surviving indices (empty -> block removed)
    keep_nonneg: np.ndarray
    keep_rows: np.ndarray
    infeasible: bool = False
    certificate: np.ndarray | None = None  # y over the original rows when infeasible
    notes: list[str] = field(default_factory=list)
    removed_indices: int = 0
    removed_nonneg: int = 0

    @property
    def changed(self) -> bool:
        return bool(self.removed_indices or self.removed_nonneg or self.infeasible)


def _round(prob):
    """One LP round; returns (diag_pos per block (bool arrays), nonneg_pos, y, infeasible)."""
    m = prob.m
    psd = prob.psd
    slack_rows = []  # LP columns: y (m) then one d / s slack per entry of slack_owner
    eq_rows, eq_cols, eq_vals = [], [], []
    n_eq = 0
    slack_owner = []  # (kind, block, index)

    def add_eq(row_ids, vals, slack=False, owner=None):
        nonlocal n_eq
        eq_rows.extend([n_eq] * len(row_ids))
        eq_cols.extend(row_ids)
        eq_vals.extend(vals)
        if slack:
            eq_rows.append(n_eq)
            eq_cols.append(m + len(slack_owner))
            eq_vals.append(-1.0)
            slack_owner.append(owner)
            slack_rows.append(n_eq)
        n_eq += 1

    if len(psd):
        r = psd[:, 0].astype(int)
        k = psd[:, 1].astype(int)
        p = psd[:, 2].astype(int)
        q = psd[:, 3].astype(int)
        v = psd[:, 4]
        key = np.stack([k, p, q], axis=1)
        order = np.lexsort((q, p, k))
        key, r, v = key[order], r[order], v[order]
        bounds_idx = np.flatnonzero(np.any(np.diff(key, axis=0) != 0, axis=1)) + 1
        for grp in np.split(np.arange(len(key)), bounds_idx):
            kk, pp, qq = key[grp[0]]
            add_eq(list(r[grp]), list(v[grp]), slack=(pp == qq), owner=("psd", kk, pp))
    if len(prob.nonneg):
        idx = prob.nonneg[:, 1].astype(int)
        for i in np.unique(idx):
            sel = idx == i
            add_eq(list(prob.nonneg[sel, 0].astype(int)), list(prob.nonneg[sel, 2]), slack=True, owner=("lp", 0, i))
    if len(prob.free):
        idx = prob.free[:, 1].astype(int)
        for i in np.unique(idx):
            sel = idx == i
            add_eq(list(prob.free[sel, 0].astype(int)), list(prob.free[sel, 2]))
    ns = len(slack_owner)
    if ns == 0:
        return None
    A_eq = sparse.csr_matrix((eq_vals, (eq_rows, eq_cols)), shape=(n_eq, m + ns))
    A_ub = sparse.csr_matrix(np.concatenate([prob.b, np.zeros(ns)])[None, :])
    c = np.concatenate([np.zeros(m), -np.ones(ns)])
    bounds = [(None, None)] * m + [(0.0, 1.0)] * ns
    res = linprog(c, A_ub=A_ub, b_ub=[0.0], A_eq=A_eq, b_eq=np.zeros(n_eq), bounds=bounds, method="highs")
    if res.status != 0:
        log.debug("facial reduction LP status %s: %s", res.status, res.message)
        return None
    y = res.x[:m]
    ymax = float(np.max(np.abs(y), initial=0.0))
    if ymax == 0.0:
        return None
    # normalize and recompute everything from y so LP tolerances cannot fake a reduction
    y = y / ymax
    amax = float(np.max(np.abs(A_eq.data), initial=1.0))
    check = A_eq @ np.concatenate([y, np.zeros(ns)])
    row_of_slack = np.array(slack_rows)
    exact = check[row_of_slack]
    is_slack_row = np.zeros(n_eq, bool)
    is_slack_row[row_of_slack] = True
    viol = float(np.max(np.abs(check[~is_slack_row]), initial=0.0))
    if viol > 1e-10 * amax or (exact < -1e-10 * amax).any():
        log.debug("facial reduction LP certificate inaccurate (%.2e), ignored", viol)
        return None
    by = float(prob.b @ y)
    bmax = max(1.0, float(np.max(np.abs(prob.b), initial=0.0)))
    infeasible = by < -1e-6 * bmax
    positive = exact > POSITIVE_TOL * amax
    if not infeasible and by > 1e-10 * bmax:
        return None
    return slack_owner, positive, y, infeasible


def reduce(prob) -> Reduction:
    from .sdp import SdpProblem

    keep_index = [np.arange(s) for s in prob.block_sizes]
    keep_nonneg = np.arange(prob.n_nonneg)
    keep_rows = np.arange(prob.m)
    cur = prob
    notes: list[str] = []
    removed_idx = removed_nn = 0
    for rnd in range(MAX_ROUNDS):
        out = _round(cur)
        if out is None:
            break
        owners, positive, y, infeasible = out
        if infeasible:
            y_full = np.zeros(prob.m)
            y_full[keep_rows] = y
            notes.append(f"facial reduction round {rnd}: Farkas certificate found")
            return Reduction(None, keep_index, keep_nonneg, keep_rows, True, y_full, notes, removed_idx, removed_nn)
        if not positive.any():
            break
        drop_psd: dict[int, set] = {}
        drop_lp: set = set()
        for (kind, k, i), pos in zip(owners, positive):
            if pos:
                if kind == "psd":
                    drop_psd.setdefault(int(k), set()).add(int(i))
                else:
                    drop_lp.add(int(i))
        removed_idx += sum(len(s) for s in drop_psd.values())
        removed_nn += len(drop_lp)
        try:
            shrunk = _shrink(cur, drop_psd, drop_lp, keep_index, keep_nonneg, keep_rows, SdpProblem)
        except ValueError as exc:  # nothing left to solve; keep the previous round
            notes.append(f"facial reduction stopped: {exc}")
            break
        cur, keep_index, keep_nonneg, keep_rows, bad_row = shrunk
        if bad_row is not None:
            y_full = np.zeros(prob.m)
            y_full[bad_row] = 1.0
            notes.append(f"facial reduction round {rnd}: row {bad_row} lost all variables but has nonzero right side")
            return Reduction(None, keep_index, keep_nonneg, keep_rows, True, y_full, notes, removed_idx, removed_nn)
    if removed_idx or removed_nn:
        notes.append(f"facial reduction removed {removed_idx} Gram indices and {removed_nn} LP variables")
    return Reduction(cur, keep_index, keep_nonneg, keep_rows, False, None, notes, removed_idx, removed_nn)


def _shrink(prob, drop_psd, drop_lp, keep_index, keep_nonneg, keep_rows, SdpProblem):
    """Delete Gram indices / LP variables and renumber; drop rows left without variables."""
    # new local index per block
    new_blocks = []
    remap = []
    new_keep_index = []
    blk_map = {}
    for k, size in enumerate(prob.block_sizes):
        alive = np.array([i for i in range(size) if i not in drop_psd.get(k, ())], dtype=int)
        local = -np.ones(size, dtype=int)
        local[alive] = np.arange(len(alive))
        remap.append(local)
        if len(alive):
            blk_map[k] = len(new_blocks)
            new_blocks.append(len(alive))
    # keep_index is tracked against the original blocks, in original numbering
    live_orig = [ki for ki in keep_index if len(ki)]
    for k, ki in enumerate(live_orig):
        alive = remap[k] >= 0
        live_orig[k] = ki[alive]
    it = iter(live_orig)
    new_keep_index = [next(it) if len(ki) else ki for ki in keep_index]

    psd = prob.psd
    if len(psd):
        k = psd[:, 1].astype(int)
        p = psd[:, 2].astype(int)
        q = psd[:, 3].astype(int)
        lp_ = np.array([remap[kk][pp] for kk, pp in zip(k, p)])
        lq_ = np.array([remap[kk][qq] for kk, qq in zip(k, q)])
        ok = (lp_ >= 0) & (lq_ >= 0)
        psd = psd[ok].copy()
        psd[:, 1] = [blk_map[int(kk)] for kk in psd[:, 1]]
        psd[:, 2] = lp_[ok]
        psd[:, 3] = lq_[ok]
    lp_alive = np.array([i for i in range(prob.n_nonneg) if i not in drop_lp], dtype=int)
    lp_local = -np.ones(prob.n_nonneg, dtype=int)
    lp_local[lp_alive] = np.arange(len(lp_alive))
    nonneg = prob.nonneg
    if len(nonneg):
        li = lp_local[nonneg[:, 1].astype(int)]
        nonneg = nonneg[li >= 0].copy()
        nonneg[:, 1] = li[li >= 0]
    new_keep_nonneg = keep_nonneg[lp_alive]

    used = np.zeros(prob.m, dtype=bool)
    for arr in (psd, nonneg, prob.free):
        if len(arr):
            used[arr[:, 0].astype(int)[arr[:, -1] != 0]] = True
    empty = np.flatnonzero(~used)
    bad = [r for r in empty if abs(prob.b[r]) > 1e-12]
    if bad:
        return prob, new_keep_index, new_keep_nonneg, keep_rows, int(keep_rows[bad[0]])
    row_local = -np.ones(prob.m, dtype=int)
    row_local[used] = np.arange(int(used.sum()))

    def renumber(arr):
        if not len(arr):
            return arr
        arr = arr.copy()
        arr[:, 0] = row_local[arr[:, 0].astype(int)]
        return arr

    c_psd = prob.c_psd
    if len(c_psd):
        ck = c_psd[:, 0].astype(int)
        cp = np.array([remap[a][b] for a, b in zip(ck, c_psd[:, 1].astype(int))])
        cq = np.array([remap[a][b] for a, b in zip(ck, c_psd[:, 2].astype(int))])
        ok = (cp >= 0) & (cq >= 0)
        c_psd = c_psd[ok].copy()
        c_psd[:, 0] = [blk_map[int(a)] for a in c_psd[:, 0]]
        c_psd[:, 1] = cp[ok]
        c_psd[:, 2] = cq[ok]
    reduced = SdpProblem(new_blocks, len(lp_alive), prob.n_free, prob.b[used], renumber(psd), renumber(nonneg),
                         renumber(prob.free), c_psd=c_psd, c_nonneg=prob.c_nonneg[lp_alive], c_free=prob.c_free,
                         offset=prob.offset)
    return reduced, new_keep_index, new_keep_nonneg, keep_rows[used], None
