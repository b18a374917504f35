"""Pure-Python tree builder and router.

Mirrors ``_core.pyx`` operation for operation; the two must produce
identical node arrays. Used when the compiled extension is unavailable or
``TREEIMPUTE_BACKEND=python`` is set.
"""

from __future__ import annotations

import math

import numpy as np

from . import splits

MASK64 = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)


def draw_candidates(rng: SplitMix64, p: int, mtry: int) -> np.ndarray:
    perm = list(range(p))
    for i in range(mtry):
        j = i + rng.next() % (p - i)
        perm[i], perm[j] = perm[j], perm[i]
    return np.array(sorted(perm[:mtry]), dtype=np.int64)


class _Nodes:
    def __init__(self, q):
        self.q = q
        self.left, self.right, self.parent, self.var, self.depth, self.n = [], [], [], [], [], []
        self.threshold, self.missing_left, self.subset, self.surrogates, self.gain = [], [], [], [], []
        self.stats = []

    def add(self, parent, depth, n, stats):
        k = len(self.left)
        self.left.append(-1)
        self.right.append(-1)
        self.parent.append(parent)
        self.var.append(-1)
        self.depth.append(depth)
        self.n.append(n)
        self.threshold.append(math.nan)
        self.missing_left.append(0)
        self.subset.append(None)
        self.surrogates.append([])
        self.gain.append(math.nan)
        self.stats.append(stats)
        return k

    def arrays(self, leaf_of):
        out = dict(
            left=np.array(self.left, dtype=np.int32),
            right=np.array(self.right, dtype=np.int32),
            parent=np.array(self.parent, dtype=np.int32),
            var=np.array(self.var, dtype=np.int32),
            depth=np.array(self.depth, dtype=np.int32),
            n=np.array(self.n, dtype=np.int64),
            threshold=np.array(self.threshold, dtype=np.float64),
            missing_left=np.array(self.missing_left, dtype=np.uint8),
            gain=np.array(self.gain, dtype=np.float64),
            subset=self.subset,
            surrogates=self.surrogates,
            leaf_of=leaf_of,
        )
        if self.q:
            out["counts"] = np.array(self.stats, dtype=np.int64).reshape(-1, self.q)
        else:
            out["sums"] = np.array(self.stats, dtype=np.float64).reshape(-1, 2)
        return out


def _column(xo, xc, var_kind, var_col, v, rows):
    if var_kind[v] == 0:
        return xo[rows, var_col[v]]
    return xc[rows, var_col[v]]


def _node_stats(yn, q):
    if q:
        return np.bincount(yn, minlength=q).astype(np.int64)
    return np.array([splits.seqsum(yn), splits.seqsum(yn * yn)])


def _is_pure(yn, q):
    if q:
        return int((np.bincount(yn, minlength=q) > 0).sum()) <= 1
    return bool(yn.min() == yn.max())


def _rule_left(x, kind, threshold, subset_mask):
    if kind == 0:
        with np.errstate(invalid="ignore"):
            return x <= threshold
    ok = x >= 0
    out = np.zeros(x.shape, dtype=bool)
    out[ok] = subset_mask[x[ok]] != 0
    return out


def _candidate(x, yn, q, kind, nlev, min_child, use_missing):
    if kind == 0:
        cand, _ = splits.ordinal_candidates(x, yn, q, min_child, use_missing)
        return cand, None
    cand, levels, _ = splits.categorical_candidates(x, yn, q, nlev, min_child, use_missing)
    return cand, levels


def build_tree(xo, xc, nlev, var_kind, var_col, y, q, guide=True, min_node=1, max_depth=-1,
               max_surrogates=5, n_bins=4, mtry=0, seed=0, callback=None):
    """Grow a tree on all rows of ``xo``/``xc``; see ``_core.build_tree``."""
    n = y.shape[0]
    p = len(var_kind)
    q = int(q)
    nodes = _Nodes(q)
    leaf_of = np.full(n, -1, dtype=np.int32)
    rng = SplitMix64(seed)
    y = y.astype(np.int64) if q else y.astype(np.float64)
    # stack of (rows ascending, parent id, is_left, depth)
    stack = [(np.arange(n, dtype=np.int64), -1, False, 0)]
    while stack:
        rows, parent, is_left, depth = stack.pop()
        yn = y[rows]
        nt = rows.size
        k = nodes.add(parent, depth, nt, _node_stats(yn, q))
        if parent >= 0:
            if is_left:
                nodes.left[parent] = k
            else:
                nodes.right[parent] = k
        leaf = (nt < 2 * min_node or (0 <= max_depth <= depth) or _is_pure(yn, q))
        chosen = None
        if not leaf:
            cands = draw_candidates(rng, p, mtry) if 0 < mtry < p else np.arange(p)
            chosen = _choose(xo, xc, nlev, var_kind, var_col, rows, yn, q, cands, guide,
                             min_node, n_bins)
        if chosen is None:
            leaf_of[rows] = k
            continue
        v, cand, levels, gain = chosen
        kind = var_kind[v]
        x = _column(xo, xc, var_kind, var_col, v, rows)
        nodes.var[k] = v
        nodes.gain[k] = gain
        if kind == 0:
            nodes.threshold[k] = cand.threshold
            mask = None
        else:
            mask = np.zeros(max(int(nlev[var_col[v]]), 1), dtype=np.uint8)
            mask[levels[np.asarray(cand.left_items[:levels.size], dtype=bool)]] = 1
            nodes.subset[k] = np.flatnonzero(mask).astype(np.int32)
        miss = np.isnan(x) if kind == 0 else x < 0
        go_left = _rule_left(x, kind, cand.threshold, mask)
        if guide:
            missing_left = bool(cand.missing_left)
            go_left[miss] = missing_left
        else:
            missing_left, surs = _route_greedy(xo, xc, nlev, var_kind, var_col, rows, v, go_left,
                                               miss, max_surrogates)
            nodes.surrogates[k] = surs
        nodes.missing_left[k] = int(missing_left)
        stack.append((rows[~go_left], k, False, depth + 1))
        stack.append((rows[go_left], k, True, depth + 1))
    return nodes.arrays(leaf_of)


def _choose(xo, xc, nlev, var_kind, var_col, rows, yn, q, cands, guide, min_node, n_bins):
    if guide:
        if q:
            y_resp, q_resp = yn, q
        else:
            y_resp, q_resp = splits.binarize_response(yn), 2
        results = []
        for v in cands:
            x = _column(xo, xc, var_kind, var_col, v, rows)
            nl = int(nlev[var_col[v]]) if var_kind[v] else None
            table = splits.contingency_table(x, y_resp, q_resp, n_bins, nl)
            stat, df, pv = splits.chisq_from_table(table)
            results.append(splits.ChisqResult(int(v), stat, df, pv))
        parent = splits._parent_crit(yn, q or None)
        for v in splits.guide_order(results):
            x = _column(xo, xc, var_kind, var_col, v, rows)
            cand, levels = _candidate(x, yn, q or None, var_kind[v], int(nlev[var_col[v]]) if var_kind[v] else 0,
                                      min_node, True)
            if cand is not None:
                return v, cand, levels, cand.crit - parent
        return None
    best = None
    for v in cands:
        x = _column(xo, xc, var_kind, var_col, v, rows)
        cand, levels = _candidate(x, yn, q or None, var_kind[v], int(nlev[var_col[v]]) if var_kind[v] else 0,
                                  min_node, False)
        if cand is None:
            continue
        obs = ~np.isnan(x) if var_kind[v] == 0 else x >= 0
        gain = cand.crit - splits._parent_crit(yn[obs], q or None)
        if gain > (best[3] if best else 0.0):
            best = (int(v), cand, levels, gain)
    return best


def _route_greedy(xo, xc, nlev, var_kind, var_col, rows, v, go_left, miss, max_surrogates):
    observed = ~miss
    direction = go_left & observed
    found = []
    for u in range(len(var_kind)):
        if u == v:
            continue
        z = _column(xo, xc, var_kind, var_col, u, rows)
        res = splits.surrogate_for(z, direction, observed, u)
        if res is not None:
            found.append(res)
    found.sort(key=lambda t: (-t[1], t[0].var))
    found = found[:max_surrogates]
    pending = miss.copy()
    surs = []
    for sur, rate in found:
        u = sur.var
        z = _column(xo, xc, var_kind, var_col, u, rows)
        ok = pending & ~(np.isnan(z) if var_kind[u] == 0 else z < 0)
        if var_kind[u] == 0:
            go_left[ok] = z[ok] <= sur.threshold
            surs.append((u, sur.threshold, None, rate))
        else:
            mask = np.zeros(max(int(nlev[var_col[u]]), 1), dtype=np.uint8)
            mask[sorted(sur.left_levels)] = 1
            go_left[ok] = mask[z[ok]] != 0
            surs.append((u, math.nan, np.flatnonzero(mask).astype(np.int32), rate))
        pending &= ~ok
    n_left = int((go_left & ~pending).sum())
    n_right = int((~go_left & ~pending).sum())
    missing_left = n_left >= n_right
    go_left[pending] = missing_left
    return missing_left, surs


def route_rows(left, right, var, threshold, missing_left, sub_ptr, sub_mask, sur_ptr, sur_var,
               sur_thr, sur_sub_ptr, xo, xc, var_kind, var_col):
    """Leaf index of every row (flattened tree arrays, see ``tree.FlatTree``)."""
    n = max(xo.shape[0], xc.shape[0])
    out = np.zeros(n, dtype=np.int32)
    work = [(0, np.arange(n))]
    while work:
        k, rows = work.pop()
        if left[k] < 0 or rows.size == 0:
            out[rows] = k
            continue
        v = var[k]
        x = _column(xo, xc, var_kind, var_col, v, rows)
        go = _rule_left(x, var_kind[v], threshold[k], sub_mask[sub_ptr[k]:])
        pending = np.isnan(x) if var_kind[v] == 0 else x < 0
        for s in range(sur_ptr[k], sur_ptr[k + 1]):
            u = sur_var[s]
            z = _column(xo, xc, var_kind, var_col, u, rows)
            ok = pending & ~(np.isnan(z) if var_kind[u] == 0 else z < 0)
            go[ok] = _rule_left(z[ok], var_kind[u], sur_thr[s], sub_mask[sur_sub_ptr[s]:])
            pending &= ~ok
        go[pending] = bool(missing_left[k])
        work.append((left[k], rows[go]))
        work.append((right[k], rows[~go]))
    return out
