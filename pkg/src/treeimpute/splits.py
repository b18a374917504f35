"""Variable selection and split search.

Two strategies are provided. ``guide`` picks the split variable by
chi-squared tests of association (each variable gets a "missing" level, so
every row counts) and only then searches for a split on it. ``greedy``
evaluates the best split of every variable on its observed rows and keeps
the one with the largest impurity reduction; rows missing the split
variable are routed through surrogate splits.

Column views are plain numpy arrays: float arrays are ordinal with NaN for
missing, integer arrays are categorical codes with -1 for missing. A
response is an integer array of class codes (Gini impurity) or a float
array (sum of squared errors).

All searches are deterministic. Ordinal thresholds are scanned in
increasing order; for each threshold the missing rows are tried on the left
before the right; the missing-versus-observed split comes last. The first
candidate reaching the best criterion wins. Sums over rows are accumulated
sequentially in row order so that the compiled builder reproduces them
bit for bit.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.special import chdtrc

DEFAULT_BINS = 4

# GUIDE categorical search limits.
MAX_EXHAUSTIVE_LEVELS = 11
MERGE_MIN_LEVELS = 20
MAX_MERGE_CLASSES = 11


class NoSplit(Exception):
    """No admissible split exists at this node."""


class Impurity(enum.Enum):
    GINI = "gini"
    SSE = "sse"


class Mode(enum.Enum):
    GUIDE = "guide"
    GREEDY = "greedy"


@dataclass(frozen=True)
class ChisqResult:
    var: int
    statistic: float
    df: int
    pvalue: float

    @property
    def z(self) -> float:
        return wilson_hilferty(self.statistic, self.df)


@dataclass(frozen=True)
class Split:
    """Routing rule on one variable.

    A row goes left when its ordinal value is ``<= threshold`` or its level
    is in ``left_levels``; a row missing the variable tries the surrogates in
    order and otherwise goes left iff ``missing_left``. ``threshold = -inf``
    with ``missing_left`` encodes the missing-versus-observed split.
    """

    var: int
    threshold: float | None = None
    left_levels: frozenset | None = None
    missing_left: bool = True
    surrogates: tuple = ()
    gain: float = float("nan")

    @property
    def is_ordinal(self) -> bool:
        return self.threshold is not None

    def observed_left(self, x: np.ndarray) -> np.ndarray:
        """Left indicator for observed cells (missing cells report False)."""
        if self.is_ordinal:
            with np.errstate(invalid="ignore"):
                return x <= self.threshold
        levels = np.fromiter(sorted(self.left_levels), dtype=np.int64)
        return np.isin(x, levels) & (x >= 0)

    def goes_left(self, x: np.ndarray, others: Sequence[np.ndarray] | None = None) -> np.ndarray:
        """Route rows; ``others[v]`` supplies surrogate variable ``v``."""
        miss = _missing(x)
        left = self.observed_left(x)
        pending = miss.copy()
        if self.surrogates and others is not None:
            for sur, _ in self.surrogates:
                z = others[sur.var]
                ok = pending & ~_missing(z)
                left[ok] = sur.observed_left(z[ok])
                pending &= ~ok
        left[pending] = self.missing_left
        return left


@dataclass
class _Candidate:
    crit: float
    left_items: np.ndarray | None = None
    threshold: float | None = None
    missing_left: bool = True
    n_left: int = 0
    n_right: int = 0
    extra: dict = field(default_factory=dict)


def _missing(x: np.ndarray) -> np.ndarray:
    if x.dtype.kind == "f":
        return np.isnan(x)
    return x < 0


def is_ordinal(x: np.ndarray) -> bool:
    return x.dtype.kind == "f"


def is_classification(y: np.ndarray) -> bool:
    return y.dtype.kind in "iub"


def seqsum(a: np.ndarray) -> float:
    """Left-to-right floating sum (numpy's ``sum`` is pairwise)."""
    return float(np.cumsum(a)[-1]) if a.size else 0.0


def wilson_hilferty(stat: float, df: int) -> float:
    if df <= 0:
        return -math.inf
    k = 2.0 / (9.0 * df)
    return (math.pow(stat / df, 1.0 / 3.0) - (1.0 - k)) / math.sqrt(k)


def chisq_from_table(table: np.ndarray) -> tuple[float, int, float]:
    """Pearson statistic, df and p-value after dropping empty rows/columns."""
    t = np.asarray(table, dtype=np.float64)
    t = t[t.sum(axis=1) > 0][:, t.sum(axis=0) > 0]
    r, c = t.shape
    if r < 2 or c < 2:
        return 0.0, 0, 1.0
    rs = t.sum(axis=1)
    cs = t.sum(axis=0)
    total = rs.sum()
    expected = np.multiply.outer(rs, cs) / total
    terms = (t - expected) ** 2 / expected
    stat = seqsum(terms.ravel())
    df = (r - 1) * (c - 1)
    return stat, df, float(chdtrc(df, stat))


def binarize_response(y: np.ndarray) -> np.ndarray:
    """Regression response as two classes: above the node mean or not."""
    mean = seqsum(y) / y.size
    return (y > mean).astype(np.int64)


def ordinal_bins(x: np.ndarray, n_bins: int = DEFAULT_BINS) -> np.ndarray:
    """Quantile bin index per cell; ``n_bins`` for missing cells."""
    miss = np.isnan(x)
    obs = np.sort(x[~miss], kind="stable")
    out = np.full(x.shape, n_bins, dtype=np.int64)
    m = obs.size
    if m:
        # cut k is the largest value of the k-th group of m / n_bins sorted values
        cuts = obs[[max((k * m) // n_bins - 1, 0) for k in range(1, n_bins)]]
        out[~miss] = np.searchsorted(cuts, x[~miss], side="left")
    return out


def contingency_table(x: np.ndarray, y_classes: np.ndarray, n_classes: int,
                      n_bins: int = DEFAULT_BINS, n_levels: int | None = None) -> np.ndarray:
    """Counts of response class by x level, with a trailing "missing" row.

    Ordinal x is cut into ``n_bins`` quantile bins of its observed values.
    The missing row is included only when x has a missing cell.
    """
    if is_ordinal(x):
        rows = ordinal_bins(x, n_bins)
        n_rows = n_bins + 1
    else:
        n_lev = int(x.max(initial=-1)) + 1 if n_levels is None else n_levels
        rows = np.where(x < 0, n_lev, x).astype(np.int64)
        n_rows = n_lev + 1
    table = np.zeros((n_rows, n_classes), dtype=np.int64)
    np.add.at(table, (rows, y_classes), 1)
    if not _missing(x).any():
        table = table[:-1]
    return table


def contingency_chisq(x: np.ndarray, y: np.ndarray, ordinal_binning: int = DEFAULT_BINS,
                      var: int = 0) -> ChisqResult:
    """Chi-squared test of association between x (with missing level) and y."""
    y_cls = y.astype(np.int64) if is_classification(y) else binarize_response(y)
    q = int(y_cls.max(initial=0)) + 1
    table = contingency_table(x, y_cls, q, ordinal_binning)
    stat, df, p = chisq_from_table(table)
    return ChisqResult(var, stat, df, p)


# -- criteria ---------------------------------------------------------------
#
# Splits maximise ``crit = S_L / n_L + S_R / n_R`` where S is the sum of
# squared class counts (Gini) or the squared sum of y (SSE). The impurity
# reduction of a split is ``crit - S / n`` for the parent.


def _sq(counts: np.ndarray) -> np.ndarray:
    return (counts.astype(np.int64) ** 2).sum(axis=-1).astype(np.float64)


def _parent_crit(y: np.ndarray, q: int | None) -> float:
    if q is not None:
        counts = np.bincount(y, minlength=q)
        return float(_sq(counts)) / y.size
    s = seqsum(y)
    return s * s / y.size


def node_impurity(y: np.ndarray) -> float:
    """Gini impurity or mean squared error of a node."""
    if y.size == 0:
        return 0.0
    if is_classification(y):
        p = np.bincount(y) / y.size
        return float(1.0 - (p * p).sum())
    return float(np.mean((y - y.mean()) ** 2))


def total_impurity(y: np.ndarray) -> float:
    """n times the node impurity (weighted impurity units)."""
    return y.size * node_impurity(y)


# -- ordinal splits ---------------------------------------------------------


def _observed_order(x: np.ndarray):
    miss = np.isnan(x)
    obs = np.flatnonzero(~miss)
    obs = obs[np.argsort(x[obs], kind="stable")]
    return obs, np.flatnonzero(miss)


def _midpoint(a: float, b: float) -> float:
    mid = a + (b - a) / 2.0
    return a if mid >= b else mid


def ordinal_candidates(x: np.ndarray, y: np.ndarray, q: int | None, min_child: int = 1,
                       use_missing: bool = True):
    """Best threshold split of ordinal x.

    Returns ``(candidate, n_obs)`` or ``(None, n_obs)``. With
    ``use_missing`` the missing rows are placed jointly with the threshold
    and the missing-versus-observed split is also tried (guide). Without it
    only observed rows are considered (greedy).
    """
    obs, mis = _observed_order(x)
    m, nm = obs.size, (mis.size if use_missing else 0)
    if m == 0:
        return None, 0
    xs = x[obs]
    ys = y[obs]
    if q is not None:
        onehot = np.zeros((m, q), dtype=np.int64)
        onehot[np.arange(m), ys] = 1
        cum = np.cumsum(onehot, axis=0)
        tot = cum[-1]
        mc = np.bincount(y[mis], minlength=q) if nm else np.zeros(q, dtype=np.int64)
    else:
        cum = np.cumsum(ys)
        tot = cum[-1]
        mc = seqsum(y[mis]) if nm else 0.0

    best = None
    i = np.arange(1, m)
    bound = xs[:-1] < xs[1:]
    i = i[bound]
    if i.size:
        lo = cum[i - 1]
        hi = tot - lo
        sides = (True, False) if nm else (True,)
        crits = np.full((i.size, len(sides)), -np.inf)
        sizes = []
        for s, side in enumerate(sides):
            if side:
                nl, nr = i + nm, m - i
                cl, cr = (lo + mc, hi) if nm else (lo, hi)
            else:
                nl, nr = i, m - i + nm
                cl, cr = lo, hi + mc
            if q is not None:
                c = _sq(cl) / nl + _sq(cr) / nr
            else:
                c = cl * cl / nl + cr * cr / nr
            ok = (nl >= min_child) & (nr >= min_child)
            crits[:, s] = np.where(ok, c, -np.inf)
            sizes.append((nl, nr))
        flat = crits.ravel()
        k = int(np.argmax(flat))
        if flat[k] > -np.inf:
            r, s = divmod(k, len(sides))
            pos = int(i[r])
            nl, nr = sizes[s][0][r], sizes[s][1][r]
            best = _Candidate(float(flat[k]), threshold=_midpoint(float(xs[pos - 1]), float(xs[pos])),
                              missing_left=sides[s], n_left=int(nl), n_right=int(nr))
    if nm and nm >= min_child and m >= min_child:
        if q is not None:
            c = float(_sq(mc)) / nm + float(_sq(tot)) / m
        else:
            c = mc * mc / nm + tot * tot / m
        if best is None or c > best.crit:
            best = _Candidate(float(c), threshold=-math.inf, missing_left=True, n_left=nm, n_right=m)
    if best is not None and nm == 0 and best.threshold != -math.inf:
        best.missing_left = best.n_left >= best.n_right
    return best, m


# -- categorical splits -----------------------------------------------------


def item_stats(x: np.ndarray, y: np.ndarray, q: int | None, n_levels: int, use_missing: bool = True):
    """Per-level statistics for levels present in the node.

    Returns ``(levels, stats, has_missing)`` where ``levels`` are the codes
    present in increasing order and ``stats`` has one row per level plus a
    final row for the missing level when ``has_missing``. For a class
    response the rows are class counts; for a numeric response they are
    ``(count, sequential sum)``.
    """
    miss = x < 0
    codes = np.where(miss, n_levels, x)
    if q is not None:
        table = np.zeros((n_levels + 1, q), dtype=np.int64)
        np.add.at(table, (codes, y), 1)
        counts = table.sum(axis=1)
    else:
        counts = np.bincount(codes, minlength=n_levels + 1)
        sums = np.bincount(codes, weights=y, minlength=n_levels + 1)
        table = np.column_stack([counts.astype(np.float64), sums])
    levels = np.flatnonzero(counts[:n_levels] > 0)
    has_missing = bool(use_missing and counts[n_levels] > 0)
    rows = list(levels) + ([n_levels] if has_missing else [])
    return levels, table[rows], has_missing


def _valid_partition(left: np.ndarray, n_obs_items: int) -> bool:
    k = int(left[:n_obs_items].sum())
    return 0 < k < n_obs_items


def _prefix_search(order: np.ndarray, stats: np.ndarray, q: int | None, n_obs_items: int,
                   min_child: int) -> _Candidate | None:
    """Best split of the form {first i items of ``order``}."""
    if q is not None:
        cum = np.cumsum(stats[order], axis=0)
        tot = cum[-1]
        sizes = cum.sum(axis=1)
    else:
        sizes = np.cumsum(stats[order, 0])
        cum = np.cumsum(stats[order, 1])
        tot = cum[-1]
    n = sizes[-1]
    best = None
    in_left = np.zeros(len(order), dtype=bool)
    for i in range(1, len(order)):
        in_left[order[i - 1]] = True
        nl, nr = sizes[i - 1], n - sizes[i - 1]
        if nl < min_child or nr < min_child or not _valid_partition(in_left, n_obs_items):
            continue
        if q is not None:
            c = float(_sq(cum[i - 1])) / nl + float(_sq(tot - cum[i - 1])) / nr
        else:
            lo = cum[i - 1]
            hi = tot - lo
            c = lo * lo / nl + hi * hi / nr
        if best is None or c > best.crit:
            best = _Candidate(c, left_items=in_left.copy(), n_left=int(nl), n_right=int(nr))
    return best


def item_order_binary(stats: np.ndarray) -> np.ndarray:
    """Items sorted by proportion of the first present class."""
    present = np.flatnonzero(stats.sum(axis=0) > 0)
    j1 = present[0] if present.size else 0
    prop = stats[:, j1] / stats.sum(axis=1)
    return np.lexsort((np.arange(len(prop)), prop))


def item_order_mean(stats: np.ndarray) -> np.ndarray:
    means = stats[:, 1] / stats[:, 0]
    return np.lexsort((np.arange(len(means)), means))


def _gini_crit_rows(left_counts: np.ndarray, tot: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    right = tot - left_counts
    nl = left_counts.sum(axis=-1)
    nr = right.sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = _sq(left_counts) / nl + _sq(right) / nr
    return c, nl, nr


def exhaustive_items(stats: np.ndarray, n_obs_items: int, has_missing: bool,
                     min_child: int = 1) -> tuple[_Candidate | None, int]:
    """All subsets A of the observed items containing the first, both missing sides.

    Returns the best candidate and the number of subsets A enumerated,
    which is ``2**(p-1) - 1`` for p observed items.
    """
    p = n_obs_items
    if p < 2:
        return None, 0
    n_sub = (1 << (p - 1)) - 1
    masks = np.arange(n_sub, dtype=np.int64)
    bits = ((masks[:, None] >> np.arange(p - 1)) & 1).astype(bool)
    obs_left = np.column_stack([np.ones(n_sub, dtype=bool), bits])
    tot = stats.sum(axis=0)
    sides = (True, False) if has_missing else (True,)
    best = None
    for a in range(n_sub):
        for side in sides:
            left = np.zeros(stats.shape[0], dtype=bool)
            left[:p] = obs_left[a]
            if has_missing:
                left[p] = side
            lc = stats[left].sum(axis=0)
            c, nl, nr = _gini_crit_rows(lc, tot)
            if nl < min_child or nr < min_child:
                continue
            if best is None or c > best.crit:
                best = _Candidate(float(c), left_items=left, n_left=int(nl), n_right=int(nr))
    return best, n_sub


def merge_items(stats: np.ndarray, n_obs_items: int, min_child: int = 1):
    """Merge items into groups by within-item majority class, then search groups.

    Returns ``(candidate, groups, n_subsets)`` where ``groups[k]`` is the
    merged class label of item k.
    """
    groups = np.argmax(stats, axis=1)
    labels = np.unique(groups)
    g = labels.size
    if g < 2:
        return None, groups, 0
    merged = np.zeros((g, stats.shape[1]), dtype=np.int64)
    for k, lab in enumerate(labels):
        merged[k] = stats[groups == lab].sum(axis=0)
    tot = stats.sum(axis=0)
    n_sub = (1 << (g - 1)) - 1
    best = None
    for a in range(n_sub):
        chosen = np.concatenate([[True], ((a >> np.arange(g - 1)) & 1).astype(bool)])
        left = np.isin(groups, labels[chosen])
        if not _valid_partition(left, n_obs_items):
            continue
        lc = stats[left].sum(axis=0)
        c, nl, nr = _gini_crit_rows(lc, tot)
        if nl < min_child or nr < min_child:
            continue
        if best is None or c > best.crit:
            best = _Candidate(float(c), left_items=left, n_left=int(nl), n_right=int(nr))
    return best, groups, n_sub


def discriminant_coordinates(stats: np.ndarray) -> np.ndarray | None:
    """Leading discriminant coordinate of the item indicators.

    ``stats`` is the item-by-class count table. The indicator vectors sum
    to one, so the last item is dropped (coefficient 0) before solving the
    generalised eigenproblem ``B a = lambda W a``. Returns None when the
    within-class scatter is singular.
    """
    counts = np.asarray(stats, dtype=np.float64)
    k = counts.shape[0]
    if k < 2:
        return None
    counts = counts[:, counts.sum(axis=0) > 0]
    n_j = counts.sum(axis=0)
    n = n_j.sum()
    r = k - 1
    c = counts[:r]
    # within-class scatter of indicators: sum_j diag(n_kj) - n_kj n_lj / n_j
    w = np.diag(c.sum(axis=1)) - (c / n_j) @ c.T
    m = c.sum(axis=1) / n
    dev = c / n_j - m[:, None]
    b = (dev * n_j) @ dev.T
    w = (w + w.T) / 2.0
    b = (b + b.T) / 2.0
    try:
        scipy.linalg.cholesky(w, lower=True)
        vals, vecs = scipy.linalg.eigh(b, w)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
        return None
    if not np.all(np.isfinite(vals)):
        return None
    a = np.append(vecs[:, -1], 0.0)
    norm = np.linalg.norm(a)
    if norm == 0 or not np.isfinite(norm):
        return None
    a = a / norm
    nz = np.flatnonzero(np.abs(a) > 1e-12)
    if nz.size and a[nz[0]] < 0:
        a = -a
    return a


def class_code_means(stats: np.ndarray) -> np.ndarray:
    codes = np.arange(stats.shape[1], dtype=np.float64)
    return (stats @ codes) / stats.sum(axis=1)


def lda_items(stats: np.ndarray, n_obs_items: int, min_child: int = 1):
    """Order items by the leading discriminant coordinate, then prefix search.

    Falls back to ordering by mean class code when the within-class
    scatter is singular. Returns ``(candidate, coefficients, used_lda)``.
    """
    coef = discriminant_coordinates(stats)
    used = coef is not None
    if coef is None:
        coef = class_code_means(stats)
    order = np.lexsort((np.arange(len(coef)), coef))
    return _prefix_search(order, stats, stats.shape[1], n_obs_items, min_child), coef, used


def multiclass_items_split(stats: np.ndarray, n_obs_items: int, has_missing: bool,
                           min_child: int = 1) -> _Candidate | None:
    """GUIDE's categorical search for a class response, on an item table."""
    q = int((stats.sum(axis=0) > 0).sum())
    p = n_obs_items
    if q <= 2:
        order = item_order_binary(stats)
        return _prefix_search(order, stats, stats.shape[1], p, min_child)
    if p <= MAX_EXHAUSTIVE_LEVELS:
        return exhaustive_items(stats, p, has_missing, min_child)[0]
    if q <= MAX_MERGE_CLASSES and p > MERGE_MIN_LEVELS:
        return merge_items(stats, p, min_child)[0]
    return lda_items(stats, p, min_child)[0]


def multiclass_callback(stats: np.ndarray, n_obs_items: int, has_missing: bool, min_child: int):
    """Entry point used by the compiled builder: ``(left mask, criterion)`` or None."""
    cand = multiclass_items_split(np.asarray(stats, dtype=np.int64), n_obs_items, has_missing, min_child)
    if cand is None:
        return None
    return np.ascontiguousarray(cand.left_items, dtype=np.uint8), float(cand.crit)


def categorical_candidates(x: np.ndarray, y: np.ndarray, q: int | None, n_levels: int,
                           min_child: int = 1, use_missing: bool = True):
    """Best subset split of categorical x; returns ``(candidate, levels, n_obs)``."""
    levels, stats, has_missing = item_stats(x, y, q, n_levels, use_missing)
    p = levels.size
    n_obs = int(stats[:p, 0].sum()) if q is None else int(stats[:p].sum())
    if p < 2:
        return None, levels, n_obs
    if q is None:
        cand = _prefix_search(item_order_mean(stats), stats, None, p, min_child)
    elif int((stats.sum(axis=0) > 0).sum()) <= 2:
        cand = _prefix_search(item_order_binary(stats), stats, q, p, min_child)
    else:
        cand = multiclass_items_split(stats, p, has_missing, min_child)
    if cand is not None:
        if has_missing:
            cand.missing_left = bool(cand.left_items[p])
        else:
            cand.missing_left = cand.n_left >= cand.n_right
    return cand, levels, n_obs


def _to_split(var: int, cand: _Candidate, levels: np.ndarray | None, gain: float) -> Split:
    if cand.threshold is not None:
        return Split(var, threshold=cand.threshold, missing_left=cand.missing_left, gain=gain)
    p = levels.size
    chosen = frozenset(int(c) for c in levels[np.asarray(cand.left_items[:p], dtype=bool)])
    return Split(var, left_levels=chosen, missing_left=cand.missing_left, gain=gain)


def _response(y: np.ndarray):
    if is_classification(y):
        y = y.astype(np.int64)
        return y, int(y.max(initial=0)) + 1
    return y.astype(np.float64), None


def _n_levels(x: np.ndarray) -> int:
    return int(x.max(initial=-1)) + 1


def best_split(x: np.ndarray, y: np.ndarray, var: int = 0, min_child: int = 1,
               use_missing: bool = True, n_levels: int | None = None) -> Split:
    """Best split of one variable (guide semantics when ``use_missing``)."""
    yy, q = _response(y)
    if is_ordinal(x):
        cand, _ = ordinal_candidates(x, yy, q, min_child, use_missing)
        levels = None
    else:
        cand, levels, _ = categorical_candidates(x, yy, q, n_levels or _n_levels(x), min_child, use_missing)
    if cand is None:
        raise NoSplit(f"variable {var} has no admissible split")
    keep = ~_missing(x) if not use_missing else np.ones(x.shape, dtype=bool)
    gain = cand.crit - _parent_crit(yy[keep], q)
    return _to_split(var, cand, levels, gain)


def best_ordinal_split(x: np.ndarray, y: np.ndarray, var: int = 0, min_child: int = 1) -> Split:
    """Threshold and missing side minimising child impurity for ordinal x."""
    if not is_ordinal(x):
        raise TypeError("ordinal view expected")
    return best_split(x, y, var, min_child)


def order_categories_binary(x: np.ndarray, y: np.ndarray, n_levels: int | None = None) -> list[int]:
    """Observed levels ordered by their proportion of the first class.

    Ties keep level-dictionary order.
    """
    yy, q = _response(y)
    levels, stats, _ = item_stats(x, yy, q, n_levels or _n_levels(x), use_missing=False)
    if int((stats.sum(axis=0) > 0).sum()) != 2:
        raise ValueError("binary response required")
    return [int(levels[k]) for k in item_order_binary(stats)]


def exhaustive_subset_search(x: np.ndarray, y: np.ndarray, var: int = 0, min_child: int = 1,
                             n_levels: int | None = None) -> tuple[Split, int]:
    """Search all ``2**(p-1) - 1`` subset splits; returns the split and that count."""
    yy, q = _response(y)
    if q is None:
        raise TypeError("class response required")
    levels, stats, has_missing = item_stats(x, yy, q, n_levels or _n_levels(x))
    p = levels.size
    if p > MAX_EXHAUSTIVE_LEVELS:
        raise ValueError(f"{p} levels: exhaustive search refused above {MAX_EXHAUSTIVE_LEVELS}")
    cand, count = exhaustive_items(stats, p, has_missing, min_child)
    if cand is None:
        raise NoSplit("no admissible subset split")
    cand.missing_left = bool(cand.left_items[p]) if has_missing else cand.n_left >= cand.n_right
    return _to_split(var, cand, levels, cand.crit - _parent_crit(yy, q)), count


def merge_categories(x: np.ndarray, y: np.ndarray, var: int = 0, min_child: int = 1,
                     n_levels: int | None = None) -> tuple[np.ndarray, Split, int]:
    """Merge levels by majority class; returns merged column, split, subsets searched."""
    yy, q = _response(y)
    if q is None:
        raise TypeError("class response required")
    levels, stats, has_missing = item_stats(x, yy, q, n_levels or _n_levels(x))
    p = levels.size
    q_present = int((stats.sum(axis=0) > 0).sum())
    if not (2 < q_present <= MAX_MERGE_CLASSES and p > MERGE_MIN_LEVELS):
        raise ValueError(f"merging needs 2 < q <= {MAX_MERGE_CLASSES} and p > {MERGE_MIN_LEVELS}"
                         f" (got q={q_present}, p={p})")
    cand, groups, count = merge_items(stats, p, min_child)
    lookup = np.full(max(n_levels or _n_levels(x), 1) + 1, -1, dtype=np.int64)
    lookup[levels] = groups[:p]
    merged = np.where(x < 0, groups[p] if has_missing else -1, lookup[np.where(x < 0, 0, x)])
    if cand is None:
        raise NoSplit("merged variable is constant")
    cand.missing_left = bool(cand.left_items[p]) if has_missing else cand.n_left >= cand.n_right
    return merged, _to_split(var, cand, levels, cand.crit - _parent_crit(yy, q)), count


def lda_ordering(x: np.ndarray, y: np.ndarray, var: int = 0, min_child: int = 1,
                 n_levels: int | None = None) -> tuple[np.ndarray, Split]:
    """Order levels along the leading discriminant coordinate and split.

    For a numeric response the coordinate maximising the one-way ANOVA F
    statistic is the vector of level means, so levels are ordered by mean.
    Returns coefficients (one per present level, then the missing level if
    any) and the split expressed as a level subset.
    """
    yy, q = _response(y)
    levels, stats, has_missing = item_stats(x, yy, q, n_levels or _n_levels(x))
    p = levels.size
    if q is None:
        coef = stats[:, 1] / stats[:, 0]
        coef = coef - coef.mean()
        norm = np.linalg.norm(coef)
        coef = coef / norm if norm > 0 else coef
        cand = _prefix_search(np.lexsort((np.arange(len(coef)), coef)), stats, None, p, min_child)
    else:
        cand, coef, _ = lda_items(stats, p, min_child)
    if cand is None:
        raise NoSplit("no admissible split on the discriminant ordering")
    cand.missing_left = bool(cand.left_items[p]) if has_missing else cand.n_left >= cand.n_right
    return coef, _to_split(var, cand, levels, cand.crit - _parent_crit(yy, q))


# -- variable selection -----------------------------------------------------


def chisq_all(columns: Sequence[np.ndarray], y: np.ndarray,
              n_bins: int = DEFAULT_BINS) -> list[ChisqResult]:
    y_cls = y.astype(np.int64) if is_classification(y) else binarize_response(y)
    q = int(y_cls.max(initial=0)) + 1
    out = []
    for v, x in enumerate(columns):
        stat, df, p = chisq_from_table(contingency_table(x, y_cls, q, n_bins))
        out.append(ChisqResult(v, stat, df, p))
    return out


def guide_order(results: Sequence[ChisqResult]) -> list[int]:
    """Variables by increasing p-value; ties by larger normal score, then index."""
    keyed = sorted(results, key=lambda r: (r.pvalue, -r.z, r.var))
    return [r.var for r in keyed if r.df > 0]


def select_variable(columns: Sequence[np.ndarray], y: np.ndarray, mode: Mode | str = Mode.GUIDE,
                    n_bins: int = DEFAULT_BINS, min_child: int = 1) -> int:
    """Index of the variable chosen to split a node.

    ``guide`` returns the variable with the smallest chi-squared p-value;
    ``greedy`` the variable whose best split on its observed rows gives the
    largest impurity reduction. Raises :class:`NoSplit` when no variable
    can be split.
    """
    mode = Mode(mode)
    if mode is Mode.GUIDE:
        order = guide_order(chisq_all(columns, y, n_bins))
        if not order:
            raise NoSplit("no variable associated with any contrast")
        return order[0]
    best_v, best_gain = -1, 0.0
    for v, x in enumerate(columns):
        try:
            s = best_split(x, y, v, min_child, use_missing=False)
        except NoSplit:
            continue
        if s.gain > best_gain:
            best_v, best_gain = v, s.gain
    if best_v < 0:
        raise NoSplit("no split reduces impurity")
    return best_v


# -- surrogates -------------------------------------------------------------


def surrogate_for(x: np.ndarray, direction: np.ndarray, primary_observed: np.ndarray, var: int):
    """Best-agreeing split on x for rows observed on both variables.

    ``direction`` is True for rows the primary sends left. Returns
    ``(split, agreement_rate)`` or None when x does not beat the
    go-with-the-majority rule.
    """
    both = primary_observed & ~_missing(x)
    nb = int(both.sum())
    if nb == 0:
        return None
    d = direction[both]
    n_left = int(d.sum())
    baseline = max(n_left, nb - n_left)
    xs = x[both]
    if is_ordinal(x):
        order = np.argsort(xs, kind="stable")
        vs = xs[order]
        ds = d[order].astype(np.int64)
        cl = np.cumsum(ds)
        cr = np.cumsum(1 - ds)
        i = np.arange(1, nb)
        i = i[vs[:-1] < vs[1:]]
        if i.size == 0:
            return None
        agree = cl[i - 1] + ((nb - n_left) - cr[i - 1])
        k = int(np.argmax(agree))
        best = int(agree[k])
        if best <= baseline:
            return None
        pos = int(i[k])
        split = Split(var, threshold=_midpoint(float(vs[pos - 1]), float(vs[pos])), missing_left=True)
    else:
        nl = max(_n_levels(x), 1)
        cl = np.bincount(xs, weights=d, minlength=nl).astype(np.int64)
        cr = np.bincount(xs, weights=~d, minlength=nl).astype(np.int64)
        present = (cl + cr) > 0
        to_left = present & (cl >= cr)
        if not (to_left.any() and (present & ~to_left).any()):
            return None
        best = int(np.maximum(cl, cr).sum())
        if best <= baseline:
            return None
        split = Split(var, left_levels=frozenset(int(c) for c in np.flatnonzero(to_left)), missing_left=True)
    return split, best / nb


def find_surrogates(columns: Sequence[np.ndarray], primary: Split,
                    max_surrogates: int = 5) -> list[tuple[Split, float]]:
    """Surrogates for ``primary`` among the other variables, best first."""
    x = columns[primary.var]
    observed = ~_missing(x)
    direction = primary.observed_left(x)
    found = []
    for v, z in enumerate(columns):
        if v == primary.var:
            continue
        res = surrogate_for(z, direction, observed, v)
        if res is not None:
            found.append(res)
    found.sort(key=lambda t: (-t[1], t[0].var))
    return found[:max_surrogates]
