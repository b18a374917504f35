"""Brute-force reference searches in exact rational arithmetic."""

from fractions import Fraction
from itertools import product

import numpy as np


def child_score(ys, classification):
    """n times impurity of a node, exactly (Gini for classes, SSE otherwise)."""
    n = len(ys)
    if n == 0:
        return Fraction(0)
    if classification:
        counts = {}
        for v in ys:
            counts[v] = counts.get(v, 0) + 1
        return Fraction(n) - Fraction(sum(c * c for c in counts.values()), n)
    vals = [Fraction(v) for v in ys]
    s = sum(vals)
    return sum(v * v for v in vals) - s * s / n


def split_score(y, left, classification):
    y = list(y)
    return (child_score([v for v, g in zip(y, left) if g], classification)
            + child_score([v for v, g in zip(y, left) if not g], classification))


def ordinal_oracle(x, y, classification, min_child=1):
    """Smallest child impurity over thresholds, missing sides and missing-vs-observed."""
    miss = np.isnan(x)
    vals = sorted(set(x[~miss].tolist()))
    best = None
    for a in vals[:-1]:
        sides = (True, False) if miss.any() else (True,)
        for side in sides:
            left = np.where(miss, side, x <= a)
            if min(left.sum(), (~left).sum()) < min_child:
                continue
            s = split_score(y, left, classification)
            best = s if best is None or s < best else best
    if miss.any() and (~miss).any() and min(miss.sum(), (~miss).sum()) >= min_child:
        s = split_score(y, miss, classification)
        best = s if best is None or s < best else best
    return best


def subset_oracle(x, y, min_child=1):
    """Smallest Gini child impurity over every two-sided partition of the observed levels."""
    levels = sorted(set(int(v) for v in x if v >= 0))
    has_miss = bool((x < 0).any())
    best = None
    for bits in product((True, False), repeat=len(levels)):
        if all(bits) or not any(bits) or not bits[0]:
            continue
        chosen = {lev for lev, b in zip(levels, bits) if b}
        for side in ((True, False) if has_miss else (True,)):
            left = np.array([side if v < 0 else int(v) in chosen for v in x])
            if min(left.sum(), (~left).sum()) < min_child:
                continue
            s = split_score(y, left, True)
            best = s if best is None or s < best else best
    return best


def route_score(x, y, split, classification):
    """Exact child impurity of a fitted split on one column."""
    return split_score(y, split.goes_left(x), classification)
