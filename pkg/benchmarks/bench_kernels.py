"""Time the compiled kernels against the pure-Python fallback.

Both backends grow identical trees, so the comparison is purely about
speed. Run with ``python benchmarks/bench_kernels.py [--repeat N]``.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from treeimpute import _backend, _fallback, splits
from treeimpute.simharness import SurveySpec, synthetic_survey
from treeimpute.tree import Design, Tree, TreeParams

CASES = [
    # (label, rows, ordinal, categorical, min node size)
    ("small 300x10", 300, 7, 3, 5),
    ("survey 1152x30", 1152, 20, 10, 5),
    ("survey 4609x30", 4609, 20, 10, 50),
]


def arrays(rows, p_ord, p_cat, seed=0):
    spec = SurveySpec(n=rows, p_ordinal=p_ord, p_categorical=p_cat)
    data = synthetic_survey(spec, np.random.default_rng(seed))
    design = Design.from_dataset(data, [n for n in data.names if n != "y"])
    flag = data["y"].missing.astype(np.int64)
    return design, flag


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if "compiled" not in _backend.available():
        raise SystemExit("compiled extension not built; run pip install -e . first")
    compiled = _backend.get("compiled")
    print(f"{'case':<18}{'mode':<8}{'python s':>10}{'compiled s':>12}{'speedup':>9}  {'route speedup':>13}")
    for label, rows, p_ord, p_cat, min_node in CASES:
        design, y = arrays(rows, p_ord, p_cat)
        base = (design.xo, design.xc, design.nlev, design.var_kind, design.var_col, y, 2)
        for guide in (True, False):
            kw = dict(guide=guide, min_node=min_node, seed=1, callback=splits.multiclass_callback)
            tp, nodes = best_time(lambda: _fallback.build_tree(*base, **kw), args.repeat)
            tc, _ = best_time(lambda: compiled.build_tree(*base, **kw), args.repeat)
            tree = Tree("classification", design.predictors, TreeParams(), nodes, ("Observed", "Missing"))
            flat = tree.flat()
            route = (design.xo, design.xc, design.var_kind, design.var_col)
            rp, _ = best_time(lambda: _fallback.route_rows(*flat, *route), args.repeat)
            rc, _ = best_time(lambda: compiled.route_rows(*flat, *route), args.repeat)
            mode = "guide" if guide else "greedy"
            print(f"{label:<18}{mode:<8}{tp:>10.3f}{tc:>12.4f}{tp / tc:>8.1f}x  {rp / rc:>12.1f}x")


if __name__ == "__main__":
    main()
