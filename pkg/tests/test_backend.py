"""The compiled kernels must grow and route exactly like the Python ones."""

import numpy as np
import pytest

from treeimpute import _backend, _fallback, splits
from treeimpute.splits import Mode
from treeimpute.tree import Design, TreeParams, fit_regression_tree

compiled = pytest.importorskip("treeimpute._core")


def random_arrays(rng, n, po, pc, q, miss=0.2):
    xo = np.asfortranarray(rng.normal(size=(n, po)).round(1))
    xo[rng.random((n, po)) < miss] = np.nan
    nlev = rng.integers(2, 25, size=pc).astype(np.int32)
    xc = np.zeros((n, pc), dtype=np.int32, order="F")
    for j, lev in enumerate(nlev):
        xc[:, j] = rng.integers(0, lev, size=n)
    xc[rng.random(xc.shape) < miss] = -1
    kinds = np.array([0] * po + [1] * pc, dtype=np.int8)
    cols = np.array(list(range(po)) + list(range(pc)), dtype=np.int32)
    perm = rng.permutation(po + pc)
    signal = np.nan_to_num(xo[:, 0]) if po else rng.normal(size=n)
    if q:
        y = ((rng.integers(0, q, size=n) + (signal > 0)) % q).astype(np.int64)
    else:
        y = signal * 2 + rng.normal(size=n)
    return xo, xc, nlev, kinds[perm], cols[perm], y


def assert_same_nodes(a, b):
    assert a.keys() == b.keys()
    for k in a:
        if k == "subset":
            for u, v in zip(a[k], b[k]):
                assert (u is None) == (v is None)
                if u is not None:
                    assert np.array_equal(u, v)
        elif k == "surrogates":
            for u, v in zip(a[k], b[k]):
                assert len(u) == len(v)
                for s, t in zip(u, v):
                    assert s[0] == t[0] and s[3] == t[3]
                    assert s[1] == t[1] or (np.isnan(s[1]) and np.isnan(t[1]))
                    assert (s[2] is None) == (t[2] is None)
                    if s[2] is not None:
                        assert np.array_equal(s[2], t[2])
        else:
            assert np.array_equal(a[k], b[k], equal_nan=True), k


@pytest.mark.parametrize("trial", range(48))
def test_trees_identical(trial):
    rng = np.random.default_rng(trial)
    q = [0, 2, 3, 5][trial % 4]
    po, pc = int(rng.integers(1, 4)), int(rng.integers(0, 3))
    args = random_arrays(rng, int(rng.integers(20, 300)), po, pc, q)
    for guide in (True, False):
        kw = dict(guide=guide, min_node=int(rng.integers(1, 8)), max_depth=-1,
                  mtry=int(rng.integers(0, 3)), seed=trial, callback=splits.multiclass_callback)
        a = compiled.build_tree(*args, q, **kw)
        b = _fallback.build_tree(*args, q, **kw)
        assert_same_nodes(a, b)


def test_many_level_multiclass_identical():
    rng = np.random.default_rng(99)
    n = 400
    xc = np.asfortranarray(rng.integers(0, 30, size=(n, 1)).astype(np.int32))
    xo = np.zeros((n, 0), order="F")
    y = (xc[:, 0] % 4 + (rng.random(n) < 0.2)).astype(np.int64) % 4
    args = (xo, xc, np.array([30], np.int32), np.array([1], np.int8), np.array([0], np.int32), y, 4)
    kw = dict(guide=True, min_node=5, seed=0, callback=splits.multiclass_callback)
    assert_same_nodes(compiled.build_tree(*args, **kw), _fallback.build_tree(*args, **kw))


def test_routing_identical(small_data):
    tree = fit_regression_tree(small_data, "y", TreeParams(Mode.GREEDY, min_node_size=5))
    d = Design.from_dataset(small_data, [p.name for p in tree.predictors])
    flat = tree.flat()
    a = compiled.route_rows(*flat, d.xo, d.xc, d.var_kind, d.var_col)
    b = _fallback.route_rows(*flat, d.xo, d.xc, d.var_kind, d.var_col)
    assert np.array_equal(a, b)


def test_backend_selection(monkeypatch):
    assert set(_backend.available()) == {"compiled", "python"}
    monkeypatch.setenv("TREEIMPUTE_BACKEND", "python")
    assert _backend.get() is _fallback and _backend.active_name() == "python"
    monkeypatch.setenv("TREEIMPUTE_BACKEND", "bogus")
    with pytest.raises(ValueError):
        _backend.get()
