import numpy as np
import pytest

from treeimpute.dataset import Column, DataError, Dataset, derive_flag
from treeimpute.forest import Forest, ForestParams, fit_forest, residual_sigma, tree_seeds
from treeimpute.tree import Design, TreeParams


def test_same_seed_same_forest(small_data):
    p = ForestParams(n_trees=8, seed=3)
    a = fit_forest(small_data, "y", p)
    b = fit_forest(small_data, "y", p)
    assert a.to_json() == b.to_json()
    c = fit_forest(small_data, "y", ForestParams(n_trees=8, seed=4))
    assert c.to_json() != a.to_json()


def test_tree_seeds_independent_of_count():
    a = [s.generate_state(2).tolist() for s in tree_seeds(5, 3)]
    b = [s.generate_state(2).tolist() for s in tree_seeds(5, 6)]
    assert a == b[:3]


def test_without_bootstrap_all_trees_equal(small_data):
    f = fit_forest(small_data, "y", ForestParams(n_trees=3, bootstrap=False))
    docs = [t.to_json() for t in f.trees]
    assert docs[0] == docs[1] == docs[2]
    assert f.inbag is None


def test_prediction_is_average_of_trees(small_data):
    f = fit_forest(small_data, "y", ForestParams(n_trees=5, seed=1))
    per = np.stack([t.predict_mean(small_data) for t in f.trees])
    assert np.allclose(f.predict_mean(small_data), per.mean(axis=0), rtol=1e-13)


def test_classification_probabilities(small_data):
    flag = derive_flag(small_data, "y")
    f = fit_forest(small_data.drop(["y"]), flag, ForestParams(n_trees=6))
    p = f.predict_proba(small_data)
    assert p.shape == (small_data.n_rows, 2)
    assert np.allclose(p.sum(axis=1), 1.0)
    with pytest.raises(TypeError):
        f.predict_mean(small_data)


def test_single_pure_tree_gives_class_share():
    d = Dataset((Column.ordinal("x", [1.0] * 10), Column.categorical("y", ["a"] * 7 + ["b"] * 3)))
    f = fit_forest(d, "y", ForestParams(n_trees=1, bootstrap=False))
    assert f.predict_proba(d)[0].tolist() == [0.7, 0.3]


def test_out_of_bag_uses_only_excluded_trees(small_data):
    flag = derive_flag(small_data, "y")
    data = small_data.drop(["y"])
    f = fit_forest(data, flag, ForestParams(n_trees=10, seed=2))
    design = Design.from_dataset(data)
    per = f.tree_predictions(design)
    oob = f.oob_predictions(design)
    for i in (0, 7, 50):
        use = [t for t, rows in enumerate(f.inbag) if i not in set(rows.tolist())]
        want = per[use, i].mean(axis=0) if use else per[:, i].mean(axis=0)
        assert np.allclose(oob[i], want, rtol=1e-13)


def test_json_round_trip(small_data, tmp_path):
    f = fit_forest(small_data, "y", ForestParams(n_trees=4))
    f.to_json(tmp_path / "f.json")
    g = Forest.from_json(tmp_path / "f.json")
    assert np.array_equal(g.predict_mean(small_data), f.predict_mean(small_data))


def test_residual_sigma(small_data):
    f = fit_forest(small_data, "y", ForestParams(n_trees=4))
    y = small_data["y"]
    obs = ~y.missing
    r = y.values[obs] - f.predict_mean(small_data.take(np.flatnonzero(obs)))
    assert residual_sigma(f, small_data, "y") == pytest.approx(np.sqrt(np.mean(r * r)), rel=1e-12)


def test_rejects_bad_input(small_data):
    with pytest.raises(ValueError):
        ForestParams(n_trees=0)
    with pytest.raises(DataError):
        fit_forest(small_data, "c1")  # classification response with missing cells


def test_default_forest_trees_are_small_leaved():
    assert ForestParams().tree == TreeParams(min_node_size=5)
