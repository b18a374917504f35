import numpy as np
import pytest

from conftest import mixed_dataset
from treeimpute.dataset import Column, DataError, Dataset
from treeimpute.estimators import (MethodConfig, completed_mean, estimate_cell_forest,
                                   estimate_cell_tree, estimate_reg_tree, estimate_sim, ipw_estimate,
                                   parse_methods, run_method)
from treeimpute.forest import ForestParams
from treeimpute.splits import Mode
from treeimpute.tree import TreeParams

FAST = MethodConfig(forest=ForestParams(n_trees=10), gmice_m=2, gmice_iterations=2)


def test_ipw_formula():
    assert ipw_estimate([1.0, 3.0], [0.5, 0.25]) == pytest.approx((2 + 12) / 6)
    assert ipw_estimate([2.0, 4.0], [0.3, 0.3]) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        ipw_estimate([1.0], [0.0])
    with pytest.raises(ValueError):
        ipw_estimate([1.0, 2.0], [0.5])


def test_completed_mean_formula():
    assert completed_mean([1.0, 2.0], [6.0]) == 3.0
    assert completed_mean([5.0], []) == 5.0


def test_sim_is_observed_mean(small_data):
    y = small_data["y"]
    res = estimate_sim(small_data, "y")
    assert res.estimate == pytest.approx(y.values[~y.missing].mean(), rel=1e-14)
    assert res.imputed.size == y.n_missing


@pytest.mark.parametrize("mode", list(Mode))
def test_cell_tree_duality(small_data, mode):
    res = estimate_cell_tree(small_data, "y", mode, TreeParams(min_node_size=10))
    y = small_data["y"]
    ipw = ipw_estimate(y.values[~y.missing], res.propensities)
    assert ipw == pytest.approx(res.estimate, rel=1e-12)


def test_cell_tree_single_leaf_equals_sim():
    d = mixed_dataset(np.random.default_rng(1), n=60)
    res = estimate_cell_tree(d, "y", Mode.GUIDE, TreeParams(min_node_size=1000))
    assert res.model.n_nodes == 1
    assert res.estimate == pytest.approx(estimate_sim(d, "y").estimate, rel=1e-14)


def test_empty_leaf_uses_ancestor():
    # rows with x missing have y missing too, so their cell has no observed y
    x = [None] * 20 + list(range(40))
    y = [None] * 20 + [float(v % 7) for v in range(40)]
    d = Dataset((Column.ordinal("x", x), Column.ordinal("y", y)))
    with pytest.warns(RuntimeWarning, match="no observed values"):
        res = estimate_cell_tree(d, "y", Mode.GUIDE, TreeParams(min_node_size=5))
    assert res.notes
    assert np.isfinite(res.estimate)
    # the ancestor is the root, so the fallback is the observed mean
    assert res.imputed[0] == pytest.approx(np.mean([v % 7 for v in range(40)]))


def test_reg_tree_imputes_leaf_means(small_data):
    res = estimate_reg_tree(small_data, "y", Mode.GUIDE, TreeParams(min_node_size=10))
    tree = res.model
    miss = small_data.take(res.missing_rows)
    assert np.array_equal(res.imputed, tree.predict_mean(miss))


def test_cell_forest_single_leaf_trees_give_sim():
    d = mixed_dataset(np.random.default_rng(2), n=80)
    params = ForestParams(n_trees=3, tree=TreeParams(min_node_size=10000), bootstrap=False)
    res = estimate_cell_forest(d, "y", params)
    assert res.estimate == pytest.approx(estimate_sim(d, "y").estimate, rel=1e-12)


def test_cell_forest_propensities_clipped(small_data):
    res = estimate_cell_forest(small_data, "y", ForestParams(n_trees=5), floor=0.2)
    assert res.propensities.min() >= 0.2 and res.propensities.max() <= 1.0
    ins = estimate_cell_forest(small_data, "y", ForestParams(n_trees=5), out_of_bag=False)
    assert ins.propensities.min() >= 0.01


@pytest.mark.parametrize("method", ["SIM", "GCT", "RCT", "GRT", "RRT", "GCF", "GRF", "GMICE"])
def test_every_method_runs(small_data, method):
    res = run_method(method, small_data, "y", FAST)
    assert res.method == method and np.isfinite(res.estimate) and res.seconds >= 0
    y = small_data["y"].values
    assert np.nanmin(y) - 5 < res.estimate < np.nanmax(y) + 5


def test_methods_on_complete_target_give_sample_mean():
    d = mixed_dataset(np.random.default_rng(5), y_miss=0.0)
    mean = float(d["y"].values.mean())
    for m in ("SIM", "GCT", "GRT", "GCF", "GRF", "GMICE"):
        assert run_method(m, d, "y", FAST).estimate == pytest.approx(mean, rel=1e-12)


def test_result_json(small_data):
    res = run_method("GCT", small_data, "y")
    doc = res.to_dict()
    assert doc["method"] == "GCT" and len(doc["propensities"]) == small_data.n_rows - len(doc["missing_rows"])


def test_parse_methods():
    assert parse_methods("sim, gct,GRF") == ["SIM", "GCT", "GRF"]
    with pytest.raises(ValueError):
        parse_methods("sim,foo")
    with pytest.raises(ValueError):
        run_method("foo", None, "y")


def test_target_errors(small_data):
    with pytest.raises(DataError):
        estimate_sim(small_data, "c1")
    d = Dataset((Column.ordinal("x", [1, 2]), Column.ordinal("y", [None, None])))
    with pytest.raises(DataError):
        estimate_sim(d, "y")
