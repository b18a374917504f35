"""Estimators of the population mean of a partially observed variable.

Two base forms are shared by every method. The inverse probability
weighted estimate reweights each observed value by its reciprocal response
propensity; the completed-sample mean averages observed values together
with imputations for the missing ones.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import DataError, Dataset, derive_flag
from .forest import ForestParams, fit_forest_arrays
from .splits import Mode
from .tree import Design, Tree, TreeParams, _predictor_names, fit_tree_arrays, subtree_leaves

METHODS = ("SIM", "GCT", "RCT", "GRT", "RRT", "GCF", "GRF", "GMICE")

PROPENSITY_FLOOR = 0.01


def ipw_estimate(y_obs, pi_hat) -> float:
    """``sum(y / pi) / sum(1 / pi)`` over the observed rows."""
    y = np.asarray(y_obs, dtype=np.float64)
    pi = np.asarray(pi_hat, dtype=np.float64)
    if y.shape != pi.shape:
        raise ValueError("y_obs and pi_hat differ in length")
    if y.size == 0:
        raise ValueError("no observed values")
    if np.any(~(pi > 0)):
        raise ValueError("propensities must be positive")
    w = 1.0 / pi
    return float(np.dot(w, y) / w.sum())


def completed_mean(y_obs, y_imp) -> float:
    """Mean of the observed values and the imputations together."""
    y = np.asarray(y_obs, dtype=np.float64)
    z = np.asarray(y_imp, dtype=np.float64)
    n = y.size + z.size
    if n == 0:
        raise ValueError("empty sample")
    return float((y.sum() + z.sum()) / n)


@dataclass
class EstimatorResult:
    method: str
    estimate: float
    seconds: float
    imputed: np.ndarray | None = None  # imputation for each missing-y row, in row order
    missing_rows: np.ndarray | None = None
    propensities: np.ndarray | None = None  # one per observed-y row
    model: object = field(default=None, repr=False)
    notes: list[str] = field(default_factory=list)

    def to_dict(self, artifacts: bool = True) -> dict:
        d = {"method": self.method, "estimate": self.estimate, "seconds": self.seconds}
        if self.notes:
            d["notes"] = list(self.notes)
        if artifacts:
            if self.imputed is not None:
                d["missing_rows"] = [int(i) for i in self.missing_rows]
                d["imputed"] = [float(v) for v in self.imputed]
            if self.propensities is not None:
                d["propensities"] = [float(v) for v in self.propensities]
        return d

    def to_json(self, path: str | Path | None = None, artifacts: bool = True) -> str:
        text = json.dumps(self.to_dict(artifacts), indent=1)
        if path is not None:
            Path(path).write_text(text)
        return text


@dataclass(frozen=True)
class MethodConfig:
    tree: TreeParams = field(default_factory=TreeParams)
    forest: ForestParams = field(default_factory=ForestParams)
    propensity_floor: float = PROPENSITY_FLOOR
    out_of_bag: bool = True
    gmice_m: int = 5
    gmice_iterations: int = 10
    gmice_donor: bool = True
    seed: int = 0


def _split_y(sample: Dataset, y: str):
    col = sample[y]
    if not col.is_ordinal:
        raise DataError(f"target {y!r} must be ordinal")
    obs = np.flatnonzero(~col.missing)
    mis = np.flatnonzero(col.missing)
    if obs.size == 0:
        raise DataError(f"target {y!r} has no observed values")
    return col, obs, mis


def _timed(method: str, fn):
    t0 = time.perf_counter()
    res = fn()
    res.method = method
    res.seconds = time.perf_counter() - t0
    return res


def estimate_sim(sample: Dataset, y: str) -> EstimatorResult:
    """Mean of the observed values, ignoring the predictors."""
    def run():
        col, obs, mis = _split_y(sample, y)
        yo = col.values[obs]
        imp = np.full(mis.size, yo.mean())
        return EstimatorResult("SIM", completed_mean(yo, imp), 0.0, imp, mis)
    return _timed("SIM", run)


def cell_means(tree: Tree, leaf_of: np.ndarray, y: np.ndarray, observed: np.ndarray,
               notes: list[str] | None = None) -> np.ndarray:
    """Mean of observed y per leaf; empty leaves take the nearest ancestor with data."""
    k = tree.n_nodes
    cnt = np.bincount(leaf_of[observed], minlength=k).astype(np.float64)
    tot = np.bincount(leaf_of[observed], weights=y[observed], minlength=k)
    means = np.full(k, np.nan)
    has = cnt > 0
    means[has] = tot[has] / cnt[has]
    parent = tree.nodes["parent"]
    for leaf in tree.leaves:
        if has[leaf]:
            continue
        a = int(parent[leaf])
        while a >= 0:
            below = subtree_leaves(tree, a)
            c, s = cnt[below].sum(), tot[below].sum()
            if c > 0:
                means[leaf] = s / c
                break
            a = int(parent[a])
        if notes is not None:
            notes.append(f"leaf {leaf} has no observed values; imputed from ancestor node {a}")
            warnings.warn(notes[-1], RuntimeWarning, stacklevel=3)
    return means


def _design(sample: Dataset, y: str, predictors: Sequence[str] | None) -> Design:
    return Design.from_dataset(sample, _predictor_names(sample, y, predictors))


def estimate_cell_tree(sample: Dataset, y: str, mode: Mode | str = Mode.GUIDE,
                       params: TreeParams = TreeParams(), predictors: Sequence[str] | None = None
                       ) -> EstimatorResult:
    """Adjustment cells from a classification tree on the missingness flag.

    Missing values are imputed with the observed mean of their leaf. The
    returned propensities are the observed proportions p(t) of each observed
    row's leaf, so ``ipw_estimate`` on them reproduces the estimate.
    """
    mode = Mode(mode)
    method = "GCT" if mode is Mode.GUIDE else "RCT"

    def run():
        col, obs, mis = _split_y(sample, y)
        design = _design(sample, y, predictors)
        flag = derive_flag(sample, y).codes.astype(np.int64)
        tree = fit_tree_arrays(design, flag, 2, replace(params, mode=mode),
                               classes=("Observed", "Missing"), name=y + "_")
        leaf_of = tree.nodes["leaf_of"]
        notes: list[str] = []
        means = cell_means(tree, leaf_of, col.values, obs, notes)
        imp = means[leaf_of[mis]]
        counts = np.bincount(leaf_of, minlength=tree.n_nodes)
        n_obs = np.bincount(leaf_of[obs], minlength=tree.n_nodes)
        pi = n_obs[leaf_of[obs]] / counts[leaf_of[obs]]
        est = completed_mean(col.values[obs], imp)
        return EstimatorResult(method, est, 0.0, imp, mis, propensities=pi, model=tree, notes=notes)
    return _timed(method, run)


def estimate_reg_tree(sample: Dataset, y: str, mode: Mode | str = Mode.GUIDE,
                      params: TreeParams = TreeParams(), predictors: Sequence[str] | None = None
                      ) -> EstimatorResult:
    """Regression tree on the observed rows; missing rows get their leaf mean."""
    mode = Mode(mode)
    method = "GRT" if mode is Mode.GUIDE else "RRT"

    def run():
        col, obs, mis = _split_y(sample, y)
        design = _design(sample, y, predictors)
        tree = fit_tree_arrays(design.take(obs), col.values[obs], 0, replace(params, mode=mode), name=y)
        imp = tree.leaf_values()[tree.apply(design.take(mis))] if mis.size else np.zeros(0)
        est = completed_mean(col.values[obs], imp)
        return EstimatorResult(method, est, 0.0, imp, mis, model=tree)
    return _timed(method, run)


def estimate_cell_forest(sample: Dataset, y: str, params: ForestParams = ForestParams(),
                         predictors: Sequence[str] | None = None,
                         floor: float = PROPENSITY_FLOOR, out_of_bag: bool = True) -> EstimatorResult:
    """Inverse probability weighting with classification-forest propensities.

    By default each row's propensity averages only the trees whose
    bootstrap sample left it out. Unpruned trees nearly memorise their
    in-bag rows, so in-sample probabilities of observed rows sit close to 1
    and the weights collapse toward the unadjusted mean.
    """
    def run():
        col, obs, mis = _split_y(sample, y)
        design = _design(sample, y, predictors)
        flag = derive_flag(sample, y).codes.astype(np.int64)
        forest = fit_forest_arrays(design, flag, 2, params, ("Observed", "Missing"), y + "_")
        if out_of_bag and forest.inbag is not None:
            pi = forest.oob_predictions(design)[obs, 0]
        else:
            pi = forest.predict_proba(design.take(obs))[:, 0]
        pi = np.clip(pi, floor, 1.0)
        return EstimatorResult("GCF", ipw_estimate(col.values[obs], pi), 0.0, propensities=pi,
                               model=forest)
    return _timed("GCF", run)


def estimate_reg_forest(sample: Dataset, y: str, params: ForestParams = ForestParams(),
                        predictors: Sequence[str] | None = None) -> EstimatorResult:
    """Regression forest on the observed rows; missing rows get the forest mean."""
    def run():
        col, obs, mis = _split_y(sample, y)
        design = _design(sample, y, predictors)
        forest = fit_forest_arrays(design.take(obs), col.values[obs], 0, params, (), y)
        imp = forest.predict_mean(design.take(mis)) if mis.size else np.zeros(0)
        return EstimatorResult("GRF", completed_mean(col.values[obs], imp), 0.0, imp, mis, model=forest)
    return _timed("GRF", run)


def estimate_gmice(sample: Dataset, y: str, config: MethodConfig = MethodConfig(),
                   predictors: Sequence[str] | None = None) -> EstimatorResult:
    """Chained-equations multiple imputation with tree models; pooled completed mean."""
    from .gmice import GmiceParams, gmice_impute, pool_mean

    def run():
        col, obs, mis = _split_y(sample, y)
        names = [y] + _predictor_names(sample, y, predictors)
        data = sample.select(names)
        params = GmiceParams(config.gmice_m, config.gmice_iterations, config.tree, config.seed,
                             donor=config.gmice_donor)
        chains = gmice_impute(data, params)
        est = pool_mean(chains, y)
        imp = np.mean([c.dataset[y].values[mis] for c in chains], axis=0)
        return EstimatorResult("GMICE", est, 0.0, imp, mis, model=chains)
    return _timed("GMICE", run)


def run_method(method: str, sample: Dataset, y: str, config: MethodConfig = MethodConfig(),
               predictors: Sequence[str] | None = None) -> EstimatorResult:
    """Dispatch by method id (case-insensitive)."""
    m = method.upper()
    if m == "SIM":
        return estimate_sim(sample, y)
    if m in ("GCT", "RCT"):
        return estimate_cell_tree(sample, y, Mode.GUIDE if m == "GCT" else Mode.GREEDY, config.tree,
                                  predictors)
    if m in ("GRT", "RRT"):
        return estimate_reg_tree(sample, y, Mode.GUIDE if m == "GRT" else Mode.GREEDY, config.tree,
                                 predictors)
    if m == "GCF":
        return estimate_cell_forest(sample, y, config.forest, predictors, config.propensity_floor,
                                    config.out_of_bag)
    if m == "GRF":
        return estimate_reg_forest(sample, y, config.forest, predictors)
    if m == "GMICE":
        return estimate_gmice(sample, y, config, predictors)
    raise ValueError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")


def parse_methods(text: str) -> list[str]:
    out = []
    for part in text.split(","):
        m = part.strip().upper()
        if not m:
            continue
        if m not in METHODS:
            raise ValueError(f"unknown method {part.strip()!r}; expected one of {', '.join(METHODS)}")
        out.append(m)
    if not out:
        raise ValueError("no methods given")
    return out

