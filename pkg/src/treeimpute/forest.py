"""Bagged ensembles of unpruned guide-mode trees."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Column, DataError, Dataset, FlagColumn
from .tree import Design, Tree, TreeParams, _predictor_names, _resolve_response, fit_tree_arrays


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 500
    tree: TreeParams = field(default_factory=lambda: TreeParams(min_node_size=5))
    seed: int = 0
    # test hook: fit every tree on the full sample
    bootstrap: bool = True

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be at least 1")

    def to_dict(self) -> dict:
        return {"n_trees": self.n_trees, "tree": self.tree.to_dict(), "seed": self.seed,
                "bootstrap": self.bootstrap}

    @classmethod
    def from_dict(cls, d: dict) -> "ForestParams":
        return cls(d["n_trees"], TreeParams.from_dict(d["tree"]), d["seed"], d["bootstrap"])


def tree_seeds(seed: int, n_trees: int) -> list[np.random.SeedSequence]:
    """Independent per-tree seed sequences derived from the master seed."""
    return np.random.SeedSequence(seed).spawn(n_trees)


def _mean_exact(stack: np.ndarray) -> np.ndarray:
    """Mean over axis 0 that does not depend on the order of the rows."""
    return np.sort(stack, axis=0).sum(axis=0) / stack.shape[0]


@dataclass(eq=False)
class Forest:
    kind: str
    trees: list[Tree]
    params: ForestParams
    classes: tuple[str, ...] = ()
    # sorted bootstrap rows of each tree (training-time only, not serialised)
    inbag: list[np.ndarray] | None = field(default=None, repr=False)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def _design(self, data) -> Design:
        return data if isinstance(data, Design) else Design._encode(data, self.trees[0].predictors)

    def tree_predictions(self, data: Dataset | Design) -> np.ndarray:
        """Per-tree predictions: (T, n, q) probabilities or (T, n) means."""
        d = self._design(data)
        return np.stack([t.leaf_values()[t.apply(d)] for t in self.trees])

    def predict_proba(self, data: Dataset | Design) -> np.ndarray:
        if self.kind != "classification":
            raise TypeError("classification forest required")
        return _mean_exact(self.tree_predictions(data))

    def predict_mean(self, data: Dataset | Design) -> np.ndarray:
        if self.kind != "regression":
            raise TypeError("regression forest required")
        return _mean_exact(self.tree_predictions(data))

    def oob_predictions(self, training: Design) -> np.ndarray:
        """Average over the trees whose bootstrap sample left each row out.

        ``training`` must be the design the forest was fit on. Rows that
        are in every bootstrap sample get the all-tree average.
        """
        if self.inbag is None:
            raise ValueError("bootstrap rows unavailable (forest was loaded or fit without bootstrap)")
        preds = self.tree_predictions(training)
        out = np.zeros(preds.shape[1:])
        cnt = np.zeros(preds.shape[1])
        for t, rows in enumerate(self.inbag):
            use = np.ones(preds.shape[1], dtype=bool)
            use[rows] = False
            out[use] += preds[t][use]
            cnt[use] += 1
        none = cnt == 0
        full = _mean_exact(preds)
        cnt[none] = 1
        out = out / (cnt[:, None] if out.ndim == 2 else cnt)
        out[none] = full[none]
        return out

    def to_dict(self) -> dict:
        return {"type": "forest", "kind": self.kind, "classes": list(self.classes),
                "params": self.params.to_dict(), "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, doc: dict) -> "Forest":
        return cls(doc["kind"], [Tree.from_dict(t) for t in doc["trees"]],
                   ForestParams.from_dict(doc["params"]), tuple(doc.get("classes", ())))

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict())
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, path: str | Path) -> "Forest":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_forest_arrays(design: Design, y: np.ndarray, q: int, params: ForestParams,
                      classes: tuple = (), name: str = "") -> Forest:
    """Forest on pre-encoded arrays (``q = 0`` for a numeric response)."""
    n = y.shape[0]
    if n == 0:
        raise DataError("empty training set")
    trees, inbag = [], []
    for ss in tree_seeds(params.seed, params.n_trees):
        rng = np.random.default_rng(ss)
        node_seed = int(ss.generate_state(1, dtype=np.uint64)[0])
        if params.bootstrap:
            rows = np.sort(rng.integers(0, n, size=n))
            d, yy = design.take(rows), y[rows]
            inbag.append(rows)
        else:
            d, yy = design, y
        trees.append(fit_tree_arrays(d, yy, q, params.tree, node_seed, classes, name))
    return Forest("classification" if q else "regression", trees, params, tuple(classes),
                  inbag if params.bootstrap else None)


def fit_forest(data: Dataset, y: str | Column | FlagColumn, params: ForestParams = ForestParams(),
               predictors: Sequence[str] | None = None, rng: np.random.Generator | None = None) -> Forest:
    """Bootstrap forest for ``y``.

    Categorical (or flag) responses give a classification forest fit on all
    rows; an ordinal response gives a regression forest fit on its observed
    rows. When ``rng`` is given the master seed is drawn from it.
    """
    col, name = _resolve_response(data, y)
    if isinstance(col, FlagColumn):
        col = col.to_column()
    if rng is not None:
        params = replace(params, seed=int(rng.integers(0, 2**63 - 1)))
    design = Design.from_dataset(data, _predictor_names(data, name, predictors))
    if col.is_ordinal:
        rows = np.flatnonzero(~col.missing)
        return fit_forest_arrays(design.take(rows), col.values[rows].astype(np.float64), 0, params,
                                 (), name)
    if col.n_missing:
        raise DataError(f"classification response {name!r} has {col.n_missing} missing cells")
    return fit_forest_arrays(design, col.values.astype(np.int64), len(col.levels), params,
                             col.levels, name)


def residual_sigma(forest: Forest, data: Dataset | Design, y: np.ndarray | str) -> float:
    """In-sample root mean squared residual of a regression forest.

    With a column name, only rows where that column is observed are used.
    """
    if isinstance(y, str):
        col = data[y]
        rows = np.flatnonzero(~col.missing)
        data = forest._design(data).take(rows)
        y = col.values[rows]
    y = np.asarray(y, dtype=np.float64)
    if y.size == 0:
        raise DataError("empty training set")
    r = y - forest.predict_mean(data)
    return float(np.sqrt(np.mean(r * r)))
