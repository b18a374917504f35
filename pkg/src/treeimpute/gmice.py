"""Chained-equations multiple imputation with guide-mode trees.

Each chain starts from mean/mode fills and then cycles through the
incomplete columns. A column's model is a tree fit on the rows where that
column was originally observed, using every other column (at its current
imputed state) as a predictor. Each originally missing cell is replaced by
a value drawn at random from the training rows of its leaf, or by the leaf
mean/majority class when ``donor`` is off.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Column, DataError, Dataset, VariableKind, load_csv, write_csv
from .estimators import completed_mean
from .tree import Design, TreeParams, fit_tree_arrays


@dataclass(frozen=True)
class GmiceParams:
    m_imputations: int = 5
    iterations: int = 10
    tree: TreeParams = field(default_factory=TreeParams)
    seed: int = 0
    donor: bool = True
    # column visit order by name; default is descending missing count
    order: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.m_imputations < 1 or self.iterations < 1:
            raise ValueError("m_imputations and iterations must be at least 1")


@dataclass(frozen=True, eq=False)
class CompletedDataset:
    """A dataset without missing cells plus the source missingness mask."""

    dataset: Dataset
    mask: np.ndarray  # (n_rows, n_columns), True where the source cell was missing

    def write(self, path: str | Path) -> Path:
        """CSV of the completed data and a ``.mask.csv`` sidecar of 0/1 flags."""
        path = Path(path)
        write_csv(self.dataset, path)
        side = mask_path(path)
        with open(side, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.dataset.names)
            w.writerows(self.mask.astype(np.int8).tolist())
        return side

    @classmethod
    def read(cls, path: str | Path, schema) -> "CompletedDataset":
        path = Path(path)
        data = load_csv(path, schema)
        with open(mask_path(path), newline="") as fh:
            rows = list(csv.reader(fh))
        if rows[0] != data.names:
            raise DataError(f"{mask_path(path)}: header does not match {path}")
        mask = np.array([[c == "1" for c in r] for r in rows[1:]], dtype=bool).reshape(data.n_rows, -1)
        return cls(data, mask)


def mask_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".mask.csv")


def initialize(data: Dataset) -> CompletedDataset:
    """Fill ordinal cells with the observed mean and categorical cells with the mode."""
    cols = []
    for c in data.columns:
        obs = ~c.missing
        if c.values.size and not obs.any():
            raise DataError(f"column {c.name!r} has no observed values")
        values = c.values.copy()
        if c.n_missing:
            if c.is_ordinal:
                values[c.missing] = c.values[obs].mean()
            else:
                values[c.missing] = int(np.argmax(np.bincount(c.values[obs], minlength=len(c.levels))))
        cols.append(Column(c.name, c.kind, values, np.zeros(c.missing.shape, dtype=bool), c.levels))
    return CompletedDataset(Dataset(tuple(cols)), data.missing_mask())


def visit_order(mask: np.ndarray) -> list[int]:
    """Columns with missing cells, most missing first (ties by position)."""
    counts = mask.sum(axis=0)
    cols = [j for j in np.argsort(-counts, kind="stable") if counts[j] > 0]
    return [int(j) for j in cols]


def _impute_column(design: Design, mask: np.ndarray, v: int, rng: np.random.Generator,
                   params: TreeParams, donor: bool) -> None:
    miss = np.flatnonzero(mask[:, v])
    if miss.size == 0:
        return
    train = np.flatnonzero(~mask[:, v])
    others = [u for u in range(len(design.predictors)) if u != v]
    view = design.subset(others)
    j = int(design.var_col[v])
    ordinal = design.var_kind[v] == 0
    y = design.xo[train, j] if ordinal else design.xc[train, j].astype(np.int64)
    q = 0 if ordinal else int(design.nlev[j])
    tree = fit_tree_arrays(view.take(train), y, q, params)
    leaf_train = tree.nodes["leaf_of"]
    leaf_miss = tree.apply(view.take(miss))
    if donor:
        order = np.argsort(leaf_train, kind="stable")
        start = np.searchsorted(leaf_train[order], np.arange(tree.n_nodes), side="left")
        count = np.bincount(leaf_train, minlength=tree.n_nodes)
        pick = start[leaf_miss] + rng.integers(0, count[leaf_miss])
        values = y[order[pick]]
    elif ordinal:
        values = tree.leaf_values()[leaf_miss]
    else:
        values = np.argmax(tree.nodes["counts"][leaf_miss], axis=1)
    if ordinal:
        design.xo[miss, j] = values
    else:
        design.xc[miss, j] = values


def _to_dataset(design: Design) -> Dataset:
    cols = []
    n = design.n_rows
    for v, p in enumerate(design.predictors):
        j = int(design.var_col[v])
        vals = design.xo[:, j].copy() if p.kind is VariableKind.ORDINAL else design.xc[:, j].copy()
        cols.append(Column(p.name, p.kind, vals, np.zeros(n, dtype=bool), p.levels))
    return Dataset(tuple(cols))


def gmice_cycle(completed: CompletedDataset, mask: np.ndarray | None = None,
                order: Sequence[int] | None = None, rng: np.random.Generator | None = None,
                params: TreeParams = TreeParams(), donor: bool = True) -> CompletedDataset:
    """One pass over the incomplete columns; only masked cells change."""
    mask = completed.mask if mask is None else mask
    rng = np.random.default_rng(0) if rng is None else rng
    design = Design.from_dataset(completed.dataset)
    for v in (visit_order(mask) if order is None else order):
        _impute_column(design, mask, int(v), rng, params, donor)
    return CompletedDataset(_to_dataset(design), mask)


def chain_rng(seed: int, chain: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, chain]))


def gmice_impute(data: Dataset, params: GmiceParams = GmiceParams()) -> list[CompletedDataset]:
    """``m_imputations`` independent chains of ``iterations`` cycles each."""
    start = initialize(data)
    mask = start.mask
    if params.order is None:
        order = visit_order(mask)
    else:
        order = [data.position(name) for name in params.order]
    out = []
    for c in range(params.m_imputations):
        rng = chain_rng(params.seed, c)
        design = Design.from_dataset(start.dataset)
        if mask.any():
            for _ in range(params.iterations):
                for v in order:
                    _impute_column(design, mask, v, rng, params.tree, params.donor)
        out.append(CompletedDataset(_to_dataset(design), mask))
    return out


def completed_mean_of(completed: CompletedDataset, y: str) -> float:
    col = completed.dataset[y]
    miss = completed.mask[:, completed.dataset.position(y)]
    return completed_mean(col.values[~miss], col.values[miss])


def pool_mean(chains: Sequence[CompletedDataset], y: str) -> float:
    """Average of the completed-sample means of ``y`` over the chains."""
    if not chains:
        raise ValueError("no imputations to pool")
    return float(np.mean([completed_mean_of(c, y) for c in chains]))
