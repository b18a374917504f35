"""Classification and regression trees with native missing-value routing.

Trees are grown by the kernel in ``_core`` (or its pure-Python twin) and
stored as flat node arrays. Node 0 is the root and nodes are numbered in
preorder. A split sends a row left when its value is ``<= threshold`` (or
its level is in the left subset); rows missing the split variable follow
the surrogates, if any, and otherwise the node's missing side.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _backend, splits
from .dataset import Column, DataError, Dataset, FlagColumn, VariableKind
from .splits import Mode


@dataclass(frozen=True)
class TreeParams:
    mode: Mode = Mode.GUIDE
    min_node_size: int = 50
    max_depth: int | None = None
    max_surrogates: int = 5
    n_bins: int = splits.DEFAULT_BINS
    # variables tried per node; 0 means all of them
    mtry: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be at least 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be nonnegative")
        if self.max_surrogates < 0 or self.mtry < 0:
            raise ValueError("max_surrogates and mtry must be nonnegative")
        if not 2 <= self.n_bins <= 64:
            raise ValueError("n_bins must lie in [2, 64]")

    def to_dict(self) -> dict:
        return {"mode": self.mode.value, "min_node_size": self.min_node_size,
                "max_depth": self.max_depth, "max_surrogates": self.max_surrogates,
                "n_bins": self.n_bins, "mtry": self.mtry}

    @classmethod
    def from_dict(cls, d: dict) -> "TreeParams":
        return cls(**d)


@dataclass(frozen=True)
class Predictor:
    name: str
    kind: VariableKind
    levels: tuple[str, ...] = ()


class Design:
    """Predictor columns in the layout the kernels expect.

    Ordinal columns go into a float matrix with NaN for missing and
    categorical columns into an int32 matrix of codes with -1 for missing;
    ``var_kind``/``var_col`` map predictor ``v`` to its matrix column.
    """

    def __init__(self, predictors: Sequence[Predictor], xo: np.ndarray, xc: np.ndarray):
        self.predictors = tuple(predictors)
        self.xo = xo
        self.xc = xc
        kinds, cols, nlev = [], [], []
        no = nc = 0
        for p in self.predictors:
            if p.kind is VariableKind.ORDINAL:
                kinds.append(0)
                cols.append(no)
                no += 1
            else:
                kinds.append(1)
                cols.append(nc)
                nlev.append(len(p.levels))
                nc += 1
        self.var_kind = np.array(kinds, dtype=np.int8)
        self.var_col = np.array(cols, dtype=np.int32)
        self.nlev = np.array(nlev, dtype=np.int32)

    @property
    def n_rows(self) -> int:
        return max(self.xo.shape[0], self.xc.shape[0])

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.predictors]

    @classmethod
    def from_dataset(cls, data: Dataset, predictors: Sequence[str] | None = None) -> "Design":
        names = data.names if predictors is None else list(predictors)
        preds = [Predictor(n, data[n].kind, data[n].levels) for n in names]
        return cls._encode(data, preds)

    @classmethod
    def _encode(cls, data: Dataset, preds: Sequence[Predictor]) -> "Design":
        n = data.n_rows
        ords = [p for p in preds if p.kind is VariableKind.ORDINAL]
        cats = [p for p in preds if p.kind is VariableKind.CATEGORICAL]
        xo = np.empty((n, len(ords)), dtype=np.float64, order="F")
        xc = np.empty((n, len(cats)), dtype=np.int32, order="F")
        for j, p in enumerate(ords):
            col = _column(data, p)
            xo[:, j] = np.where(col.missing, np.nan, col.values)
        for j, p in enumerate(cats):
            xc[:, j] = _recode(_column(data, p), p.levels)
        return cls(preds, xo, xc)

    def encode_like(self, data: Dataset) -> "Design":
        """Encode ``data`` with this design's predictors and level dictionaries."""
        return Design._encode(data, self.predictors)

    def take(self, rows: np.ndarray) -> "Design":
        out = Design.__new__(Design)
        out.predictors, out.var_kind, out.var_col, out.nlev = (
            self.predictors, self.var_kind, self.var_col, self.nlev)
        out.xo = np.asfortranarray(self.xo[rows])
        out.xc = np.asfortranarray(self.xc[rows])
        return out

    def subset(self, keep: Sequence[int]) -> "Design":
        """View restricted to predictors ``keep``, sharing the matrices."""
        keep = list(keep)
        out = Design.__new__(Design)
        out.predictors = tuple(self.predictors[v] for v in keep)
        out.var_kind = self.var_kind[keep]
        out.var_col = self.var_col[keep]
        out.nlev = self.nlev
        out.xo, out.xc = self.xo, self.xc
        return out


def _column(data: Dataset, p: Predictor) -> Column:
    if p.name not in data:
        raise DataError(f"predictor {p.name!r} missing from data")
    col = data[p.name]
    if col.kind is not p.kind:
        raise DataError(f"predictor {p.name!r} is {col.kind.value}, expected {p.kind.value}")
    return col


def _recode(col: Column, levels: tuple[str, ...]) -> np.ndarray:
    """Codes of ``col`` in the dictionary ``levels``; unseen labels become -1."""
    codes = np.where(col.missing, -1, col.values).astype(np.int32)
    if col.levels == levels:
        return codes
    index = {lab: k for k, lab in enumerate(levels)}
    table = np.array([index.get(lab, -1) for lab in col.levels] + [-1], dtype=np.int32)
    return table[np.where(codes < 0, len(col.levels), codes)]


@dataclass(frozen=True)
class LeafStats:
    n: int
    proportions: np.ndarray | None = None
    mean: float | None = None
    sse: float | None = None


@dataclass(eq=False)
class Tree:
    """A fitted tree; see the module docstring for the node layout."""

    kind: str  # "classification" or "regression"
    predictors: tuple[Predictor, ...]
    params: TreeParams
    nodes: dict
    classes: tuple[str, ...] = ()
    response: str = ""
    _flat: tuple | None = field(default=None, repr=False)

    # -- structure -----------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return int(self.nodes["left"].shape[0])

    @property
    def is_classification(self) -> bool:
        return self.kind == "classification"

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.nodes["left"] < 0)

    @property
    def depth(self) -> int:
        return int(self.nodes["depth"].max())

    def is_leaf(self, k: int) -> bool:
        return bool(self.nodes["left"][k] < 0)

    # -- statistics ----------------------------------------------------------

    def node_n(self, k: int) -> int:
        return int(self.nodes["n"][k])

    def leaf_stats(self, k: int) -> LeafStats:
        n = self.node_n(k)
        if self.is_classification:
            counts = self.nodes["counts"][k]
            return LeafStats(n, proportions=counts / counts.sum())
        s, s2 = self.nodes["sums"][k]
        return LeafStats(n, mean=float(s / n), sse=float(max(s2 - s * s / n, 0.0)))

    def leaf_values(self) -> np.ndarray:
        """Per-node prediction: class proportions (K, q) or means (K,)."""
        if self.is_classification:
            c = self.nodes["counts"].astype(np.float64)
            return c / c.sum(axis=1, keepdims=True)
        return self.nodes["sums"][:, 0] / self.nodes["n"]

    # -- prediction ----------------------------------------------------------

    def _design(self, data) -> Design:
        if isinstance(data, Design):
            if data.predictors != self.predictors:
                raise DataError("design does not match the tree's predictors")
            return data
        return Design._encode(data, self.predictors)

    def apply(self, data: Dataset | Design) -> np.ndarray:
        """Leaf id of every row."""
        d = self._design(data)
        if d.n_rows == 0:
            return np.zeros(0, dtype=np.int32)
        return _backend.get().route_rows(*self.flat(), d.xo, d.xc, d.var_kind, d.var_col)

    def route(self, data: Dataset | Design, row: int) -> int:
        d = self._design(data)
        return int(self.apply(d.take(np.array([row])))[0])

    def predict_proba(self, data: Dataset | Design) -> np.ndarray:
        if not self.is_classification:
            raise TypeError("classification tree required")
        return self.leaf_values()[self.apply(data)]

    def predict_mean(self, data: Dataset | Design) -> np.ndarray:
        if self.is_classification:
            raise TypeError("regression tree required")
        return self.leaf_values()[self.apply(data)]

    def flat(self) -> tuple:
        """Node arrays flattened for the routing kernel."""
        if self._flat is not None:
            return self._flat
        nd = self.nodes
        k = self.n_nodes
        nlev = [len(p.levels) for p in self.predictors]
        masks = [np.zeros(1, dtype=np.uint8)]
        size = 1

        def add_mask(v, subset):
            nonlocal size
            m = np.zeros(nlev[v] + 1, dtype=np.uint8)
            m[subset] = 1
            masks.append(m)
            size += m.size
            return size - m.size

        sub_ptr = np.zeros(k, dtype=np.int64)
        sur_ptr = np.zeros(k + 1, dtype=np.int64)
        sur_var, sur_thr, sur_sub = [], [], []
        for i in range(k):
            if nd["subset"][i] is not None:
                sub_ptr[i] = add_mask(int(nd["var"][i]), nd["subset"][i])
            for u, thr, sub, _rate in nd["surrogates"][i]:
                sur_var.append(int(u))
                sur_thr.append(float(thr) if sub is None else math.nan)
                sur_sub.append(add_mask(int(u), sub) if sub is not None else 0)
            sur_ptr[i + 1] = len(sur_var)
        self._flat = (
            np.ascontiguousarray(nd["left"], dtype=np.int32),
            np.ascontiguousarray(nd["right"], dtype=np.int32),
            np.ascontiguousarray(nd["var"], dtype=np.int32),
            np.ascontiguousarray(nd["threshold"], dtype=np.float64),
            np.ascontiguousarray(nd["missing_left"], dtype=np.uint8),
            sub_ptr,
            np.concatenate(masks),
            sur_ptr,
            np.array(sur_var, dtype=np.int32),
            np.array(sur_thr, dtype=np.float64),
            np.array(sur_sub, dtype=np.int64),
        )
        return self._flat

    # -- serialisation -------------------------------------------------------

    def _rule(self, v: int, thr: float, subset) -> dict:
        p = self.predictors[v]
        if subset is None:
            return {"var": p.name, "threshold": float(thr)}
        return {"var": p.name, "left_levels": [p.levels[c] for c in subset]}

    def to_dict(self) -> dict:
        nd = self.nodes
        out_nodes = []
        for k in range(self.n_nodes):
            node = {"id": k, "n": int(nd["n"][k]), "depth": int(nd["depth"][k])}
            if self.is_classification:
                node["counts"] = [int(c) for c in nd["counts"][k]]
            else:
                node["sum"], node["sumsq"] = (float(x) for x in nd["sums"][k])
            if nd["left"][k] >= 0:
                split = self._rule(int(nd["var"][k]), nd["threshold"][k], nd["subset"][k])
                split["missing_left"] = bool(nd["missing_left"][k])
                split["gain"] = float(nd["gain"][k])
                split["surrogates"] = [dict(self._rule(int(u), thr, sub), agreement=float(rate))
                                       for u, thr, sub, rate in nd["surrogates"][k]]
                node["split"] = split
                node["left"] = int(nd["left"][k])
                node["right"] = int(nd["right"][k])
            out_nodes.append(node)
        return {
            "type": "tree",
            "kind": self.kind,
            "response": self.response,
            "classes": list(self.classes),
            "params": self.params.to_dict(),
            "predictors": [{"name": p.name, "kind": p.kind.value, "levels": list(p.levels)}
                           for p in self.predictors],
            "nodes": out_nodes,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Tree":
        preds = tuple(Predictor(p["name"], VariableKind.parse(p["kind"]), tuple(p["levels"]))
                      for p in doc["predictors"])
        pos = {p.name: v for v, p in enumerate(preds)}
        level_pos = [{lab: c for c, lab in enumerate(p.levels)} for p in preds]
        raw = doc["nodes"]
        k = len(raw)
        nodes = {
            "left": np.full(k, -1, dtype=np.int32), "right": np.full(k, -1, dtype=np.int32),
            "parent": np.full(k, -1, dtype=np.int32), "var": np.full(k, -1, dtype=np.int32),
            "depth": np.zeros(k, dtype=np.int32), "n": np.zeros(k, dtype=np.int64),
            "threshold": np.full(k, math.nan), "missing_left": np.zeros(k, dtype=np.uint8),
            "gain": np.full(k, math.nan), "subset": [None] * k, "surrogates": [[] for _ in range(k)],
        }

        def rule(s):
            v = pos[s["var"]]
            if "left_levels" in s:
                sub = np.array(sorted(level_pos[v][lab] for lab in s["left_levels"]), dtype=np.int32)
                return v, math.nan, sub
            return v, float(s["threshold"]), None

        stats = []
        for node in raw:
            i = node["id"]
            nodes["n"][i] = node["n"]
            nodes["depth"][i] = node["depth"]
            stats.append(node["counts"] if doc["kind"] == "classification" else [node["sum"], node["sumsq"]])
            if "split" in node:
                s = node["split"]
                v, thr, sub = rule(s)
                nodes["var"][i], nodes["threshold"][i], nodes["subset"][i] = v, thr, sub
                nodes["missing_left"][i] = int(s["missing_left"])
                nodes["gain"][i] = s["gain"]
                nodes["surrogates"][i] = [rule(t) + (float(t["agreement"]),) for t in s["surrogates"]]
                nodes["left"][i], nodes["right"][i] = node["left"], node["right"]
                nodes["parent"][node["left"]] = i
                nodes["parent"][node["right"]] = i
        if doc["kind"] == "classification":
            nodes["counts"] = np.array(stats, dtype=np.int64).reshape(k, -1)
        else:
            nodes["sums"] = np.array(stats, dtype=np.float64).reshape(k, 2)
        return cls(doc["kind"], preds, TreeParams.from_dict(doc["params"]), nodes,
                   tuple(doc.get("classes", ())), doc.get("response", ""))

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, text_or_path: str | Path) -> "Tree":
        text = str(text_or_path)
        if not text.lstrip().startswith("{"):
            text = Path(text_or_path).read_text()
        return cls.from_dict(json.loads(text))

    # -- rendering -----------------------------------------------------------

    def condition(self, k: int) -> str:
        """Text of the condition sending a row at node ``k`` to the left."""
        nd = self.nodes
        p = self.predictors[int(nd["var"][k])]
        miss = bool(nd["missing_left"][k])
        if nd["subset"][k] is not None:
            labels = ", ".join(p.levels[c] for c in nd["subset"][k])
            text = f"{p.name} in {{{labels}}}"
        elif nd["threshold"][k] == -math.inf:
            return f"{p.name} is missing"
        else:
            text = f"{p.name} <= {_fmt(nd['threshold'][k])}"
        return text + " or missing" if miss else text

    def describe(self, k: int) -> str:
        st = self.leaf_stats(k)
        if self.is_classification:
            names = self.classes or tuple(str(c) for c in range(st.proportions.size))
            body = " ".join(f"{c}={p:.3f}" for c, p in zip(names, st.proportions))
        else:
            body = f"mean={st.mean:.4g}"
        return f"[{k}] n={st.n} {body}"

    def render(self) -> str:
        lines = []
        stack = [0]
        while stack:
            k = stack.pop()
            indent = "  " * int(self.nodes["depth"][k])
            if self.is_leaf(k):
                lines.append(f"{indent}{self.describe(k)}")
            else:
                lines.append(f"{indent}{self.describe(k)} if {self.condition(k)}")
                stack.append(int(self.nodes["right"][k]))
                stack.append(int(self.nodes["left"][k]))
        return "\n".join(lines)


def _fmt(x: float) -> str:
    return f"{x:.6g}"


# -- fitting ------------------------------------------------------------------


def _grow(design: Design, y: np.ndarray, q: int, params: TreeParams, seed: int = 0) -> dict:
    kernel = _backend.get()
    nodes = kernel.build_tree(
        design.xo, design.xc, design.nlev, design.var_kind, design.var_col, y, q,
        guide=params.mode is Mode.GUIDE, min_node=params.min_node_size,
        max_depth=-1 if params.max_depth is None else params.max_depth,
        max_surrogates=params.max_surrogates, n_bins=params.n_bins, mtry=params.mtry,
        seed=seed, callback=splits.multiclass_callback)
    return nodes


def _resolve_response(data: Dataset, y) -> tuple[Column, str]:
    if isinstance(y, str):
        return data[y], y
    if isinstance(y, FlagColumn):
        col = y.to_column()
        return col, col.name
    if isinstance(y, Column):
        return y, y.name
    raise TypeError("response must be a column name, Column or FlagColumn")


def _predictor_names(data: Dataset, response: str, predictors: Sequence[str] | None) -> list[str]:
    if predictors is None:
        return [n for n in data.names if n != response]
    names = list(predictors)
    if response in names:
        raise DataError(f"response {response!r} cannot also be a predictor")
    return names


def fit_classification_tree(data: Dataset | Design, y, params: TreeParams = TreeParams(),
                            predictors: Sequence[str] | None = None, seed: int = 0) -> Tree:
    """Classification tree for a categorical response observed on every row.

    ``y`` is a column name of ``data``, a :class:`Column` or a
    :class:`FlagColumn`. By default every other column is a predictor.
    """
    if isinstance(data, Design):
        col, name = y, getattr(y, "name", "")
        design = data
    else:
        col, name = _resolve_response(data, y)
        design = Design.from_dataset(data, _predictor_names(data, name, predictors))
    if isinstance(col, FlagColumn):
        col = col.to_column()
    if col.is_ordinal:
        raise DataError(f"classification response {name!r} must be categorical")
    if col.n_missing:
        raise DataError(f"classification response {name!r} has {col.n_missing} missing cells")
    return _fit(design, col.values.astype(np.int64), len(col.levels), params, seed, name, col.levels)


def fit_regression_tree(data: Dataset | Design, y, params: TreeParams = TreeParams(),
                        predictors: Sequence[str] | None = None, seed: int = 0) -> Tree:
    """Regression tree trained on the rows where the ordinal ``y`` is observed."""
    if isinstance(data, Design):
        col, name = y, getattr(y, "name", "")
        design = data
    else:
        col, name = _resolve_response(data, y)
        design = Design.from_dataset(data, _predictor_names(data, name, predictors))
    if not col.is_ordinal:
        raise DataError(f"regression response {name!r} must be ordinal")
    rows = np.flatnonzero(~col.missing)
    if rows.size < col.values.size:
        design = design.take(rows)
    return _fit(design, col.values[rows].astype(np.float64), 0, params, seed, name, ())


def _fit(design: Design, y: np.ndarray, q: int, params: TreeParams, seed: int,
         name: str, classes: tuple) -> Tree:
    if y.size == 0:
        raise DataError("empty training set")
    nodes = _grow(design, y, q, params, seed)
    kind = "classification" if q else "regression"
    return Tree(kind, design.predictors, params, nodes, tuple(classes), name)


def fit_tree_arrays(design: Design, y: np.ndarray, q: int, params: TreeParams, seed: int = 0,
                    classes: tuple = (), name: str = "") -> Tree:
    """Fit on pre-encoded arrays: class codes with ``q`` classes, or ``q = 0`` for numeric y."""
    return _fit(design, y, q, params, seed, name, classes)


def subtree_leaves(tree: Tree, k: int) -> list[int]:
    out, stack = [], [k]
    while stack:
        i = stack.pop()
        if tree.is_leaf(i):
            out.append(i)
        else:
            stack.extend((int(tree.nodes["right"][i]), int(tree.nodes["left"][i])))
    return out

