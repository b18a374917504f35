"""Population generation and Monte Carlo evaluation of the estimators.

An experiment starts from a source dataset ``D`` with a partially observed
target ``y``:

* Step I fits a regression forest to the observed ``y`` and fills every
  missing ``y`` with ``max(yhat + eps, 0)``, ``eps ~ N(0, sigma^2)``, giving
  a fully observed population P1 whose mean is the trial's truth.
* Step II fits a classification forest to the missingness flag of ``y`` on
  all rows of ``D`` and re-masks ``y`` in P1 independently with the fitted
  probabilities, giving P2.

The two forests are fit once per experiment; every trial redraws ``eps``
and the mask, samples P2 without replacement at each fraction and applies
each method to the sample.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dataset import Column, DataError, Dataset, VariableKind, derive_flag, srswor_rows
from .estimators import MethodConfig, run_method
from .forest import Forest, ForestParams, fit_forest_arrays, residual_sigma
from .tree import Design, _predictor_names

DEFAULT_FRACTIONS = (0.05, 0.10, 0.25)
Z95 = 1.959963984540054


# -- synthetic surveys ----------------------------------------------------------


@dataclass(frozen=True)
class SurveySpec:
    """Recipe for a survey-like dataset with a known outcome model.

    The first ``y_vars`` predictors drive ``y`` and the first
    ``propensity_vars`` drive whether ``y`` is missing, so the two sets
    overlap and the observed-value mean is biased. Predictor cells go
    missing with a probability that rises with their own value, which is
    not missing at random.
    """

    n: int = 4609
    p_ordinal: int = 20
    p_categorical: int = 10
    level_counts: tuple[int, ...] = (2, 3, 5, 8, 12, 20, 39)
    x_missing: float = 0.1
    x_missing_columns: float = 0.5
    y_vars: int = 5
    propensity_vars: int = 3
    y_missing: float = 0.38
    y_scale: float = 1000.0
    noise: float = 0.5
    y_independent: bool = False
    nonnegative: bool = True
    target: str = "y"

    def __post_init__(self):
        p = self.p_ordinal + self.p_categorical
        if self.n < 2 or p < 0 or self.p_ordinal < 0 or self.p_categorical < 0:
            raise DataError("survey spec needs n >= 2 and nonnegative predictor counts")
        if self.y_vars > p or self.propensity_vars > p:
            raise DataError("y_vars and propensity_vars cannot exceed the number of predictors")
        if not (0 <= self.x_missing < 1 and 0 <= self.x_missing_columns <= 1 and 0 <= self.y_missing < 1):
            raise DataError("missingness rates must lie in [0, 1)")
        if self.p_categorical and (not self.level_counts or min(self.level_counts) < 2):
            raise DataError("categorical level counts must be at least 2")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["level_counts"] = list(self.level_counts)
        return d


def _logit_shift(score: np.ndarray, rate: float) -> np.ndarray:
    """Probabilities ``expit(a + score)`` with ``a`` chosen so their mean is ``rate``."""
    if rate <= 0:
        return np.zeros_like(score)
    lo, hi = -50.0, 50.0
    for _ in range(100):
        a = (lo + hi) / 2
        if np.mean(1 / (1 + np.exp(-(a + score)))) < rate:
            lo = a
        else:
            hi = a
    return 1 / (1 + np.exp(-((lo + hi) / 2 + score)))


def synthetic_survey(spec: SurveySpec, rng: np.random.Generator) -> Dataset:
    """Mixed-type survey with non-MAR predictor gaps and a MAR-missing target."""
    n = spec.n
    cols: list[Column] = []
    effects = []  # standardised contribution of each predictor
    x_latent = rng.normal(size=(n, spec.p_ordinal))
    for j in range(spec.p_ordinal):
        x = np.round(50 + 10 * x_latent[:, j], 1)
        effects.append(x_latent[:, j])
        cols.append(Column(f"x{j + 1}", VariableKind.ORDINAL, x, np.zeros(n, dtype=bool)))
    for j in range(spec.p_categorical):
        k = spec.level_counts[j % len(spec.level_counts)]
        codes = rng.integers(0, k, size=n).astype(np.int32)
        level_effect = rng.normal(size=k)
        effects.append(level_effect[codes] / (level_effect.std() or 1.0))
        levels = tuple(f"c{j + 1}_{i}" for i in range(k))
        cols.append(Column(f"c{j + 1}", VariableKind.CATEGORICAL, codes, np.zeros(n, dtype=bool), levels))
    eff = np.column_stack(effects) if effects else np.zeros((n, 0))

    # outcome: money-like, driven by the first y_vars predictors
    if spec.y_independent or spec.y_vars == 0:
        signal = np.zeros(n)
    else:
        w = np.linspace(1.0, 0.4, spec.y_vars)
        signal = eff[:, :spec.y_vars] @ w / math.sqrt(float(w @ w))
    mu = spec.y_scale * np.exp(0.6 * signal + spec.noise * rng.normal(size=n) - 0.5)
    y = np.round(mu if spec.nonnegative else mu - spec.y_scale, 2)

    # response propensity of y from the first propensity_vars predictors
    if spec.propensity_vars:
        score = eff[:, :spec.propensity_vars].sum(axis=1) / math.sqrt(spec.propensity_vars)
    else:
        score = np.zeros(n)
    y_miss = rng.random(n) < _logit_shift(1.2 * score, spec.y_missing)

    # predictor gaps: larger values more likely missing
    p = len(cols)
    n_gappy = int(round(spec.x_missing_columns * p))
    out = []
    for j, c in enumerate(cols):
        if j < n_gappy and spec.x_missing > 0:
            miss = rng.random(n) < _logit_shift(eff[:, j], spec.x_missing)
            vals = c.values.copy()
            if c.is_ordinal:
                vals[miss] = np.nan
            else:
                vals[miss] = -1
            c = Column(c.name, c.kind, vals, miss, c.levels)
        out.append(c)
    y_vals = np.where(y_miss, np.nan, y)
    out.append(Column(spec.target, VariableKind.ORDINAL, y_vals, y_miss))
    return Dataset(tuple(out))


# -- Steps I and II ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PopulationP1:
    dataset: Dataset
    y: str
    mu: float
    imputed: np.ndarray  # rows whose y was filled in


@dataclass(frozen=True, eq=False)
class PopulationP2:
    p1: PopulationP1
    y_mask: np.ndarray

    @property
    def dataset(self) -> Dataset:
        col = self.p1.dataset[self.p1.y]
        vals = np.where(self.y_mask, np.nan, col.values)
        return self.p1.dataset.replace(Column(col.name, col.kind, vals, self.y_mask.copy()))


@dataclass(eq=False)
class StepOneModel:
    """Regression forest of Step I; draws a fresh P1 per call."""

    data: Dataset
    y: str
    forest: Forest
    sigma: float
    yhat: np.ndarray  # forest prediction for each missing row
    missing: np.ndarray
    nonnegative: bool = True

    @classmethod
    def fit(cls, data: Dataset, y: str, params: ForestParams, predictors: Sequence[str] | None = None,
            nonnegative: bool = True) -> "StepOneModel":
        col = data[y]
        obs = np.flatnonzero(~col.missing)
        mis = np.flatnonzero(col.missing)
        if obs.size == 0:
            raise DataError(f"target {y!r} has no observed values")
        design = Design.from_dataset(data, _predictor_names(data, y, predictors))
        forest = fit_forest_arrays(design.take(obs), col.values[obs], 0, params, (), y)
        sigma = residual_sigma(forest, design.take(obs), col.values[obs])
        yhat = forest.predict_mean(design.take(mis)) if mis.size else np.zeros(0)
        return cls(data, y, forest, sigma, yhat, mis, nonnegative)

    def draw(self, rng: np.random.Generator) -> PopulationP1:
        col = self.data[self.y]
        vals = col.values.copy()
        fill = self.yhat + self.sigma * rng.standard_normal(self.yhat.size)
        if self.nonnegative:
            fill = np.maximum(fill, 0.0)
        vals[self.missing] = fill
        full = self.data.replace(Column(col.name, col.kind, vals, np.zeros(vals.size, dtype=bool)))
        return PopulationP1(full, self.y, float(vals.mean()), self.missing)


@dataclass(eq=False)
class StepTwoModel:
    """Classification forest of Step II; draws a fresh y mask per call."""

    q: np.ndarray  # probability that y is missing, per row
    forest: Forest | None = None

    @classmethod
    def fit(cls, data: Dataset, y: str, params: ForestParams,
            predictors: Sequence[str] | None = None) -> "StepTwoModel":
        design = Design.from_dataset(data, _predictor_names(data, y, predictors))
        flag = derive_flag(data, y).codes.astype(np.int64)
        forest = fit_forest_arrays(design, flag, 2, params, ("Observed", "Missing"), y + "_")
        q = forest.predict_proba(design)[:, 1]
        return cls(q, forest)

    def draw(self, p1: PopulationP1, rng: np.random.Generator) -> PopulationP2:
        return PopulationP2(p1, rng.random(self.q.size) < self.q)


def generate_p1(data: Dataset, y: str, params: ForestParams, rng: np.random.Generator,
                predictors: Sequence[str] | None = None, nonnegative: bool = True) -> PopulationP1:
    return StepOneModel.fit(data, y, params, predictors, nonnegative).draw(rng)


def generate_p2(p1: PopulationP1, data: Dataset, params: ForestParams, rng: np.random.Generator,
                predictors: Sequence[str] | None = None) -> PopulationP2:
    return StepTwoModel.fit(data, p1.y, params, predictors).draw(p1, rng)


# -- experiments ---------------------------------------------------------------

# A method receives the sample, the target name and the trial's true mean
# (only an oracle should look at the latter) and returns an estimate.
Method = Callable[[Dataset, str, float], float]


@dataclass(frozen=True)
class ExperimentConfig:
    data: Dataset
    y: str
    methods: tuple = ("SIM", "GCT", "GRT", "GCF", "GRF")
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS
    trials: int = 500
    seed: int = 0
    predictors: tuple[str, ...] | None = None
    step_forest: ForestParams = field(default_factory=ForestParams)
    method_config: MethodConfig = field(default_factory=MethodConfig)
    nonnegative: bool = True

    def method_names(self) -> list[str]:
        return [m if isinstance(m, str) else m[0] for m in self.methods]


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    mu: float
    muhat: float | None  # None when the method failed
    seconds: float
    error: str = ""


def _ci_mean(x: np.ndarray) -> tuple[float, float]:
    m = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    return m - Z95 * se, m + Z95 * se


@dataclass
class TrialReport:
    method: str
    fraction: float
    sample_size: int
    records: list[TrialRecord]

    @property
    def ok(self) -> list[TrialRecord]:
        return [r for r in sorted(self.records, key=lambda r: r.trial) if r.muhat is not None]

    @property
    def failed(self) -> bool:
        return any(r.muhat is None for r in self.records)

    @property
    def errors(self) -> np.ndarray:
        return np.array([r.muhat - r.mu for r in self.ok], dtype=np.float64)

    @property
    def bias(self) -> float:
        e = self.errors
        return float(e.mean()) if e.size else math.nan

    @property
    def rmse(self) -> float:
        e = self.errors
        return float(math.sqrt(np.mean(e * e))) if e.size else math.nan

    @property
    def bias_se(self) -> float:
        e = self.errors
        return float(e.std(ddof=1) / math.sqrt(e.size)) if e.size > 1 else 0.0

    @property
    def bias_ci(self) -> tuple[float, float]:
        e = self.errors
        return _ci_mean(e) if e.size else (math.nan, math.nan)

    @property
    def rmse_ci(self) -> tuple[float, float]:
        """Normal interval for the mean squared error mapped through the square root (delta method)."""
        e = self.errors
        if not e.size:
            return math.nan, math.nan
        sq = e * e
        mse = float(sq.mean())
        rmse = math.sqrt(mse)
        se_mse = float(sq.std(ddof=1) / math.sqrt(sq.size)) if sq.size > 1 else 0.0
        se = se_mse / (2 * rmse) if rmse > 0 else 0.0
        return max(rmse - Z95 * se, 0.0), rmse + Z95 * se

    @property
    def mean_seconds(self) -> float:
        return float(np.mean([r.seconds for r in self.records])) if self.records else math.nan

    def summary(self, timings: bool = True) -> dict:
        d = {"method": self.method, "fraction": self.fraction, "n": self.sample_size,
             "trials": len(self.records), "failures": sum(r.muhat is None for r in self.records),
             "bias": self.bias, "bias_se": self.bias_se, "bias_ci": list(self.bias_ci),
             "rmse": self.rmse, "rmse_ci": list(self.rmse_ci)}
        if timings:
            d["mean_seconds"] = self.mean_seconds
        return d

    def to_dict(self, timings: bool = True) -> dict:
        d = self.summary(timings)
        recs = []
        for r in sorted(self.records, key=lambda r: r.trial):
            item = {"trial": r.trial, "mu": r.mu, "muhat": r.muhat}
            if r.error:
                item["error"] = r.error
            if timings:
                item["seconds"] = r.seconds
            recs.append(item)
        d["records"] = recs
        return d


@dataclass
class ExperimentResult:
    reports: list[TrialReport]
    config: dict
    step_sigma: float

    def report(self, method: str, fraction: float) -> TrialReport:
        for r in self.reports:
            if r.method == method and r.fraction == fraction:
                return r
        raise KeyError((method, fraction))

    def to_json(self, timings: bool = True) -> str:
        """Report document; ``timings=False`` gives the seed-reproducible part only."""
        doc = {"config": self.config, "step_sigma": self.step_sigma,
               "reports": [r.to_dict(timings) for r in self.reports]}
        return json.dumps(doc, indent=1, sort_keys=True)

    def tidy_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["method", "fraction", "trial", "mu", "muhat", "seconds"])
        for rep in self.reports:
            for r in sorted(rep.records, key=lambda r: r.trial):
                w.writerow([rep.method, rep.fraction, r.trial, repr(r.mu),
                            "FAIL" if r.muhat is None else repr(r.muhat), f"{r.seconds:.6f}"])
        return buf.getvalue()

    def plot_data(self) -> str:
        """Aggregated bias/RMSE table with interval bounds, one row per (method, fraction)."""
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["method", "fraction", "n", "status", "bias", "bias_lo", "bias_hi",
                    "rmse", "rmse_lo", "rmse_hi", "mean_seconds"])
        for rep in self.reports:
            if rep.failed:
                w.writerow([rep.method, rep.fraction, rep.sample_size, "FAIL"] + [""] * 6
                           + [f"{rep.mean_seconds:.6f}"])
                continue
            blo, bhi = rep.bias_ci
            rlo, rhi = rep.rmse_ci
            w.writerow([rep.method, rep.fraction, rep.sample_size, "OK", repr(rep.bias), repr(blo),
                        repr(bhi), repr(rep.rmse), repr(rlo), repr(rhi), f"{rep.mean_seconds:.6f}"])
        return buf.getvalue()

    def write(self, outdir: str | Path, plot_data: bool = True) -> list[Path]:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        paths = [outdir / "report.json", outdir / "trials.csv"]
        paths[0].write_text(self.to_json())
        paths[1].write_text(self.tidy_csv())
        if plot_data:
            paths.append(outdir / "plot_data.csv")
            paths[-1].write_text(self.plot_data())
        return paths


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, trial]))


class Experiment:
    """Fitted Steps I and II plus the machinery to run any trial by index."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        data = config.data
        if config.predictors is not None:
            data = data.select(list(config.predictors) + [config.y])
        self.data = data
        self.step1 = StepOneModel.fit(data, config.y, config.step_forest, None, config.nonnegative)
        sp2 = replace(config.step_forest, seed=config.step_forest.seed + 1)
        self.step2 = StepTwoModel.fit(data, config.y, sp2)
        self.sizes = {f: len(srswor_rows(data.n_rows, f, np.random.default_rng(0)))
                      for f in config.fractions}

    def _method(self, m, seed: int) -> tuple[str, Method]:
        if not isinstance(m, str):
            return m[0], m[1]
        cfg = self.config.method_config
        cfg = replace(cfg, seed=seed, forest=replace(cfg.forest, seed=seed))
        return m, lambda sample, y, mu: run_method(m, sample, y, cfg).estimate

    def run_trial(self, trial: int) -> dict:
        """Records for one trial keyed by (method, fraction)."""
        rng = trial_rng(self.config.seed, trial)
        p1 = self.step1.draw(rng)
        p2 = self.step2.draw(p1, rng)
        pop = p2.dataset
        out = {}
        for f in self.config.fractions:
            sample = pop.take(srswor_rows(pop.n_rows, f, rng))
            seed = int(rng.integers(0, 2**63 - 1))
            for m in self.config.methods:
                name, fn = self._method(m, seed)
                t0 = time.perf_counter()
                try:
                    est, err = float(fn(sample, self.config.y, p1.mu)), ""
                    if not math.isfinite(est):
                        est, err = None, "non-finite estimate"
                except Exception as exc:  # recorded as FAIL, the run continues
                    est, err = None, f"{type(exc).__name__}: {exc}"
                out[(name, f)] = TrialRecord(trial, p1.mu, est, time.perf_counter() - t0, err)
        return out

    def run(self, trials: Sequence[int] | None = None, threads: int = 1) -> ExperimentResult:
        order = list(range(self.config.trials)) if trials is None else list(trials)
        if threads > 1:
            from concurrent.futures import ThreadPoolExecutor
            with ThreadPoolExecutor(threads) as pool:
                results = list(pool.map(self.run_trial, order))
        else:
            results = [self.run_trial(t) for t in order]
        reports = []
        for name in self.config.method_names():
            for f in self.config.fractions:
                recs = sorted((r[(name, f)] for r in results), key=lambda r: r.trial)
                reports.append(TrialReport(name, f, self.sizes[f], recs))
        cfg = {"y": self.config.y, "methods": self.config.method_names(),
               "fractions": list(self.config.fractions), "trials": len(order),
               "seed": self.config.seed, "n_rows": self.data.n_rows,
               "predictors": [n for n in self.data.names if n != self.config.y],
               "step_trees": self.config.step_forest.n_trees,
               "method_trees": self.config.method_config.forest.n_trees}
        return ExperimentResult(reports, cfg, self.step1.sigma)


def run_experiment(config: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    return Experiment(config).run(threads=threads)
