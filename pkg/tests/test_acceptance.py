"""Acceptance checks, one verdict line per criterion.

Each test records a PASS/FAIL line (printed in the terminal summary) and
then asserts the same condition, so an unmet criterion shows up both in
the summary and as a failing test.
"""

import json
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import binomtest, chisquare

from conftest import mixed_dataset, record_criterion
from oracles import ordinal_oracle, route_score, subset_oracle
from treeimpute import splits
from treeimpute.dataset import VariableKind, load_schema, write_schema
from treeimpute.estimators import MethodConfig, estimate_cell_tree, ipw_estimate, run_method
from treeimpute.forest import ForestParams
from treeimpute.gmice import CompletedDataset, GmiceParams, gmice_impute, pool_mean
from treeimpute.simharness import (Experiment, ExperimentConfig, ExperimentResult, StepOneModel,
                                   StepTwoModel, SurveySpec, TrialReport, synthetic_survey)
from treeimpute.splits import Mode
from treeimpute.tree import Design, Predictor, TreeParams, fit_tree_arrays

# Forests in the replication experiment use 100 trees so that 500 trials fit
# the time budget on one core.
EXPERIMENT_TREES = 100
EXPERIMENT_TRIALS = 500
RERUN_TRIALS = 20


def test_criterion_1_gct_ipw_duality():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(100, 1001))
        data = mixed_dataset(rng, n=n, p_ordinal=int(rng.integers(1, 5)),
                             p_categorical=int(rng.integers(1, 4)), y_miss=float(rng.uniform(0.1, 0.4)),
                             n_levels=int(rng.integers(2, 12)))
        res = estimate_cell_tree(data, "y", Mode.GUIDE)
        y = data["y"]
        ipw = ipw_estimate(y.values[~y.missing], res.propensities)
        worst = max(worst, abs(ipw - res.estimate) / abs(res.estimate))
    secs = time.perf_counter() - t0
    ok = worst <= 1e-12 and secs < 60
    record_criterion(1, ok, f"max relative gap {worst:.2e} over 200 instances (tol 1e-12), {secs:.1f} s")
    assert ok


def test_criterion_2_split_search_oracles():
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    cat_bad = 0
    for _ in range(200):
        p = int(rng.integers(2, 9))
        n = int(rng.integers(2 * p, 120))
        x = rng.integers(0, p, size=n)
        x[rng.random(n) < 0.1] = -1
        y = (rng.random(n) < rng.random(p + 1)[x]).astype(np.int64)
        if np.unique(x[x >= 0]).size < 2:
            x[:2] = [0, 1]
        got = route_score(x, y, splits.best_split(x, y), True)
        ex, _ = splits.exhaustive_subset_search(x, y)
        want = subset_oracle(x, y)
        cat_bad += not (got == want == route_score(x, y, ex, True))
    ord_bad = 0
    for k in range(200):
        n = int(rng.integers(2, 51))
        x = rng.integers(0, 10, size=n).astype(np.float64)
        x[rng.random(n) < 0.15] = np.nan
        x[0] = 0.0
        x[-1] = 9.0 if n > 1 else 0.0
        classification = k % 2 == 0
        y = rng.integers(0, 3, size=n) if classification else rng.integers(-20, 50, size=n).astype(np.float64)
        want = ordinal_oracle(x, y, classification)
        try:
            got = route_score(x, y, splits.best_split(x, y), classification)
        except splits.NoSplit:
            got = None
        ord_bad += got != want
    secs = time.perf_counter() - t0
    ok = cat_bad == 0 and ord_bad == 0 and secs < 60
    record_criterion(2, ok, f"prefix vs exhaustive mismatches {cat_bad}/200, ordinal vs enumeration "
                            f"mismatches {ord_bad}/200 (exact rational comparison), {secs:.1f} s")
    assert ok


def null_columns(rng, n):
    xo = np.asfortranarray(np.column_stack([rng.normal(size=n), rng.uniform(size=n)]))
    xc = np.asfortranarray(np.column_stack([rng.integers(0, k, size=n) for k in (2, 5, 20)]).astype(np.int32))
    return xo, xc


def test_criterion_3_selection_bias():
    preds = [Predictor("o1", VariableKind.ORDINAL), Predictor("o2", VariableKind.ORDINAL),
             Predictor("c2", VariableKind.CATEGORICAL, tuple("ab")),
             Predictor("c5", VariableKind.CATEGORICAL, tuple("abcde")),
             Predictor("c20", VariableKind.CATEGORICAL, tuple(f"l{i}" for i in range(20)))]
    rng = np.random.default_rng(303)
    n, trials = 200, 2000
    counts = {Mode.GUIDE: np.zeros(5, int), Mode.GREEDY: np.zeros(5, int)}
    t0 = time.perf_counter()
    for _ in range(trials):
        xo, xc = null_columns(rng, n)
        design = Design(preds, xo, xc)
        y = rng.integers(0, 2, size=n)
        for mode in counts:
            tree = fit_tree_arrays(design, y, 2, TreeParams(mode, min_node_size=5, max_depth=1))
            if tree.n_nodes > 1:
                counts[mode][tree.nodes["var"][0]] += 1
    secs = time.perf_counter() - t0
    g = counts[Mode.GUIDE]
    gof = chisquare(g).pvalue
    r = counts[Mode.GREEDY]
    k20 = int(r[4])
    binom = binomtest(k20, int(r.sum()), 0.3, alternative="greater").pvalue
    ok = gof > 0.001 and binom < 0.001 and secs < 300
    record_criterion(3, ok, f"guide counts {g.tolist()} GOF p={gof:.3g} (> 0.001); greedy picks the "
                            f"20-level variable {k20}/{int(r.sum())} = {k20 / r.sum():.3f}, "
                            f"binomial p={binom:.2g} vs 0.3; {secs:.0f} s")
    assert ok


# -- criteria 4, 5 and 8 share one experiment -------------------------------------


def experiment_config():
    data = synthetic_survey(SurveySpec(), np.random.default_rng(1))
    forest = ForestParams(n_trees=EXPERIMENT_TREES)
    return ExperimentConfig(data, "y", trials=EXPERIMENT_TRIALS, seed=2024, step_forest=forest,
                            method_config=MethodConfig(forest=forest))


@pytest.fixture(scope="module")
def experiment():
    t0 = time.perf_counter()
    result = Experiment(experiment_config()).run()
    return result, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_4_bias_replication(experiment):
    result, secs = experiment
    lines, ok = [], secs < 30 * 60
    for f in (0.05, 0.10, 0.25):
        sim = result.report("SIM", f)
        sim_ok = abs(sim.bias) > 3 * sim.bias_se
        ok &= sim_ok and not sim.failed
        parts = [f"SIM {sim.bias:.1f}+-{sim.bias_se:.1f}"]
        for m in ("GCT", "GRT", "GCF", "GRF"):
            r = result.report(m, f)
            good = not r.failed and (abs(r.bias) <= 3 * r.bias_se or abs(r.bias) < abs(sim.bias))
            ok &= good
            parts.append(f"{m} {r.bias:.1f}+-{r.bias_se:.1f}")
        lines.append(f"{f:.2f}: " + ", ".join(parts))
    record_criterion(4, ok, f"n=4609, 30 X, M={EXPERIMENT_TRIALS}, {secs / 60:.1f} min; bias+-se "
                            + " | ".join(lines))
    assert ok


@pytest.mark.slow
def test_criterion_5_rmse_ordering(experiment):
    result, _ = experiment
    rm = {m: result.report(m, 0.25).rmse for m in ("GRF", "GRT", "GCF", "GCT")}
    ok = rm["GRF"] <= rm["GRT"] and rm["GCF"] <= rm["GCT"]
    record_criterion(5, ok, f"RMSE at 25%: GRF {rm['GRF']:.2f} vs GRT {rm['GRT']:.2f}; "
                            f"GCF {rm['GCF']:.2f} vs GCT {rm['GCT']:.2f}")
    assert ok


@pytest.mark.slow
def test_criterion_8_reproducibility(experiment):
    result, _ = experiment
    rerun = Experiment(experiment_config()).run(trials=list(range(RERUN_TRIALS))[::-1], threads=2)
    # the first run's report restricted to the same trials, aggregates recomputed
    part = ExperimentResult(
        [TrialReport(r.method, r.fraction, r.sample_size, [t for t in r.records if t.trial < RERUN_TRIALS])
         for r in result.reports],
        dict(result.config, trials=RERUN_TRIALS), result.step_sigma)
    identical = part.to_json(timings=False) == rerun.to_json(timings=False)
    ok = identical and len(rerun.reports) == len(result.reports)
    record_criterion(8, ok, f"fresh rerun of trials 0-{RERUN_TRIALS - 1} in reverse order on 2 threads "
                            f"vs the same trials of the main run: report JSON byte-identical={identical}")
    assert ok


# -- criterion 6 -------------------------------------------------------------------

TIMING_METHODS = ("RRT", "RCT", "GRT", "GCT", "GCF", "GRF")


def close(a, b, factor=3.0):
    return max(a, b) <= factor * min(a, b)


@pytest.mark.slow
def test_criterion_6_timing_ordering():
    data = synthetic_survey(SurveySpec(n=1152, p_ordinal=420, p_categorical=210), np.random.default_rng(6))
    cfg = MethodConfig()  # 500-tree forests, single trees with min node size 50
    t = {m: run_method(m, data, "y", cfg).seconds for m in TIMING_METHODS}
    # One full 10-iteration chain is a lower bound on the 5-chain run.
    chain = run_method("GMICE", data, "y", replace(cfg, gmice_m=1)).seconds
    t["GMICE"] = chain
    checks = {
        "RRT<RCT": t["RRT"] < t["RCT"],
        "RCT<=GRT": t["RCT"] <= t["GRT"],
        "GRT~GCT": close(t["GRT"], t["GCT"]),
        "GCT<GCF": max(t["GRT"], t["GCT"]) < min(t["GCF"], t["GRF"]),
        "GCF~GRF": close(t["GCF"], t["GRF"]),
        "GRF<GMICE": max(t["GCF"], t["GRF"]) < chain,
        "tree<60s": max(t["RRT"], t["RCT"], t["GRT"], t["GCT"]) < 60,
    }
    ok = all(checks.values())
    times = ", ".join(f"{m} {t[m]:.2f}s" for m in (*TIMING_METHODS, "GMICE"))
    failed = [k for k, v in checks.items() if not v]
    record_criterion(6, ok, f"n=1152, p=630: {times} (GMICE: one of five chains, a lower bound); "
                            f"approx = within 3x; " + (f"unmet: {', '.join(failed)}" if failed else "all hold"))
    assert ok


# -- criterion 7 -------------------------------------------------------------------


def test_criterion_7_gmice_contract(tmp_path):
    data = synthetic_survey(SurveySpec(n=1000, p_ordinal=6, p_categorical=4), np.random.default_rng(7))
    t0 = time.perf_counter()
    chains = gmice_impute(data, GmiceParams(m_imputations=5, iterations=10, seed=7))
    secs = time.perf_counter() - t0
    mask = data.missing_mask()
    mask_ok = all(np.array_equal(c.mask, mask) for c in chains)
    cells_ok = all(
        np.array_equal(c.dataset[col.name].values[~col.missing], col.values[~col.missing])
        and c.dataset[col.name].n_missing == 0 for c in chains for col in data.columns)
    full = synthetic_survey(SurveySpec(n=300, p_ordinal=6, p_categorical=4, x_missing=0, y_missing=0),
                            np.random.default_rng(8))
    fixed = all(np.array_equal(c.dataset[col.name].values, col.values)
                for c in gmice_impute(full, GmiceParams(2, 3)) for col in full.columns)
    write_schema(data, tmp_path / "s.schema")
    schema = load_schema(tmp_path / "s.schema")
    means = []
    for k, c in enumerate(chains):
        c.write(tmp_path / f"chain{k}.csv")
        back = CompletedDataset.read(tmp_path / f"chain{k}.csv", schema)
        means.append(back.dataset["y"].values.sum() / back.dataset.n_rows)
    external = sum(means) / len(means)
    pooled = pool_mean(chains, "y")
    gap = abs(external - pooled) / abs(pooled)
    ok = secs < 300 and mask_ok and cells_ok and fixed and gap <= 1e-12
    record_criterion(7, ok, f"m=5 x 10 iterations on 1000 rows in {secs:.1f} s; mask preserved={mask_ok}, "
                            f"observed cells kept={cells_ok}, complete input fixed={fixed}, "
                            f"pooled vs recomputed from files rel gap {gap:.1e}")
    assert ok


# -- criterion 9 -------------------------------------------------------------------


def test_criterion_9_step_contracts():
    spec = SurveySpec(n=200, p_ordinal=6, p_categorical=3, noise=1.5)
    data = synthetic_survey(spec, np.random.default_rng(9))
    step1 = StepOneModel.fit(data, "y", ForestParams(n_trees=50))
    untruncated = replace(step1, nonnegative=False)
    min_filled, raw_negative = np.inf, 0
    for seed in range(200):
        min_filled = min(min_filled, step1.draw(np.random.default_rng(seed)).dataset["y"].values.min())
        raw = untruncated.draw(np.random.default_rng(seed)).dataset["y"].values
        raw_negative += int((raw < 0).sum())
    # the same draws without truncation do go negative, so the check has teeth
    nonneg = min_filled >= 0 and raw_negative > 0
    rng = np.random.default_rng(0)
    step2 = StepTwoModel.fit(data, "y", ForestParams(n_trees=50, seed=1))
    p1 = step1.draw(rng)
    draws = 10_000
    hits = np.zeros(data.n_rows)
    gaps_ok = True
    for k in range(draws):
        p2 = step2.draw(p1, rng)
        hits += p2.y_mask
        if k < 20:
            pop = p2.dataset
            for col in data.columns[:-1]:
                gaps_ok &= np.array_equal(pop[col.name].missing, col.missing)
                gaps_ok &= np.array_equal(pop[col.name].values, col.values, equal_nan=True)
    q = step2.q
    se = np.sqrt(q * (1 - q) / draws)
    within = np.abs(hits / draws - q) <= 3 * se
    ok = nonneg and gaps_ok and within.all()
    record_criterion(9, ok, f"min generated y {min_filled:.2f} ({raw_negative} negatives before truncation); predictor cells "
                            f"and gaps identical={gaps_ok}; rows within 3 binomial SE over 1e4 redraws "
                            f"{int(within.sum())}/{within.size}")
    assert ok
