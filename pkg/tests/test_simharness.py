import math

import numpy as np
import pytest

from treeimpute.dataset import DataError
from treeimpute.estimators import MethodConfig
from treeimpute.forest import ForestParams
from treeimpute.simharness import (Experiment, ExperimentConfig, PopulationP1, StepOneModel,
                                   StepTwoModel, SurveySpec, TrialRecord, TrialReport,
                                   synthetic_survey)

SMALL = SurveySpec(n=300, p_ordinal=4, p_categorical=2)
FOREST = ForestParams(n_trees=5)


def small_config(**kw):
    data = synthetic_survey(SMALL, np.random.default_rng(0))
    base = dict(data=data, y="y", methods=("SIM", "GCT"), fractions=(0.2, 0.5), trials=4, seed=9,
                step_forest=FOREST, method_config=MethodConfig(forest=FOREST))
    base.update(kw)
    return ExperimentConfig(**base)


def test_survey_shape_and_rates():
    spec = SurveySpec(n=2000, p_ordinal=6, p_categorical=4)
    d = synthetic_survey(spec, np.random.default_rng(1))
    assert d.n_rows == 2000 and len(d.names) == 11
    assert abs(d["y"].missing.mean() - 0.38) < 0.04
    gappy = [c for c in d.columns[:-1] if c.n_missing]
    assert len(gappy) == 5
    assert (d["y"].values[~d["y"].missing] >= 0).all()


def test_zero_missingness_gives_complete_data():
    d = synthetic_survey(SurveySpec(n=50, p_ordinal=4, p_categorical=1, x_missing=0, y_missing=0),
                         np.random.default_rng(0))
    assert not d.missing_mask().any()


def test_inconsistent_spec():
    with pytest.raises(DataError):
        SurveySpec(p_ordinal=2, p_categorical=0, y_vars=5)
    with pytest.raises(DataError):
        SurveySpec(y_missing=1.0)


def test_ce_scale_spec():
    spec = SurveySpec(n=4609, p_ordinal=420, p_categorical=210)
    assert spec.p_ordinal + spec.p_categorical == 630


def test_step_one_fills_only_missing_rows():
    data = synthetic_survey(SMALL, np.random.default_rng(2))
    model = StepOneModel.fit(data, "y", FOREST)
    p1 = model.draw(np.random.default_rng(0))
    y = data["y"]
    assert p1.dataset["y"].n_missing == 0
    assert np.array_equal(p1.dataset["y"].values[~y.missing], y.values[~y.missing])
    assert p1.mu == pytest.approx(p1.dataset["y"].values.mean())


def test_step_two_extreme_probabilities():
    data = synthetic_survey(SMALL, np.random.default_rng(3))
    p1 = StepOneModel.fit(data, "y", FOREST).draw(np.random.default_rng(0))
    q = np.zeros(data.n_rows)
    q[:10] = 1.0
    model = StepTwoModel(q)
    for seed in range(20):
        mask = model.draw(p1, np.random.default_rng(seed)).y_mask
        assert mask[:10].all() and not mask[10:].any()


def test_step_two_keeps_predictor_gaps():
    data = synthetic_survey(SMALL, np.random.default_rng(4))
    p1 = StepOneModel.fit(data, "y", FOREST).draw(np.random.default_rng(0))
    p2 = StepTwoModel.fit(data, "y", FOREST).draw(p1, np.random.default_rng(1))
    for c in data.columns[:-1]:
        d = p2.dataset[c.name]
        assert np.array_equal(d.missing, c.missing)
        assert np.array_equal(d.values, c.values, equal_nan=True)


def test_report_formulas():
    recs = [TrialRecord(0, 10.0, 11.0, 0.1), TrialRecord(1, 10.0, 9.0, 0.3)]
    rep = TrialReport("X", 0.1, 5, recs)
    assert rep.bias == 0.0 and rep.rmse == 1.0
    assert rep.mean_seconds == pytest.approx(0.2)
    lo, hi = rep.bias_ci
    assert lo < 0 < hi


def test_rmse_at_least_abs_bias():
    rng = np.random.default_rng(0)
    recs = [TrialRecord(t, 0.0, float(v), 0.0) for t, v in enumerate(rng.normal(2, 1, 50))]
    rep = TrialReport("X", 0.1, 5, recs)
    assert rep.rmse >= abs(rep.bias)
    lo, hi = rep.rmse_ci
    assert lo <= rep.rmse <= hi


def test_oracle_method_has_zero_error():
    cfg = small_config(methods=(("ORACLE", lambda s, y, mu: mu),), trials=2)
    res = Experiment(cfg).run()
    for rep in res.reports:
        assert rep.bias == 0.0 and rep.rmse == 0.0


def test_failures_are_recorded():
    def broken(sample, y, mu):
        raise RuntimeError("boom")
    cfg = small_config(methods=("SIM", ("BROKEN", broken)), trials=2)
    res = Experiment(cfg).run()
    bad = res.report("BROKEN", 0.2)
    assert bad.failed and "boom" in bad.records[0].error
    assert "FAIL" in res.tidy_csv() and ",FAIL," in res.plot_data()
    assert not res.report("SIM", 0.2).failed


def test_report_cardinality_and_sample_sizes():
    cfg = small_config()
    res = Experiment(cfg).run()
    assert len(res.reports) == 2 * 2
    assert res.report("SIM", 0.2).sample_size == 60


def test_reproducible_and_order_free():
    ex = Experiment(small_config())
    a = ex.run().to_json(timings=False)
    b = Experiment(small_config()).run(trials=[3, 1, 0, 2]).to_json(timings=False)
    c = ex.run(threads=2).to_json(timings=False)
    assert a == b == c


def test_write_outputs(tmp_path):
    res = Experiment(small_config(trials=2)).run()
    paths = res.write(tmp_path)
    assert [p.name for p in paths] == ["report.json", "trials.csv", "plot_data.csv"]
    lines = (tmp_path / "trials.csv").read_text().splitlines()
    assert lines[0] == "method,fraction,trial,mu,muhat,seconds"
    assert len(lines) == 1 + 2 * 2 * 2
