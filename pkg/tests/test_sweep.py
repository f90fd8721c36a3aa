import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectrallab.instrumentation import MetricRecord
from spectrallab.sweep import (
    ConfigError,
    DataSpec,
    DegenerateFitError,
    NonPositiveValueError,
    SweepConfig,
    UnknownMetricError,
    aggregate,
    final_records,
    fit_metric,
    fit_slope,
    read_csv,
    run_sweep,
    summarize,
    write_csv,
    write_outputs,
)

WIDTHS = [64, 128, 256, 512, 1024]


def tiny(**kw):
    base = dict(widths=[8, 16], seeds=[0, 1], steps=3, data=DataSpec(d0=6, batch_size=4))
    base.update(kw)
    return SweepConfig(**base)


@pytest.mark.parametrize("power", [-0.5, 0.0, 1.0])
def test_fit_recovers_exact_power_law(power):
    fit = fit_slope([(w, 3.0 * w**power) for w in WIDTHS])
    assert fit.slope == pytest.approx(power, abs=1e-10)
    assert fit.intercept == pytest.approx(math.log(3.0), abs=1e-10)
    assert fit.r_squared == pytest.approx(1.0)


def test_fit_matches_polyfit_oracle(rng):
    vals = rng.uniform(0.1, 10.0, size=len(WIDTHS))
    fit = fit_slope(zip(WIDTHS, vals))
    slope, intercept = np.polyfit(np.log(WIDTHS), np.log(vals), 1)
    assert fit.slope == pytest.approx(slope, abs=1e-12)
    assert fit.intercept == pytest.approx(intercept, abs=1e-12)
    r = np.corrcoef(np.log(WIDTHS), np.log(vals))[0, 1]
    assert fit.r_squared == pytest.approx(r * r, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 100.0), min_size=3, max_size=3), st.floats(1e-3, 1e3))
def test_fit_slope_is_scale_invariant(vals, c):
    a = fit_slope(zip([10, 20, 40], vals))
    b = fit_slope(zip([10, 20, 40], [c * v for v in vals]))
    assert b.slope == pytest.approx(a.slope, abs=1e-9)
    assert b.intercept - a.intercept == pytest.approx(math.log(c), abs=1e-9)


def test_fit_errors():
    with pytest.raises(DegenerateFitError):
        fit_slope([(64, 1.0)])
    with pytest.raises(DegenerateFitError):
        fit_slope([(64, 1.0), (64, 2.0)])
    with pytest.raises(NonPositiveValueError):
        fit_slope([(64, 1.0), (128, 0.0)])
    with pytest.raises(NonPositiveValueError):
        fit_slope([(64, 1.0), (128, math.nan)])


def test_aggregate_examples():
    recs = [MetricRecord(8, 0, 1, {"m": 1.0}), MetricRecord(8, 1, 1, {"m": 3.0}), MetricRecord(16, 0, 1, {"m": 5.0})]
    rows = aggregate(recs, "m")
    # sample standard deviation: {1, 3} has std sqrt(2) with the n-1 denominator
    assert (rows[0].mean, rows[0].std, rows[0].n_seeds) == (2.0, math.sqrt(2.0), 2)
    assert (rows[1].mean, rows[1].std, rows[1].n_seeds) == (5.0, 0.0, 1)
    dup = [MetricRecord(8, 0, 1, {"m": 4.0}), MetricRecord(8, 0, 1, {"m": 4.0})]
    assert aggregate(dup, "m")[0].mean == 4.0 and aggregate(dup, "m")[0].std == 0.0
    with pytest.raises(UnknownMetricError):
        aggregate(recs, "nope")
    with pytest.raises(ValueError):
        aggregate([], "m")
    nan = recs + [MetricRecord(16, 1, 1, {"m": math.nan})]
    assert aggregate(nan, "m")[1].n_seeds == 1
    assert fit_metric(recs, "m").slope == pytest.approx(math.log(5 / 2) / math.log(2))


def test_final_records_keep_last_step():
    recs = [MetricRecord(8, 0, 5, {"m": 1.0}), MetricRecord(8, 0, 10, {"m": 2.0}), MetricRecord(4, 1, 10, {})]
    assert [(r.width, r.step) for r in final_records(recs)] == [(4, 10), (8, 10)]


def test_config_validation():
    with pytest.raises(ConfigError, match="unknown config key"):
        SweepConfig.from_dict({"widthz": [1]})
    with pytest.raises(ConfigError, match="data.colour"):
        SweepConfig.from_dict({"data": {"colour": 1}})
    with pytest.raises(ConfigError):
        SweepConfig.from_dict({"pzn": "bogus"})
    for bad in ({"widths": [64, 32]}, {"widths": []}, {"seeds": [0, 0]}, {"steps": -1}, {"eta0": 0.0},
                {"layer": 9}, {"metrics": ["no_such_metric"]}, {"data": {"kind": "cifar"}}):
        with pytest.raises(ConfigError):
            SweepConfig.from_dict(bad)
    cfg = SweepConfig.from_dict({"pzn": "ntp", "metrics": ["loss", "feature_change_ratio.l2"]})
    assert SweepConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_from_json_errors_name_the_path(tmp_path):
    missing = tmp_path / "missing.json"
    with pytest.raises(ConfigError, match="missing.json"):
        SweepConfig.from_json(missing)
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="bad.json"):
        SweepConfig.from_json(bad)
    ok = tmp_path / "ok.json"
    ok.write_text(json.dumps({"widths": [8, 16], "steps": 1}))
    assert SweepConfig.from_json(ok).widths == [8, 16]


def test_zero_steps_gives_one_record_with_no_change():
    recs = run_sweep(tiny(widths=[64], seeds=[0], steps=0))
    assert len(recs) == 1
    changes = {k: v for k, v in recs[0].values.items()
               if k.startswith(("feature_change", "weight_change", "natural_spectral_dW", "output_change"))}
    assert changes and all(v == 0.0 for v in changes.values())


def test_sweep_is_deterministic_and_ordered(tmp_path):
    cfg = tiny(record_every=1)
    serial = run_sweep(cfg, jobs=1)
    parallel = run_sweep(cfg, jobs=2)
    assert [(r.width, r.seed, r.step) for r in serial] == sorted((r.width, r.seed, r.step) for r in serial)
    write_csv(serial, tmp_path / "a.csv", "mup")
    write_csv(parallel, tmp_path / "b.csv", "mup")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert len([r for r in serial if r.step < cfg.steps]) == 2 * 2 * 2


def test_csv_round_trip_and_outputs(tmp_path):
    cfg = tiny(metrics=["loss", "feature_change_ratio"])
    recs = run_sweep(cfg)
    assert set(recs[0].values) == {"loss", "feature_change_ratio.l1", "feature_change_ratio.l2",
                                   "feature_change_ratio.l3"}
    write_csv(recs, tmp_path / "r.csv")
    back = read_csv(tmp_path / "r.csv")
    assert [(r.width, r.seed, r.step, r.values, r.flags) for r in back] == \
           [(r.width, r.seed, r.step, r.values, r.flags) for r in recs]
    csv_path, json_path = write_outputs(recs, cfg, tmp_path / "out")
    summary = json.loads(json_path.read_text())
    fit = summary["metrics"]["loss"]["fit"]
    assert set(fit) == {"slope", "intercept", "r_squared", "n_points"}
    assert summary["metrics"]["loss"]["n_seeds"] == [2, 2]
    assert summary["config"]["widths"] == [8, 16]


def test_divergence_is_flagged():
    cfg = tiny(pzn="sp", eta0=1e6, steps=20, seeds=[0], activation="linear")
    finals = final_records(run_sweep(cfg))
    assert all(r.flags.startswith("diverged@") for r in finals)
    assert all(math.isnan(r.values["feature_change_ratio.l2"]) for r in finals)
    assert len(summarize(finals)["diverged"]) == 2


def test_dead_network_is_flagged_degenerate():
    # a huge SP step kills every ReLU unit instead of overflowing
    finals = final_records(run_sweep(tiny(pzn="sp", eta0=1e6, steps=20, seeds=[0])))
    for r in finals:
        assert r.flags.startswith("degenerate:")
        bad = r.flags.split(":", 1)[1].split("|")
        assert "final_layer_alignment" in bad
        assert all(math.isnan(r.values[k]) for k in bad)
        assert math.isfinite(r.values["loss"])
