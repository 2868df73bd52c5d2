
import numpy as np
import pytest

from atsd.cost import CostSpec, build_effort_plan
from atsd.fixtures import tiny_fixtures
from atsd.montecarlo import (
    ExperimentConfig,
    ExperimentQualityError,
    aggregate,
    efficiency,
    run_experiment,
)
from atsd.montecarlo import _ReplicateResult


def small_experiment(replicates=80, **kw):
    fx = tiny_fixtures()[0]
    defaults = dict(
        population=fx.population, plan=fx.plan, condition=fx.condition,
        aux_var="x", replicates=replicates, master_seed=123,
        beta_o_mode="montecarlo", beta_o_replicates=500,
    )
    defaults.update(kw)
    return ExperimentConfig(**defaults)


def test_thread_count_invariance():
    cfg = small_experiment()
    t1 = run_experiment(cfg, threads=1)
    t8 = run_experiment(cfg, threads=8)
    for r1, r8 in zip(t1.rows, t8.rows):
        assert r1 == r8


def test_seed_changes_results():
    t1 = run_experiment(small_experiment())
    t2 = run_experiment(small_experiment(master_seed=124))
    assert t1.row("ybar_s").mean != t2.row("ybar_s").mean


def test_row_order_and_designs():
    table = run_experiment(small_experiment(replicates=30))
    assert [r.estimator for r in table.rows] == [
        "RegO", "Reg1", "Regopt", "Regb1", "ATS", "Regs", "ybar_s"]
    assert table.row("Regs").design == "two_stage_double"
    assert table.row("ybar_s").eff is not None


def test_estimator_subset():
    table = run_experiment(small_experiment(
        replicates=30, estimators=("Regopt", "ybar_s")))
    assert [r.estimator for r in table.rows] == ["Regopt", "ybar_s"]


def test_aggregate_hand_values():
    results = [
        _ReplicateResult({"ybar_s": v}, {"ybar_s": False}, {"srswor": 10.0})
        for v in (1.0, 2.0, 3.0, 6.0)
    ]
    table = aggregate(results, ybar_true=2.0, estimators=("ybar_s",))
    row = table.row("ybar_s")
    assert row.mean == pytest.approx(3.0)
    assert row.variance == pytest.approx(np.var([1, 2, 3, 6], ddof=1))
    assert row.bias == pytest.approx(1.0)
    assert row.mse == pytest.approx(row.variance + 1.0)
    assert row.rbias == pytest.approx(0.5)
    assert row.mean_cost == pytest.approx(10.0)
    assert row.eff == pytest.approx(row.variance / row.mse)


def test_efficiency_undefined_on_zero_mse():
    assert efficiency(1.0, 0.0) is None
    assert efficiency(1.0, 2.0) == pytest.approx(0.5)


def test_rbias_none_when_mean_zero():
    results = [
        _ReplicateResult({"ybar_s": v}, {}, {"srswor": 1.0}) for v in (-1.0, 1.0)
    ]
    table = aggregate(results, ybar_true=0.0, estimators=("ybar_s",))
    assert table.row("ybar_s").rbias is None


def test_error_rate_gate():
    # a plan invalid for this population errors on every replicate
    fx = tiny_fixtures()[0]
    bad_plan = build_effort_plan(
        fx.population, CostSpec(1.0, 4.0), m=2, n_1h=4, n_2h1=2, d=1, d_ats=1,
        condition_var="x", srs_n=10_000)
    cfg = ExperimentConfig(
        population=fx.population, plan=bad_plan, condition=fx.condition,
        replicates=40, master_seed=1, estimators=("ybar_s",))
    with pytest.raises(ExperimentQualityError):
        run_experiment(cfg)


def test_csv_round_structure(tmp_path):
    table = run_experiment(small_experiment(replicates=25))
    path = tmp_path / "t.csv"
    table.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0].split(",")[:4] == ["estimator", "design", "mean", "variance"]
    assert len(lines) == 1 + 7
    text = table.to_text()
    assert "ybar_s" in text and "eff" in text


def test_config_validation():
    with pytest.raises(ValueError):
        small_experiment(replicates=0).validate()
    with pytest.raises(ValueError):
        small_experiment(estimators=("nope",)).validate()
