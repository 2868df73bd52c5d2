"""Acceptance gate: one test per shipped guarantee.

Exact suites run against full path enumeration (no Monte Carlo noise);
the replicated-comparison checks assert directional bounds with seeds and
replicate counts fixed, so they are deterministic.
"""

import json
import time

import numpy as np
import pytest

from atsd import estimators as est
from atsd.cli import SUITES, _preset_path, main, population_spec_from_cfg
from atsd.designs import Condition, run_atsd
from atsd.enumeration import (
    enumerate_design,
    exact_expectation,
    phase2_paths,
    psu_frame_subsets,
)
from atsd.fixtures import constant_x_population, cost_fixture, moment_fixture
from atsd.montecarlo import ExperimentConfig, run_experiment
from atsd.population import compute_stats, generate_population
from atsd.rng import DrawRng, stream_id


def run_suite(name):
    return SUITES[name]()


def test_1_unbiasedness_exact_within_10s():
    t0 = time.time()
    rows = run_suite("murthy") + run_suite("unbiasedness")
    for label, value, tol in rows:
        assert value <= 1e-10, f"{label}: {value}"
    assert time.time() - t0 < 10.0


def test_2_variance_formulas_exact_within_60s():
    t0 = time.time()
    for label, value, tol in run_suite("variance"):
        assert value <= 1e-10, f"{label}: {value}"
    assert time.time() - t0 < 60.0


def test_3_within_psu_moment_identity():
    fx = moment_fixture()
    pop, plan = fx.population, fx.plan
    n1h = plan.n_1h
    for h in range(1, pop.M + 1):
        y = pop.psu_values("y", h)
        x = pop.psu_values("x", h)
        acc, cnt = 0.0, 0
        for s1 in psu_frame_subsets(pop.psu_sizes[h - 1], n1h):
            idx = np.asarray(s1)
            flags = fx.condition.flags(pop, h, idx)
            acc += exact_expectation(
                phase2_paths(y[idx], x[idx], flags, plan.n_2h1, plan.d),
                lambda s: est._s2_hat_within(s, "aux", "aux"))
            cnt += 1
        lhs = acc / cnt
        e2v3_tx = est.e2v3_terms(pop, h, n1h, plan.n_2h1, plan.d,
                                 fx.condition, "x")[1]
        rhs = float(np.var(x, ddof=1)) - e2v3_tx / (n1h * (n1h - 1))
        assert lhs == pytest.approx(rhs, abs=1e-10), f"psu {h}"


def test_3_between_psu_moment_identity():
    fx = moment_fixture()
    pop, plan = fx.population, fx.plan
    n1h = plan.n_1h
    paths = list(enumerate_design(pop, plan, "atsd",
                                  condition=fx.condition, aux_var="x"))

    def s2_ty(draw):
        vals = [draw.a(i) * est.murthy_psu(s, "y")
                for i, s in enumerate(draw.psu_samples)]
        mean = sum(vals) / len(vals)
        return sum((v - mean) ** 2 for v in vals) / (len(vals) - 1)

    lhs = exact_expectation(paths, s2_ty)
    s2ty_pop = float(np.var(pop.psu_totals("y"), ddof=1))
    extra = 0.0
    for h in range(1, pop.M + 1):
        n_h = pop.psu_sizes[h - 1]
        a_h = n_h / n1h
        s2y = float(np.var(pop.psu_values("y", h), ddof=1))
        e2v3_ty = est.e2v3_terms(pop, h, n1h, plan.n_2h1, plan.d,
                                 fx.condition, "x")[0]
        extra += n_h**2 * (1 - n1h / n_h) * s2y / n1h + a_h**2 * e2v3_ty
    rhs = s2ty_pop + extra / pop.M
    assert lhs == pytest.approx(rhs, abs=1e-10)


def test_4_cost_law_100k_replicates():
    fx = cost_fixture()
    plan = fx.plan
    costs = plan.expected_costs()
    assert max(costs.values()) - min(costs.values()) <= plan.cost.c_tar
    replicates = 100_000
    total = 0
    caps = 0
    for r in range(replicates):
        draw = run_atsd(fx.population, plan.m, plan.n_1h, plan.n_2h1, plan.d,
                        fx.condition, DrawRng(31, stream_id(1, r)),
                        aux_var=fx.aux_var)
        total += draw.n_target
        caps += any(s.capped for s in draw.psu_samples)
    assert caps == 0
    mean_ny = total / replicates
    assert abs(mean_ny - plan.expected_ny) / plan.expected_ny < 0.01


def test_5_population_calibration():
    spec1 = population_spec_from_cfg(_preset_path("population1"))
    s1 = compute_stats(generate_population(spec1))
    assert 0.14 <= s1.means["y"] <= 0.24
    assert s1.corr_with_y["x"] >= 0.85
    assert 0.40 <= s1.corr_with_y["z"] <= 0.62

    spec2 = population_spec_from_cfg(_preset_path("population2"))
    s2 = compute_stats(generate_population(spec2))
    assert 0.40 <= s2.means["y"] <= 0.60
    assert s2.corr_with_y["x"] >= 0.88


@pytest.fixture(scope="module")
def table2_result():
    pop = generate_population(population_spec_from_cfg(_preset_path("population1")))
    from atsd.cost import CostSpec, build_effort_plan
    plan = build_effort_plan(pop, CostSpec(1.0, 10.0), m=4, n_1h=50,
                             n_2h1=10, d=4, d_ats=10, ats_n1=13,
                             condition_var="x")
    cfg = ExperimentConfig(
        population=pop, plan=plan, condition=Condition("x"), aux_var="x",
        replicates=10_000, master_seed=20260826,
        beta_o_mode="montecarlo", beta_o_replicates=100_000,
    )
    t0 = time.time()
    table = run_experiment(cfg, threads=1)
    return table, time.time() - t0


def test_6_strong_auxiliary_directional(table2_result):
    table, elapsed = table2_result
    assert elapsed < 600.0
    eff_rego = table.row("RegO").eff
    eff_regs = table.row("Regs").eff
    assert eff_rego > 1.8
    assert eff_rego > eff_regs > 1.0
    assert abs(table.row("RegO").rbias) < 0.02
    assert abs(table.row("ATS").rbias) < 0.02
    assert table.row("Regs").rbias < -0.05


def test_7_weak_auxiliary_srswor_wins():
    pop = generate_population(population_spec_from_cfg(_preset_path("population2")))
    from atsd.cost import CostSpec, build_effort_plan
    plan = build_effort_plan(pop, CostSpec(1.0, 5.0), m=4, n_1h=50,
                             n_2h1=7, d=5, d_ats=10, ats_n1=9,
                             condition_var="z")
    cfg = ExperimentConfig(
        population=pop, plan=plan, condition=Condition("z"), aux_var="z",
        replicates=10_000, master_seed=20260826,
        estimators=("Regopt", "ybar_s"),
    )
    t0 = time.time()
    table = run_experiment(cfg, threads=1)
    assert time.time() - t0 < 600.0
    assert table.row("Regopt").eff < 1.0


def test_8_cmd_run_thread_determinism(tmp_path):
    preset = _preset_path("table2").read_text()
    preset = preset.replace("replicates = 10000", "replicates = 150")
    preset = preset.replace("beta_o_replicates = 100000",
                            "beta_o_replicates = 2000")
    cfg = tmp_path / "scenario.cfg"
    cfg.write_text(preset)
    out1 = tmp_path / "run1"
    out8 = tmp_path / "run8"
    assert main(["run", str(cfg), "--threads", "1", "--out-dir", str(out1)]) == 0
    assert main(["run", str(cfg), "--threads", "8", "--out-dir", str(out8)]) == 0
    assert (out1 / "table.csv").read_bytes() == (out8 / "table.csv").read_bytes()
    meta = json.loads((out1 / "manifest.json").read_text())
    assert meta["master_seed"] == 20260826


def test_9_constant_x_fallback_contract():
    pop = constant_x_population()
    cond = Condition("x")
    for r in range(300):
        draw = run_atsd(pop, 3, 6, 3, 1, cond, DrawRng(8, stream_id(1, r)))
        b_opt = est.beta_opt_hat(draw)
        b_1 = est.beta1_hat(draw)
        assert b_opt.degenerate and b_1.degenerate
        ybar = est.ybar_n2(draw)
        for b in (b_opt, b_1):
            rep = est.mu_reg(draw, b)
            assert rep.fallback_used
            assert rep.estimate == ybar
