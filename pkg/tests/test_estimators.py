import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atsd import estimators as est
from atsd.designs import Condition, make_psu_sample, run_atsd
from atsd.enumeration import (
    enumerate_design,
    exact_expectation,
    exact_mean_var,
    phase2_paths,
)
from atsd.fixtures import constant_x_population, tiny_fixtures
from atsd.population import Population
from atsd.rng import DrawRng


def psu_paths(y, x, n_init, d, cond_var="x"):
    y = np.asarray(y, float)
    x = np.asarray(x, float)
    cond = (x if cond_var == "x" else y) > 0
    return list(phase2_paths(y, x, cond, n_init, d))


def test_murthy_group_decomposition_hand_value():
    # frame of 4, initial = units {0, 2}, one satisfier, d = 1 expansion {3}
    y = np.array([2.0, 0.0, 1.0, 5.0])
    x = np.array([1.0, 0.0, 0.0, 2.0])
    s = make_psu_sample(
        frame_ids=np.arange(4), frame_y=y, frame_aux=x, cond=x > 0,
        n_init=2, d=1, initial=np.array([0, 2]), adaptive=np.array([3]),
        psu_index=1,
    )
    # p = 1/2; satisfier mean over final sample = (2+5)/2, others = 1
    expect = 4 * (0.5 * 3.5 + 0.5 * 1.0)
    assert est.murthy_psu(s, "y") == pytest.approx(expect, abs=1e-14)


def test_murthy_empty_group_contributes_zero():
    y = np.array([0.0, 0.0, 3.0])
    x = np.array([0.0, 0.0, 1.0])
    s = make_psu_sample(
        frame_ids=np.arange(3), frame_y=y, frame_aux=x, cond=x > 0,
        n_init=2, d=1, initial=np.array([0, 1]), adaptive=np.array([]),
        psu_index=1,
    )
    # no satisfiers in the initial sample: p = 0, c-group empty
    assert est.murthy_psu(s, "y") == pytest.approx(0.0, abs=1e-14)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6), d=st.integers(1, 2))
def test_murthy_unbiased_by_enumeration(seed, d):
    rng = np.random.default_rng(seed)
    y = (rng.random(5) < 0.5) * rng.integers(1, 5, 5).astype(float)
    x = (y > 0) * rng.integers(1, 3, 5).astype(float)
    e = math.fsum(p * est.murthy_psu(s, "y") for s, p in psu_paths(y, x, 2, d))
    assert e == pytest.approx(float(y.sum()), abs=1e-10)


def test_v3_c3_unbiased_by_enumeration():
    y = np.array([0.0, 2.0, 1.0, 0.0, 4.0])
    x = np.array([0.0, 1.0, 2.0, 0.5, 1.0])
    paths = psu_paths(y, x, 2, 1)
    for u, v, fn in (("y", "y", est.v3_hat), ("aux", "aux", est.v3_hat)):
        tot = math.fsum(p * est.murthy_psu(s, u) for s, p in paths)
        var = math.fsum(p * (est.murthy_psu(s, u) - tot) ** 2 for s, p in paths)
        e_hat = math.fsum(p * fn(s, u) for s, p in paths)
        assert e_hat == pytest.approx(var, abs=1e-10)
    # cross-moment
    ty = math.fsum(p * est.murthy_psu(s, "y") for s, p in paths)
    tx = math.fsum(p * est.murthy_psu(s, "aux") for s, p in paths)
    cov = math.fsum(
        p * (est.murthy_psu(s, "y") - ty) * (est.murthy_psu(s, "aux") - tx)
        for s, p in paths)
    e_c3 = math.fsum(p * est.c3_hat(s) for s, p in paths)
    assert e_c3 == pytest.approx(cov, abs=1e-10)


def test_cov_hat_equals_var_hat_when_y_equals_x():
    y = np.array([0.0, 2.0, 1.0, 0.0, 0.0, 3.0, 0.0, 1.0])
    pop = Population([4, 4], y, y.copy(), np.zeros(8))
    draw = run_atsd(pop, 2, 3, 2, 1, Condition("x"), DrawRng(3, 1))
    assert est.cov_hat_xy(draw) == pytest.approx(
        est.var_hat_xbar_n2(draw), abs=1e-12)
    assert est.cov_hat_xy(draw) == pytest.approx(
        est.var_hat_ybar_n2(draw), abs=1e-12)


def test_var3_requires_two_initial_units():
    y = np.array([1.0, 2.0, 0.0])
    x = np.array([1.0, 1.0, 0.0])
    s = make_psu_sample(
        frame_ids=np.arange(3), frame_y=y, frame_aux=x, cond=x > 0,
        n_init=1, d=1, initial=np.array([0]), adaptive=np.array([1]),
        psu_index=1,
    )
    with pytest.raises(est.UndefinedVarianceError):
        est.v3_hat(s, "y")


def test_beta_pop_matches_numpy_slope():
    rng = np.random.default_rng(0)
    y = rng.poisson(1.0, 20).astype(float)
    x = y + rng.normal(0, 0.5, 20)
    pop = Population([10, 10], y, x - x.min(), np.zeros(20))
    b = est.beta_pop(pop, "x")
    xs = pop.x
    expect = float(np.cov(xs, y, bias=True)[0, 1] / np.var(xs))
    assert not b.degenerate
    assert b.value == pytest.approx(expect, rel=1e-10)


def test_beta_degenerate_on_constant_x():
    pop = constant_x_population()
    b = est.beta_pop(pop, "x")
    assert b.degenerate
    draw = run_atsd(pop, 2, 5, 2, 1, Condition("x"), DrawRng(0, 0))
    assert est.beta1_hat(draw).degenerate
    assert est.beta_opt_hat(draw).degenerate


def test_mu_reg_fallback_returns_ybar():
    pop = constant_x_population()
    draw = run_atsd(pop, 2, 5, 2, 1, Condition("x"), DrawRng(0, 0))
    rep = est.mu_reg(draw, est.beta_opt_hat(draw))
    assert rep.fallback_used
    assert rep.estimate == pytest.approx(est.ybar_n2(draw), abs=1e-14)


def test_mu_reg_accepts_plain_float():
    fx = tiny_fixtures()[0]
    plan = fx.plan
    draw = run_atsd(fx.population, plan.m, plan.n_1h, plan.n_2h1, plan.d,
                    fx.condition, DrawRng(1, 0))
    a = est.mu_reg(draw, 0.5).estimate
    yb, x2, x1 = est.ybar_n2(draw), est.xbar_n2(draw), est.xbar_n1(draw)
    assert a == pytest.approx(yb + 0.5 * (x1 - x2), abs=1e-14)


def test_beta_opt_pop_modes_agree():
    fx = tiny_fixtures()[0]
    plan = fx.plan
    kw = dict(m=plan.m, n_1h=plan.n_1h, n_2h1=plan.n_2h1, d=plan.d,
              condition=fx.condition, aux_var="x")
    exact = est.beta_opt_pop(fx.population, mode="enumerate", **kw)
    mc = est.beta_opt_pop(fx.population, mode="montecarlo",
                          rng=DrawRng(42, 0), replicates=60_000, **kw)
    assert mc.value == pytest.approx(exact.value, rel=0.05)


def test_beta_opt_pop_enumerate_matches_direct_enumeration():
    fx = tiny_fixtures()[0]
    plan = fx.plan
    paths = list(enumerate_design(fx.population, plan, "atsd",
                                  condition=fx.condition, aux_var="x"))
    ey, vy = exact_mean_var(paths, est.ybar_n2)
    ex, vx = exact_mean_var(paths, est.xbar_n2)
    cov = exact_expectation(
        paths, lambda d: (est.ybar_n2(d) - ey) * (est.xbar_n2(d) - ex))
    b = est.beta_opt_pop(fx.population, mode="enumerate", m=plan.m,
                         n_1h=plan.n_1h, n_2h1=plan.n_2h1, d=plan.d,
                         condition=fx.condition, aux_var="x")
    assert b.value == pytest.approx(cov / vx, abs=1e-10)


def test_var_estimators_need_minimum_sizes():
    fx = tiny_fixtures()[0]
    pop = fx.population
    draw = run_atsd(pop, 1, 4, 2, 1, fx.condition, DrawRng(0, 0))
    with pytest.raises(ValueError):
        est.var_hat_mu_reg(draw, 0.5)  # m = 1: between-PSU term undefined
