"""Built-in tiny populations and matched plans for exact verification.

These fixtures are small enough for full path enumeration, so expectations
and variances computed on them are exact up to floating-point rounding.
The verification suites (CLI `verify`) and the test suite share them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cost import CostSpec, EffortPlan, build_effort_plan
from .designs import Condition
from .population import Population

__all__ = [
    "EnumFixture",
    "tiny_fixtures",
    "moment_fixture",
    "cost_fixture",
    "constant_x_population",
]


@dataclass
class EnumFixture:
    name: str
    population: Population
    plan: EffortPlan
    condition: Condition
    aux_var: str = "x"


def _pop(psu_sizes, y, x, z=None):
    y = np.asarray(y, float)
    x = np.asarray(x, float)
    if z is None:
        z = np.zeros_like(y)
    return Population(psu_sizes, y, x, np.asarray(z, float))


def tiny_fixtures() -> list:
    """Enumeration-sized fixtures: M = 2 PSUs with at most 5 units each."""
    fixtures = []

    pop = _pop(
        [5, 5],
        y=[0, 2, 0, 0, 1, 0, 0, 3, 0, 0],
        x=[0, 1.5, 0, 0.5, 1, 0, 0, 2.5, 0, 0.2],
        z=[0.1, 1, 0, 0, 2, 0, 0.3, 2, 0, 0],
    )
    plan = build_effort_plan(pop, CostSpec(1.0, 4.0), m=2, n_1h=4, n_2h1=2,
                             d=1, d_ats=1, condition_var="x")
    fixtures.append(EnumFixture("mixed-rare", pop, plan, Condition("x")))

    # one PSU has no condition satisfiers at all
    pop = _pop(
        [4, 4],
        y=[1, 0, 2, 0, 0, 0, 0, 0],
        x=[2, 0, 3, 0, 0, 0, 0, 0],
    )
    plan = build_effort_plan(pop, CostSpec(1.0, 4.0), m=2, n_1h=3, n_2h1=2,
                             d=1, d_ats=1, condition_var="x")
    fixtures.append(EnumFixture("empty-psu", pop, plan, Condition("x")))

    # expansion regularly hits the phase-1 frame cap
    pop = _pop(
        [4, 4],
        y=[1, 3, 0, 2, 0, 1, 1, 0],
        x=[1, 2, 0, 1, 0, 1, 2, 0],
    )
    plan = build_effort_plan(pop, CostSpec(1.0, 4.0), m=2, n_1h=3, n_2h1=2,
                             d=2, d_ats=1, condition_var="x")
    fixtures.append(EnumFixture("cap-prone", pop, plan, Condition("x")))

    return fixtures


def moment_fixture() -> EnumFixture:
    """Three PSUs with m = 2, so the between-PSU variance terms are live."""
    pop = _pop(
        [4, 4, 4],
        y=[0, 2, 0, 1, 0, 0, 3, 0, 1, 0, 0, 2],
        x=[0, 1, 0, 1, 0, 0, 2, 0, 1, 0, 0.5, 2],
    )
    plan = build_effort_plan(pop, CostSpec(1.0, 4.0), m=2, n_1h=3, n_2h1=2,
                             d=1, d_ats=1, condition_var="x")
    return EnumFixture("between-psu", pop, plan, Condition("x"))


def cost_fixture():
    """Population and plan whose matched expected costs are all exactly 480.

    Each of the 4 PSUs holds 40 units, exactly 5 of them nonempty, so the
    condition rarity is 0.125 in every PSU. With n_1h = 20, n_2h1 = 8 and
    d = 2 the adaptive expansion can never hit the phase-1 cap
    (2 * 5 = 10 <= 20 - 8), and all five designs match the 480 budget with
    integer sizes and no rounding.
    """
    per_psu = np.zeros(40)
    per_psu[[3, 11, 19, 27, 35]] = [1.0, 2.0, 1.0, 3.0, 1.0]
    y = np.tile(per_psu, 4)
    pop = _pop([40] * 4, y=y, x=2.0 * y)
    plan = build_effort_plan(
        pop, CostSpec(1.0, 10.0), m=4, n_1h=20, n_2h1=8, d=2,
        d_ats=4, ats_n1=8, condition_var="y",
    )
    return EnumFixture("cost-law", pop, plan, Condition("y"), aux_var="x")


def constant_x_population() -> Population:
    """Auxiliary x is the same for every unit, so every slope estimate
    is degenerate and regression estimators must fall back to ybar_n2."""
    rng = np.random.default_rng(5)
    y = rng.poisson(0.6, size=40).astype(float)
    return _pop([10, 10, 10, 10], y=y, x=np.full(40, 3.0))
