"""Expected survey costs and effort-matched sample sizes.

Total cost is c_aux * n_aux + c_tar * n_y. For ATSD the auxiliary count
is the phase-1 census of the selected PSUs (m * n_1h; the re-measurement
of x on the phase-2 sample is not double-charged) and the expected target
count follows the hypergeometric argument
    E(n_y) = (m / M) * sum_h n_2h1 * (1 + d * p_h)
with p_h the per-PSU rarity of the condition variable. Comparison designs
get their sample sizes from the matching formulas, rounded to the nearest
integer with a floor of 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .population import Population


@dataclass(frozen=True)
class CostSpec:
    c_aux: float = 1.0
    c_tar: float = 10.0

    def __post_init__(self):
        if self.c_aux <= 0 or self.c_tar <= 0:
            raise ValueError("both unit costs must be positive")

    @property
    def cost_ratio(self) -> float:
        return self.c_tar / self.c_aux


def _round_size(v: float) -> int:
    if v < 0.5:
        raise ValueError(f"budget too small: matched size {v:.4g} rounds below 1")
    return max(1, math.floor(v + 0.5))


def expected_ny(rarity, m: int, M: int, n_2h1: int, d: int) -> float:
    """Expected number of target measurements under ATSD (no cap events)."""
    if len(rarity) != M:
        raise ValueError("need one rarity value per PSU")
    return (m / M) * math.fsum(n_2h1 * (1.0 + d * p) for p in rarity)


def match_ats(budget: float, c_tar: float, m: int, M: int, d_ats: int, rarity) -> int:
    denom = c_tar * (m / M) * math.fsum(1.0 + d_ats * p for p in rarity)
    return _round_size(budget / denom)


def match_two_stage(budget: float, m: int, c_tar: float) -> int:
    return _round_size(budget / (m * c_tar))


def match_srs(budget: float, c_tar: float) -> int:
    return _round_size(budget / c_tar)


def match_regs(e_ny: float, m: int) -> int:
    return _round_size(e_ny / m)


@dataclass(frozen=True)
class EffortPlan:
    """Per-design sample sizes matched to one expected budget."""

    m: int
    n_1h: int
    n_2h1: int
    d: int
    ats_n1: int
    ats_d1: int
    two_stage_n: int
    srs_n: int
    regs_n_ytR: int
    cost: CostSpec
    expected_ny: float
    budget: float  # expected total cost of the ATSD arm
    rarity_cond: tuple = ()  # condition-variable rarity per PSU (ATSD)
    rarity_y: tuple = ()  # y rarity per PSU (ATS)

    def expected_costs(self) -> dict:
        M = len(self.rarity_cond) or len(self.rarity_y)
        out = {
            "atsd": self.cost.c_aux * self.m * self.n_1h + self.cost.c_tar * self.expected_ny,
            "two_stage": self.m * self.two_stage_n * self.cost.c_tar,
            "srswor": self.srs_n * self.cost.c_tar,
            "regs": self.cost.c_aux * self.m * self.n_1h
            + self.cost.c_tar * self.m * self.regs_n_ytR,
        }
        if self.rarity_y:
            out["ats"] = self.cost.c_tar * expected_ny(
                self.rarity_y, self.m, M, self.ats_n1, self.ats_d1
            )
        return out


def build_effort_plan(pop: Population, cost: CostSpec, *, m: int, n_1h: int,
                      n_2h1: int, d: int, d_ats: int,
                      condition_var: str = "x", threshold: float = 0.0,
                      ats_n1: int | None = None, two_stage_n: int | None = None,
                      srs_n: int | None = None, regs_n_ytR: int | None = None) -> EffortPlan:
    """Derive all matched sizes from the ATSD parameters and the cost spec.

    Any explicitly supplied size (e.g. a published scenario quadruple)
    overrides the matching formula for that design.
    """
    rarity_cond = tuple(
        float((pop.psu_values(condition_var, h) > threshold).sum()) / pop.psu_sizes[h - 1]
        for h in range(1, pop.M + 1)
    )
    rarity_y = tuple(
        float((pop.psu_values("y", h) > 0).sum()) / pop.psu_sizes[h - 1]
        for h in range(1, pop.M + 1)
    )
    e_ny = expected_ny(rarity_cond, m, pop.M, n_2h1, d)
    budget = cost.c_aux * m * n_1h + cost.c_tar * e_ny
    return EffortPlan(
        m=m,
        n_1h=n_1h,
        n_2h1=n_2h1,
        d=d,
        ats_n1=ats_n1 if ats_n1 is not None else match_ats(budget, cost.c_tar, m, pop.M, d_ats, rarity_y),
        ats_d1=d_ats,
        two_stage_n=two_stage_n if two_stage_n is not None else match_two_stage(budget, m, cost.c_tar),
        srs_n=srs_n if srs_n is not None else match_srs(budget, cost.c_tar),
        regs_n_ytR=regs_n_ytR if regs_n_ytR is not None else match_regs(e_ny, m),
        cost=cost,
        expected_ny=e_ny,
        budget=budget,
        rarity_cond=rarity_cond,
        rarity_y=rarity_y,
    )
