"""Exhaustive enumeration oracle.

Enumerates every draw path of a design on a tiny population together with
its exact probability, so expectations and variances of any estimator can
be computed by weighted summation. Used by the unbiasedness and variance
test suites and by the exact-parameter operations.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .designs import (
    AtsdSample,
    Condition,
    DoubleSample,
    SrsSample,
    TwoStageSample,
    make_psu_sample,
)
from .population import Population

PATH_GUARD = 10_000_000

DESIGNS = ("srswor", "two_stage", "two_stage_double", "ats", "atsd")


class EnumerationGuardError(RuntimeError):
    """Path space too large to enumerate; carries the size estimate."""

    def __init__(self, estimate):
        super().__init__(f"enumeration would visit ~{estimate:.3g} paths")
        self.estimate = estimate


def psu_frame_subsets(frame_size: int, n: int):
    """All C(frame_size, n) phase-1 subsets."""
    return itertools.combinations(range(frame_size), n)


def phase2_path_count(n_cond: int, frame_size: int, n_init: int, d: int) -> int:
    """Number of phase-2 paths for a frame with n_cond condition-satisfiers."""
    total = 0
    rem = frame_size - n_init
    for l in range(max(0, n_init - (frame_size - n_cond)), min(n_init, n_cond) + 1):
        k = min(d * l, rem)
        total += math.comb(n_cond, l) * math.comb(frame_size - n_cond, n_init - l) * math.comb(rem, k)
    return total


def phase2_paths(frame_y, frame_aux, cond, n_init: int, d: int,
                 psu_index: int = 0, frame_ids=None):
    """Yield (PsuAdaptiveSample, probability) over all phase-2 draw paths."""
    frame_y = np.asarray(frame_y, dtype=float)
    frame_aux = np.asarray(frame_aux, dtype=float)
    cond = np.asarray(cond, dtype=bool)
    n1 = len(frame_y)
    p_init = 1.0 / math.comb(n1, n_init)
    idx = range(n1)
    for init in itertools.combinations(idx, n_init):
        init_arr = np.array(init, dtype=int)
        l = int(cond[init_arr].sum())
        rem = [i for i in idx if i not in init]
        want = d * l
        k = min(want, len(rem))
        n_exp = math.comb(len(rem), k)
        p = p_init / n_exp
        for exp in itertools.combinations(rem, k):
            yield (
                make_psu_sample(frame_y, frame_aux, cond, n_init, d,
                                init_arr, np.array(exp, dtype=int),
                                psu_index=psu_index, frame_ids=frame_ids,
                                capped=k < want),
                p,
            )


def _atsd_psu_paths(pop: Population, h: int, n_1h: int, n_2h1: int, d: int,
                    condition: Condition, aux_var: str):
    """All (sample, prob) paths within PSU h: phase-1 subset x phase-2 path."""
    N_h = pop.psu_sizes[h - 1]
    p_s1 = 1.0 / math.comb(N_h, n_1h)
    out = []
    for s1 in psu_frame_subsets(N_h, n_1h):
        idx = np.array(s1, dtype=int)
        frame_y = pop.psu_values("y", h)[idx]
        frame_aux = pop.psu_values(aux_var, h)[idx]
        cond = condition.flags(pop, h, idx)
        for sample, p in phase2_paths(frame_y, frame_aux, cond, n_2h1, d,
                                      psu_index=h, frame_ids=idx):
            out.append((sample, p_s1 * p))
    return out


def _ats_psu_paths(pop: Population, h: int, n_1: int, d_1: int, condition: Condition):
    N_h = pop.psu_sizes[h - 1]
    idx = np.arange(N_h)
    frame_y = pop.psu_values("y", h)
    cond = condition.flags(pop, h, idx)
    return list(phase2_paths(frame_y, frame_y, cond, n_1, d_1,
                             psu_index=h, frame_ids=idx))


def _estimate_atsd_paths(pop, m, n_1h, n_2h1, d, condition, aux_var) -> float:
    total = 0.0
    per_psu = []
    for h in range(1, pop.M + 1):
        N_h = pop.psu_sizes[h - 1]
        # upper bound: every phase-1 subset, worst condition count
        worst = max(
            phase2_path_count(c, n_1h, n_2h1, d) for c in range(n_1h + 1)
        )
        per_psu.append(math.comb(N_h, n_1h) * worst)
    for combo in itertools.combinations(range(pop.M), m):
        prod = 1.0
        for h in combo:
            prod *= per_psu[h]
        total += prod
    return total


def enumerate_design(pop: Population, plan, design: str, *,
                     condition: Condition | None = None,
                     aux_var: str = "x", guard: int = PATH_GUARD):
    """Yield (draw, probability) over every path of the named design.

    `plan` is an EffortPlan (or anything with the same size attributes).
    Probabilities sum to 1 within 1e-12; tested.
    """
    if design not in DESIGNS:
        raise ValueError(f"unknown design {design!r}; expected one of {DESIGNS}")
    if design == "srswor":
        n = plan.srs_n
        total = math.comb(pop.N, n)
        if total > guard:
            raise EnumerationGuardError(total)
        p = 1.0 / total
        for s in itertools.combinations(range(pop.N), n):
            idx = np.array(s, dtype=int)
            yield SrsSample(pop.N, idx, pop.y[idx]), p
        return

    m = plan.m
    p_stage1 = 1.0 / math.comb(pop.M, m)

    if design == "two_stage":
        n = plan.two_stage_n
        total = math.comb(pop.M, m) * max(
            math.comb(N_h, n) for N_h in pop.psu_sizes
        ) ** m
        if total > guard:
            raise EnumerationGuardError(total)
        for combo in itertools.combinations(range(1, pop.M + 1), m):
            per_psu = []
            for h in combo:
                opts = []
                ph = 1.0 / math.comb(pop.psu_sizes[h - 1], n)
                for s in itertools.combinations(range(pop.psu_sizes[h - 1]), n):
                    opts.append((np.array(s, dtype=int), ph))
                per_psu.append(opts)
            for choice in itertools.product(*per_psu):
                prob = p_stage1
                positions, ys, sizes = [], [], []
                for (s, ph), h in zip(choice, combo):
                    prob *= ph
                    positions.append(s)
                    ys.append(pop.psu_values("y", h)[s])
                    sizes.append(pop.psu_sizes[h - 1])
                yield TwoStageSample(pop.M, pop.N, m, np.array(combo), sizes,
                                     positions, ys), prob
        return

    if design == "two_stage_double":
        n1, n2 = plan.n_1h, plan.regs_n_ytR
        per = max(math.comb(N_h, n1) for N_h in pop.psu_sizes) * math.comb(n1, n2)
        if math.comb(pop.M, m) * per**m > guard:
            raise EnumerationGuardError(math.comb(pop.M, m) * per**m)
        for combo in itertools.combinations(range(1, pop.M + 1), m):
            per_psu = []
            for h in combo:
                N_h = pop.psu_sizes[h - 1]
                ph = 1.0 / (math.comb(N_h, n1) * math.comb(n1, n2))
                opts = []
                for s1 in itertools.combinations(range(N_h), n1):
                    s1a = np.array(s1, dtype=int)
                    for sub in itertools.combinations(range(n1), n2):
                        opts.append((s1a, np.array(sub, dtype=int), ph))
                per_psu.append(opts)
            for choice in itertools.product(*per_psu):
                prob = p_stage1
                p1_aux, p2_pos, p2_y, p2_aux, sizes = [], [], [], [], []
                for (s1, sub, ph), h in zip(choice, combo):
                    prob *= ph
                    aux = pop.psu_values(aux_var, h)[s1]
                    p1_aux.append(aux)
                    p2_pos.append(sub)
                    p2_y.append(pop.psu_values("y", h)[s1][sub])
                    p2_aux.append(aux[sub])
                    sizes.append(pop.psu_sizes[h - 1])
                yield DoubleSample(pop.M, pop.N, m, np.array(combo), sizes,
                                   p1_aux, p2_pos, p2_y, p2_aux, aux_var), prob
        return

    # adaptive designs
    if design == "ats":
        cond = condition or Condition("y")
        per_psu_paths = {
            h: _ats_psu_paths(pop, h, plan.ats_n1, plan.ats_d1, cond)
            for h in range(1, pop.M + 1)
        }
        used_aux = "y"
    else:
        if condition is None:
            raise ValueError("atsd enumeration needs a Condition")
        est = _estimate_atsd_paths(pop, m, plan.n_1h, plan.n_2h1, plan.d,
                                   condition, aux_var)
        if est > guard:
            raise EnumerationGuardError(est)
        per_psu_paths = {
            h: _atsd_psu_paths(pop, h, plan.n_1h, plan.n_2h1, plan.d,
                               condition, aux_var)
            for h in range(1, pop.M + 1)
        }
        used_aux = aux_var

    sizes_all = pop.psu_sizes
    for combo in itertools.combinations(range(1, pop.M + 1), m):
        lists = [per_psu_paths[h] for h in combo]
        if math.prod(len(x) for x in lists) * math.comb(pop.M, m) > guard:
            raise EnumerationGuardError(math.prod(len(x) for x in lists))
        for choice in itertools.product(*lists):
            prob = p_stage1
            samples = []
            for s, p in choice:
                prob *= p
                samples.append(s)
            yield AtsdSample(pop.M, pop.N, m, np.array(combo), samples,
                             [sizes_all[h - 1] for h in combo],
                             aux_var=used_aux), prob


def exact_moments(paths, fns):
    """Weighted first and second moments of callables over (draw, prob) pairs.

    Returns (total_probability, means, covariance_matrix). Covariances use
    the exact weighted definition E[fg] - E[f]E[g].
    """
    k = len(fns)
    # Neumaier-compensated accumulators keep the sums order-independent
    s = np.zeros(1 + k + k * k)
    comp = np.zeros_like(s)
    for draw, p in paths:
        v = np.array([f(draw) for f in fns], dtype=float)
        inc = np.concatenate([[p], p * v, p * np.outer(v, v).ravel()])
        t = s + inc
        comp += np.where(np.abs(s) >= np.abs(inc), s - t + inc, inc - t + s)
        s = t
    s = s + comp
    p_tot = float(s[0])
    means = s[1 : 1 + k]
    seconds = s[1 + k :].reshape(k, k)
    cov = seconds - np.outer(means, means)
    return p_tot, means, cov


def exact_expectation(paths, fn) -> float:
    total, means, _ = exact_moments(paths, [fn])
    if abs(total - 1.0) > 1e-9:
        raise RuntimeError(f"path probabilities sum to {total}, not 1")
    return float(means[0])


def exact_mean_var(paths, fn):
    total, means, cov = exact_moments(paths, [fn])
    if abs(total - 1.0) > 1e-9:
        raise RuntimeError(f"path probabilities sum to {total}, not 1")
    return float(means[0]), float(cov[0, 0])
