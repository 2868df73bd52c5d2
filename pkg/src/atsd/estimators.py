"""Point estimators, regression coefficients, and the variance stack.

Within a PSU the Murthy-type total estimator is
    t_hat = n_1h * [p * mean(v over condition group) +
                    (1 - p) * mean(v over complement group)]
with p the condition proportion in the initial phase-2 sample and the
group means taken over the final sample. Empty-group means contribute 0
with their weight; single-element group variances are 0. These boundary
conventions keep the estimator exactly design-unbiased for the frame
total, which the enumeration test suite checks directly.

Population-level quantities expand per-PSU totals by a_h = N_h / n_1h
and the first-stage inclusion probability m / M.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .designs import (
    AtsdSample,
    Condition,
    DoubleSample,
    PsuAdaptiveSample,
    SrsSample,
    TwoStageSample,
    run_atsd,
    sequential_expand,
    srswor,
)
from .enumeration import phase2_paths, psu_frame_subsets
from .population import Population, population_variance_components
from .rng import DrawRng

DEGENERACY_EPS = 1e-9  # scale-aware zero test for beta-hat denominators


class UndefinedVarianceError(ValueError):
    """Sample too small for the requested variance estimator."""


@dataclass(frozen=True)
class RegressionCoefficient:
    kind: str  # beta1_pop | beta_opt_pop | beta1_hat | beta_opt_hat | fixed
    value: float
    degenerate: bool = False


@dataclass
class EstimatorReport:
    estimate: float
    coefficient: Optional[RegressionCoefficient] = None
    var_hat: Optional[float] = None
    fallback_used: bool = False
    components: Optional[tuple] = None  # (ybar_n2, xbar_n2, xbar_n1)


# --- within-PSU Murthy machinery -------------------------------------------

def _frame_values(sample: PsuAdaptiveSample, var) -> np.ndarray:
    """Resolve 'y'/'aux'/'xy'/'x2'/'y2' or an explicit array over the frame."""
    if isinstance(var, str):
        if var == "xy":
            return sample.frame_aux * sample.frame_y
        if var == "x2":
            return sample.frame_aux**2
        if var == "y2":
            return sample.frame_y**2
        return sample.frame_values(var)
    arr = np.asarray(var, dtype=float)
    if arr.shape != sample.frame_y.shape:
        raise ValueError("values array must align with the frame")
    return arr


def murthy_psu(sample: PsuAdaptiveSample, var="y") -> float:
    """Murthy-type estimator of the frame total of `var`."""
    if sample.n_final == 0:
        raise ValueError("empty sample")
    v = _frame_values(sample, var)
    pos = sample.positions
    in_c = sample.cond[pos]
    vals = v[pos]
    p = sample.p21
    mean_c = float(vals[in_c].mean()) if in_c.any() else 0.0
    mean_cp = float(vals[~in_c].mean()) if (~in_c).any() else 0.0
    return sample.frame_size * (p * mean_c + (1.0 - p) * mean_cp)


def _cov1(u: np.ndarray, v: np.ndarray) -> float:
    if len(u) < 2:
        return 0.0
    return float(np.dot(u - u.mean(), v - v.mean())) / (len(u) - 1)


def murthy_var3(sample: PsuAdaptiveSample, u_var, v_var) -> float:
    """Phase-3 (co)variance estimator of two Murthy totals on one frame.

    With u_var == v_var this is V3_hat, otherwise C3_hat; the symmetry
    c3_hat(v := u) == v3_hat(u) holds term by term.
    """
    n21 = sample.n_init
    if n21 < 2:
        raise UndefinedVarianceError(f"n_2h1={n21} < 2: phase-3 variance undefined")
    u = _frame_values(sample, u_var)
    v = _frame_values(sample, v_var)
    pos = sample.positions
    in_c = sample.cond[pos]
    upos, vpos = u[pos], v[pos]
    uc, vc = upos[in_c], vpos[in_c]
    ucp, vcp = upos[~in_c], vpos[~in_c]

    n1 = sample.frame_size
    l21 = sample.l_initial
    l2 = sample.l_total
    n2 = sample.n_final
    p = sample.p21

    s_uv_c = _cov1(uc, vc)
    s_uv_cp = _cov1(ucp, vcp)
    gap_u = (float(uc.mean()) if len(uc) else 0.0) - (float(ucp.mean()) if len(ucp) else 0.0)
    gap_v = (float(vc.mean()) if len(vc) else 0.0) - (float(vcp.mean()) if len(vcp) else 0.0)
    # degenerate-group conventions: empty-group factors are 0
    f_c = (l2 - 1) / l2 if l2 > 0 else 0.0
    f_cp = (n2 - l2 - 1) / (n2 - l2) if n2 - l2 > 0 else 0.0

    reach = (n1 - n21) / (n21 - 1)
    coef_c = (n1 - 1) * (l21 - 1) / (n21 - 1) + f_c * ((1.0 - p) * reach - n1 * p)
    coef_cp = (n1 - 1) * (n21 - l21 - 1) / (n21 - 1) + f_cp * (p * reach - n1 * (1.0 - p))
    mid = p * (1.0 - p) * reach * gap_u * gap_v
    return n1 * (p * coef_c * s_uv_c + mid + (1.0 - p) * coef_cp * s_uv_cp)


def v3_hat(sample: PsuAdaptiveSample, var="y") -> float:
    return murthy_var3(sample, var, var)


def c3_hat(sample: PsuAdaptiveSample) -> float:
    return murthy_var3(sample, "aux", "y")


# --- population-level expansions --------------------------------------------

def t_hat_pop(draw: AtsdSample, var) -> float:
    """(M/m) * sum_h a_h * t_hat_{var, h}: Murthy estimate of a population total."""
    total = math.fsum(
        draw.a(i) * murthy_psu(s, var) for i, s in enumerate(draw.psu_samples)
    )
    return (draw.M / draw.m) * total


def ybar_n2(draw: AtsdSample) -> float:
    return t_hat_pop(draw, "y") / draw.N


def xbar_n2(draw: AtsdSample) -> float:
    return t_hat_pop(draw, "aux") / draw.N


def xbar_n1(draw: AtsdSample) -> float:
    total = math.fsum(
        draw.a(i) * float(s.frame_aux.sum()) for i, s in enumerate(draw.psu_samples)
    )
    return (draw.M / draw.m) * total / draw.N


def _aux_scale2(draw: AtsdSample) -> float:
    """Mean square of the auxiliary over all phase-1 measurements."""
    sq = math.fsum(float((s.frame_aux**2).sum()) for s in draw.psu_samples)
    n = sum(s.frame_size for s in draw.psu_samples)
    return sq / n if n else 0.0


def _degeneracy_eps(draw: AtsdSample) -> float:
    return DEGENERACY_EPS * draw.N * _aux_scale2(draw)


def mu_reg(draw: AtsdSample, beta) -> EstimatorReport:
    """Regression-type estimate ybar_n2 + beta * (xbar_n1 - xbar_n2)."""
    if not isinstance(beta, RegressionCoefficient):
        beta = RegressionCoefficient("fixed", float(beta))
    yb = ybar_n2(draw)
    xb2 = xbar_n2(draw)
    xb1 = xbar_n1(draw)
    if beta.degenerate:
        return EstimatorReport(yb, beta, fallback_used=True, components=(yb, xb2, xb1))
    est = yb + beta.value * (xb1 - xb2)
    return EstimatorReport(est, beta, components=(yb, xb2, xb1))


def beta1_hat(draw: AtsdSample) -> RegressionCoefficient:
    """Sample version of the conventional finite-population slope."""
    yb = ybar_n2(draw)
    xb = xbar_n2(draw)
    num = t_hat_pop(draw, "xy") - draw.N * yb * xb
    den = t_hat_pop(draw, "x2") - draw.N * xb * xb
    if abs(den) <= _degeneracy_eps(draw):
        return RegressionCoefficient("beta1_hat", 0.0, degenerate=True)
    return RegressionCoefficient("beta1_hat", num / den)


def beta_opt_hat(draw: AtsdSample) -> RegressionCoefficient:
    """Sample version of the design-optimal slope cov/var of the n2 means."""
    try:
        v = var_hat_xbar_n2(draw)
        c = cov_hat_xy(draw)
    except UndefinedVarianceError:
        return RegressionCoefficient("beta_opt_hat", 0.0, degenerate=True)
    if v <= _degeneracy_eps(draw):
        return RegressionCoefficient("beta_opt_hat", 0.0, degenerate=True)
    return RegressionCoefficient("beta_opt_hat", c / v)


def beta_pop(pop: Population, aux_var: str = "x") -> RegressionCoefficient:
    """Conventional slope from exact population sums."""
    x = pop.values(aux_var)
    y = pop.y
    N = pop.N
    den = float(np.dot(x, x)) - N * x.mean() ** 2
    if abs(den) <= DEGENERACY_EPS * N * float(np.mean(x**2) or 1.0):
        return RegressionCoefficient("beta1_pop", 0.0, degenerate=True)
    num = float(np.dot(x, y)) - N * x.mean() * y.mean()
    return RegressionCoefficient("beta1_pop", num / den)


# --- sample-based variance estimators ---------------------------------------

def _check_var_sizes(draw: AtsdSample):
    if draw.m < 2:
        raise UndefinedVarianceError("m < 2: between-PSU variance undefined")
    for s in draw.psu_samples:
        if s.frame_size < 2:
            raise UndefinedVarianceError("n_1h < 2")
        if s.n_init < 2:
            raise UndefinedVarianceError("n_2h1 < 2")


def _s2_hat_within(sample: PsuAdaptiveSample, u_var, v_var) -> float:
    """Estimate of the within-PSU population (co)variance from Murthy totals."""
    n1 = sample.frame_size
    t_u = murthy_psu(sample, u_var)
    t_v = murthy_psu(sample, v_var)
    if u_var == v_var:
        t_uv = murthy_psu(sample, "x2" if u_var == "aux" else "y2")
    else:
        t_uv = murthy_psu(sample, "xy")
    return (t_uv - t_u * t_v / n1) / (n1 - 1)


def _fpc_factor(sample: PsuAdaptiveSample, N_h: int) -> float:
    n1 = sample.frame_size
    return n1 * (N_h - 1) / (N_h * (n1 - 1))


def _var_cov_hat(draw: AtsdSample, u_var: str, v_var: str) -> float:
    """Three-term (co)variance estimator for the population n2-means."""
    _check_var_sizes(draw)
    M, m, N = draw.M, draw.m, draw.N
    t_u = [draw.a(i) * murthy_psu(s, u_var) for i, s in enumerate(draw.psu_samples)]
    t_v = (
        t_u
        if u_var == v_var
        else [draw.a(i) * murthy_psu(s, v_var) for i, s in enumerate(draw.psu_samples)]
    )
    s_between = _cov1(np.asarray(t_u), np.asarray(t_v))
    middle = 0.0
    third = 0.0
    for i, s in enumerate(draw.psu_samples):
        N_h = draw.psu_sizes[i]
        n1 = s.frame_size
        middle += N_h**2 * (1.0 - n1 / N_h) * _s2_hat_within(s, u_var, v_var) / n1
        third += draw.a(i) ** 2 * _fpc_factor(s, N_h) * murthy_var3(s, u_var, v_var)
    return (M**2 * (1.0 - m / M) * s_between / m + (M / m) * (middle + third)) / N**2


def var_hat_xbar_n2(draw: AtsdSample) -> float:
    return _var_cov_hat(draw, "aux", "aux")


def var_hat_ybar_n2(draw: AtsdSample) -> float:
    return _var_cov_hat(draw, "y", "y")


def cov_hat_xy(draw: AtsdSample) -> float:
    return _var_cov_hat(draw, "aux", "y")


def var_hat_mu_reg(draw: AtsdSample, beta: float) -> float:
    """Variance estimator for the regression estimate at coefficient `beta`.

    The y-part carries the finite-population correction factor on V3_hat
    that makes the whole expression design-unbiased when beta is fixed;
    the beta block enters with plain (M/m)^2 weights.
    """
    _check_var_sizes(draw)
    M, m, N = draw.M, draw.m, draw.N
    t_y = [draw.a(i) * murthy_psu(s, "y") for i, s in enumerate(draw.psu_samples)]
    s2_between = _cov1(np.asarray(t_y), np.asarray(t_y))
    middle = 0.0
    third = 0.0
    beta_block = 0.0
    for i, s in enumerate(draw.psu_samples):
        N_h = draw.psu_sizes[i]
        n1 = s.frame_size
        a2 = draw.a(i) ** 2
        middle += N_h**2 * (1.0 - n1 / N_h) * _s2_hat_within(s, "y", "y") / n1
        third += a2 * _fpc_factor(s, N_h) * murthy_var3(s, "y", "y")
        beta_block += a2 * (
            beta**2 * murthy_var3(s, "aux", "aux") - 2.0 * beta * murthy_var3(s, "aux", "y")
        )
    return (
        M**2 * (1.0 - m / M) * s2_between / m
        + (M / m) * (middle + third)
        + (M / m) ** 2 * beta_block
    ) / N**2


# --- exact (parameter) variances --------------------------------------------

@dataclass(frozen=True)
class ThreePartVariance:
    part1: float  # between-PSU
    part2: float  # within-PSU phase 1
    part3: float  # adaptive phase
    part3_se: Optional[float] = None  # Monte Carlo SE when part3 is estimated

    @property
    def total(self) -> float:
        return self.part1 + self.part2 + self.part3


def _phase2_exact_v3c3(frame_y, frame_aux, cond, n_init, d):
    """Exact V3(t_y), V3(t_x), C3 for one fixed frame, by path enumeration."""
    sums = np.zeros(5)  # E[ty], E[tx], E[ty^2], E[tx^2], E[tx*ty]
    for sample, prob in phase2_paths(frame_y, frame_aux, cond, n_init, d):
        ty = murthy_psu(sample, "y")
        tx = murthy_psu(sample, "aux")
        sums += prob * np.array([ty, tx, ty * ty, tx * tx, tx * ty])
    v3_y = sums[2] - sums[0] ** 2
    v3_x = sums[3] - sums[1] ** 2
    c3 = sums[4] - sums[1] * sums[0]
    return v3_y, v3_x, c3


def e2v3_terms(pop: Population, h: int, n_1h: int, n_2h1: int, d: int,
               condition: Condition, aux_var: str) -> tuple:
    """Exact E2[V3(t_y)], E2[V3(t_x)], E2[C3] for PSU h, by full enumeration."""
    acc = np.zeros(3)
    count = 0
    for s1 in psu_frame_subsets(pop.psu_sizes[h - 1], n_1h):
        idx = np.asarray(s1)
        frame_y = pop.psu_values("y", h)[idx]
        frame_aux = pop.psu_values(aux_var, h)[idx]
        cond = condition.flags(pop, h, idx)
        acc += np.array(_phase2_exact_v3c3(frame_y, frame_aux, cond, n_2h1, d))
        count += 1
    return tuple(acc / count)


def _e2v3_terms_mc(pop, h, n_1h, n_2h1, d, condition, aux_var, rng,
                   r_outer, r_inner):
    """Nested Monte Carlo: outer draws of s_1h, inner phase-2 replicates."""
    gen = rng.generator() if isinstance(rng, DrawRng) else rng
    N_h = pop.psu_sizes[h - 1]
    per_outer = np.empty((r_outer, 3))
    for o in range(r_outer):
        s1 = srswor(N_h, n_1h, gen)
        frame_y = pop.psu_values("y", h)[s1]
        frame_aux = pop.psu_values(aux_var, h)[s1]
        cond = condition.flags(pop, h, s1)
        ty = np.empty(r_inner)
        tx = np.empty(r_inner)
        for k in range(r_inner):
            s = sequential_expand(frame_y, frame_aux, cond, n_2h1, d, gen)
            ty[k] = murthy_psu(s, "y")
            tx[k] = murthy_psu(s, "aux")
        per_outer[o] = (
            np.var(ty, ddof=1),
            np.var(tx, ddof=1),
            float(np.cov(tx, ty, ddof=1)[0, 1]),
        )
    means = per_outer.mean(axis=0)
    ses = per_outer.std(axis=0, ddof=1) / math.sqrt(r_outer)
    return means, ses


def _enumeration_feasible(pop, n_1h, n_2h1, guard=2_000_000) -> bool:
    total = 0
    for h in range(1, pop.M + 1):
        total += math.comb(pop.psu_sizes[h - 1], n_1h) * math.comb(n_1h, n_2h1) * 4
        if total > guard:
            return False
    return True


def var_mu_reg_exact(pop: Population, *, m: int, n_1h: int, n_2h1: int, d: int,
                     beta: float, condition: Condition, aux_var: str = "x",
                     mode: str = "auto", rng: Optional[DrawRng] = None,
                     r_outer: int = 1000, r_inner: int = 2000) -> ThreePartVariance:
    """Exact three-part variance of mu_reg at a fixed, known beta."""
    if not 1 <= m <= pop.M:
        raise ValueError("need 1 <= m <= M")
    comps = population_variance_components(pop, "y", aux_var)
    M, N = pop.M, pop.N
    part1 = M**2 * (1.0 - m / M) * comps.s2_t_y / m / N**2
    part2 = 0.0
    for h in range(1, M + 1):
        N_h = pop.psu_sizes[h - 1]
        part2 += N_h**2 * (1.0 - n_1h / N_h) * comps.s2_y_h[h - 1] / n_1h
    part2 *= M / (m * N**2)

    use_enum = mode == "enumerate" or (mode == "auto" and _enumeration_feasible(pop, n_1h, n_2h1))
    part3 = 0.0
    se2 = 0.0
    for h in range(1, M + 1):
        a2 = (pop.psu_sizes[h - 1] / n_1h) ** 2
        if use_enum:
            v3y, v3x, c3 = e2v3_terms(pop, h, n_1h, n_2h1, d, condition, aux_var)
            ses = np.zeros(3)
        else:
            if rng is None:
                raise ValueError("Monte Carlo mode needs an rng")
            (v3y, v3x, c3), ses = _e2v3_terms_mc(
                pop, h, n_1h, n_2h1, d, condition, aux_var,
                DrawRng(rng.master_seed, rng.stream_id + h), r_outer, r_inner
            )
        part3 += a2 * (v3y + beta**2 * v3x - 2.0 * beta * c3)
        se2 += (a2 * math.hypot(ses[0], beta**2 * ses[1], 2 * abs(beta) * ses[2])) ** 2
    part3 *= M / (m * N**2)
    se = math.sqrt(se2) * M / (m * N**2) if not use_enum else None
    return ThreePartVariance(part1, part2, part3, part3_se=se)


def beta_opt_pop(pop: Population, *, m: int, n_1h: int, n_2h1: int, d: int,
                 condition: Condition, aux_var: str = "x", mode: str = "auto",
                 rng: Optional[DrawRng] = None, replicates: int = 100_000) -> RegressionCoefficient:
    """Design-optimal slope cov(ybar_n2, xbar_n2) / var(xbar_n2).

    Exact on enumerable frames via the three-part decomposition; otherwise
    estimated by direct Monte Carlo over full-design draws with the
    documented replicate count.
    """
    use_enum = mode == "enumerate" or (mode == "auto" and _enumeration_feasible(pop, n_1h, n_2h1))
    if use_enum:
        comps = population_variance_components(pop, "y", aux_var)
        M, N = pop.M, pop.N
        var_x = M**2 * (1.0 - m / M) * comps.s2_t_x / m
        cov_xy = M**2 * (1.0 - m / M) * comps.s_t_xy / m
        for h in range(1, M + 1):
            N_h = pop.psu_sizes[h - 1]
            a2 = (N_h / n_1h) ** 2
            fpc = N_h**2 * (1.0 - n_1h / N_h) / n_1h
            v3y, v3x, c3 = e2v3_terms(pop, h, n_1h, n_2h1, d, condition, aux_var)
            var_x += (M / m) * (fpc * comps.s2_x_h[h - 1] + a2 * v3x)
            cov_xy += (M / m) * (fpc * comps.s_xy_h[h - 1] + a2 * c3)
        if var_x <= 0:
            raise ValueError("degenerate auxiliary: var(xbar_n2) is zero")
        return RegressionCoefficient("beta_opt_pop", cov_xy / var_x)
    if rng is None:
        raise ValueError("Monte Carlo mode needs an rng")
    gen = rng.generator()
    yb = np.empty(replicates)
    xb = np.empty(replicates)
    for r in range(replicates):
        draw = run_atsd(pop, m, n_1h, n_2h1, d, condition, _GenRng(gen), aux_var=aux_var)
        yb[r] = ybar_n2(draw)
        xb[r] = xbar_n2(draw)
    v = float(np.var(xb, ddof=1))
    if v <= 0:
        raise ValueError("degenerate auxiliary: var(xbar_n2) is zero")
    return RegressionCoefficient("beta_opt_pop", float(np.cov(xb, yb, ddof=1)[0, 1]) / v)


class _GenRng:
    """Adapter: reuse one live Generator where a DrawRng is expected."""

    def __init__(self, gen):
        self._gen = gen

    def generator(self):
        return self._gen


# --- classical comparison estimators ----------------------------------------

def srs_mean(sample: SrsSample) -> EstimatorReport:
    return EstimatorReport(float(sample.y.mean()))


def two_stage_estimate(sample: TwoStageSample) -> EstimatorReport:
    total = math.fsum(
        sample.psu_sizes[i] * float(sample.psu_y[i].mean())
        for i in range(sample.m)
    )
    return EstimatorReport((sample.M / sample.m) * total / sample.N)


def regs_estimate(ds: DoubleSample) -> EstimatorReport:
    """Per-PSU regression with least-squares slope on the phase-2 sample."""
    total = 0.0
    slopes = []
    fallback = False
    for i in range(ds.m):
        x1 = ds.phase1_aux[i]
        x2 = ds.phase2_aux[i]
        y2 = ds.phase2_y[i]
        sxx = _cov1(x2, x2)
        eps = DEGENERACY_EPS * len(x2) * float(np.mean(x2**2)) if len(x2) else 0.0
        if sxx <= eps:
            b = 0.0
            fallback = True
        else:
            b = _cov1(x2, y2) / sxx
        slopes.append(b)
        total += ds.psu_sizes[i] * (float(y2.mean()) + b * (float(x1.mean()) - float(x2.mean())))
    est = (ds.M / ds.m) * total / ds.N
    coef = RegressionCoefficient("fixed", float(np.mean(slopes)), degenerate=fallback)
    return EstimatorReport(est, coef, fallback_used=fallback)
