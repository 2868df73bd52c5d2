"""Replicated design-comparison experiments.

One experiment fixes a population and an effort-matched plan, then runs R
independent replicates of each design arm. Replicate r of design k draws
from stream (master_seed, k, r), so results are reproducible bit-for-bit
regardless of worker count or execution order. Aggregation uses
compensated summation in replicate order.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional


from . import estimators as est
from .cost import EffortPlan
from .designs import Condition, run_ats, run_atsd, run_srswor_design, run_two_stage_double
from .enumeration import enumerate_design, exact_expectation, exact_mean_var, exact_moments
from .population import Population
from .rng import DrawRng, stream_id

__all__ = [
    "ExperimentConfig",
    "ExperimentTable",
    "ExperimentQualityError",
    "run_experiment",
    "aggregate",
    "efficiency",
    "enumerate_design",
    "exact_expectation",
    "exact_mean_var",
    "exact_moments",
]

ALL_ESTIMATORS = ("RegO", "Reg1", "Regopt", "Regb1", "ATS", "Regs", "ybar_s")

ESTIMATOR_DESIGN = {
    "RegO": "atsd",
    "Reg1": "atsd",
    "Regopt": "atsd",
    "Regb1": "atsd",
    "ATS": "ats",
    "Regs": "two_stage_double",
    "ybar_s": "srswor",
}

_STREAM_ATSD = 1
_STREAM_ATS = 2
_STREAM_REGS = 3
_STREAM_SRS = 4
_STREAM_BETA_O = 5


class ExperimentQualityError(RuntimeError):
    """More than the tolerated fraction of replicates errored."""


@dataclass
class ExperimentConfig:
    population: Population
    plan: EffortPlan
    condition: Condition
    aux_var: str = "x"
    ats_condition: Condition = field(default_factory=lambda: Condition("y"))
    replicates: int = 10_000
    master_seed: int = 0
    estimators: tuple = ALL_ESTIMATORS
    beta_1: Optional[float] = None  # None -> exact population slope
    beta_o: Optional[float] = None  # None -> compute per beta_o_mode
    beta_o_mode: str = "auto"
    beta_o_replicates: int = 100_000
    max_error_fraction: float = 0.01

    def validate(self):
        if self.replicates < 1:
            raise ValueError("need at least one replicate")
        if not self.estimators:
            raise ValueError("estimator list is empty")
        unknown = set(self.estimators) - set(ALL_ESTIMATORS)
        if unknown:
            raise ValueError(f"unknown estimators: {sorted(unknown)}")


@dataclass
class TableRow:
    estimator: str
    design: str
    mean: float
    variance: float
    bias: float
    mse: float
    eff: Optional[float]
    rbias: Optional[float]
    fallback_rate: float
    mean_cost: float
    se_mean: float
    se_mse: float
    se_eff: Optional[float]


@dataclass
class ExperimentTable:
    rows: list
    ybar_true: float
    replicates: int
    reference: str = "ybar_s"
    meta: dict = field(default_factory=dict)

    def row(self, name: str) -> TableRow:
        for r in self.rows:
            if r.estimator == name:
                return r
        raise KeyError(name)

    CSV_FIELDS = (
        "estimator", "design", "mean", "variance", "bias", "mse", "eff",
        "rbias", "fallback_rate", "mean_cost", "se_mean", "se_mse", "se_eff",
    )

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f)
            w.writerow(self.CSV_FIELDS)
            for r in self.rows:
                w.writerow([
                    r.estimator, r.design,
                    *(_fmt(getattr(r, k)) for k in self.CSV_FIELDS[2:]),
                ])

    def to_text(self) -> str:
        headers = ("estimator", "design", "eff", "rbias", "mean", "mse",
                   "fallback", "mean_cost")
        lines = [
            f"Ybar_N = {self.ybar_true:.6g}   R = {self.replicates}   "
            f"reference = {self.reference}"
        ]
        table = [headers]
        for r in self.rows:
            table.append((
                r.estimator, r.design,
                _fmt(r.eff, "%.3f"), _fmt(r.rbias, "%.3f"),
                _fmt(r.mean, "%.4g"), _fmt(r.mse, "%.4g"),
                _fmt(r.fallback_rate, "%.3f"), _fmt(r.mean_cost, "%.4g"),
            ))
        widths = [max(len(row[c]) for row in table) for c in range(len(headers))]
        for row in table:
            lines.append(" | ".join(v.rjust(w) for v, w in zip(row, widths)))
        return "\n".join(lines) + "\n"


def _fmt(v, spec="%.12g") -> str:
    if v is None:
        return ""
    return spec % v


def efficiency(reference_variance: float, mse: float) -> Optional[float]:
    """var(reference) / MSE; None (undefined) when the MSE is zero."""
    if mse == 0.0:
        return None
    return reference_variance / mse


@dataclass
class _ReplicateResult:
    estimates: dict  # name -> float
    fallbacks: dict  # name -> bool
    costs: dict  # design -> realized cost
    capped: bool = False


def _run_replicate(cfg: ExperimentConfig, beta_1, beta_o, r: int) -> _ReplicateResult:
    pop, plan = cfg.population, cfg.plan
    c_aux, c_tar = plan.cost.c_aux, plan.cost.c_tar
    names = set(cfg.estimators)
    estimates, fallbacks, costs = {}, {}, {}
    capped = False

    if names & {"RegO", "Reg1", "Regopt", "Regb1"}:
        draw = run_atsd(pop, plan.m, plan.n_1h, plan.n_2h1, plan.d,
                        cfg.condition, DrawRng(cfg.master_seed, stream_id(_STREAM_ATSD, r)),
                        aux_var=cfg.aux_var)
        capped = any(s.capped for s in draw.psu_samples)
        costs["atsd"] = c_aux * draw.n_aux + c_tar * draw.n_target
        reports = {}
        if "RegO" in names:
            reports["RegO"] = est.mu_reg(draw, beta_o)
        if "Reg1" in names:
            reports["Reg1"] = est.mu_reg(draw, beta_1)
        if "Regopt" in names:
            reports["Regopt"] = est.mu_reg(draw, est.beta_opt_hat(draw))
        if "Regb1" in names:
            reports["Regb1"] = est.mu_reg(draw, est.beta1_hat(draw))
        for k, rep in reports.items():
            estimates[k] = rep.estimate
            fallbacks[k] = rep.fallback_used

    if "ATS" in names:
        draw = run_ats(pop, plan.m, plan.ats_n1, plan.ats_d1,
                       DrawRng(cfg.master_seed, stream_id(_STREAM_ATS, r)),
                       condition=cfg.ats_condition)
        costs["ats"] = c_tar * draw.n_target
        estimates["ATS"] = est.ybar_n2(draw)
        fallbacks["ATS"] = False

    if "Regs" in names:
        ds = run_two_stage_double(pop, plan.m, plan.n_1h, plan.regs_n_ytR,
                                  DrawRng(cfg.master_seed, stream_id(_STREAM_REGS, r)),
                                  aux_var=cfg.aux_var)
        costs["two_stage_double"] = c_aux * ds.n_aux + c_tar * ds.n_target
        rep = est.regs_estimate(ds)
        estimates["Regs"] = rep.estimate
        fallbacks["Regs"] = rep.fallback_used

    if "ybar_s" in names:
        s = run_srswor_design(pop, plan.srs_n,
                              DrawRng(cfg.master_seed, stream_id(_STREAM_SRS, r)))
        costs["srswor"] = c_tar * s.n_target
        estimates["ybar_s"] = est.srs_mean(s).estimate
        fallbacks["ybar_s"] = False

    return _ReplicateResult(estimates, fallbacks, costs, capped)


def resolve_coefficients(cfg: ExperimentConfig):
    """Population regression coefficients used by RegO / Reg1."""
    beta_1 = beta_o = None
    if "Reg1" in cfg.estimators:
        if cfg.beta_1 is not None:
            beta_1 = est.RegressionCoefficient("beta1_pop", cfg.beta_1)
        else:
            beta_1 = est.beta_pop(cfg.population, cfg.aux_var)
    if "RegO" in cfg.estimators:
        if cfg.beta_o is not None:
            beta_o = est.RegressionCoefficient("beta_opt_pop", cfg.beta_o)
        else:
            plan = cfg.plan
            beta_o = est.beta_opt_pop(
                cfg.population, m=plan.m, n_1h=plan.n_1h, n_2h1=plan.n_2h1,
                d=plan.d, condition=cfg.condition, aux_var=cfg.aux_var,
                mode=cfg.beta_o_mode,
                rng=DrawRng(cfg.master_seed, stream_id(_STREAM_BETA_O, 0)),
                replicates=cfg.beta_o_replicates,
            )
    return beta_1, beta_o


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentTable:
    cfg.validate()
    beta_1, beta_o = resolve_coefficients(cfg)
    R = cfg.replicates
    results: list = [None] * R
    errors = 0

    def work(r):
        try:
            return _run_replicate(cfg, beta_1, beta_o, r)
        except (ValueError, ArithmeticError) as exc:
            return exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            for r, out in enumerate(ex.map(work, range(R))):
                results[r] = out
    else:
        for r in range(R):
            results[r] = work(r)

    good = []
    for out in results:
        if isinstance(out, _ReplicateResult):
            good.append(out)
        else:
            errors += 1
    if errors > cfg.max_error_fraction * R:
        raise ExperimentQualityError(
            f"{errors}/{R} replicates errored (> {cfg.max_error_fraction:.0%}); "
            f"first error: {next(e for e in results if not isinstance(e, _ReplicateResult))}"
        )

    table = aggregate(good, cfg.population.mean("y"), estimators=cfg.estimators)
    table.meta.update(
        errors=errors,
        cap_rate=math.fsum(1.0 for g in good if g.capped) / len(good),
        beta_1=None if beta_1 is None else beta_1.value,
        beta_o=None if beta_o is None else beta_o.value,
        master_seed=cfg.master_seed,
    )
    return table


def aggregate(results, ybar_true: float, estimators=ALL_ESTIMATORS,
              reference: str = "ybar_s") -> ExperimentTable:
    """Order-independent reduction of per-replicate results into a table."""
    if not results:
        raise ValueError("no replicate results to aggregate")
    R = len(results)
    stats = {}
    for name in estimators:
        vals = [res.estimates[name] for res in results if name in res.estimates]
        if not vals:
            continue
        n = len(vals)
        mean = math.fsum(vals) / n
        var = math.fsum((v - mean) ** 2 for v in vals) / (n - 1) if n > 1 else 0.0
        bias = mean - ybar_true
        mse = var + bias * bias
        sq_err = [(v - ybar_true) ** 2 for v in vals]
        mse_mean = math.fsum(sq_err) / n
        se_mse = (
            math.sqrt(math.fsum((q - mse_mean) ** 2 for q in sq_err) / (n - 1) / n)
            if n > 1 else 0.0
        )
        design = ESTIMATOR_DESIGN[name]
        fb = math.fsum(1.0 for res in results if res.fallbacks.get(name, False)) / n
        cost = math.fsum(res.costs[design] for res in results if design in res.costs) / n
        stats[name] = dict(
            design=design, mean=mean, variance=var, bias=bias, mse=mse,
            fallback_rate=fb, mean_cost=cost,
            se_mean=math.sqrt(var / n), se_mse=se_mse,
        )

    ref_var = stats[reference]["variance"] if reference in stats else None
    ref_se = stats[reference]["se_mse"] if reference in stats else 0.0
    rows = []
    for name in estimators:
        if name not in stats:
            continue
        s = stats[name]
        eff = efficiency(ref_var, s["mse"]) if ref_var is not None else None
        se_eff = None
        if eff is not None and s["mse"] > 0 and ref_var > 0:
            rel = math.hypot(s["se_mse"] / s["mse"], ref_se / ref_var)
            se_eff = abs(eff) * rel
        rbias = s["bias"] / ybar_true if ybar_true != 0 else None
        rows.append(TableRow(
            estimator=name, design=s["design"], mean=s["mean"],
            variance=s["variance"], bias=s["bias"], mse=s["mse"], eff=eff,
            rbias=rbias, fallback_rate=s["fallback_rate"],
            mean_cost=s["mean_cost"], se_mean=s["se_mean"],
            se_mse=s["se_mse"], se_eff=se_eff,
        ))
    return ExperimentTable(rows, ybar_true, R, reference=reference)


def write_replicate_csv(results, path, estimators=ALL_ESTIMATORS) -> None:
    """Per-replicate estimate rows (the EstimatorReport CSV interface)."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["replicate", "design", "estimator", "estimate",
                    "var_hat", "fallback", "coefficient"])
        for r, res in enumerate(results):
            for name in estimators:
                if name not in res.estimates:
                    continue
                w.writerow([
                    r, ESTIMATOR_DESIGN[name], name,
                    _fmt(res.estimates[name]), "",
                    int(res.fallbacks.get(name, False)), "",
                ])
