"""Adaptive two-stage sequential double sampling (ATSD).

Finite-population sampling designs for rare, clustered populations,
regression-type estimators built on Murthy totals, exact and sample-based
variance formulas, effort-matched cost comparison, and a replicated
Monte Carlo harness with an exhaustive enumeration oracle for testing.
"""

__version__ = "0.1.0"

from .population import (
    Population,
    PopulationSpec,
    AuxiliaryModel,
    PopulationStats,
    generate_population,
    compute_stats,
    population_variance_components,
    save_population,
    load_population,
)
from .rng import DrawRng
from .designs import (
    Condition,
    PsuAdaptiveSample,
    AtsdSample,
    srswor,
    sequential_expand,
    run_atsd,
    run_ats,
    run_two_stage,
    run_two_stage_double,
    run_srswor_design,
)
from .cost import CostSpec, EffortPlan, expected_ny, build_effort_plan
from .montecarlo import ExperimentConfig, ExperimentTable, run_experiment
