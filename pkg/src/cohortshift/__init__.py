"""Cohort-shift-aware survival modelling.

Importance weighting from published summary statistics, KL-based shift
measurement and Kaplan-Meier-distance model selection for Cox models
evaluated across institutions.
"""

__version__ = "0.1.0"

from .cohort import (
    Cohort,
    CohortError,
    CovariateStat,
    HorizonSample,
    MetaSummary,
    PatientRecord,
    derive_horizon_outcomes,
    load_cohort,
    load_meta_summary,
    save_cohort,
    save_meta_summary,
)
from .density import DensityEstimate, KlReport, fit_kde, kde_density, kl_divergence, kl_from_samples, scott_bandwidth
from .evaluation import (
    CalibrationResult,
    NetBenefitCurve,
    calibration,
    decision_curve,
    ici,
    net_benefit,
    spearman,
    wilcoxon_signed_rank,
)
from .selection import ModelCard, SelectionRanking, cohort_distance, load_registry, rank_models
from .simulator import CohortSpec, GroundTruth, SpecError, simulate_cohort, true_density_ratio
from .survival import CoxModel, FitError, KmCurve, concordance, fit_cox, harrell_c, kaplan_meier, km_estimate, predict_risk
from .weights import (
    Strata,
    WeightError,
    WeightSet,
    concept_weights,
    covariate_weights,
    joint_weights,
    meta_strata_mass,
    simulate_meta_covariates,
    stratify,
)
from .suite import scenario_suite, suite_statistics
