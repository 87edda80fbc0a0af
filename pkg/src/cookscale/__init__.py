"""Deletion influence diagnostics with bootstrap scaling.

Exact and first-order Cook's distances for Gaussian linear and random
intercept models, a closed-form perturbation degree per deleted block,
and a parametric bootstrap that standardizes distances so subsets of
different sizes can be compared.
"""

from .approx import (
    FirstOrderPieces,
    expected_cd_trace,
    first_order_cd,
    lm_pieces,
    lmm_pieces,
    qf_moments,
)
from .bootstrap import (
    BootstrapSummary,
    InfluenceProbabilities,
    ZStructure,
    bootstrap_summaries,
    influence_probabilities,
    scaled_distances,
    simulate_replicate,
    summarize_replicates,
)
from .data import ClusteredData, CrossSectionData
from .deletion import (
    DeletionGeometry,
    SubsetIndex,
    cd_spectral,
    cook_distance,
    cook_lm_closed,
    deletion_geometry,
    enumerate_subsets,
    lm_beta_downdate,
    make_subset,
    refit_without,
)
from .estimators import CookInfluence, OLSModel, RandomInterceptModel
from .exceptions import (
    CookscaleError,
    DegenerateReplicates,
    DegenerateVariance,
    DimensionMismatch,
    LeverageOne,
    NonConvergenceWarning,
    NonIdentifiable,
    NotGaussianModel,
    NotInvertible,
    NumericalError,
    RankDeficientDesign,
    SingularCovariance,
    SubsetTooLarge,
    ValidationError,
    ZeroSpread,
)
from .fitting import LmmWorkspace, fit_lmm_em, fit_ols
from .information import InformationParts, information_matrices, total_loglik, unit_loglik
from .io import (
    read_clustered,
    read_cross_section,
    read_subsets,
    write_clustered,
    write_cross_section,
)
from .params import FitResult, ThetaLM, ThetaLMM, beta_selector
from .perturbation import (
    PerturbationSpec,
    PerturbationValue,
    beta_prior_cov,
    lmm_cluster_grams,
    perturb_additive,
    perturb_lm_fixed,
    perturb_lm_random,
    perturb_lmm_cluster,
    perturb_mc,
)
from .report import CookReport, CookReportRow, build_report, report_to_csv, report_to_json, write_report
from .simulate import ScenarioConfig, gen_scenario
from .experiments import Table1Result, run_figure1, run_table1

__version__ = "0.1.0"

__all__ = [
    "BootstrapSummary",
    "ClusteredData",
    "CookInfluence",
    "CookReport",
    "CookReportRow",
    "CookscaleError",
    "CrossSectionData",
    "DegenerateReplicates",
    "DegenerateVariance",
    "DeletionGeometry",
    "DimensionMismatch",
    "FirstOrderPieces",
    "FitResult",
    "InfluenceProbabilities",
    "InformationParts",
    "LeverageOne",
    "LmmWorkspace",
    "NonConvergenceWarning",
    "NonIdentifiable",
    "NotGaussianModel",
    "NotInvertible",
    "NumericalError",
    "OLSModel",
    "PerturbationSpec",
    "PerturbationValue",
    "RandomInterceptModel",
    "RankDeficientDesign",
    "ScenarioConfig",
    "SingularCovariance",
    "SubsetIndex",
    "SubsetTooLarge",
    "Table1Result",
    "ThetaLM",
    "ThetaLMM",
    "ValidationError",
    "ZStructure",
    "ZeroSpread",
    "beta_prior_cov",
    "beta_selector",
    "bootstrap_summaries",
    "build_report",
    "cd_spectral",
    "cook_distance",
    "cook_lm_closed",
    "deletion_geometry",
    "enumerate_subsets",
    "expected_cd_trace",
    "first_order_cd",
    "fit_lmm_em",
    "fit_ols",
    "gen_scenario",
    "influence_probabilities",
    "information_matrices",
    "lm_beta_downdate",
    "lm_pieces",
    "lmm_cluster_grams",
    "lmm_pieces",
    "make_subset",
    "perturb_additive",
    "perturb_lm_fixed",
    "perturb_lm_random",
    "perturb_lmm_cluster",
    "perturb_mc",
    "qf_moments",
    "read_clustered",
    "read_cross_section",
    "read_subsets",
    "refit_without",
    "report_to_csv",
    "report_to_json",
    "run_figure1",
    "run_table1",
    "scaled_distances",
    "simulate_replicate",
    "summarize_replicates",
    "total_loglik",
    "unit_loglik",
    "write_clustered",
    "write_cross_section",
    "write_report",
]
