"""Targeting policies learned from differentially private aggregate queries."""

from .acquisition import AFConfig, empirical_af, select_next, value_of_querying
from .evaluation import EvaluationReport, evaluate_ipw, ipw_lift, ipw_value, oracle_fraction
from .gp import GPHyperparams, GPState, RegionObservation, avg_kernel, condition, empty_state, posterior_region
from .hyperfit import FitConfig, fit_hyperparams
from .ingest import CSVSchema, collapse_features, ingest_csv
from .oracle import PrivacyConfig, QueryRecord, execute_query, open_session
from .regions import Bounds, Dataset, Population, Region
from .simulation import DGPConfig, ExperimentSetting, ResultsTable, dominance_matrix, run_grid
from .strategies import StrategicRunConfig, TargetingPolicy, run_strategic, run_uniform

__version__ = "0.1.0"

__all__ = [
    "AFConfig", "empirical_af", "select_next", "value_of_querying",
    "EvaluationReport", "evaluate_ipw", "ipw_lift", "ipw_value", "oracle_fraction",
    "GPHyperparams", "GPState", "RegionObservation", "avg_kernel", "condition", "empty_state", "posterior_region",
    "FitConfig", "fit_hyperparams",
    "CSVSchema", "collapse_features", "ingest_csv",
    "PrivacyConfig", "QueryRecord", "execute_query", "open_session",
    "Bounds", "Dataset", "Population", "Region",
    "DGPConfig", "ExperimentSetting", "ResultsTable", "dominance_matrix", "run_grid",
    "StrategicRunConfig", "TargetingPolicy", "run_strategic", "run_uniform",
]
