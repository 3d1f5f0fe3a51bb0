"""Query-efficient counterfactual explanations for black-box binary classifiers.

A Laplace-approximated GP classifier stands in for the black box; a penalty
method drives Monte-Carlo expected-improvement queries toward the decision
boundary, and a Sobol scan of the surrogate proposes the counterfactual.
"""

from .blackbox import BlackBox, FunctionBlackBox, KnnBlackBox, SubprocessBlackBox, fit_reference_classifier
from .cost import INFEASIBLE, CostParams, LofIndex, affinity, cost_j, lof_score
from .engine import CfeResult, EngineConfig, run
from .errors import AceError, NoValidCfe
from .gp import GpModel, Kernel, fit_laplace, predict_prob
from .growing_spheres import GsConfig, run_gs
from .schema import Dataset, FeatureSchema, FeatureSpec, load_csv, load_schema

__all__ = [
    "AceError", "BlackBox", "CfeResult", "CostParams", "Dataset", "EngineConfig", "FeatureSchema",
    "FeatureSpec", "FunctionBlackBox", "GpModel", "GsConfig", "INFEASIBLE", "Kernel", "KnnBlackBox",
    "LofIndex", "NoValidCfe", "SubprocessBlackBox", "affinity", "cost_j", "fit_laplace",
    "fit_reference_classifier", "load_csv", "load_schema", "lof_score", "predict_prob", "run",
    "run_gs",
]
