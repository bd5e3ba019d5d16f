"""
Factorial Platform

Design and analysis of 2^K factorial experiments with binary outcomes under
finite-population, randomization-based inference.
"""

__version__ = "0.1.0"

from .design import FactorialDesign, build_contrast_matrix, treatment_index, unit_effects
from .estimation import GroupSummary, ObservedDataset, infer, neyman_se, summarize
from .nonlinear import estimate_logfe, estimate_logitfe, nonlinear_infer
from .platform import FactorialPlatform
from .population import PotentialOutcomesTable, construct_population, permute_population
from .power import VarianceGuess, allocate_optimal, power_curve, power_two_sided, sample_size
from .simulator import enumerate_randomizations, simulate

__all__ = [
    "FactorialDesign",
    "FactorialPlatform",
    "GroupSummary",
    "ObservedDataset",
    "PotentialOutcomesTable",
    "VarianceGuess",
    "allocate_optimal",
    "build_contrast_matrix",
    "construct_population",
    "enumerate_randomizations",
    "estimate_logfe",
    "estimate_logitfe",
    "infer",
    "neyman_se",
    "nonlinear_infer",
    "permute_population",
    "power_curve",
    "power_two_sided",
    "sample_size",
    "simulate",
    "summarize",
    "treatment_index",
    "unit_effects",
]
