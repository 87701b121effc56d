"""Sequential search models: simulation, pairwise maximum rank estimation,
sieve estimation of the inverse marginal benefit, simulated likelihood and
subsampling inference."""
from .domain import SPEC_VERSION, EstimateReport, PairOutcomeTable, SearchRecord, config_hash
from .model_core import CostOutOfRange, MatchValueDist, ginv, marginal_benefit, reservation_utility
from .pmr import InsufficientData, Normalization, PmrConfig, SmoothingSpec, estimate_pmr
from .simulator import MarketConfig, construct_outcomes, generate_market, simulate_search

__all__ = [
    "SPEC_VERSION", "EstimateReport", "PairOutcomeTable", "SearchRecord", "config_hash",
    "CostOutOfRange", "MatchValueDist", "ginv", "marginal_benefit", "reservation_utility",
    "InsufficientData", "Normalization", "PmrConfig", "SmoothingSpec", "estimate_pmr",
    "MarketConfig", "construct_outcomes", "generate_market", "simulate_search",
]
__version__ = "0.1.0"
