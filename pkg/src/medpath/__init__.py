"""Correlation-guided Bayesian pathway selection for high-dimensional mediation."""
from .glm import Family, OutcomeFamily
from .model import Dataset, FACovariance, MediatorParams, OutcomeParams
from .priors import MrfGraph, PriorConfig
from .sampler import ChainOutput, McmcConfig, ModelState, run_chain, run_chains

__version__ = "0.1.0"
