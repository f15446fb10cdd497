"""Inference for SIS epidemics on dynamic contact networks with graph-coupled HMMs."""

from .data import (MISSING, BetaHyperParams, Covariates, DynamicNetwork, PersonIndex, ProblemDims,
                   exposure_counts, infectious_sources, pca_reduce)
from .errors import ConflictError, DomainError, GchmmError, IntegrityError, NumericalError, ParseError
from .model import (InfectionParams, LinkCoefficients, SimConfig, beta_exp_link_draw, infection_probability,
                    mask_missing, sigmoid_link, simulate, transition_prob)

__all__ = [
    "MISSING", "BetaHyperParams", "Covariates", "DynamicNetwork", "PersonIndex", "ProblemDims", "exposure_counts",
    "infectious_sources", "pca_reduce", "ConflictError", "DomainError", "GchmmError", "IntegrityError",
    "NumericalError", "ParseError", "InfectionParams", "LinkCoefficients", "SimConfig", "beta_exp_link_draw",
    "infection_probability", "mask_missing", "sigmoid_link", "simulate", "transition_prob",
]
__version__ = "0.1.0"
