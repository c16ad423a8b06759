"""Discounting from hazard priors, and learning it from many exponential discounts.

Submodules:

``discounting``   priors, survival curves, discount functions, weight densities
``ladder``        the finite set of discount factors to learn
``aggregation``   Riemann-sum weights combining per-gamma values
``mdp``           episodic MDPs under hazard, DP oracles, Pathworld, gridworld
``agents``        multi-horizon Q-learning and prioritised replay
``harness``       seeded experiments and CSV artifacts
"""

from .aggregation import AggregationWeights, aggregate, discount_curve, riemann_weights, truncation_error
from .discounting import (
    DiscountSpec,
    HazardPrior,
    WeightDensity,
    discount_value,
    gamma_to_hazard,
    hazard_to_gamma,
    survival_from_prior,
    weight_density,
)
from .errors import (
    ConfigurationError,
    DiscountRangeError,
    DomainError,
    HazardDiscountError,
    NumericError,
    ParameterError,
    ShapeError,
)
from .ladder import GammaLadder, build_ladder

__version__ = "0.1.0"

__all__ = [
    "AggregationWeights",
    "ConfigurationError",
    "DiscountRangeError",
    "DiscountSpec",
    "DomainError",
    "GammaLadder",
    "HazardDiscountError",
    "HazardPrior",
    "NumericError",
    "ParameterError",
    "ShapeError",
    "WeightDensity",
    "aggregate",
    "build_ladder",
    "discount_curve",
    "discount_value",
    "gamma_to_hazard",
    "hazard_to_gamma",
    "riemann_weights",
    "survival_from_prior",
    "truncation_error",
    "weight_density",
]
