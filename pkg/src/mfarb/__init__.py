"""Simulation and equilibrium solving for relative-arbitrage mean-field games."""

__version__ = "0.1.0"

from .errors import (BandViolation, ConfigError, DegeneracyError, DivergenceError, MfarbError, NumericalError,
                     SingularityError, UniquenessWarning)
from .model import (CoefficientSet, GameConfig, InvestorType, MarketState, TypeLaw, benchmark_portfolio,
                    benchmark_value, validate_config)

__all__ = [
    "BandViolation", "CoefficientSet", "ConfigError", "DegeneracyError", "DivergenceError", "GameConfig",
    "InvestorType", "MarketState", "MfarbError", "NumericalError", "SingularityError", "TypeLaw",
    "UniquenessWarning", "benchmark_portfolio", "benchmark_value", "validate_config",
]
