"""Variational Bayesian neural networks with hypernetwork posteriors."""

from .errors import ConfigError, ContractError, DimensionError, FormatError, TrainingError

__version__ = "0.1.0"

__all__ = ["ConfigError", "ContractError", "DimensionError", "FormatError", "TrainingError", "__version__"]
