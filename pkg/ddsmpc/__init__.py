"""Data-driven stochastic MPC with Hankel matrices and polynomial chaos expansions."""

__version__ = "0.1.0"
