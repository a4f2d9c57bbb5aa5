"""Neighbor relations, graphs and heat kernels on Delone sets."""

from .exceptions import DeloneHeatException, InvalidInputError, NumericalError, VerificationFailure

__all__ = ["DeloneHeatException", "InvalidInputError", "NumericalError", "VerificationFailure"]
