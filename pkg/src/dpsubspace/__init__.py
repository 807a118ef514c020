"""Differentially private estimation of low-dimensional subspaces."""

from dpsubspace.approx import ApproxConfig, dpase, dpaseb
from dpsubspace.exact import ExactConfig, dpese
from dpsubspace.linalg import ProjectionMatrix, projector_distance, projector_of
from dpsubspace.mechanisms import NULL, PrivacyParams

__all__ = [
    "ApproxConfig",
    "ExactConfig",
    "NULL",
    "PrivacyParams",
    "ProjectionMatrix",
    "dpase",
    "dpaseb",
    "dpese",
    "projector_distance",
    "projector_of",
]
