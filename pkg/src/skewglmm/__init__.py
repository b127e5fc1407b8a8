"""Skew-normal copula mixed models for positive longitudinal responses."""

from .copula import joint_density, joint_logdensity, latent_structure, sample_response, to_latent
from .data import LongitudinalDataset, ModelParams, Unit
from .marginals import MarginalSpec
from .mcem import FitResult, McemConfig, fit
from .simgen import DesignSpec, generate
from .skewnormal import DomainError

__all__ = [
    "DesignSpec",
    "DomainError",
    "FitResult",
    "LongitudinalDataset",
    "MarginalSpec",
    "McemConfig",
    "ModelParams",
    "Unit",
    "fit",
    "generate",
    "joint_density",
    "joint_logdensity",
    "latent_structure",
    "sample_response",
    "to_latent",
]
