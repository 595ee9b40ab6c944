"""Coding-rate optimization and validation tools for multi-processor AMP.

Subpackages cover the Bayes denoiser and its MSE (``priors``), quantizer
and rate-distortion models (``ratedist``), state evolution with and
without quantization noise (``state_evolution``), the dynamic-programming
rate scheduler (``scheduler``), the Monte Carlo protocol simulator
(``simulator``), Pareto trade-off analysis (``tradeoff``), statistical
independence diagnostics for quantization error (``independence``), and a
command-line front end (``cli``).
"""

from .priors import (
    GaussianMixture,
    Prior,
    ScalarChannel,
    denoise,
    denoiser_mse,
    denoiser_mse_slope,
    second_moment,
)

__version__ = "0.1.0"

__all__ = [
    "GaussianMixture",
    "Prior",
    "ScalarChannel",
    "denoise",
    "denoiser_mse",
    "denoiser_mse_slope",
    "second_moment",
    "__version__",
]
