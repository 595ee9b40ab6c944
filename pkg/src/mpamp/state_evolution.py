"""State evolution for centralized and quantized multi-processor AMP.

The scalar-channel noise variance of AMP evolves as
``sigma_{t+1}^2 = sigma_Z^2 + MSE(eta, sigma_t^2) / kappa``.  When the
fusion center receives lossily compressed messages from P nodes, each
incurring per-entry distortion D_t, the denoiser input variance inflates
by P * D_t and the same recursion applies to the inflated variance.  This
module provides both recursions, schedule roll-outs, and the fixed point
with its local contraction slope theta, whose value sets the asymptotic
per-iteration growth of optimal coding rates at 0.5 * log2(1/theta) bits.
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import NumericalError
from .priors import Prior, denoiser_mse, denoiser_mse_slope, second_moment

__all__ = [
    "SystemConfig",
    "SEState",
    "FixedPoint",
    "se_step",
    "lossy_se_step",
    "run_schedule",
    "fixed_point",
    "emse_db",
]


@dataclass(frozen=True)
class SystemConfig:
    """Problem instance: prior, measurement rate, noise level, node count."""

    prior: Prior
    kappa: float
    sigma_z2: float
    nodes: int = 100

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("measurement rate kappa must be positive")
        if self.sigma_z2 <= 0:
            raise ValueError("measurement noise variance must be positive")
        if self.nodes < 1:
            raise ValueError("node count must be at least 1")

    @property
    def signal_power(self):
        return second_moment(self.prior)

    @property
    def initial_sigma2(self):
        """Scalar-channel variance at the first iteration; the all-zero
        initial estimate leaves the full signal power unexplained."""
        return self.sigma_z2 + self.signal_power / self.kappa


@dataclass(frozen=True)
class SEState:
    """One point of a state-evolution trajectory."""

    t: int
    sigma2: float
    mse: float
    emse: float
    rate: float = field(default=float("nan"))
    distortion: float = field(default=float("nan"))


@dataclass(frozen=True)
class FixedPoint:
    """Converged state of the noiseless-message recursion."""

    sigma_inf2: float
    mmse: float
    theta: float
    growth: float


def se_step(config, sigma2):
    """One noiseless-message state-evolution step."""
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    return config.sigma_z2 + denoiser_mse(config.prior, sigma2) / config.kappa


def lossy_se_step(config, sigma2, distortion):
    """One state-evolution step with fused quantization distortion.

    The P per-node errors are independent, so the fusion-center signal
    carries P * distortion of extra variance on top of sigma2.
    """
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    if distortion < 0:
        raise ValueError("distortion must be nonnegative")
    inflated = sigma2 + config.nodes * distortion
    return config.sigma_z2 + denoiser_mse(config.prior, inflated) / config.kappa


@lru_cache(maxsize=64)
def fixed_point(config, rel_tol=1e-12, max_iter=10_000):
    """Iterate the noiseless recursion to convergence.

    Forward iteration (rather than root finding) lands on the fixed point
    that AMP itself reaches when several exist.  theta is the slope of the
    scaled MSE map at the fixed point and must lie in (0, 1).
    """
    sigma2 = config.initial_sigma2
    rel = math.inf
    for _ in range(max_iter):
        nxt = se_step(config, sigma2)
        rel = abs(nxt - sigma2) / sigma2
        sigma2 = nxt
        if rel < rel_tol:
            break
    else:
        if rel > 1e-9:
            raise NumericalError(
                f"state evolution did not converge: relative change {rel:.3e} "
                f"after {max_iter} iterations"
            )
    mmse = denoiser_mse(config.prior, sigma2)
    theta = denoiser_mse_slope(config.prior, sigma2) / config.kappa
    if not 0.0 < theta < 1.0:
        raise NumericalError(f"contraction slope theta={theta:.6f} outside (0, 1)")
    return FixedPoint(
        sigma_inf2=sigma2,
        mmse=mmse,
        theta=theta,
        growth=0.5 * math.log2(1.0 / theta),
    )


def emse_db(mse, mmse):
    """Excess MSE expressed as decibels above the MMSE floor."""
    return 10.0 * math.log10(mse / mmse)


def run_schedule(config, rates, rd=None):
    """Roll out state evolution for a coding-rate schedule.

    ``rates`` may contain ``inf`` (lossless transmission, zero distortion)
    and ``0`` (idle round: nothing is computed or sent, the state passes
    through unchanged).  Positive finite rates require ``rd``, an object
    exposing ``distortion_for_rate(rate, sigma2)`` for the per-node source
    at the current state.  Returns a list of SEState; an empty schedule
    returns a single entry describing the all-zero estimate.
    """
    fp = fixed_point(config)
    power = config.signal_power
    rates = list(rates)
    if not rates:
        return [SEState(t=0, sigma2=config.initial_sigma2, mse=power,
                        emse=power - fp.mmse, rate=0.0, distortion=0.0)]
    sigma2 = config.initial_sigma2
    mse_prev = power
    out = []
    for t, rate in enumerate(rates, start=1):
        if rate < 0:
            raise ValueError("rates must be nonnegative")
        if rate == 0.0:
            out.append(SEState(t=t, sigma2=sigma2, mse=mse_prev,
                               emse=mse_prev - fp.mmse, rate=0.0, distortion=0.0))
            continue
        if math.isinf(rate):
            dist = 0.0
        else:
            dist = float(rd.distortion_for_rate(rate, sigma2))
        inflated = sigma2 + config.nodes * dist
        mse = denoiser_mse(config.prior, inflated)
        out.append(SEState(t=t, sigma2=sigma2, mse=mse, emse=mse - fp.mmse,
                           rate=float(rate), distortion=dist))
        sigma2 = config.sigma_z2 + mse / config.kappa
        mse_prev = mse
    return out
