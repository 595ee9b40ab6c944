"""Statistical checks that quantization error behaves like independent noise.

Simulates the per-node scalar channel f^p = x / P + w^p, quantizes it
with a uniform midpoint quantizer of bin size gamma, fuses the P nodes,
and runs Pearson correlation tests on (w, n) and (w + n, x), where w and
n are the fused channel noise and quantization error.  Repeating each
cell of a (gamma, sigma^p) grid many times yields rejection-fraction
maps whose light region (both fractions near the test size) marks where
the additive-independent-noise model of quantization is trustworthy;
empirically that is the region gamma < 2 sigma^p.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import t as t_dist

__all__ = ["PccResult", "IndependenceGrid", "pcc_test", "rejection_grid",
           "calibration_rejection"]


@dataclass(frozen=True)
class PccResult:
    r: float
    p_value: float
    reject: bool


def pcc_test(u, v, alpha=0.05):
    """Pearson correlation test of the null 'uncorrelated'.

    The p-value uses the exact null distribution via the monotone map
    t = r * sqrt((n - 2) / (1 - r^2)) with n - 2 degrees of freedom.
    Inputs must have positive variance and at least 8 entries.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape or u.ndim != 1 or u.size < 8:
        raise ValueError("need equal-length 1-D inputs with at least 8 entries")
    du = u - u.mean()
    dv = v - v.mean()
    su = float(np.sqrt(np.dot(du, du)))
    sv = float(np.sqrt(np.dot(dv, dv)))
    if su == 0.0 or sv == 0.0:
        raise ValueError("zero-variance input; correlation undefined")
    r = float(np.clip(np.dot(du, dv) / (su * sv), -1.0, 1.0))
    n = u.size
    if abs(r) >= 1.0:
        p = 0.0
    else:
        t = r * math.sqrt((n - 2) / (1.0 - r * r))
        p = 2.0 * float(t_dist.sf(abs(t), n - 2))
    return PccResult(r=r, p_value=p, reject=p < alpha)


@dataclass(frozen=True)
class IndependenceGrid:
    """Cell layout and per-cell budget for the rejection maps."""

    gammas: tuple = tuple(2.0 ** (-k) for k in range(0, 11))
    sigmas: tuple = tuple(10.0 ** e for e in np.arange(-0.5, -4.25, -0.5))
    trials: int = 100
    n: int = 10_000
    nodes: int = 100

    def __post_init__(self):
        if self.trials < 1 or self.n < 8 or self.nodes < 1:
            raise ValueError("invalid grid budget")


def rejection_grid(prior, grid, seed):
    """Rejection-fraction maps over the (gamma, sigma^p) grid.

    Returns a dict with two (n_sigmas, n_gammas) arrays: the fraction of
    trials rejecting 'w uncorrelated with n' and 'w + n uncorrelated with
    x'.  Cells where the quantization error degenerates to zero variance
    are NaN and counted separately.
    """
    gammas = np.asarray(grid.gammas, dtype=float)
    sigmas = np.asarray(grid.sigmas, dtype=float)
    P = grid.nodes
    frac_wn = np.full((sigmas.size, gammas.size), np.nan)
    frac_wnx = np.full((sigmas.size, gammas.size), np.nan)
    degenerate = 0
    root = np.random.SeedSequence([0x1AB5, int(seed)])
    cell_seeds = root.spawn(sigmas.size * gammas.size)
    for si, sigma_p in enumerate(sigmas):
        for gi, gamma in enumerate(gammas):
            rng = np.random.default_rng(cell_seeds[si * gammas.size + gi])
            rej_wn = rej_wnx = 0
            bad = 0
            for _ in range(grid.trials):
                x = prior.sample(rng, grid.n)
                w_p = sigma_p * rng.standard_normal((P, grid.n))
                f_p = x[None, :] / P + w_p
                q = np.round(f_p / gamma) * gamma
                n_p = q - f_p
                w = w_p.sum(axis=0)
                n_t = n_p.sum(axis=0)
                try:
                    rej_wn += pcc_test(w, n_t).reject
                    rej_wnx += pcc_test(w + n_t, x).reject
                except ValueError:
                    bad += 1
            good = grid.trials - bad
            if good == 0:
                degenerate += 1
                continue
            frac_wn[si, gi] = rej_wn / good
            frac_wnx[si, gi] = rej_wnx / good
    return {
        "gammas": gammas,
        "sigmas": sigmas,
        "reject_wn": frac_wn,
        "reject_wnx": frac_wnx,
        "admissible": gammas[None, :] < 2.0 * sigmas[:, None],
        "degenerate_cells": degenerate,
    }


def calibration_rejection(reps=1000, n=10_000, seed=0, alpha=0.05):
    """Empirical size of the test on genuinely independent Gaussian pairs."""
    rng = np.random.default_rng(np.random.SeedSequence([0xCA11, int(seed)]))
    rejections = 0
    for _ in range(reps):
        u = rng.standard_normal(n)
        v = rng.standard_normal(n)
        rejections += pcc_test(u, v, alpha=alpha).reject
    return rejections / reps
