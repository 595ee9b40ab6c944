"""Quantizers and rate-distortion models for per-node messages.

Each processor node observes the signal scaled by 1/P plus Gaussian noise
of variance sigma2/P, so the per-node source is itself a small Gaussian
mixture.  Three rate-distortion models are provided for it:

* ``ecsq`` - entropy-coded scalar quantization: a uniform quantizer with
  bin size gamma centered at zero, rate measured as the Shannon entropy
  of the bin index, reconstruction by bin centroid or midpoint;
* ``blahut_arimoto`` - the information-theoretic R(D) curve computed on a
  discretized alphabet, extended into the high-rate regime by the
  Shannon lower bound R(D) = h - 0.5*log2(2*pi*e*D);
* ``gaussian_highrate`` - the one-parameter asymptote R = 0.5*log2(C1/D).

Curves are tabulated monotonically and interpolated piecewise-linearly in
(rate, log distortion).  Because the per-node source changes with the
scalar-channel variance, each model also comes as a *family* indexed by
sigma2; families are what the scheduler and the trajectory roll-out use.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import NumericalError, RangeError
from .priors import GaussianMixture

__all__ = [
    "QuantizerSpec",
    "RDCurve",
    "node_source",
    "bin_size_limit",
    "bin_size_admissible",
    "ecsq_point",
    "ecsq_curve",
    "gaussian_highrate_rate",
    "gaussian_highrate_distortion",
    "blahut_arimoto",
    "discretize_source",
    "ba_curve",
    "differential_entropy_bits",
    "EcsqFamily",
    "BlahutArimotoFamily",
    "HighRateFamily",
    "make_family",
]

_TAIL_SIGMAS = 9.0
_TAIL_TOL = 1e-12


@dataclass(frozen=True)
class QuantizerSpec:
    """Uniform scalar quantizer: bin size and reconstruction rule."""

    gamma: float
    reconstruction: str = "centroid"

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("bin size gamma must be positive")
        if self.reconstruction not in ("centroid", "midpoint"):
            raise ValueError("reconstruction must be 'centroid' or 'midpoint'")


def node_source(prior, nodes, sigma2):
    """Per-node message distribution: prior scaled by 1/P plus noise.

    Component k of the prior maps to N(mu_k / P, v_k / P^2 + sigma2 / P).
    """
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    w, mu, v = prior.components()
    P = float(nodes)
    return GaussianMixture(
        tuple(w), tuple(mu / P), tuple(v / P**2 + sigma2 / P)
    )


def bin_size_limit(sigma2, nodes):
    """Largest quantizer bin for which the quantization error still acts
    like independent additive noise: 2 * sigma_t / sqrt(P)."""
    return 2.0 * math.sqrt(sigma2 / nodes)


def bin_size_admissible(gamma, sigma2, nodes):
    return gamma < bin_size_limit(sigma2, nodes)


def _interval_moments(mix, edges):
    """Zeroth/first/second moments of the mixture over [edges_k, edges_k+1).

    Uses exact Gaussian interval formulas via the normal CDF, so accuracy
    is limited only by erf evaluation (well below 1e-12 relative).
    """
    w, mu, v = mix.arrays()
    if np.any(v <= 0):
        raise ValueError("interval moments require strictly positive variances")
    sd = np.sqrt(v)
    z = (edges[None, :] - mu[:, None]) / sd[:, None]
    cdf = ndtr(z)
    pdf = np.exp(-0.5 * z**2) / np.sqrt(2.0 * np.pi)
    mass_c = cdf[:, 1:] - cdf[:, :-1]
    dpdf = pdf[:, 1:] - pdf[:, :-1]
    zpdf = z * pdf
    dzpdf = zpdf[:, 1:] - zpdf[:, :-1]
    m1_c = mu[:, None] * mass_c - sd[:, None] * dpdf
    # central second moment over the interval, then shift
    c2 = v[:, None] * (mass_c - dzpdf)
    m2_c = c2 + 2.0 * mu[:, None] * m1_c - (mu**2)[:, None] * mass_c
    mass = np.einsum("c,cb->b", w, mass_c)
    m1 = np.einsum("c,cb->b", w, m1_c)
    m2 = np.einsum("c,cb->b", w, m2_c)
    return mass, m1, m2


def _ecsq_eval(mix, gamma, reconstruction):
    """Exact (rate, distortion) of the uniform quantizer with bin ``gamma``.

    Bins are [(k - 1/2) gamma, (k + 1/2) gamma); the span covers every
    component out to 9 standard deviations.
    """
    w, mu, v = mix.arrays()
    sd = np.sqrt(v)
    lo = np.min(mu - _TAIL_SIGMAS * sd)
    hi = np.max(mu + _TAIL_SIGMAS * sd)
    k_lo = math.floor(lo / gamma - 0.5)
    k_hi = math.ceil(hi / gamma + 0.5)
    ks = np.arange(k_lo, k_hi + 1)
    edges = (ks - 0.5) * gamma
    edges = np.append(edges, (k_hi + 0.5) * gamma)
    mass, m1, m2 = _interval_moments(mix, edges)
    tail = 1.0 - mass.sum()
    if tail > _TAIL_TOL:
        raise NumericalError(
            f"quantizer bin span truncates {tail:.3e} probability mass "
            f"(tolerance {_TAIL_TOL:.0e})"
        )
    pos = mass > 0
    rate = float(-(mass[pos] * np.log2(mass[pos])).sum())
    if reconstruction == "centroid":
        recon = np.where(pos, m1 / np.where(pos, mass, 1.0), ks * gamma)
    else:
        recon = ks * gamma
    dist = float((m2 - 2.0 * recon * m1 + recon**2 * mass).sum())
    return rate, max(dist, 0.0)


def ecsq_point(source, quantizer):
    """Rate (bits/entry) and expected squared error of one ECSQ setting."""
    return _ecsq_eval(source, quantizer.gamma, quantizer.reconstruction)


def differential_entropy_bits(mix, points_per_scale=40, span=13.0):
    """Differential entropy of the mixture density, in bits."""
    w, mu, v = mix.arrays()
    sd = np.sqrt(v)
    lo = np.min(mu - span * sd)
    hi = np.max(mu + span * sd)
    h = sd.min() / points_per_scale
    x = np.arange(lo, hi + h, h)
    lp = mix.logpdf(x)
    p = np.exp(lp)
    return float(-np.trapezoid(p * lp, x) / math.log(2.0))


class RDCurve:
    """Tabulated monotone rate-distortion relation for one source.

    ``rates`` ascend, ``distortions`` descend strictly; queries interpolate
    piecewise-linearly in (rate, log distortion) and are exact at knots.
    Optional per-knot quantizer bin sizes support inverting distortion to
    a bin size for simulator use.
    """

    def __init__(self, kind, rates, distortions, source_variance, gammas=None):
        rates = np.asarray(rates, dtype=float)
        distortions = np.asarray(distortions, dtype=float)
        if rates.size < 2:
            raise ValueError("curve needs at least two knots")
        if np.any(np.diff(rates) <= 0):
            raise ValueError("rates must be strictly increasing")
        if np.any(np.diff(distortions) >= 0):
            raise ValueError("distortions must be strictly decreasing")
        if np.any(distortions <= 0) or np.any(rates < 0):
            raise ValueError("need distortions > 0 and rates >= 0")
        self.kind = kind
        self.rates = rates
        self.distortions = distortions
        self.log_d = np.log(distortions)
        self.source_variance = float(source_variance)
        self.gammas = None if gammas is None else np.asarray(gammas, dtype=float)

    @property
    def rate_range(self):
        return float(self.rates[0]), float(self.rates[-1])

    @property
    def distortion_range(self):
        return float(self.distortions[-1]), float(self.distortions[0])

    def distortion_for_rate(self, rate):
        rate_arr = np.asarray(rate, dtype=float)
        lo, hi = self.rate_range
        if np.any(rate_arr < lo - 1e-12) or np.any(rate_arr > hi + 1e-12):
            raise RangeError(
                f"rate query outside tabulated range [{lo:.6g}, {hi:.6g}] bits"
            )
        out = np.exp(np.interp(np.clip(rate_arr, lo, hi), self.rates, self.log_d))
        return float(out) if np.isscalar(rate) or rate_arr.ndim == 0 else out

    def rate_for_distortion(self, distortion):
        d_arr = np.asarray(distortion, dtype=float)
        lo, hi = self.distortion_range
        if np.any(d_arr < lo * (1 - 1e-12)) or np.any(d_arr > hi * (1 + 1e-12)):
            raise RangeError(
                f"distortion query outside tabulated range [{lo:.6g}, {hi:.6g}]"
            )
        x = np.log(np.clip(d_arr, lo, hi))
        out = np.interp(x, self.log_d[::-1], self.rates[::-1])
        return float(out) if np.isscalar(distortion) or d_arr.ndim == 0 else out

    def gamma_for_distortion(self, distortion):
        if self.gammas is None:
            raise ValueError(f"curve of kind '{self.kind}' carries no bin sizes")
        lo, hi = self.distortion_range
        x = np.log(np.clip(distortion, lo, hi))
        return float(np.exp(np.interp(x, self.log_d[::-1], np.log(self.gammas[::-1]))))

    def to_rows(self):
        return list(zip(self.rates.tolist(), self.distortions.tolist()))


def _monotone_filter(points):
    """Keep a strictly monotone (rate up, distortion down) subsequence."""
    points = sorted(points, key=lambda p: p[0])
    kept = []
    for p in points:
        if kept and (p[0] <= kept[-1][0] + 1e-12 or p[1] >= kept[-1][1] * (1 - 1e-12)):
            continue
        kept.append(p)
    return kept


def ecsq_curve(source, r_max=17.0, reconstruction="centroid",
               knots_per_bit=4, bin_cap=8192):
    """Tabulate the ECSQ rate-distortion curve of a mixture source.

    Bin sizes descend geometrically; once the exact bin enumeration would
    exceed ``bin_cap`` bins the tail follows the high-rate asymptote
    (rate = h - log2 gamma, distortion = gamma^2 / 12), shifted additively
    to join the exact part continuously.
    """
    w, mu, v = source.arrays()
    sd = np.sqrt(v)
    span = max(np.max(np.abs(mu) + _TAIL_SIGMAS * sd), 1e-300)
    variance = source.variance
    gamma_top = 2.0 * span * 1.0001          # single bin: zero rate
    points = []
    gamma = gamma_top
    ratio = 2.0 ** (-1.0 / knots_per_bit)
    switch = None
    while True:
        nbins = 2.0 * span / gamma
        if nbins > bin_cap:
            switch = gamma / ratio            # last gamma evaluated exactly
            break
        rate, dist = _ecsq_eval(source, gamma, reconstruction)
        points.append((rate, dist, gamma))
        if rate > r_max + 1.0:
            break
        gamma *= ratio
    if switch is not None and (not points or points[-1][0] <= r_max + 1.0):
        h_bits = differential_entropy_bits(source)
        r_exact, d_exact, g_exact = points[-1]
        dr = r_exact - (h_bits - math.log2(g_exact))
        ld = math.log(d_exact) - math.log(g_exact**2 / 12.0)
        gamma = switch * ratio
        while True:
            rate = h_bits - math.log2(gamma) + dr
            dist = math.exp(math.log(gamma**2 / 12.0) + ld)
            points.append((rate, dist, gamma))
            if rate > r_max + 1.0:
                break
            gamma *= ratio
    kept = _monotone_filter([(r, d) for r, d, _ in points])
    gmap = {(r, d): g for r, d, g in points}
    rates = [p[0] for p in kept]
    dists = [p[1] for p in kept]
    gammas = [gmap[p] for p in kept]
    return RDCurve("ecsq", rates, dists, variance, gammas=gammas)


def gaussian_highrate_rate(distortion, c1):
    """Asymptotic rate 0.5 * log2(C1 / D); requires 0 < D <= C1."""
    if distortion <= 0:
        raise ValueError("distortion must be positive")
    if distortion > c1:
        raise ValueError(
            f"distortion {distortion:.6g} exceeds C1={c1:.6g}; rate would be negative"
        )
    return 0.5 * math.log2(c1 / distortion)


def gaussian_highrate_distortion(rate, c1):
    """Inverse of the high-rate model: D = C1 * 2**(-2R)."""
    if rate < 0:
        raise ValueError("rate must be nonnegative")
    return c1 * 2.0 ** (-2.0 * rate)


def discretize_source(mix, n_points=801, span=8.5):
    """Uniform grid and normalized pmf covering the mixture support."""
    w, mu, v = mix.arrays()
    sd = np.sqrt(v)
    lo = np.min(mu - span * sd)
    hi = np.max(mu + span * sd)
    x = np.linspace(lo, hi, n_points)
    p = mix.pdf(x)
    p = p / p.sum()
    return x, p


def blahut_arimoto(pmf, distortion_matrix, slope, max_iter=100_000, tol_bits=1e-10):
    """One point of the rate-distortion curve for a discrete source.

    ``slope`` is the nonnegative Lagrange multiplier (nats per unit
    distortion); larger slopes trade rate for lower distortion.  Fixed-
    point iteration stops when the mutual information changes by less
    than ``tol_bits``.  slope == 0 returns the zero-rate point.
    """
    p = np.asarray(pmf, dtype=float)
    d = np.asarray(distortion_matrix, dtype=float)
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("source pmf must sum to 1")
    if np.any(d < 0):
        raise ValueError("distortion matrix must be nonnegative")
    if slope < 0:
        raise ValueError("slope must be nonnegative")
    if slope == 0.0:
        j = int(np.argmin(p @ d))
        return 0.0, float(p @ d[:, j])
    a = np.exp(-slope * d)
    q = np.full(d.shape[1], 1.0 / d.shape[1])
    prev_rate = np.inf
    for _ in range(max_iter):
        c = a @ q
        q = q * (a.T @ (p / c))
        q /= q.sum()
        c = a @ q
        dist = float((p / c) @ ((a * d) @ q))
        rate_nats = -slope * dist - float(p @ np.log(c))
        rate_bits = rate_nats / math.log(2.0)
        if abs(rate_bits - prev_rate) < tol_bits:
            return max(rate_bits, 0.0), dist
        prev_rate = rate_bits
    raise NumericalError(
        f"Blahut-Arimoto did not converge within {max_iter} iterations "
        f"(last rate {prev_rate:.9f} bits)"
    )


def ba_curve(source, r_max=17.0, n_alphabet=801, span=8.5, ba_max_rate=3.4,
             knots_per_bit=4):
    """R(D) curve of a mixture source: Blahut-Arimoto plus high-rate tail.

    The discretized alphabet limits how small a distortion the iteration
    can resolve, so beyond ``ba_max_rate`` bits the curve follows the
    Shannon lower bound R = h - 0.5*log2(2*pi*e*D), shifted additively to
    meet the last converged point (the shift is small there and decays
    with rate in truth, so keeping it constant is mildly conservative).
    """
    variance = source.variance
    x, p = discretize_source(source, n_alphabet, span)
    d = (x[:, None] - x[None, :]) ** 2
    points = [(0.0, variance)]
    n_knots = max(2, int(math.ceil(ba_max_rate * knots_per_bit)))
    targets = variance * 2.0 ** (-2.0 * np.linspace(0.25, ba_max_rate, n_knots))
    for d_target in targets:
        slope = 1.0 / (2.0 * d_target)
        r, dd = blahut_arimoto(p, d, slope)
        points.append((r, dd))
    points = _monotone_filter(points)
    r_last, d_last = points[-1]
    h_bits = differential_entropy_bits(source)
    slb = lambda dist: h_bits - 0.5 * math.log2(2.0 * math.pi * math.e * dist)
    offset = r_last - slb(d_last)
    dist = d_last
    step = 2.0 ** (-2.0 / knots_per_bit)
    while points[-1][0] <= r_max + 1.0:
        dist *= step
        points.append((slb(dist) + offset, dist))
    points = _monotone_filter(points)
    return RDCurve(
        "blahut_arimoto", [p_[0] for p_ in points], [p_[1] for p_ in points], variance
    )


class _Family:
    """Rate-distortion relation indexed by the scalar-channel variance.

    The per-node source drifts with sigma2, so families build (and cache)
    one curve per queried state.  ``min_rate`` is the smallest usable
    positive rate at that state (zero except when a quantizer bin-size
    constraint applies).
    """

    kind = None

    def __init__(self, prior, nodes):
        self.prior = prior
        self.nodes = nodes
        self._cache = {}

    def curve_at(self, sigma2):
        key = float(sigma2)
        if key not in self._cache:
            self._cache[key] = self._build(key)
        return self._cache[key]

    def _build(self, sigma2):
        raise NotImplementedError

    def min_rate(self, sigma2):
        return 0.0

    def distortion_for_rate(self, rate, sigma2):
        return self.curve_at(sigma2).distortion_for_rate(rate)

    def distortion_grid(self, sigma2, rates):
        """Distortion at each rate, NaN where the rate is not usable."""
        rates = np.asarray(rates, dtype=float)
        curve = self.curve_at(sigma2)
        lo, hi = curve.rate_range
        out = np.full(rates.shape, np.nan)
        ok = (rates >= max(lo, self.min_rate(sigma2)) - 1e-12) & (rates <= hi)
        if np.any(ok):
            out[ok] = curve.distortion_for_rate(rates[ok])
        return out


class EcsqFamily(_Family):
    """Entropy-coded uniform scalar quantization of the per-node source."""

    kind = "ecsq"

    def __init__(self, prior, nodes, reconstruction="centroid",
                 enforce_bin_limit=True, r_max=17.0):
        super().__init__(prior, nodes)
        self.reconstruction = reconstruction
        self.enforce_bin_limit = enforce_bin_limit
        self.r_max = r_max
        self._min_rate_cache = {}

    def _build(self, sigma2):
        src = node_source(self.prior, self.nodes, sigma2)
        return ecsq_curve(src, r_max=self.r_max, reconstruction=self.reconstruction)

    def min_rate(self, sigma2):
        if not self.enforce_bin_limit:
            return 0.0
        key = float(sigma2)
        if key not in self._min_rate_cache:
            gamma_lim = bin_size_limit(sigma2, self.nodes)
            src = node_source(self.prior, self.nodes, sigma2)
            rate, _ = _ecsq_eval(src, gamma_lim, self.reconstruction)
            self._min_rate_cache[key] = rate
        return self._min_rate_cache[key]

    def gamma_for_rate(self, rate, sigma2):
        curve = self.curve_at(sigma2)
        d = curve.distortion_for_rate(rate)
        return curve.gamma_for_distortion(d)


class BlahutArimotoFamily(_Family):
    """Information-theoretic R(D) of the per-node source.

    Curves are computed at geometrically spaced anchor states and queries
    interpolate log-distortion across neighboring anchors at fixed rate;
    the curve family varies smoothly with sigma2, so a handful of anchors
    per decade suffices (verified against directly computed curves).
    """

    kind = "blahut_arimoto"

    def __init__(self, prior, nodes, sigma2_lo, sigma2_hi, anchors_per_decade=6,
                 r_max=17.0, n_alphabet=601, ba_max_rate=3.4):
        super().__init__(prior, nodes)
        if not 0 < sigma2_lo < sigma2_hi:
            raise ValueError("need 0 < sigma2_lo < sigma2_hi")
        self.r_max = r_max
        self.n_alphabet = n_alphabet
        self.ba_max_rate = ba_max_rate
        lo, hi = 0.98 * sigma2_lo, 1.02 * sigma2_hi
        n = max(2, int(math.ceil(math.log10(hi / lo) * anchors_per_decade)) + 1)
        self.anchor_sigma2 = np.geomspace(lo, hi, n)
        self._anchor_curves = [None] * n
        # shared dense rate grid for cross-anchor interpolation
        self._rate_grid = np.linspace(0.0, r_max + 0.75, int((r_max + 0.75) * 16) + 1)
        self._anchor_logd = [None] * n

    def _anchor(self, i):
        if self._anchor_curves[i] is None:
            src = node_source(self.prior, self.nodes, self.anchor_sigma2[i])
            curve = ba_curve(src, r_max=self.r_max, n_alphabet=self.n_alphabet,
                             ba_max_rate=self.ba_max_rate)
            self._anchor_curves[i] = curve
            self._anchor_logd[i] = np.log(curve.distortion_for_rate(self._rate_grid))
        return self._anchor_curves[i]

    def _build(self, sigma2):
        s = float(np.clip(sigma2, self.anchor_sigma2[0], self.anchor_sigma2[-1]))
        i = int(np.searchsorted(self.anchor_sigma2, s)) - 1
        i = max(0, min(i, len(self.anchor_sigma2) - 2))
        self._anchor(i), self._anchor(i + 1)
        x0, x1 = np.log(self.anchor_sigma2[i]), np.log(self.anchor_sigma2[i + 1])
        t = (math.log(s) - x0) / (x1 - x0)
        logd = (1 - t) * self._anchor_logd[i] + t * self._anchor_logd[i + 1]
        src = node_source(self.prior, self.nodes, sigma2)
        return RDCurve("blahut_arimoto", self._rate_grid, np.exp(logd), src.variance)


class HighRateFamily(_Family):
    """High-rate asymptote with C1 fit against the R(D) curve per state.

    C1 is anchored by matching the Blahut-Arimoto rate at distortion
    sigma2 * 1e-3, deep enough into the high-rate regime to pin the
    asymptote while staying inside the tabulated range.
    """

    kind = "gaussian_highrate"

    def __init__(self, prior, nodes, sigma2_lo, sigma2_hi, r_max=17.0,
                 fit_fraction=1e-3, **ba_kwargs):
        super().__init__(prior, nodes)
        self.r_max = r_max
        self.fit_fraction = fit_fraction
        self._ba = BlahutArimotoFamily(prior, nodes, sigma2_lo, sigma2_hi,
                                       r_max=r_max, **ba_kwargs)

    def c1_at(self, sigma2):
        d_fit = sigma2 * self.fit_fraction
        r_fit = self._ba.curve_at(sigma2).rate_for_distortion(d_fit)
        return d_fit * 2.0 ** (2.0 * r_fit)

    def _build(self, sigma2):
        c1 = self.c1_at(sigma2)
        rates = np.linspace(0.0, self.r_max + 0.75, 2)
        dists = c1 * 2.0 ** (-2.0 * rates)
        src = node_source(self.prior, self.nodes, sigma2)
        return RDCurve("gaussian_highrate", rates, dists, src.variance)


def make_family(kind, prior, nodes, sigma2_lo, sigma2_hi, **kwargs):
    """Construct a rate-distortion family by kind name."""
    if kind == "ecsq":
        return EcsqFamily(prior, nodes, **kwargs)
    if kind == "blahut_arimoto":
        return BlahutArimotoFamily(prior, nodes, sigma2_lo, sigma2_hi, **kwargs)
    if kind == "gaussian_highrate":
        return HighRateFamily(prior, nodes, sigma2_lo, sigma2_hi, **kwargs)
    raise ValueError(f"unknown rate-distortion model kind: {kind!r}")
