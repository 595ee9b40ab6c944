"""Monte Carlo simulation of quantized multi-processor AMP.

Each of P nodes holds a contiguous block of M/P rows of the measurement
matrix.  Per iteration a node updates its residual (with the Onsager
correction), forms its partial estimate x_t / P + (A^p)' r^p, quantizes
it with a uniform midpoint quantizer of bin size gamma_t, and ships it to
the fusion center, which sums the P quantized messages, denoises, and
broadcasts the new estimate together with the mean denoiser derivative.

The matrix work runs in float32 (it is memory-bound and the quantizer
noise floor is far above single precision); statistics and the denoiser
run in float64.  Trials are reproducible: the whole trajectory is a
deterministic function of (config, schedule, gammas, seed).
"""

import math
from dataclasses import dataclass

import numpy as np

from .priors import denoise
from .ratedist import EcsqFamily
from .state_evolution import run_schedule

__all__ = [
    "Instance",
    "TrialRecord",
    "make_instance",
    "run_trial",
    "run_ensemble",
    "residual_variance_check",
    "random_admissible_schedule",
]


@dataclass
class Instance:
    """One realized measurement system y = A x + z split across P nodes."""

    a: np.ndarray
    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    nodes: int

    def __post_init__(self):
        m, n = self.a.shape
        if m % self.nodes:
            raise ValueError(f"node count {self.nodes} must divide measurements {m}")

    @property
    def m(self):
        return self.a.shape[0]

    @property
    def n(self):
        return self.a.shape[1]

    @property
    def kappa(self):
        return self.m / self.n

    def entry_variance_zscore(self):
        """Standard score of the empirical A-entry variance against 1/M."""
        v = float(np.var(np.asarray(self.a, dtype=np.float64)))
        target = 1.0 / self.m
        se = target * math.sqrt(2.0 / self.a.size)
        return (v - target) / se


@dataclass
class TrialRecord:
    """Per-iteration measurements from one simulated trial."""

    t: int
    rate: float
    gamma: float
    mse: float
    sigma_hat2: float
    distortion: float
    omega: float


def make_instance(config, n, seed):
    """Draw (A, x, z) for signal length n; M is set by kappa * n."""
    m = int(round(config.kappa * n))
    if m % config.nodes:
        raise ValueError(
            f"M = kappa * n = {m} is not divisible by P = {config.nodes}"
        )
    rng = np.random.default_rng(np.random.SeedSequence([0x5EED, int(seed)]))
    a = rng.standard_normal((m, n), dtype=np.float32)
    a /= np.float32(math.sqrt(m))
    x = config.prior.sample(rng, n)
    z = math.sqrt(config.sigma_z2) * rng.standard_normal(m)
    y = (a @ x.astype(np.float32)).astype(np.float64) + z
    return Instance(a=a, x=x, z=z, y=y, nodes=config.nodes)


def _quantize_midpoint(values, gamma):
    if gamma == 0.0:
        return values
    return np.round(values / gamma) * gamma


def run_trial(config, schedule, gammas, seed, n=10_000, instance=None,
              onsager=True, omega_scale=1.0):
    """Simulate one signal through the full protocol.

    ``gammas`` gives the per-iteration quantizer bin (0 disables
    quantization); a rate entry is only bookkeeping here since the wire
    format is the bin index stream.  Returns a list of TrialRecord.
    """
    schedule = list(schedule)
    if not schedule:
        raise ValueError("schedule must contain at least one iteration")
    gammas = list(gammas)
    if len(gammas) != len(schedule):
        raise ValueError("need one quantizer bin per scheduled iteration")
    inst = instance if instance is not None else make_instance(config, n, seed)
    P = config.nodes
    mp = inst.m // P
    a3 = inst.a.reshape(P, mp, inst.n)
    y3 = inst.y.reshape(P, mp)
    x_true = inst.x
    kappa = inst.kappa
    x_t = np.zeros(inst.n, dtype=np.float64)
    r_prev = np.zeros((P, mp), dtype=np.float64)
    omega_prev = 0.0
    records = []
    for t, (rate, gamma) in enumerate(zip(schedule, gammas), start=1):
        x32 = x_t.astype(np.float32)
        ax = (inst.a @ x32).reshape(P, mp).astype(np.float64)
        r = y3 - ax
        if onsager:
            r += (omega_scale * omega_prev / kappa) * r_prev
        r32 = r.astype(np.float32)
        f = np.matmul(r32[:, None, :], a3)[:, 0, :].astype(np.float64)
        f += x_t[None, :] / P
        q = _quantize_midpoint(f, gamma)
        distortion = float(np.mean((q - f) ** 2))
        f_q = q.sum(axis=0)
        sigma_hat2 = float(np.sum(r**2) / inst.m)
        effective_var = sigma_hat2 + P * distortion
        estimate, deriv = denoise(config.prior, f_q, effective_var)
        omega = float(np.mean(deriv))
        x_t = estimate
        r_prev = r
        omega_prev = omega
        records.append(TrialRecord(
            t=t, rate=float(rate), gamma=float(gamma),
            mse=float(np.mean((x_t - x_true) ** 2)),
            sigma_hat2=sigma_hat2, distortion=distortion, omega=omega,
        ))
    return records


def run_ensemble(config, schedule, gammas, trials, base_seed, n=10_000,
                 se_trajectory=None, jobs=1, onsager=True):
    """Average many trials and compare against a state-evolution prediction.

    Per-trial seeds derive from (base_seed, trial index), so no stream is
    reused within the ensemble; passing ``trials < 2`` is refused because
    a standard error is undefined.
    """
    if trials < 2:
        raise ValueError("an ensemble needs at least 2 trials (std undefined)")
    seeds = [(int(base_seed) << 20) + i for i in range(trials)]
    if len(set(seeds)) != len(seeds):
        raise ValueError("per-trial seeds collide; choose a different base seed")

    def one(seed):
        recs = run_trial(config, schedule, gammas, seed, n=n, onsager=onsager)
        return [r.mse for r in recs], [r.sigma_hat2 for r in recs], \
               [r.distortion for r in recs]

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(one, seeds))
    else:
        rows = [one(s) for s in seeds]
    mses = np.array([r[0] for r in rows])
    sig = np.array([r[1] for r in rows])
    dist = np.array([r[2] for r in rows])
    report = {
        "trials": trials,
        "n": n,
        "rates": list(map(float, schedule)),
        "mean_mse": mses.mean(axis=0),
        "std_mse": mses.std(axis=0, ddof=1),
        "stderr_mse": mses.std(axis=0, ddof=1) / math.sqrt(trials),
        "mean_sigma_hat2": sig.mean(axis=0),
        "mean_distortion": dist.mean(axis=0),
    }
    if se_trajectory is not None:
        se_mse = np.array([s.mse for s in se_trajectory])
        report["se_mse"] = se_mse
        report["gap_db"] = 10.0 * np.log10(report["mean_mse"] / se_mse)
    return report


def residual_variance_check(records, config, se_trajectory, n, z_limit=3.0):
    """Compare the running residual-energy estimate against state evolution.

    sigma_hat_t^2 = ||r_t||^2 / M concentrates around the predicted
    scalar-channel variance; deviations beyond ``z_limit`` standard errors
    are flagged (the relative standard error of a chi-square mean with M
    terms is about sqrt(2 / M)).
    """
    m = int(round(config.kappa * n))
    rel_se = math.sqrt(2.0 / m)
    rows = []
    for rec, st in zip(records, se_trajectory):
        z = (rec.sigma_hat2 - st.sigma2) / (st.sigma2 * rel_se)
        rows.append({"t": rec.t, "sigma_hat2": rec.sigma_hat2,
                     "se_sigma2": st.sigma2, "zscore": z,
                     "flag": abs(z) > z_limit})
    return {"rows": rows, "n_flagged": sum(r["flag"] for r in rows),
            "z_limit": z_limit}


def random_admissible_schedule(config, iterations, seed, spread=(0.1, 1.1),
                               dr=0.05):
    """Random coding rates whose quantizer bins stay inside the validity
    region gamma < 2 sigma_t / sqrt(P) along the predicted trajectory.

    Midpoint reconstruction matches the simulator's decoder, so the same
    curve supplies bin size and predicted distortion.  Returns (rates,
    gammas, predicted trajectory).
    """
    rng = np.random.default_rng(np.random.SeedSequence([0xADCE, int(seed)]))
    fam = EcsqFamily(config.prior, config.nodes, reconstruction="midpoint",
                     enforce_bin_limit=True)
    rates, gammas = [], []
    for _ in range(iterations):
        traj = run_schedule(config, rates + [math.inf], fam)
        sigma2 = traj[-1].sigma2
        r_lo = fam.min_rate(sigma2)
        rate = r_lo + rng.uniform(*spread)
        rate = round(math.ceil(rate / dr) * dr, 10)
        rates.append(rate)
        gammas.append(fam.gamma_for_rate(rate, sigma2))
    traj = run_schedule(config, rates, fam)
    return rates, gammas, traj
