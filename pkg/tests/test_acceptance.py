"""End-to-end acceptance checks.

Each test prints one `ACCEPTANCE <n> ... PASS/FAIL` line (run with -s to
see them live).  Heavy artifacts (rate-distortion families, optimal
schedules, simulation ensembles) are shared through module fixtures.
"""

import math
import time

import numpy as np
import pytest

from mpamp.priors import GaussianMixture, Prior
from mpamp.independence import IndependenceGrid, calibration_rejection, rejection_grid
from mpamp.ratedist import (
    BlahutArimotoFamily,
    EcsqFamily,
    ba_curve,
    ecsq_curve,
    node_source,
)
from mpamp.scheduler import solve, verify_interpolation, verify_rate_resolution
from mpamp.simulator import random_admissible_schedule, run_ensemble
from mpamp.state_evolution import SystemConfig, emse_db, fixed_point, run_schedule
from mpamp.tradeoff import (
    ParetoPoint,
    PlatformCost,
    convexity_check,
    cost_scaling_fit,
    geometric_tail_check,
    pareto_filter,
    sweep,
)

from test_scheduler import brute_force_cost


def _report(num, name, ok, detail):
    print(f"\nACCEPTANCE {num:>2} [{name}]: {'PASS' if ok else 'FAIL'} - {detail}",
          flush=True)
    assert ok, f"criterion {num} ({name}): {detail}"


@pytest.fixture(scope="module")
def sensor(bg01):
    return SystemConfig(prior=bg01, kappa=0.4, sigma_z2=1.0 / 400.0, nodes=100)


@pytest.fixture(scope="module")
def growth(bg02):
    return SystemConfig(prior=bg02, kappa=1.0, sigma_z2=0.01, nodes=100)


@pytest.fixture(scope="module")
def sensor_ba_family(sensor):
    fp = fixed_point(sensor)
    fam = BlahutArimotoFamily(sensor.prior, sensor.nodes, fp.sigma_inf2,
                              sensor.initial_sigma2, anchors_per_decade=6,
                              n_alphabet=601)
    for i in range(len(fam.anchor_sigma2)):
        fam._anchor(i)
    return fam


@pytest.fixture(scope="module")
def growth_solution(growth):
    fp = fixed_point(growth)
    fam = EcsqFamily(growth.prior, growth.nodes, enforce_bin_limit=True)
    delta = fp.mmse * (10.0 ** (0.005 / 10.0) - 1.0)
    t0 = time.monotonic()
    _, sched = solve(growth, b=0.782, delta=delta, rd=fam, dsigma_db=0.01,
                     dr=0.05, r_max=16.0)
    return sched, fp, time.monotonic() - t0


def test_criterion_1_mmse_fixed_point(sensor):
    fixed_point.cache_clear()
    t0 = time.monotonic()
    fp = fixed_point(sensor)
    elapsed = time.monotonic() - t0
    rel = abs(fp.mmse - 6.281e-4) / 6.281e-4
    ok = rel <= 0.01 and elapsed < 10.0
    _report(1, "MMSE fixed point", ok,
            f"MMSE={fp.mmse:.4e} vs 6.281e-4 (rel {rel:.2%}), {elapsed:.1f}s")


def test_criterion_2_asymptotic_growth(growth, growth_solution):
    sched, fp, elapsed = growth_solution
    growth_ok = abs(fp.growth - 0.751) <= 0.01
    long_enough = sched.t >= 12
    mean_growth = (sched.rates[11] - sched.rates[5]) / 6.0 if long_enough else math.nan
    sched_ok = long_enough and abs(mean_growth - 0.742) <= 0.05
    ok = growth_ok and sched_ok and elapsed < 1800
    _report(2, "asymptotic growth rate", ok,
            f"0.5*log2(1/theta)={fp.growth:.4f} (vs 0.751), "
            f"(R12-R6)/6={mean_growth:.4f} (vs 0.742), T={sched.t}, "
            f"{elapsed:.0f}s")


@pytest.mark.parametrize("case,b,t_ref,ragg_ref", [
    ("sensor", PlatformCost(platform="sensor", n=1000, m=400, p=100).b, 15, 20.0),
    ("cloud", PlatformCost(platform="cloud", n=50_000, m=20_000, p=100).b, 11, 24.0),
    ("gpu", PlatformCost(platform="gpu", n=50_000, m=20_000, p=100).b, 10, 30.2),
])
def test_criterion_3_case_studies(sensor, sensor_ba_family, case, b, t_ref,
                                  ragg_ref):
    fp = fixed_point(sensor)
    delta = fp.mmse * (10.0 ** 0.05 - 1.0)
    t0 = time.monotonic()
    _, sched = solve(sensor, b=b, delta=delta, rd=sensor_ba_family,
                     dsigma_db=0.01, dr=0.1, r_max=16.0)
    elapsed = time.monotonic() - t0
    final_db = emse_db(sched.final_mse, fp.mmse)
    ok = (abs(sched.t - t_ref) <= 1 and abs(sched.r_agg - ragg_ref) <= 1.5
          and abs(final_db - 0.5) <= 0.1 and elapsed < 1800)
    _report(3, f"case study {case} (b={b:.4g})", ok,
            f"T={sched.t} (ref {t_ref}), R_agg={sched.r_agg:.1f} "
            f"(ref {ragg_ref}), final {final_db:.3f} dB above MMSE, "
            f"{elapsed:.0f}s")


def _appendix_b_settings():
    mix = Prior.gaussian_mixture([0.5, 0.3, 0.2], [0.0, -1.5, 2.0],
                                 [0.1, 0.8, 1.0])
    bg = [("bg", SystemConfig(prior=Prior.bernoulli_gaussian(rho), kappa=0.5,
                              sigma_z2=sz, nodes=100))
          for rho in (0.1, 0.2) for sz in (0.01, 0.001)]
    mx = [("mix", SystemConfig(prior=mix, kappa=k, sigma_z2=sz, nodes=100))
          for k in (0.8, 1.6) for sz in (0.5, 0.05)]
    return bg + mx


def test_criterion_4_lossy_se_validation():
    t0 = time.monotonic()
    worst = -1.0
    lines = []
    for idx, (kind, cfg) in enumerate(_appendix_b_settings()):
        rates, gammas, traj = random_admissible_schedule(cfg, 10, seed=100 + idx)
        rep = run_ensemble(cfg, rates, gammas, trials=50, base_seed=1000 + idx,
                           n=10_000, se_trajectory=traj)
        gap = float(np.max(np.abs(rep["gap_db"])))
        worst = max(worst, gap)
        lines.append(f"{kind}[{idx}] kappa={cfg.kappa} sz={cfg.sigma_z2}: "
                     f"max|gap|={gap:.3f} dB")
    elapsed = time.monotonic() - t0
    ok = worst <= 0.2 and elapsed < 3600
    _report(4, "lossy SE validation", ok,
            f"worst gap {worst:.3f} dB over 8 settings, {elapsed:.0f}s\n  "
            + "\n  ".join(lines))


def test_criterion_5_dp_optimality_oracle():
    rng = np.random.default_rng(777)
    t0 = time.monotonic()
    checked = 0
    for trial in range(20):
        rho = rng.uniform(0.08, 0.3)
        kappa = rng.uniform(0.4, 1.0)
        sigma_z2 = 10.0 ** rng.uniform(-2.5, -1.5)
        b = rng.uniform(0.3, 2.5)
        config = SystemConfig(prior=Prior.bernoulli_gaussian(rho), kappa=kappa,
                              sigma_z2=sigma_z2, nodes=100)
        dr = rng.uniform(0.5, 0.9)
        t_max = 3 if trial % 2 == 0 else 4
        rates_grid = np.round(np.arange(1, 5) * dr, 12)
        fam = EcsqFamily(config.prior, config.nodes, enforce_bin_limit=False,
                         r_max=4 * dr + 1.0)
        fp = fixed_point(config)
        probe_traj = run_schedule(config, [rates_grid[2]] * (t_max - 1), fam)
        delta = probe_traj[-1].emse * rng.uniform(1.05, 1.6)
        ref_cost, _ = brute_force_cost(config, b, delta, fam, rates_grid, t_max)
        if not math.isfinite(ref_cost):
            continue
        span_db = 10.0 * math.log10(config.initial_sigma2 / fp.sigma_inf2)
        _, sched = solve(config, b, delta, fam, dsigma_db=span_db / 50.0,
                         dr=dr, r_max=float(rates_grid[-1]), t_max=t_max,
                         mse_points_per_decade=700)
        assert sched.cost == pytest.approx(ref_cost, abs=1e-9), \
            f"trial {trial}: DP {sched.cost} != brute force {ref_cost}"
        checked += 1
    elapsed = time.monotonic() - t0
    ok = checked >= 15 and elapsed < 60.0
    _report(5, "DP optimality oracle", ok,
            f"{checked}/20 feasible configs matched exactly, {elapsed:.1f}s")


_INTEGRITY_SETTINGS = [
    # (P, rho, kappa_factor, eps_db, b, sigma_z2) - balanced fraction of the
    # full 2^6 sweep
    (50, 0.1, 3, 1.0, 0.5, 0.01),
    (50, 0.1, 5, 0.5, 2.0, 0.001),
    (50, 0.2, 3, 0.5, 2.0, 0.01),
    (50, 0.2, 5, 1.0, 0.5, 0.001),
    (100, 0.1, 3, 0.5, 0.5, 0.001),
    (100, 0.1, 5, 1.0, 2.0, 0.01),
    (100, 0.2, 3, 1.0, 2.0, 0.001),
    (100, 0.2, 5, 0.5, 0.5, 0.01),
]


def test_criterion_6_grid_integrity():
    t0 = time.monotonic()
    pooled = []
    qualified = improved = 0
    bound_ok = True
    for i, (p, rho, kf, eps_db, b, sz) in enumerate(_INTEGRITY_SETTINGS):
        cfg = SystemConfig(prior=Prior.bernoulli_gaussian(rho), kappa=kf * rho,
                           sigma_z2=sz, nodes=p)
        fp = fixed_point(cfg)
        delta = fp.mmse * (10.0 ** (eps_db / 10.0) - 1.0)
        fam = EcsqFamily(cfg.prior, cfg.nodes, enforce_bin_limit=True)
        _, sched = solve(cfg, b, delta, fam, dsigma_db=0.01, dr=0.1,
                         r_max=16.0)
        rep = verify_interpolation(cfg, b, delta, fam, coarse_db=0.01,
                                   fine_db=0.0025, dr=0.1, r_max=16.0,
                                   t_max=sched.t + 3)
        pooled.append(rep["diffs"])
        pert = verify_rate_resolution(cfg, sched, fam, dr=0.1, trials=100,
                                      seed=40 + i)
        qualified += pert["qualified"]
        improved += pert["improved"]
        if pert["delta_r_agg"].size:
            bound_ok &= bool(pert["delta_r_agg"].min() > pert["bound"])
    pooled = np.abs(np.concatenate(pooled))
    p99 = float(np.percentile(pooled, 99))
    frac_improved = improved / max(qualified, 1)
    elapsed = time.monotonic() - t0
    ok = p99 <= 0.2 and frac_improved <= 0.25 and bound_ok and elapsed < 7200
    _report(6, "grid integrity", ok,
            f"99th pct |dPhi|={p99:.4f} over {pooled.size} node pairs; "
            f"{improved}/{qualified} qualifying perturbations improved "
            f"({frac_improved:.1%}), all above bound={bound_ok}; {elapsed:.0f}s")


def test_criterion_7_cost_scaling_law(sensor, sensor_ba_family):
    rep = cost_scaling_fit(sensor, 2.0, sensor_ba_family,
                           deltas_db=(1.0, 0.5, 0.2, 0.1, 0.05, 0.02),
                           dsigma_db=0.01, dr=0.05, r_max=16.0)
    ok = rep["r2"] >= 0.98
    costs = [f"{row['cost']:.1f}" for row in rep["rows"]]
    _report(7, "cost scaling law", ok,
            f"R^2={rep['r2']:.5f} for quadratic-in-log fit; costs {costs}")


def test_criterion_8_geometric_tail(small_config):
    fp = fixed_point(small_config)
    fam = EcsqFamily(small_config.prior, small_config.nodes,
                     enforce_bin_limit=True)
    delta = fp.mmse * (10.0 ** (0.005 / 10.0) - 1.0)
    _, sched = solve(small_config, b=1.0, delta=delta, rd=fam, dr=0.05,
                     r_max=16.0)
    final_db = emse_db(sched.final_mse, fp.mmse)
    rep = geometric_tail_check(sched, fp.theta)
    ok = final_db <= 0.01 and rep["ratio_ok"] and rep["d_over_emse_decreasing"]
    _report(8, "geometric tail ratios", ok,
            f"final {final_db:.4f} dB, last ratios "
            f"{[f'{r:.4f}' for r in rep['last_ratios']]} vs theta="
            f"{fp.theta:.4f}, D/EMSE decreasing={rep['d_over_emse_decreasing']}")


def test_criterion_9_independence_grid(bg01):
    t0 = time.monotonic()
    # per-trial signal length chosen so the 5% test keeps its size at the
    # admissibility boundary (see decisions ledger); grid and trial budget
    # follow the published sweep
    grid = IndependenceGrid(trials=100, n=500, nodes=100)
    rep = rejection_grid(bg01, grid, seed=20260811)
    adm = rep["admissible"]
    worst_wn = float(np.nanmax(np.where(adm, rep["reject_wn"], 0.0)))
    worst_wnx = float(np.nanmax(np.where(adm, rep["reject_wnx"], 0.0)))
    calib = calibration_rejection(reps=1000, n=10_000, seed=11)
    elapsed = time.monotonic() - t0
    ok = (worst_wn <= 0.15 and worst_wnx <= 0.15 and 0.03 <= calib <= 0.07
          and elapsed < 1200)
    _report(9, "independence grid", ok,
            f"worst admissible rejection: wn={worst_wn:.2f}, "
            f"wnx={worst_wnx:.2f} (limit 0.15); calibration={calib:.3f} "
            f"in [0.03, 0.07]; {elapsed:.0f}s")


def test_criterion_10_ecsq_gap(bg01):
    worst = 0.0
    details = []
    sources = {
        "gauss": GaussianMixture((1.0,), (0.0,), (1.0,)),
        "node": node_source(bg01, 100, 0.1),
    }
    for name, src in sources.items():
        ecsq = ecsq_curve(src, r_max=10.0)
        ba = ba_curve(src, r_max=10.0)
        var = src.variance
        for frac in (100.0, 250.0, 1000.0):
            d = var / frac
            gap = ecsq.rate_for_distortion(d) - ba.rate_for_distortion(d)
            assert gap > 0.0
            worst = max(worst, gap)
            details.append(f"{name}@Var/{frac:.0f}: {gap:.3f}")
    ok = worst <= 0.305
    _report(10, "ECSQ gap to R(D)", ok,
            f"max gap {worst:.3f} bits (limit 0.305); " + ", ".join(details))


def test_criterion_11_pareto_convexity(sensor, sensor_ba_family):
    fp = fixed_point(sensor)
    b_values = [0.3125, 1.0, 20.0 / 9.0, 8.0, 32.0, 128.0]
    deltas = [k * fp.mmse for k in (1, 2, 3, 4, 5)]
    points, skipped = sweep(sensor, b_values, deltas, sensor_ba_family,
                            dsigma_db=0.01, dr=0.1, r_max=16.0)
    assert not skipped
    # within one sweep no point may strictly improve all three coordinates
    strict_dominated = 0
    for p in points:
        for q in points:
            if q.t < p.t and q.r_agg < p.r_agg and q.mse < p.mse:
                strict_dominated += 1
                break
    rep = convexity_check(points, tolerance=0.05)
    tuples = [ParetoPoint(15, 20.0, 7.047e-4), ParetoPoint(11, 24.0, 7.031e-4),
              ParetoPoint(10, 30.2, 7.047e-4)]
    tuples_ok = len(pareto_filter(tuples)) == 3
    ok = rep["ok"] and tuples_ok and strict_dominated == 0
    _report(11, "Pareto convexity", ok,
            f"worst relative convexity violation {rep['worst_relative_violation']:.4f} "
            f"(tol 0.05) over {rep['slices']} slices/{rep['triples']} triples; "
            f"case-study tuples mutually non-dominated={tuples_ok}; "
            f"strictly dominated sweep points={strict_dominated}")
