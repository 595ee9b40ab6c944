import math

import numpy as np
import pytest

from mpamp.priors import denoise
from mpamp.ratedist import bin_size_limit
from mpamp.simulator import (
    Instance,
    make_instance,
    random_admissible_schedule,
    residual_variance_check,
    run_ensemble,
    run_trial,
)
from mpamp.state_evolution import SystemConfig, fixed_point, run_schedule


@pytest.fixture(scope="module")
def p1_config(bg01):
    return SystemConfig(prior=bg01, kappa=0.5, sigma_z2=0.01, nodes=1)


class TestInstance:
    def test_shapes_and_entry_variance(self, small_config):
        inst = make_instance(small_config, n=4000, seed=3)
        assert inst.a.shape == (2000, 4000)
        assert abs(inst.entry_variance_zscore()) < 4.0

    def test_node_count_must_divide_rows(self, small_config):
        with pytest.raises(ValueError):
            make_instance(small_config, n=4010, seed=0)
        with pytest.raises(ValueError):
            Instance(a=np.zeros((10, 4)), x=np.zeros(4), z=np.zeros(10),
                     y=np.zeros(10), nodes=3)


class TestRunTrial:
    def test_deterministic(self, small_config):
        kw = dict(schedule=[math.inf] * 3, gammas=[0.0] * 3, seed=11, n=2000)
        a = run_trial(small_config, **kw)
        b = run_trial(small_config, **kw)
        assert all(x.mse == y.mse and x.sigma_hat2 == y.sigma_hat2
                   for x, y in zip(a, b))

    def test_initial_residual_energy(self, small_config):
        recs = run_trial(small_config, [math.inf], [0.0], seed=5, n=10_000)
        # ||y||^2 / M concentrates on sigma_Z^2 + E[X^2]/kappa
        expect = small_config.initial_sigma2
        tol = 3.0 * math.sqrt(0.29 / 10_000) / small_config.kappa
        assert abs(recs[0].sigma_hat2 - expect) <= tol

    def test_first_iteration_matches_manual_protocol(self, small_config):
        """One full round recomputed outside the simulator, including the
        fusion sum of per-node quantized messages."""
        n, seed, gamma = 1200, 9, 0.02
        inst = make_instance(small_config, n=n, seed=seed)
        P = small_config.nodes
        mp = inst.m // P
        recs = run_trial(small_config, [2.0], [gamma], seed=seed, n=n,
                         instance=inst)
        r = inst.y.reshape(P, mp) - (inst.a @ np.zeros(n, dtype=np.float32)) \
            .reshape(P, mp)
        f = np.stack([
            inst.a.reshape(P, mp, n)[p].T.astype(np.float64) @ r[p]
            for p in range(P)
        ])
        q = np.round(f / gamma) * gamma
        f_q = q.sum(axis=0)
        d_emp = float(np.mean((q - f) ** 2))
        sigma_hat2 = float(np.sum(r**2) / inst.m)
        est, _ = denoise(small_config.prior, f_q, sigma_hat2 + P * d_emp)
        mse = float(np.mean((est - inst.x) ** 2))
        assert recs[0].distortion == pytest.approx(d_emp, rel=1e-6)
        assert recs[0].mse == pytest.approx(mse, rel=1e-6)

    def test_lossless_single_node_tracks_centralized_se(self, p1_config):
        T = 8
        traj = run_schedule(p1_config, [math.inf] * T)
        recs = run_trial(p1_config, [math.inf] * T, [0.0] * T, seed=7, n=10_000)
        # per-entry squared errors fluctuate ~ sqrt(E[e^4]/E[e^2]^2 - 1) / sqrt(N)
        rel_se = 6.0 / math.sqrt(10_000)
        for rec, st in zip(recs, traj):
            assert abs(rec.mse - st.mse) <= 3.0 * rel_se * st.mse

    def test_quantizer_error_variance_matches_prediction(self, small_config):
        rates, gammas, traj = random_admissible_schedule(small_config, 5, seed=2)
        recs = run_trial(small_config, rates, gammas, seed=21, n=10_000)
        for rec, st in zip(recs, traj):
            assert rec.gamma < bin_size_limit(st.sigma2, small_config.nodes)
            assert rec.distortion == pytest.approx(st.distortion, rel=0.05)

    def test_onsager_term_is_load_bearing(self, small_config):
        """Dropping the residual correction breaks the state-evolution
        match within a few iterations."""
        T = 5
        traj = run_schedule(small_config, [math.inf] * T)
        with_term = run_trial(small_config, [math.inf] * T, [0.0] * T,
                              seed=31, n=8000)
        without = run_trial(small_config, [math.inf] * T, [0.0] * T,
                            seed=31, n=8000, onsager=False)
        gap_with = abs(10 * math.log10(with_term[-1].mse / traj[-1].mse))
        gap_without = abs(10 * math.log10(without[-1].mse / traj[-1].mse))
        assert gap_with < 1.0
        assert gap_without > 1.0

    def test_input_validation(self, small_config):
        with pytest.raises(ValueError):
            run_trial(small_config, [], [], seed=0)
        with pytest.raises(ValueError):
            run_trial(small_config, [1.0, 1.0], [0.1], seed=0)


class TestEnsemble:
    def test_mean_tracks_lossy_se(self, small_config):
        rates, gammas, traj = random_admissible_schedule(small_config, 4, seed=5)
        rep = run_ensemble(small_config, rates, gammas, trials=8, base_seed=3,
                           n=4000, se_trajectory=traj)
        assert np.all(np.abs(rep["gap_db"]) < 0.5)
        assert rep["stderr_mse"].shape == (4,)

    def test_refuses_single_trial(self, small_config):
        with pytest.raises(ValueError):
            run_ensemble(small_config, [1.0], [0.1], trials=1, base_seed=0)

    def test_larger_signals_concentrate(self, small_config):
        rates, gammas, traj = random_admissible_schedule(small_config, 3, seed=5)
        rel = []
        for n in (2000, 8000):
            rep = run_ensemble(small_config, rates, gammas, trials=10,
                               base_seed=17, n=n)
            rel.append(np.mean(rep["std_mse"] / rep["mean_mse"]))
        assert rel[1] < rel[0]


class TestResidualCheck:
    def test_clean_run_passes(self, p1_config):
        T = 6
        traj = run_schedule(p1_config, [math.inf] * T)
        recs = run_trial(p1_config, [math.inf] * T, [0.0] * T, seed=13, n=10_000)
        rep = residual_variance_check(recs, p1_config, traj, n=10_000, z_limit=4.0)
        assert rep["n_flagged"] == 0

    def test_wrong_onsager_scaling_is_flagged(self, p1_config):
        T = 6
        traj = run_schedule(p1_config, [math.inf] * T)
        recs = run_trial(p1_config, [math.inf] * T, [0.0] * T, seed=13,
                         n=10_000, omega_scale=0.5)
        rep = residual_variance_check(recs, p1_config, traj, n=10_000, z_limit=4.0)
        assert rep["n_flagged"] > 0


class TestRandomAdmissibleSchedule:
    def test_bins_inside_validity_region(self, small_config):
        rates, gammas, traj = random_admissible_schedule(small_config, 6, seed=9)
        assert len(rates) == len(gammas) == 6
        for g, st in zip(gammas, traj):
            assert g < bin_size_limit(st.sigma2, small_config.nodes)

    def test_reproducible(self, small_config):
        a = random_admissible_schedule(small_config, 4, seed=9)[0]
        b = random_admissible_schedule(small_config, 4, seed=9)[0]
        assert a == b
