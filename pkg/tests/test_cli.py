import json
from pathlib import Path

import pytest
import yaml

from mpamp.cli import main
from mpamp.config import RunConfig

BASE = """\
prior: {kind: bernoulli_gaussian, rho: 0.1}
kappa: 0.5
sigma_z2: 0.01
nodes: 100
rd_model: {kind: ecsq}
dp: {dr: 0.2, r_max: 8.0, t_max: 30}
target: {emse_db: 2.0}
cost: {b: 1.0}
seed: 7
"""


@pytest.fixture()
def cfg_file(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(BASE + f"out_dir: {tmp_path / 'out'}\n")
    return path


class TestConfig:
    def test_round_trip_is_canonical(self, cfg_file):
        cfg = RunConfig.from_file(cfg_file)
        text = cfg.canonical_yaml()
        again = RunConfig(yaml.safe_load(text))
        assert again.canonical_yaml() == text
        assert again.config_hash() == cfg.config_hash()

    def test_exactly_one_cost_form(self):
        raw = yaml.safe_load(BASE)
        raw["cost"] = {"b": 1.0, "platform": {"kind": "sensor"}}
        with pytest.raises(Exception):
            RunConfig(raw)
        raw["cost"] = {}
        with pytest.raises(Exception):
            RunConfig(raw)

    def test_exactly_one_target_form(self):
        raw = yaml.safe_load(BASE)
        raw["target"] = {"emse_db": 1.0, "delta": 1e-4}
        with pytest.raises(Exception):
            RunConfig(raw)

    def test_platform_cost_resolves_b(self):
        raw = yaml.safe_load(BASE)
        raw["cost"] = {"platform": {"kind": "sensor", "n": 1000, "m": 400,
                                    "p": 100}}
        cfg = RunConfig(raw)
        assert cfg.b == pytest.approx(0.3125)

    def test_mixture_prior_parses(self):
        raw = yaml.safe_load(BASE)
        raw["prior"] = {"kind": "gaussian_mixture", "weights": [0.5, 0.3, 0.2],
                        "means": [0.0, -1.5, 2.0], "variances": [0.1, 0.8, 1.0]}
        cfg = RunConfig(raw)
        assert cfg.system.signal_power == pytest.approx(1.965)


class TestExitCodes:
    def test_missing_config_is_usage_error(self, tmp_path):
        assert main(["dp", "--config", str(tmp_path / "nope.yaml")]) == 1

    def test_bad_yaml_is_usage_error(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("prior: [unclosed")
        assert main(["dp", "--config", str(path)]) == 1

    def test_missing_subcommand_is_usage_error(self):
        assert main([]) == 1

    def test_infeasible_returns_two(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        doc = yaml.safe_load(BASE)
        doc["dp"] = {"dr": 0.5, "r_max": 1.0, "t_max": 2}
        doc["target"] = {"emse_db": 0.05}
        doc["rd_model"] = {"kind": "ecsq", "enforce_bin_limit": False}
        doc["out_dir"] = str(tmp_path / "out")
        path.write_text(yaml.safe_dump(doc))
        assert main(["dp", "--config", str(path)]) == 2


class TestPrintConfig:
    def test_prints_effective_config(self, cfg_file, capsys):
        assert main(["dp", "--config", str(cfg_file), "--print-config"]) == 0
        doc = yaml.safe_load(capsys.readouterr().out)
        assert doc["dp"]["dsigma_db"] == 0.01
        assert doc["dp"]["dr"] == 0.2
        assert doc["seed"] == 7

    def test_seed_override(self, cfg_file, capsys):
        main(["dp", "--config", str(cfg_file), "--print-config", "--seed", "99"])
        doc = yaml.safe_load(capsys.readouterr().out)
        assert doc["seed"] == 99


class TestSubcommands:
    def test_dp_then_se_roundtrip(self, cfg_file, tmp_path):
        out = tmp_path / "out"
        assert main(["dp", "--config", str(cfg_file)]) == 0
        sched = json.loads((out / "schedule.json").read_text())
        assert sched["t"] == len(sched["rates"]) > 0
        assert sched["final_emse_db"] <= 2.0 + 1e-6
        traj_text = (out / "trajectory.csv").read_text()
        assert traj_text.startswith("# config_hash: ")
        assert "# seed: 7" in traj_text

        se_out = tmp_path / "se"
        code = main(["se", "--config", str(cfg_file), "--schedule",
                     str(out / "schedule.json"), "--out", str(se_out)])
        assert code == 0
        assert (se_out / "trajectory.csv").read_text().count("\n") == \
            sched["t"] + 3  # comments + header + rows

    def test_se_lossless(self, cfg_file, tmp_path):
        out = tmp_path / "sl"
        assert main(["se", "--config", str(cfg_file), "--lossless", "4",
                     "--out", str(out)]) == 0
        body = (out / "trajectory.csv").read_text()
        assert body.count("\n") == 4 + 3

    def test_dp_outputs_are_byte_stable(self, cfg_file, tmp_path):
        out = tmp_path / "out"
        main(["dp", "--config", str(cfg_file)])
        first = (out / "schedule.json").read_bytes()
        first_csv = (out / "trajectory.csv").read_bytes()
        main(["dp", "--config", str(cfg_file)])
        assert (out / "schedule.json").read_bytes() == first
        assert (out / "trajectory.csv").read_bytes() == first_csv

    def test_simulate_random_schedule(self, cfg_file, tmp_path):
        out = tmp_path / "sim"
        code = main(["simulate", "--config", str(cfg_file), "--trials", "2",
                     "--n", "2000", "--iterations", "3", "--out", str(out)])
        assert code == 0
        text = (out / "ensemble.csv").read_text()
        assert text.count("\n") == 3 + 3
        rerun = tmp_path / "sim2"
        main(["simulate", "--config", str(cfg_file), "--trials", "2",
              "--n", "2000", "--iterations", "3", "--out", str(rerun)])
        assert (rerun / "ensemble.csv").read_text() == text

    def test_simulate_rejects_indivisible_nodes(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        doc = yaml.safe_load(BASE)
        doc["out_dir"] = str(tmp_path / "o")
        path.write_text(yaml.safe_dump(doc))
        assert main(["simulate", "--config", str(path), "--trials", "2",
                     "--n", "1990"]) == 1

    def test_pareto_single_cell(self, cfg_file, tmp_path):
        out = tmp_path / "par"
        code = main(["pareto", "--config", str(cfg_file), "--b-grid", "1.0",
                     "--delta-db-grid", "2.0", "--out", str(out)])
        assert code == 0
        doc = json.loads((out / "pareto.json").read_text())
        assert len(doc["points"]) == 1
        assert doc["points"][0]["pareto"] is True
        assert (out / "pareto.csv").exists()

    def test_indep_small_grid(self, cfg_file, tmp_path):
        out = tmp_path / "ind"
        code = main(["indep", "--config", str(cfg_file), "--trials", "5",
                     "--n", "1000", "--gammas", "0.5,0.05", "--sigmas",
                     "0.1", "--out", str(out)])
        assert code == 0
        lines = (out / "independence.csv").read_text().splitlines()
        assert lines[2] == "gamma,sigma,rejection_fraction_wn,rejection_fraction_wnx"
        assert len(lines) == 3 + 2
