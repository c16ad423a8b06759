import csv
import json

import numpy as np
import pytest

from hazard_discount import cli
from hazard_discount.errors import ConfigurationError, DomainError
from hazard_discount.harness import (
    TABLES,
    ExperimentConfig,
    calibrate_paths,
    config_hash,
    ordering_holds,
    parse_config_text,
    run_mismatch_sweep,
    run_truncation_study,
    run_value_profile,
    write_calibration,
    write_results,
)


def mses(results):
    return [r.mse for r in results]


class TestConfig:
    def test_hash_ignores_out_dir(self):
        a = ExperimentConfig(out_dir="x")
        assert config_hash(a) == config_hash(a.replace(out_dir="y"))
        assert config_hash(a) != config_hash(a.replace(seed=1))

    def test_monte_carlo_needs_episodes(self):
        with pytest.raises(ConfigurationError):
            ExperimentConfig(mode="monte_carlo")

    def test_validation(self):
        with pytest.raises(DomainError):
            ExperimentConfig(agent_kind="beta")
        with pytest.raises(DomainError):
            ExperimentConfig(estimator="sarsa")

    def test_parse(self):
        got = parse_config_text("# c\nn_paths = 7\nform=weighted\nn_episodes=none\ngamma_max=0.99\n")
        assert got == {"n_paths": 7, "form": "weighted", "n_episodes": None, "gamma_max": 0.99}
        with pytest.raises(ConfigurationError):
            parse_config_text("colour=blue\n")
        with pytest.raises(ConfigurationError):
            parse_config_text("n_paths\n")

    def test_ladder_k_follows_agent(self):
        assert ExperimentConfig(agent_k=0.2).effective_ladder_k == 0.2
        assert ExperimentConfig(agent_kind="gamma", agent_k=0.9).effective_ladder_k == 0.05
        assert ExperimentConfig(ladder_k=1.0).effective_ladder_k == 1.0


class TestValueProfile:
    def test_mse_definition(self):
        r = run_value_profile(ExperimentConfig(n_paths=6))
        np.testing.assert_allclose(r.mse, np.mean((r.estimates - r.true_values) ** 2), rtol=1e-15)
        assert r.mse_se == 0.0

    def test_matched_delta_is_exact(self):
        r = run_value_profile(ExperimentConfig(agent_kind="delta", env_kind="delta", agent_k=0.05, env_k=0.05))
        assert r.mse == 0.0

    def test_matched_hyperbolic(self):
        assert run_value_profile(ExperimentConfig()).mse <= 0.01

    def test_single_gamma_baseline(self):
        r = run_value_profile(ExperimentConfig(agent_kind="gamma", agent_k=0.975))
        np.testing.assert_allclose(r.mse, 0.566, atol=0.01)

    def test_td_estimator_matches_analytic(self):
        base = ExperimentConfig(n_paths=8)
        a, b = run_value_profile(base), run_value_profile(base.replace(estimator="td"))
        np.testing.assert_allclose(b.estimates, a.estimates, atol=1e-12)
        assert not b.flagged

    def test_unconverged_td_is_flagged(self):
        r = run_value_profile(ExperimentConfig(n_paths=4, estimator="td", td_sweeps=0))
        assert r.flagged and "never updated" in r.notes

    def test_forward_sweep_leaves_residual(self):
        from hazard_discount.agents import train_pathworld
        from hazard_discount.harness import _residual_flag

        table = train_pathworld([0.9], 5, sweeps=1, order="forward")
        flagged, notes = _residual_flag(table, 5)
        assert flagged and "residual" in notes

    def test_single_path_is_trivial(self):
        for agent in ({"agent_kind": "gamma", "agent_k": 0.5}, {"agent_kind": "exponential", "agent_k": 0.05}):
            assert run_value_profile(ExperimentConfig(n_paths=1, **agent)).greedy_path == 1

    def test_uniform_agent(self):
        r = run_value_profile(ExperimentConfig(agent_kind="uniform", agent_k=0.1, env_kind="uniform", env_k=0.1,
                                               n_gamma=2000, rule="midpoint"))
        assert r.mse < 1e-3

    def test_monte_carlo_agrees_with_analytic(self):
        base = ExperimentConfig(n_paths=10)
        a = run_value_profile(base)
        m = run_value_profile(base.replace(mode="monte_carlo", n_episodes=10**6, seed=3))
        assert m.mse_se > 0
        assert abs(m.mse - a.mse) < 3 * m.mse_se


class TestSweeps:
    def test_baseline_ordering(self):
        got = mses(run_mismatch_sweep(ExperimentConfig(), table="baselines"))
        assert ordering_holds(got[1:])
        assert all(m >= 10 * got[0] for m in got[1:])

    def test_matched_rate_is_minimum(self):
        got = mses(run_mismatch_sweep(ExperimentConfig(), table="mismatched_k"))
        assert ordering_holds(got)
        assert int(np.argmin(got)) == 0

    def test_custom_agents_and_threads(self):
        agents = [{"agent_kind": "gamma", "agent_k": g} for g in (0.9, 0.95, 0.99)]
        serial = mses(run_mismatch_sweep(ExperimentConfig(), agents=agents))
        threaded = mses(run_mismatch_sweep(ExperimentConfig(), agents=agents, workers=3))
        assert serial == threaded

    def test_needs_agents(self):
        with pytest.raises(ConfigurationError):
            run_mismatch_sweep(ExperimentConfig())
        with pytest.raises(DomainError):
            run_mismatch_sweep(ExperimentConfig(), table="nonexistent")

    def test_truncation_limit(self):
        (r,) = run_truncation_study(ExperimentConfig(), gamma_maxes=(0.9999,), n_gamma=10_000)
        assert r.mse < 0.01

    def test_ordering_helper(self):
        assert ordering_holds([1, 2, 3]) and not ordering_holds([1, 1, 2])
        assert not ordering_holds([1.0, 1.005], tol=0.01)


class TestCalibration:
    def test_baselines(self):
        rep = calibrate_paths("baselines")
        devs = {n: d for n, d, _ in rep.sweep}
        assert rep.best_n in devs and devs[rep.best_n] == min(devs.values())
        for n in (rep.best_n - 1, rep.best_n + 1):
            if n in devs:
                assert devs[rep.best_n] <= devs[n]
        hyper = dict((n, m) for n, _, m in rep.sweep)[rep.best_n][0]
        assert 0 <= hyper <= 0.01

    def test_deterministic(self):
        a, b = calibrate_paths("mismatched_k"), calibrate_paths("mismatched_k")
        assert a.sweep == b.sweep

    def test_requires_analytic(self):
        with pytest.raises(ConfigurationError):
            calibrate_paths("baselines", ExperimentConfig(mode="monte_carlo", n_episodes=10))

    def test_csv(self, tmp_path):
        rep = calibrate_paths("uniform_hazard", n_range=range(5, 8))
        path = write_calibration(rep, tmp_path, ExperimentConfig())
        rows = list(csv.reader(open(path)))
        assert rows[1][0] == "reference" and len(rows) == 2 + 3
        assert sum(int(r[-4]) for r in rows[2:]) == 1


class TestArtifacts:
    def test_bit_identical(self, tmp_path):
        for mode, extra in (("analytic", {}), ("monte_carlo", {"n_episodes": 20_000})):
            cfg = ExperimentConfig(mode=mode, seed=11, **extra)
            a = write_results(run_mismatch_sweep(cfg, table="uniform_hazard"), tmp_path / "a", mode)
            b = write_results(run_mismatch_sweep(cfg, table="uniform_hazard"), tmp_path / "b", mode)
            for x, y in zip(a, b):
                assert x.read_bytes() == y.read_bytes()

    def test_rows_traceable(self, tmp_path):
        results = run_mismatch_sweep(ExperimentConfig(seed=4), table="baselines")
        values, summary = write_results(results, tmp_path, "t2")
        for path in (values, summary):
            rows = list(csv.DictReader(open(path)))
            assert all(r["config_hash"] and r["mode"] == "analytic" and r["seed"] == "4" for r in rows)
        assert len(list(csv.DictReader(open(values)))) == len(TABLES["baselines"]["rows"]) * 15


class TestCli:
    def run(self, capsys, *argv):
        code = cli.main(list(argv))
        out = capsys.readouterr()
        return code, out.out, out.err

    @pytest.mark.parametrize(
        "argv,artifact",
        [
            (["ladder"], "ladder.csv"),
            (["curve", "--agent-k", "1", "--horizon", "5"], "curve.csv"),
            (["pathworld"], "pathworld_summary.csv"),
            (["mismatch", "--table", "uniform_hazard"], "uniform_hazard_summary.csv"),
            (["truncation", "--study-n-gamma", "500"], "truncation_summary.csv"),
            (["calibrate", "--target", "mismatched_k"], "calibrate_mismatched_k.csv"),
            (["gridworld", "--steps", "400"], "gridworld_mean_td_curve.csv"),
        ],
    )
    def test_subcommands(self, capsys, tmp_path, argv, artifact):
        code, out, _ = self.run(capsys, *argv, "--out-dir", str(tmp_path), "--seed", "2")
        assert code == 0
        assert (tmp_path / artifact).exists()

    def test_error_line(self, capsys, tmp_path):
        code, _, err = self.run(capsys, "ladder", "--n-gamma", "1", "--out-dir", str(tmp_path))
        assert code == 2
        msg = json.loads(err.strip().splitlines()[-1])
        assert msg["error"] == "DomainError" and "n_gamma" in msg["message"]

    def test_config_then_flags(self, capsys, tmp_path):
        conf = tmp_path / "run.cfg"
        conf.write_text("n_paths=3\nseed=9\n")
        code, _, _ = self.run(capsys, "pathworld", "--config", str(conf), "--seed", "5", "--out-dir", str(tmp_path))
        assert code == 0
        rows = list(csv.DictReader(open(tmp_path / "pathworld_values.csv")))
        assert len(rows) == 3 and rows[0]["seed"] == "5"

    def test_monte_carlo_flag_needs_episodes(self, capsys, tmp_path):
        code, _, err = self.run(capsys, "pathworld", "--mode", "monte_carlo", "--out-dir", str(tmp_path))
        assert code == 2 and "ConfigurationError" in err
