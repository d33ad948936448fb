import csv
import json

import numpy as np
import pytest

from retail_rl import cli, harness
from retail_rl.agents import AgentConfig
from retail_rl.harness import ConfigError, ExperimentConfig
from retail_rl.items import read_items_csv
from retail_rl.policies import SQPolicy


def smoke(**kw):
    return harness.named_config("smoke", **kw)


@pytest.fixture(scope="module")
def trained():
    cfg = smoke(agent="gtdqn")
    return cfg, harness.run_training(cfg)


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = smoke(agent="qrdqn", scenario="H2", trunk=(8, 4))
        harness.save_config(cfg, tmp_path / "c.json")
        assert harness.load_config(tmp_path / "c.json") == cfg

    def test_scenario_sigma(self):
        assert [smoke(scenario=s).sigma for s in ("H0", "H1", "H2")] == [0.0, 0.05, 0.15]
        assert smoke(scenario="H2").store_config().forecast.sigma == 0.15

    def test_all_errors_reported(self):
        with pytest.raises(ConfigError) as err:
            ExperimentConfig.from_dict({"train_items": 0, "scenario": "H9", "gamma": 1.5, "bogus": 1,
                                        "eval_steps": "many", "config_version": 7})
        text = "\n".join(err.value.errors)
        for needle in ("train_items", "scenario", "gamma", "bogus", "eval_steps", "config_version"):
            assert needle in text

    def test_flat_keys_cover_both_halves(self):
        d = ExperimentConfig().to_dict()
        assert {"agent", "scenario", "seed", "gamma", "n_quantiles", "max_stock"} <= set(d)
        assert ExperimentConfig.from_dict(d) == ExperimentConfig()

    def test_schedules_follow_run_length(self):
        cfg = harness.named_config("desk", train_steps=200, train_items=10, updates_per_step=2,
                                   warmup_transitions=100)
        assert cfg.agent.lr_decay_updates == harness.total_updates(cfg.run)
        assert cfg.agent.epsilon_decay_updates == harness.total_updates(cfg.run) // 2

    def test_paper_preset(self):
        cfg = harness.named_config("paper")
        assert (cfg.run.train_items, cfg.run.train_steps) == (6000, 5000)
        assert (cfg.run.eval_generations, cfg.run.eval_items, cfg.run.eval_steps) == (30, 100, 2000)
        assert not cfg.agent.observe_position and cfg.run.max_order == 20

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            harness.named_config("huge")


class TestTraining:
    def test_log_is_monotone_and_finite(self, trained):
        _, result = trained
        idx = [row[0] for row in result.log]
        assert idx == sorted(idx) and len(set(idx)) == len(idx) and idx[0] == 1
        assert np.all(np.isfinite(np.array(result.log, dtype=float)))
        assert result.agent.updates == harness.total_updates(trained[0].run)

    def test_deterministic(self, trained):
        cfg, first = trained
        again = harness.run_training(cfg)
        assert again.log == first.log

    def test_checkpoints_and_log_file(self, tmp_path):
        cfg = smoke(agent="dqn", checkpoint_every=5)
        result = harness.run_training(cfg, tmp_path)
        assert (tmp_path / "checkpoint.npz").exists()
        assert len(result.checkpoints) == result.agent.updates // 5 + 1
        with open(tmp_path / "training_log.csv") as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == harness.LOG_COLUMNS
        assert len(rows) - 1 == len(result.log)
        agent = harness.load_agent(cfg, tmp_path / "checkpoint.npz")
        x = np.zeros((1, agent.spec.input_width))
        np.testing.assert_array_equal(agent.action_values(x), result.agent.action_values(x))

    def test_checkpoint_mismatch(self, tmp_path, trained):
        cfg, result = trained
        harness._checkpoint(result.agent, cfg, tmp_path / "c.npz")
        with pytest.raises(ValueError):
            harness.load_agent(cfg.replace(agent="qrdqn"), tmp_path / "c.npz")
        with pytest.raises(ValueError):
            harness.load_agent(cfg.replace(trunk=(6, 4)), tmp_path / "c.npz")


class TestEvaluation:
    def test_baseline_against_itself_is_100(self):
        cfg = smoke(eval_items=20, eval_steps=200)
        result = harness.run_evaluation(
            cfg, lambda items, sc: SQPolicy.calibrated(items, sc, safety_days=cfg.run.sq_safety_days,
                                                       cover_days=cfg.run.sq_cover_days))
        for g in result.generations:
            assert g.baseline_profit > 0
            assert g.norm_profit_pct == 100.0 and g.norm_waste_pct == 100.0
            assert g.agent_availability == g.baseline_availability

    def test_agent_evaluation(self, trained):
        cfg, result = trained
        run = harness.run_evaluation(cfg, result.agent)
        assert len(run.generations) == cfg.run.eval_generations
        assert run.summary()["conservation_violations"] == 0
        for g in run.generations:
            assert g.excluded_items + np.sum(g.item_baseline_profit > 0) == cfg.run.eval_items

    def test_same_data_for_every_agent(self):
        a = [items.cost for _, items, _ in harness.evaluation_data(smoke(agent="dqn"))]
        b = [items.cost for _, items, _ in harness.evaluation_data(smoke(agent="gtdqn", scenario="H2"))]
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_forecast_error_grows_with_noise(self):
        cfg = smoke(eval_steps=200)
        mae = [harness.run_evaluation(cfg.replace(scenario=s), lambda items, sc: SQPolicy.calibrated(items, sc))
               .summary()["forecast_mae"] for s in ("H0", "H1", "H2")]
        assert mae[0] < mae[1] < mae[2]

    def test_mad(self):
        assert harness.median_absolute_deviation([1, 2, 9]) == 1.0
        assert harness.standard_error([1.0]) == 0.0
        assert harness.standard_error([1.0, 3.0]) == pytest.approx(1.0)


class TestResultFiles:
    def _result(self, trained):
        cfg, result = trained
        return harness.run_evaluation(cfg, result.agent, trace=True)

    def test_csv_round_trip(self, tmp_path, trained):
        run = self._result(trained)
        paths = harness.emit_results(run, tmp_path)
        rows = harness.read_generations_csv(paths["generations"])
        assert len(rows) == len(run.generations)
        for row, g in zip(rows, run.generations):
            for col in harness.GENERATION_COLUMNS:
                assert row[col] == getattr(g, col) or (np.isnan(row[col]) and np.isnan(getattr(g, col)))
            assert abs(row["norm_profit_pct"] - 100 * row["agent_profit"] / row["baseline_profit"]) < 1e-9

    def test_manifest_has_every_field(self, tmp_path, trained):
        run = self._result(trained)
        paths = harness.emit_results(run, tmp_path)
        m = json.loads(paths["manifest"].read_text())
        assert set(m["config"]) == set(trained[0].to_dict())
        assert set(AgentConfig().to_dict()) <= set(m["config"])
        assert m["seeds"]["seed"] == trained[0].run.seed
        assert {"mad", "std_error"} <= set(m["summary"]["norm_profit_pct"])

    def test_trace(self, tmp_path, trained):
        run = self._result(trained)
        paths = harness.emit_results(run, tmp_path)
        with open(paths["trace"]) as fh:
            rows = list(csv.DictReader(fh))
        cfg = trained[0]
        assert tuple(rows[0]) == harness.TRACE_COLUMNS
        assert len(rows) == cfg.run.eval_steps * cfg.run.eval_items

    def test_byte_identical(self, tmp_path, trained):
        run_a, run_b = self._result(trained), self._result(trained)
        pa = harness.emit_results(run_a, tmp_path / "a")
        pb = harness.emit_results(run_b, tmp_path / "b")
        for key in ("generations", "manifest", "trace"):
            assert pa[key].read_bytes() == pb[key].read_bytes()


class TestAudit:
    def test_random_sweep_is_clean(self):
        report = harness.audit(smoke(), episodes=3, steps=60, items_per_episode=5)
        assert report.ok and report.episodes == 3


class TestCli:
    def test_generate_items(self, tmp_path):
        assert cli.main(["generate-items", "--seed", "3", "--count", "7", "--out", str(tmp_path / "i.csv")]) == 0
        assert len(read_items_csv(tmp_path / "i.csv")) == 7

    def test_train_evaluate_audit(self, tmp_path, capsys):
        common = ["--preset", "smoke", "--seed", "2", "--scenario", "H1", "--agent", "gtdqn", "--quantiles", "5",
                  "--waste-weight", "10", "--out", str(tmp_path)]
        assert cli.main(["train", *common]) == 0
        cfg = harness.load_config(tmp_path / "config.json")
        assert (cfg.run.seed, cfg.run.scenario, cfg.agent.n_quantiles, cfg.run.waste_weight) == (2, "H1", 5, 10.0)
        assert cli.main(["evaluate", *common, "--trace"]) == 0
        assert (tmp_path / "generations.csv").exists() and (tmp_path / "trace.csv").exists()
        assert cli.main(["audit", *common, "--episodes", "2", "--steps", "20"]) == 0
        assert json.loads((tmp_path / "audit.json").read_text())["conservation_violations"] == 0

    def test_config_file_and_errors(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text(json.dumps({"train_items": -1, "gamma": 3}))
        code = cli.main(["train", "--preset", "smoke", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path)])
        assert code == 2
        err = capsys.readouterr().err
        assert "train_items" in err and "gamma" in err
