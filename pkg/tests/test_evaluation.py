import csv
import json

import numpy as np
import pytest

from polyspec import modalities as mod
from polyspec.config import ModelConfig
from polyspec.dataset import Dataset
from polyspec.evaluation import (PolicyRunner, batched_rollout,
                                 default_modality_sets, evaluate, rollout,
                                 write_report)
from polyspec.policy import PolicyModel
from polyspec.rng import RngStream
from polyspec.synthetic import (PointPressEnv, SyntheticSuiteConfig,
                                expert_action, generate_synthetic_suite)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("suite")
    generate_synthetic_suite(
        SyntheticSuiteConfig(n_tasks=2, demos_per_task=2, horizon=12), d)
    return Dataset(d)


@pytest.fixture(scope="module")
def model():
    return PolicyModel(ModelConfig(obs_window=5), RngStream(0).split("init"))


class TestRollout:
    def test_expert_policy_succeeds(self):
        env = PointPressEnv(task_id=1, horizon=30)
        env.reset(np.array([0.5, 0.5]))
        result = rollout(lambda w, p: expert_action(env.pos, env.target),
                         env, horizon=30)
        assert result["success"]
        assert result["trajectory"].shape == (31, env.obs_dim)

    def test_rejects_bad_horizon(self):
        env = PointPressEnv(task_id=0, horizon=10)
        env.reset(np.array([0.5, 0.5]))
        with pytest.raises(ValueError, match="horizon"):
            rollout(lambda w, p: np.zeros(3), env, horizon=0)

    def test_trajectory_deterministic(self):
        trajs = []
        for _ in range(2):
            env = PointPressEnv(task_id=0, horizon=15)
            env.reset(np.array([0.3, 0.6]))
            r = rollout(lambda w, p: expert_action(env.pos, env.target),
                        env, horizon=15)
            trajs.append(r["trajectory"].tobytes())
        assert trajs[0] == trajs[1]


class TestBatchedRollout:
    def test_matches_sequential_rollout(self, model, dataset):
        """Running episodes in one batch must not change any trajectory."""
        horizon = dataset.meta["horizon"]
        starts = [np.array([0.4, 0.4]), np.array([0.7, 0.3])]
        specs = [dataset.spec(t, mod.TEXT_GOAL, 8) for t in (0, 1)]

        envs = []
        for t, s0 in zip((0, 1), starts):
            env = PointPressEnv(t, horizon)
            env.reset(s0.copy())
            envs.append(env)
        runner = PolicyRunner(model)
        batched = batched_rollout(runner, envs, {mod.TEXT_GOAL: specs},
                                  horizon, window=model.cfg.obs_window)

        for i, (t, s0) in enumerate(zip((0, 1), starts)):
            env = PointPressEnv(t, horizon)
            env.reset(s0.copy())
            single = batched_rollout(runner, [env],
                                     {mod.TEXT_GOAL: [specs[i]]},
                                     horizon, window=model.cfg.obs_window)[0]
            np.testing.assert_allclose(single["trajectory"],
                                       batched[i]["trajectory"],
                                       rtol=1e-4, atol=1e-5)

    def test_variable_length_specs_padded(self, model, dataset):
        horizon = dataset.meta["horizon"]
        specs = [dataset.spec(t, mod.TEXT_INSTRUCTIONS, 8) for t in (0, 1)]
        envs = []
        for t in (0, 1):
            env = PointPressEnv(t, horizon)
            env.reset(np.array([0.5, 0.5]))
            envs.append(env)
        results = batched_rollout(PolicyRunner(model), envs,
                                  {mod.TEXT_INSTRUCTIONS: specs}, horizon,
                                  window=model.cfg.obs_window)
        assert len(results) == 2


class TestEvaluate:
    def test_report_structure(self, model, dataset):
        rep = evaluate(model, dataset, [(mod.TEXT_GOAL,),
                                        (mod.TEXT_GOAL, mod.IMAGE_GOAL)],
                       trials_per_task=2, seeds=[0, 1])
        assert len(rep.rows) == 2 * 2 * dataset.n_tasks
        assert len(rep.aggregates) == 2
        for agg in rep.aggregates:
            assert agg["trials"] == 2 * 2 * dataset.n_tasks
            assert 0.0 <= agg["mean_success_rate"] <= 1.0
        # per-seed breakdown present
        assert {r["seed"] for r in rep.rows} == {0, 1}

    def test_eval_split_specs_only_by_default(self, model, dataset):
        with pytest.raises(ValueError, match="allow_train_specs"):
            evaluate(model, dataset, [(mod.TEXT_GOAL,)], 1, [0], split="train")
        rep = evaluate(model, dataset, [(mod.TEXT_GOAL,)], 1, [0],
                       split="train", allow_train_specs=True)
        assert rep.config["split"] == "train"

    def test_unknown_modality_rejected(self, model, dataset):
        with pytest.raises(ValueError, match="modality"):
            evaluate(model, dataset, [("text",)], 1, [0])

    def test_zero_trials_flagged(self, model, dataset):
        rep = evaluate(model, dataset, [(mod.SPEECH_GOAL,)], 0, [0])
        assert all(r["zero_trials"] for r in rep.rows)
        assert rep.aggregates[0]["zero_trials"]
        assert rep.aggregates[0]["mean_success_rate"] is None

    def test_deterministic_given_seeds(self, model, dataset):
        a = evaluate(model, dataset, [(mod.IMAGE_GOAL,)], 2, [3])
        b = evaluate(model, dataset, [(mod.IMAGE_GOAL,)], 2, [3])
        assert a.rows == b.rows

    def test_default_sets_are_the_six_singletons(self):
        sets = default_modality_sets()
        assert sets == [(m,) for m in mod.MODALITIES]


class TestWriteReport:
    def test_renders_all_outputs(self, model, dataset, tmp_path):
        rep = evaluate(model, dataset, [(mod.TEXT_GOAL,)], 1, [0])
        out = write_report(rep, tmp_path / "eval",
                           dump_trajectories=[np.zeros((3, 3))])
        for name in ("report.json", "report.txt", "report.csv",
                     "trajectories.csv"):
            assert (out / name).is_file(), name
        assert (out / "figures" / "success_rates.png").stat().st_size > 0

        loaded = json.loads((out / "report.json").read_text())
        assert loaded["aggregates"] == rep.aggregates

        with open(out / "report.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == len(rep.rows)
        assert rows[0]["modality_set"] == mod.TEXT_GOAL

        table = (out / "report.txt").read_text().splitlines()
        assert table[0].split() == ["modality", "set", "trials", "success",
                                    "rate"]
        assert len(table) == 1 + len(rep.aggregates)
