import json

import numpy as np
import pytest

from polyspec.cli import main
from polyspec.packs import write_tensor_pack


@pytest.fixture(scope="module")
def suite_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli_suite") / "suite"
    rc = main(["gen-synth", "--out", str(d), "--tasks", "2", "--demos", "2",
               "--horizon", "10"])
    assert rc == 0
    return d


@pytest.fixture(scope="module")
def run_dir(suite_dir, tmp_path_factory):
    d = tmp_path_factory.mktemp("cli_run") / "run"
    rc = main(["train", "--data", str(suite_dir), "--out", str(d),
               "--stage1-epochs", "1", "--stage2-epochs", "1",
               "--batch-size", "32", "--window", "5"])
    assert rc == 0
    return d


class TestGenSynth:
    def test_writes_expected_tree(self, suite_dir):
        assert (suite_dir / "meta.json").is_file()
        assert (suite_dir / "vocab.json").is_file()
        assert (suite_dir / "tasks" / "task_000" / "demos.tpk").is_file()
        assert (suite_dir / "tasks" / "task_001" / "specs" / "video_demonstration"
                / "10.tpk").is_file()


class TestTrain:
    def test_writes_metrics_and_checkpoints(self, run_dir):
        assert (run_dir / "metrics.jsonl").is_file()
        assert (run_dir / "checkpoint" / "params.tpk").is_file()
        assert (run_dir / "checkpoint_stage1" / "params.tpk").is_file()
        records = [json.loads(l) for l in
                   (run_dir / "metrics.jsonl").read_text().splitlines()]
        assert {r["stage"] for r in records} == {1, 2}

    def test_modality_specific_requires_modality(self, suite_dir, tmp_path):
        rc = main(["train", "--data", str(suite_dir),
                   "--out", str(tmp_path / "x"), "--mode",
                   "modality_specific"])
        assert rc == 1

    def test_missing_data_dir_fails(self, tmp_path):
        rc = main(["train", "--data", str(tmp_path / "nope"),
                   "--out", str(tmp_path / "x")])
        assert rc != 0

    def test_resume_from_checkpoint(self, suite_dir, run_dir, tmp_path):
        rc = main(["train", "--data", str(suite_dir),
                   "--out", str(tmp_path / "resumed"), "--stage", "2",
                   "--stage2-epochs", "1", "--batch-size", "32",
                   "--window", "5",
                   "--resume-from", str(run_dir / "checkpoint_stage1")])
        assert rc == 0


class TestEval:
    def test_writes_reports_and_figure(self, suite_dir, run_dir, tmp_path,
                                       capsys):
        out = tmp_path / "eval"
        rc = main(["eval", "--checkpoint", str(run_dir / "checkpoint"),
                   "--data", str(suite_dir), "--out", str(out),
                   "--sets", "text_goal,text_goal+image_goal",
                   "--trials", "1", "--seeds", "0,1",
                   "--dump-trajectories"])
        assert rc == 0
        for name in ("report.json", "report.txt", "report.csv",
                     "trajectories.csv"):
            assert (out / name).is_file(), name
        assert (out / "figures" / "success_rates.png").is_file()
        stdout = capsys.readouterr().out
        assert "text_goal+image_goal" in stdout

    def test_unknown_modality_in_sets(self, suite_dir, run_dir, tmp_path):
        rc = main(["eval", "--checkpoint", str(run_dir / "checkpoint"),
                   "--data", str(suite_dir), "--out", str(tmp_path / "e"),
                   "--sets", "text_goal+bogus", "--trials", "1"])
        assert rc == 1

    def test_train_split_needs_flag(self, suite_dir, run_dir, tmp_path):
        args = ["eval", "--checkpoint", str(run_dir / "checkpoint"),
                "--data", str(suite_dir), "--out", str(tmp_path / "e2"),
                "--sets", "image_goal", "--trials", "1", "--split", "train"]
        assert main(args) == 1
        assert main(args + ["--allow-train-specs"]) == 0


class TestInspectPack:
    def test_table_output(self, tmp_path, capsys):
        path = tmp_path / "x.tpk"
        write_tensor_pack({"a/b": np.ones((2, 3), dtype=np.float32),
                           "c": np.full((4,), np.inf, dtype=np.float32)}, path)
        assert main(["inspect-pack", str(path)]) == 0
        out = capsys.readouterr().out
        lines = out.splitlines()
        assert lines[0].startswith("name")
        assert any("2x3" in l for l in lines)
        assert any(l.rstrip().endswith("NO") for l in lines)  # inf flagged

    def test_json_output(self, tmp_path, capsys):
        path = tmp_path / "y.tpk"
        write_tensor_pack({"t": np.zeros((1,), dtype=np.float32)}, path)
        assert main(["inspect-pack", str(path), "--json"]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report[0]["name"] == "t"

    def test_missing_file_is_io_error(self, tmp_path):
        assert main(["inspect-pack", str(tmp_path / "nope.tpk")]) == 2

    def test_corrupt_file_is_io_error(self, tmp_path):
        path = tmp_path / "bad.tpk"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        assert main(["inspect-pack", str(path)]) == 2


class TestGradcheckCommand:
    def test_reports_all_groups_and_passes(self, capsys):
        assert main(["gradcheck", "--samples", "1"]) == 0
        out = capsys.readouterr().out
        for tag in ("proj_V", "proj_shared", "policy_encoder",
                    "policy_decoder", "heads", "decoder_queries"):
            assert tag in out
        assert "max relative error" in out
