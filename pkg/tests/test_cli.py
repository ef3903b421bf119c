import json

import numpy as np
import pytest
from click.testing import CliRunner

from cift import dump_affinity_csv, dump_labels_csv, gen_synthetic_dataset
from cift.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def _config_doc(**overrides):
    doc = {
        "train": {"epochs": 2, "steps_per_epoch": 3, "feat_dim": 6, "batch_p": 3,
                  "batch_k": 2, "decay_epochs": [1], "seed": 5, "eval_shots": 2},
        "dataset": {"num_identities": 6, "per_id_per_modality": 4, "dim": 8,
                    "noise_scale": 0.5, "seed": 5},
    }
    doc.update(overrides)
    return doc


def _write_config(tmp_path, doc=None, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc if doc is not None else _config_doc()))
    return path


class TestTrain:
    def test_valid_config_populates_out_dir(self, runner, tmp_path):
        config = _write_config(tmp_path)
        out = tmp_path / "run"
        result = runner.invoke(main, ["train", str(config), "--out", str(out)])
        assert result.exit_code == 0, result.output
        for name in ("config.json", "losses.csv", "quality.json",
                     "retrieval_vis2ir.json", "retrieval_ir2vis.json", "model.bin"):
            assert (out / name).exists(), name

    def test_malformed_json_exits_2_without_partial_outputs(self, runner, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        out = tmp_path / "run"
        result = runner.invoke(main, ["train", str(bad), "--out", str(out)])
        assert result.exit_code == 2
        assert not out.exists()

    def test_unknown_key_exits_2(self, runner, tmp_path):
        doc = _config_doc()
        doc["train"]["learning_rate"] = 0.1
        config = _write_config(tmp_path, doc)
        result = runner.invoke(main, ["train", str(config), "--out", str(tmp_path / "run")])
        assert result.exit_code == 2

    def test_seed_flag_overrides_config(self, runner, tmp_path):
        config = _write_config(tmp_path)
        out = tmp_path / "run"
        result = runner.invoke(main, ["train", str(config), "--out", str(out), "--seed", "99"])
        assert result.exit_code == 0, result.output
        assert json.loads((out / "config.json").read_text())["seed"] == 99

    def test_missing_out_dir_exits_2(self, runner, tmp_path):
        config = _write_config(tmp_path)
        result = runner.invoke(main, ["train", str(config)])
        assert result.exit_code == 2

    def test_runtime_failure_exits_1(self, runner, tmp_path):
        doc = _config_doc()
        doc["train"]["batch_p"] = 8  # more identities than the dataset holds
        config = _write_config(tmp_path, doc)
        result = runner.invoke(main, ["train", str(config), "--out", str(tmp_path / "run")])
        assert result.exit_code == 1

    def test_out_dir_from_config_file(self, runner, tmp_path):
        out = tmp_path / "from_config"
        config = _write_config(tmp_path, _config_doc(out_dir=str(out)))
        result = runner.invoke(main, ["train", str(config)])
        assert result.exit_code == 0, result.output
        assert (out / "model.bin").exists()


class TestToySurface:
    def test_tiny_grid_row_count(self, runner, tmp_path):
        out = tmp_path / "surf"
        result = runner.invoke(main, [
            "toy-surface", "--repeats", "1", "--grid", "0,1x0,1",
            "--seed", "3", "--out", str(out), "--n", "40", "--classes", "4", "--dim", "6",
        ])
        assert result.exit_code == 0, result.output
        lines = (out / "surface.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + 4

    def test_same_seed_identical_bytes(self, runner, tmp_path):
        args = ["toy-surface", "--repeats", "2", "--grid", "0.5x0.5,1", "--seed", "7",
                "--n", "40", "--classes", "4", "--dim", "6"]
        a, b = tmp_path / "a", tmp_path / "b"
        assert runner.invoke(main, args + ["--out", str(a)]).exit_code == 0
        assert runner.invoke(main, args + ["--out", str(b)]).exit_code == 0
        assert (a / "surface.csv").read_bytes() == (b / "surface.csv").read_bytes()

    def test_default_repeats_is_100(self):
        (repeats_param,) = [p for p in main.commands["toy-surface"].params if p.name == "repeats"]
        assert repeats_param.default == 100

    def test_bad_grid_exits_2(self, runner, tmp_path):
        result = runner.invoke(main, ["toy-surface", "--grid", "0,1", "--out", str(tmp_path / "s")])
        assert result.exit_code == 2


class TestAffinityQuality:
    def test_block_ideal_inputs(self, runner, tmp_path):
        A = np.kron(np.eye(3), np.full((2, 2), 0.5))
        labels = np.repeat(np.arange(3), 2)
        dump_affinity_csv(A, tmp_path / "a.csv")
        dump_labels_csv(labels, tmp_path / "l.csv")
        result = runner.invoke(main, [
            "affinity-quality", str(tmp_path / "a.csv"), str(tmp_path / "l.csv"), "--top", "1",
        ])
        assert result.exit_code == 0, result.output
        assert json.loads(result.output) == {"q_a": 1.0, "error_ratio": 0.0}

    def test_matches_in_process_metrics(self, runner, tmp_path, rng):
        from cift import affinity_error_ratio, affinity_quality

        A = rng.uniform(0.05, 1.0, size=(10, 10))
        labels = np.repeat(np.arange(5), 2)
        dump_affinity_csv(A, tmp_path / "a.csv")
        dump_labels_csv(labels, tmp_path / "l.csv")
        result = runner.invoke(main, [
            "affinity-quality", str(tmp_path / "a.csv"), str(tmp_path / "l.csv"),
        ])
        assert result.exit_code == 0
        out = json.loads(result.output)
        assert out["q_a"] == affinity_quality(A, labels)
        assert out["error_ratio"] == affinity_error_ratio(A, labels, top=4)

    def test_top_defaults_to_four(self):
        (top_param,) = [p for p in main.commands["affinity-quality"].params if p.name == "top"]
        assert top_param.default == 4

    def test_dimension_mismatch_exits_2(self, runner, tmp_path, rng):
        dump_affinity_csv(rng.uniform(size=(4, 4)), tmp_path / "a.csv")
        dump_labels_csv(np.array([0, 1]), tmp_path / "l.csv")
        result = runner.invoke(main, [
            "affinity-quality", str(tmp_path / "a.csv"), str(tmp_path / "l.csv"),
        ])
        assert result.exit_code == 2


class TestEval:
    def test_eval_reproduces_training_evaluation(self, runner, tmp_path):
        config_doc = _config_doc()
        config = _write_config(tmp_path, config_doc)
        out = tmp_path / "run"
        assert runner.invoke(main, ["train", str(config), "--out", str(out)]).exit_code == 0
        ds_path = tmp_path / "ds.json"
        gen_synthetic_dataset(**config_doc["dataset"]).save(ds_path)

        eval_out = tmp_path / "eval"
        result = runner.invoke(main, [
            "eval", str(out / "model.bin"), str(ds_path), "--out", str(eval_out),
            "--transfer", "h2g", "--shots", "2", "--seed", str(config_doc["train"]["seed"]),
        ])
        assert result.exit_code == 0, result.output
        for mode in ("vis2ir", "ir2vis"):
            trained = json.loads((out / f"retrieval_{mode}.json").read_text())
            evaled = json.loads((eval_out / f"retrieval_{mode}.json").read_text())
            assert evaled == trained
            assert (eval_out / f"quality_{mode}.json").exists()

    def test_missing_model_exits_2(self, runner, tmp_path):
        ds_path = tmp_path / "ds.json"
        gen_synthetic_dataset(num_identities=4, per_id_per_modality=2, dim=6, seed=0).save(ds_path)
        result = runner.invoke(main, [
            "eval", str(tmp_path / "nope.bin"), str(ds_path), "--out", str(tmp_path / "e"),
        ])
        assert result.exit_code == 2

    def test_corrupt_model_exits_2(self, runner, tmp_path):
        ds_path = tmp_path / "ds.json"
        gen_synthetic_dataset(num_identities=4, per_id_per_modality=2, dim=6, seed=0).save(ds_path)
        bad = tmp_path / "model.bin"
        bad.write_bytes(b"garbage")
        result = runner.invoke(main, [
            "eval", str(bad), str(ds_path), "--out", str(tmp_path / "e"),
        ])
        assert result.exit_code == 2


def test_invalid_cift_threads_exits_2(runner, tmp_path):
    config = _write_config(tmp_path)
    result = runner.invoke(
        main, ["train", str(config), "--out", str(tmp_path / "run")],
        env={"CIFT_THREADS": "abc"},
    )
    assert result.exit_code == 2
