from __future__ import annotations

import json

import numpy as np
import pytest

from attrinet import cli
from attrinet import dataset as ds
from helpers import dir_digest


def run_cli(*argv):
    return cli.main(list(argv))


@pytest.fixture(scope="module")
def cli_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("clids") / "data"
    code = run_cli(
        "make-synthetic", "--n", "24", "--classes", "2", "--size", "64",
        "--seed", "3", "--out", str(root),
    )
    assert code == 0
    return root


@pytest.fixture(scope="module")
def cli_run(cli_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("clirun") / "run"
    cfg = {
        "generator_steps": 3,
        "batch_size": 3,
        "critic_steps_per_gen": 1,
        "critic_boost_initial": 1,
        "critic_boost_steps": 1,
        "checkpoint_every": 3,
    }
    cfg_path = out.parent / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    code = run_cli(
        "train", "--dataset", str(cli_dataset), "--out", str(out),
        "--config", str(cfg_path), "--seed", "4",
    )
    assert code == 0
    return out


class TestMakeSynthetic:
    def test_reruns_are_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run_cli(
                "make-synthetic", "--n", "8", "--classes", "2", "--size", "64",
                "--seed", "1", "--out", str(out),
            ) == 0
        assert dir_digest(a / "images") == dir_digest(b / "images")

    def test_missing_out_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as err:
            run_cli("make-synthetic", "--n", "4", "--classes", "2")
        assert err.value.code == 2

    def test_config_echoed(self, cli_dataset):
        echoed = json.loads((cli_dataset / "config.json").read_text())
        assert echoed["command"] == "make-synthetic"
        assert echoed["seed"] == 3


class TestContaminate:
    def test_writes_new_directory_and_log(self, cli_dataset, tmp_path):
        out = tmp_path / "ctrain"
        before = dir_digest(cli_dataset)
        code = run_cli(
            "contaminate", "--dataset", str(cli_dataset), "--out", str(out),
            "--class", "0", "--fraction", "0.5", "--text", "CXR-ROOM1", "--seed", "2",
        )
        assert code == 0
        assert dir_digest(cli_dataset) == before  # input untouched
        log = ds.read_injection_log(out / "injection_log.jsonl")
        data = ds.ManifestDataset(cli_dataset)
        assert len(log) == int(np.floor(0.5 * len(data.positives(0)) + 0.5))
        assert all(set(e) == {"id", "class", "box"} for e in log)

    def test_fraction_above_one_rejected(self, cli_dataset, tmp_path, capsys):
        code = run_cli(
            "contaminate", "--dataset", str(cli_dataset), "--out", str(tmp_path / "x"),
            "--class", "0", "--fraction", "1.5",
        )
        assert code == 2
        assert "fraction" in capsys.readouterr().err


class TestTrain:
    def test_outputs_exist(self, cli_run):
        assert (cli_run / "loss_log.csv").exists()
        assert (cli_run / "summary.json").exists()
        assert list((cli_run / "checkpoints").glob("*.npz"))
        echoed = json.loads((cli_run / "config.json").read_text())
        assert echoed["generator_steps"] == 3
        assert echoed["seed"] == 4  # flag override wins over config file

    def test_unknown_config_key_rejected(self, cli_dataset, tmp_path, capsys):
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text(json.dumps({"generator_steps": 2, "momentum": 0.9}))
        code = run_cli(
            "train", "--dataset", str(cli_dataset), "--out", str(tmp_path / "run"),
            "--config", str(cfg_path),
        )
        assert code == 2
        assert "unknown config keys" in capsys.readouterr().err

    def test_insufficient_data_is_data_error(self, tmp_path, capsys):
        root = tmp_path / "small"
        ds.make_synthetic(root, num_samples=4, num_classes=2, size=64, rng_seed=0)
        code = run_cli(
            "train", "--dataset", str(root), "--out", str(tmp_path / "run"),
            "--steps", "1",
        )
        assert code == 3

    def test_ablation_flag_zeroes_terms(self, cli_dataset, tmp_path):
        out = tmp_path / "ablation"
        code = run_cli(
            "train", "--dataset", str(cli_dataset), "--out", str(out),
            "--steps", "1", "--batch-size", "3", "--ablation", "cls",
        )
        assert code == 0
        log = (out / "loss_log.csv").read_text()
        total = [l for l in log.splitlines() if ",total," in l][0]
        cls_row = [l for l in log.splitlines() if ",cls," in l][0]
        assert abs(float(total.rsplit(",", 1)[1]) - 100 * float(cls_row.rsplit(",", 1)[1])) < 1e-4


class TestEvalAndExplain:
    def test_eval_writes_metric_tables(self, cli_dataset, cli_run, tmp_path):
        ckpt = sorted((cli_run / "checkpoints").glob("*.npz"))[-1]
        out = tmp_path / "eval"
        code = run_cli(
            "eval", "--checkpoint", str(ckpt), "--dataset", str(cli_dataset),
            "--out", str(out), "--metrics", "all",
        )
        assert code == 0
        for name in ("auc.csv", "class_sensitivity.csv", "disease_sensitivity.csv"):
            assert (out / name).exists()

    def test_eval_confounder_with_injection_log(self, cli_dataset, cli_run, tmp_path):
        ckpt = sorted((cli_run / "checkpoints").glob("*.npz"))[-1]
        cont = tmp_path / "ctrain"
        run_cli(
            "contaminate", "--dataset", str(cli_dataset), "--out", str(cont),
            "--class", "0", "--fraction", "1.0",
        )
        out = tmp_path / "eval"
        code = run_cli(
            "eval", "--checkpoint", str(ckpt), "--dataset", str(cont),
            "--out", str(out), "--metrics", "auc",
            "--injection-log", str(cont / "injection_log.jsonl"),
        )
        assert code == 0
        assert (out / "confounder_sensitivity.csv").exists()

    def test_explain_global_and_local(self, cli_dataset, cli_run, tmp_path):
        ckpt = sorted((cli_run / "checkpoints").glob("*.npz"))[-1]
        out = tmp_path / "explain"
        data = ds.ManifestDataset(cli_dataset)
        sample = data.records[0].id
        code = run_cli(
            "explain", "--checkpoint", str(ckpt), "--dataset", str(cli_dataset),
            "--out", str(out), "--ids", sample, "--global",
        )
        assert code == 0
        assert (out / "global_explanation.npz").exists()
        assert list(out.glob(f"{sample}_*.png")) and list(out.glob(f"{sample}_*.npz"))

    def test_unknown_sample_id_is_data_error(self, cli_dataset, cli_run, tmp_path):
        ckpt = sorted((cli_run / "checkpoints").glob("*.npz"))[-1]
        code = run_cli(
            "explain", "--checkpoint", str(ckpt), "--dataset", str(cli_dataset),
            "--out", str(tmp_path / "x"), "--ids", "nope",
        )
        assert code == 3
