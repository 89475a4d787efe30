import json
import subprocess
import sys

import numpy as np
import pytest

from snacflow.cli import load_config, main
from snacflow.errors import ConfigError
from snacflow.synthdata import ConditionSpec, Dataset, DatasetSpec, conditions_json, dataset_csv


def write_cfg(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture
def cfg(tmp_path):
    return write_cfg(tmp_path / "cfg.json", {
        "data": {"n_seen": 3, "n_unseen": 2, "samples_per_condition": 40},
        "train": {"steps": 10, "hidden": 8, "batch_size": 16, "eval_every": 5},
        "eval": {"n_generate": 200, "svg_points": 50},
        "output_dir": str(tmp_path / "runs"),
    })


def run_dir(tmp_path):
    (d,) = (tmp_path / "runs").iterdir()
    return d


class TestConfig:
    def test_dotted_override(self, cfg):
        c = load_config(cfg, ["train.steps=3", "data.base_shape=two_rings", "eval.svg=false"])
        assert c.train.steps == 3 and c.data.base_shape == "two_rings" and not c.eval.svg

    def test_unknown_nested_key_named(self, cfg):
        with pytest.raises(ConfigError, match="lerning_rate"):
            load_config(cfg, ["train.lerning_rate=0.1"])

    def test_run_dir_follows_config_hash(self, cfg):
        a, b = load_config(cfg), load_config(cfg, ["train.steps=11"])
        assert a.run_dir != b.run_dir and a.run_dir == load_config(cfg).run_dir


class TestGen:
    def test_writes_files_with_row_count(self, cfg, tmp_path, capsys):
        assert main(["gen", "--config", cfg]) == 0
        d = run_dir(tmp_path)
        lines = (d / "dataset.csv").read_text().splitlines()
        assert len(lines) - 1 == 5 * 40
        assert "entropy estimate" in capsys.readouterr().out
        assert len(json.loads((d / "conditions.json").read_text())["conditions"]) == 5

    def test_byte_identical(self, cfg, tmp_path):
        main(["gen", "--config", cfg, "--out", str(tmp_path / "a")])
        main(["gen", "--config", cfg, "--out", str(tmp_path / "b")])
        for name in ("dataset.csv", "conditions.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_malformed_config(self, tmp_path, capsys):
        bad = write_cfg(tmp_path / "bad.json", {"data": {"chanels": 3}})
        assert main(["gen", "--config", bad]) == 2
        assert "chanels" in capsys.readouterr().err

    def test_invalid_json(self, tmp_path):
        (tmp_path / "x.json").write_text("{nope")
        assert main(["gen", "--config", str(tmp_path / "x.json")]) == 2


class TestTrainEvalSample:
    def test_train_writes_checkpoint_and_loss(self, cfg, tmp_path):
        assert main(["train", "--config", cfg]) == 0
        d = run_dir(tmp_path)
        lines = (d / "loss.csv").read_text().split("\n")
        assert lines[0] == "step,train_nll,unseen_nll"
        assert len(lines) == 12 and lines[-1] == ""
        assert lines[1].count(",") == 2 and lines[2].endswith(",")
        assert json.loads((d / "checkpoint.json").read_text())["format_version"] == 1

    def test_train_deterministic(self, cfg, tmp_path):
        main(["train", "--config", cfg, "--out", str(tmp_path / "a")])
        main(["train", "--config", cfg, "--out", str(tmp_path / "b")])
        assert ((tmp_path / "a" / "checkpoint.json").read_bytes()
                == (tmp_path / "b" / "checkpoint.json").read_bytes())

    def test_resume(self, cfg, tmp_path):
        main(["train", "--config", cfg, "--set", "train.steps=10", "--out", str(tmp_path / "a")])
        ck = json.loads((tmp_path / "a" / "checkpoint.json").read_text())
        assert ck["opt_state"]["t"] == 10

    def test_divergence_exit_code(self, cfg, capsys):
        assert main(["train", "--config", cfg, "--set", "train.learning_rate=10000",
                     "--set", "train.steps=50"]) == 3
        assert "diverged" in capsys.readouterr().err

    def test_eval_identity_on_standard_normal(self, cfg, tmp_path):
        spec = DatasetSpec(n_seen=1, n_unseen=1, samples_per_condition=5000)
        rng = np.random.default_rng(0)
        ds = Dataset(spec, [ConditionSpec(0, np.zeros(2), np.zeros(2), "seen"),
                            ConditionSpec(1, np.zeros(2), np.zeros(2), "unseen")],
                     rng.standard_normal((10_000, 1, 2)), np.repeat([0, 1], 5000),
                     {0: rng.normal(size=16), 1: rng.normal(size=16)})
        data_dir = tmp_path / "std"
        data_dir.mkdir()
        (data_dir / "dataset.csv").write_text(dataset_csv(ds))
        (data_dir / "conditions.json").write_text(conditions_json(ds))
        main(["train", "--config", cfg, "--set", "train.steps=0", "--out", str(tmp_path / "m")])
        assert main(["eval", "--checkpoint", str(tmp_path / "m" / "checkpoint.json"),
                     "--dataset", str(data_dir), "--set", "eval.n_generate=100"]) == 0
        report = json.loads((tmp_path / "m" / "report-snac.json").read_text())
        assert report["unseen_nll"] == pytest.approx(1.419, abs=0.03)
        assert (tmp_path / "m" / "scatter-snac-cond1.svg").exists()

    def test_eval_two_checkpoints_writes_comparison(self, cfg, tmp_path):
        for mode in ("snac", "baseline"):
            main(["train", "--config", cfg, "--set", f"train.mode={mode}",
                  "--out", str(tmp_path / mode)])
        out = tmp_path / "cmp"
        assert main(["eval", "--checkpoint", str(tmp_path / "snac" / "checkpoint.json"),
                     "--checkpoint", str(tmp_path / "baseline" / "checkpoint.json"),
                     "--config", cfg, "--out", str(out)]) == 0
        rows = (out / "comparison.csv").read_text().splitlines()
        assert [r.split(",")[0] for r in rows[1:]] == ["snac", "baseline", "oracle"]
        assert len(list(out.glob("scatter-*.svg"))) == 4

    def test_eval_missing_checkpoint(self, tmp_path):
        assert main(["eval", "--checkpoint", str(tmp_path / "missing.json")]) == 2

    def test_sample(self, cfg, tmp_path, capsys):
        main(["train", "--config", cfg, "--set", "train.steps=0", "--out", str(tmp_path)])
        capsys.readouterr()
        ck = str(tmp_path / "checkpoint.json")
        assert main(["sample", "--checkpoint", ck, "--condition-id", "4", "-n", "0"]) == 0
        assert capsys.readouterr().out == "sample,frame,ch0,ch1\n"
        out = tmp_path / "s.csv"
        assert main(["sample", "--checkpoint", ck, "--condition-id", "4", "-n", "20000",
                     "--out", str(out)]) == 0
        x = np.loadtxt(out, delimiter=",", skiprows=1)[:, 2:]
        assert np.all(np.abs(x.mean(axis=0)) < 0.03) and np.all(np.abs(x.std(axis=0) - 1) < 0.03)

    def test_sample_from_embedding_file(self, cfg, tmp_path, capsys):
        main(["train", "--config", cfg, "--set", "train.steps=0", "--out", str(tmp_path)])
        capsys.readouterr()
        (tmp_path / "g.json").write_text(json.dumps([0.0] * 16))
        assert main(["sample", "--checkpoint", str(tmp_path / "checkpoint.json"),
                     "--embedding", str(tmp_path / "g.json"), "-n", "3"]) == 0
        assert len(capsys.readouterr().out.splitlines()) == 4
        (tmp_path / "g.json").write_text(json.dumps([0.0] * 3))
        assert main(["sample", "--checkpoint", str(tmp_path / "checkpoint.json"),
                     "--embedding", str(tmp_path / "g.json")]) == 2

    def test_inputs_not_mutated(self, cfg, tmp_path):
        before = open(cfg).read()
        main(["train", "--config", cfg])
        assert open(cfg).read() == before


class TestCheck:
    def test_passes(self, capsys):
        assert main(["check"]) == 0
        assert "FAIL" not in capsys.readouterr().out

    def test_injected_logdet_fault_fails(self, capsys):
        assert main(["check", "--inject-fault", "logdet_sign"]) == 1
        out = capsys.readouterr().out
        line = next(ln for ln in out.splitlines() if ln.startswith("logdet_vs_numerical"))
        assert line.endswith("FAIL")


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "snacflow.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    for name in ("gen", "train", "eval", "sample", "check"):
        assert name in proc.stdout
