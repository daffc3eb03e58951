import json
import math

import numpy as np
import pytest

from modewise import cli
from modewise.config import load_config
from modewise.errors import ConfigError

import synthetic_cmapss


def write_config(path, data_root, dataset="FD003", extra=""):
    path.write_text(f"""
[data]
dataset = {dataset}
root = {data_root}

[windows]
ntw = 40
stride = 4

[embedding]
n_neighbors = 15
epochs = 40
n_components = 2

[clustering]
n_modes = 2
restarts = 3
max_iter = 30

[training]
hidden = 6,6
epochs = 3
batch_size = 128
learning_rate = 0.001
folds = 2
{extra}
""")
    return path


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    """A full pipeline run on a small two-mode surrogate."""
    root = tmp_path_factory.mktemp("cli_data")
    spec = synthetic_cmapss.generate("fd003", root, n_train=8, n_test=4, seed=11)
    cfg_file = write_config(tmp_path_factory.mktemp("cfg") / "run.ini", spec.directory)
    run_dir = tmp_path_factory.mktemp("run")
    return spec, cfg_file, run_dir


class TestConfig:
    def test_defaults(self):
        cfg = load_config(None)
        assert cfg.seed == 42
        assert cfg.windows.ntw == 60 and cfg.windows.stride == 1
        assert cfg.embedding.n_neighbors == 80 and cfg.embedding.min_dist == 1.0
        assert cfg.training.rul_weight == 10.0
        assert cfg.training.learning_rate == pytest.approx(1e-4)
        assert math.isinf(cfg.reproduce.lambdas[-1])

    def test_file_values_and_comments(self, tmp_path):
        f = tmp_path / "c.ini"
        f.write_text("[windows]\nntw = 30 ; desk scale\n[training]\nrul_weight = inf\n")
        cfg = load_config(f)
        assert cfg.windows.ntw == 30
        assert math.isinf(cfg.training.rul_weight)

    def test_bad_value_is_config_error(self, tmp_path):
        f = tmp_path / "c.ini"
        f.write_text("[windows]\nntw = sixty\n")
        with pytest.raises(ConfigError):
            load_config(f)

    def test_missing_file_is_config_error(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.ini")

    def test_overrides(self):
        cfg = load_config(None, overrides={"seed": 7, "dataset": "FD001", "data_root": "/x"})
        assert cfg.seed == 7 and cfg.data.dataset == "FD001" and cfg.data.root == "/x"

    def test_stage_hash_chains(self):
        a = load_config(None)
        b = load_config(None, overrides={"seed": 7})
        # seed feeds embed but not preprocess
        assert a.stage_hash("preprocess") == b.stage_hash("preprocess")
        assert a.stage_hash("embed") != b.stage_hash("embed")
        assert a.stage_hash("evaluate") != b.stage_hash("evaluate")

    def test_training_change_only_invalidates_downstream(self, tmp_path):
        f = tmp_path / "c.ini"
        f.write_text("[training]\nepochs = 5\n")
        a = load_config(None)
        b = load_config(f)
        assert a.stage_hash("cluster") == b.stage_hash("cluster")
        assert a.stage_hash("train") != b.stage_hash("train")


class TestPipeline:
    def test_missing_upstream_names_command(self, tiny_run):
        spec, cfg_file, run_dir = tiny_run
        rc = cli.main(["--config", str(cfg_file), "--run-dir", str(run_dir / "fresh"),
                       "evaluate"])
        assert rc == cli.EXIT_MISSING_ARTIFACT

    def test_full_chain_and_idempotence(self, tiny_run, capsys):
        spec, cfg_file, run_dir = tiny_run
        base = ["--config", str(cfg_file), "--run-dir", str(run_dir)]
        for command in ("preprocess", "embed", "cluster", "train", "evaluate"):
            assert cli.main(base + [command]) == 0, command
        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert set(manifest["stages"]) == {"preprocess", "embed", "cluster", "train", "evaluate"}
        assert (run_dir / "embedding.csv").exists()
        assert (run_dir / "mode_labels.csv").exists()
        assert (run_dir / "model" / "fold_0.npz").exists()
        report = json.loads((run_dir / "report.json").read_text())
        assert set(report["fold_stats"]) == {"rmse", "mae", "mape", "mr"}

        # every artifact is referenced by exactly one stage
        all_artifacts = [a for s in manifest["stages"].values() for a in s["artifacts"]]
        assert len(all_artifacts) == len(set(all_artifacts))

        # unchanged config: embed is skipped and notes the cache hit
        capsys.readouterr()
        assert cli.main(base + ["embed"]) == 0
        assert "skipped" in capsys.readouterr().out
        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert manifest["stages"]["embed"]["notes"]["cache_hits"] >= 1

    def test_changed_config_invalidates_downstream(self, tiny_run, tmp_path):
        spec, cfg_file, run_dir = tiny_run
        changed = write_config(tmp_path / "changed.ini", spec.directory,
                               extra="\n[run]\nseed = 7\n")
        rc = cli.main(["--config", str(changed), "--run-dir", str(run_dir), "cluster"])
        assert rc == cli.EXIT_MISSING_ARTIFACT  # embed hash no longer matches

    def test_lock_excludes_second_writer(self, tiny_run):
        spec, cfg_file, run_dir = tiny_run
        lock = run_dir / ".lock"
        lock.write_text("pid=held\n")
        try:
            rc = cli.main(["--config", str(cfg_file), "--run-dir", str(run_dir), "embed"])
            assert rc == cli.EXIT_MISSING_ARTIFACT
        finally:
            lock.unlink()

    def test_missing_data_root_is_config_error(self, tmp_path, monkeypatch):
        monkeypatch.delenv("MODEWISE_DATA_ROOT", raising=False)
        rc = cli.main(["--run-dir", str(tmp_path / "r"), "preprocess"])
        assert rc == cli.EXIT_CONFIG

    def test_malformed_data_is_data_error(self, tmp_path):
        root = tmp_path / "data"
        root.mkdir()
        (root / "train_FD003.txt").write_text("1 1 0.0 0.0\n")
        (root / "test_FD003.txt").write_text("1 1 0.0 0.0\n")
        (root / "RUL_FD003.txt").write_text("5\n")
        cfg = write_config(tmp_path / "c.ini", root)
        rc = cli.main(["--config", str(cfg), "--run-dir", str(tmp_path / "r"), "preprocess"])
        assert rc == cli.EXIT_DATA

    def test_env_var_supplies_root(self, tiny_run, tmp_path, monkeypatch):
        spec, _, _ = tiny_run
        monkeypatch.setenv("MODEWISE_DATA_ROOT", str(spec.directory))
        cfg = tmp_path / "c.ini"
        cfg.write_text("[windows]\nntw = 40\nstride = 4\n[embedding]\nn_neighbors = 15\n"
                       "epochs = 5\n[clustering]\nn_modes = 2\nrestarts = 2\n")
        rc = cli.main(["--config", str(cfg), "--run-dir", str(tmp_path / "r"), "preprocess"])
        assert rc == 0


class TestReproduce:
    def test_summary_table(self, tiny_run, tmp_path, capsys):
        spec, _, _ = tiny_run
        cfg_file = write_config(tmp_path / "rep.ini", spec.directory,
                                extra="\n[reproduce]\netas = 0,0.5\nlambdas = 10\n")
        run_dir = tmp_path / "run"
        rc = cli.main(["--config", str(cfg_file), "--run-dir", str(run_dir), "reproduce"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "summary written" in out
        lines = (run_dir / "reproduce_summary.csv").read_text().strip().splitlines()
        assert lines[0].startswith("variant,rul_weight,mono_weight,rmse_mean")
        assert len(lines) == 3  # eta 0, eta 0.5 (lambda 10 deduplicated)
        run_dirs = {p.name for p in (run_dir / "reproduce").iterdir()}
        assert run_dirs == {"lambda_10_eta_0", "lambda_10_eta_0.5"}
