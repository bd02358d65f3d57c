import json

import pytest

from srgformer import checkpoint
from srgformer.cli import main

FAST = ["--set", "epochs=3", "--set", "embedding_dim=8", "--set", "hyperedges=4", "--set", "patience=2"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["prepare", "--synthetic", "--out", str(root / "data"), "--seed", "1"]) == 0
    assert main(["train", "--data", str(root / "data"), "--out", str(root / "model.srgf"), *FAST]) == 0
    return root


def _data(w):
    return str(w / "data")


def _ckpt(w):
    return str(w / "model.srgf")


class TestUsage:
    def test_no_command(self):
        assert main([]) == 1

    def test_unknown_flag(self, capsys):
        assert main(["train", "--bogus"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_config_key(self, workdir):
        assert main(["train", "--data", _data(workdir), "--out", "x", "--set", "nope=1"]) == 1

    def test_bad_variant(self, workdir):
        assert main(["ablate", "--data", _data(workdir), "--variants", "w/zz"]) == 1

    def test_recommend_needs_a_source(self):
        assert main(["recommend", "--user", "u0001"]) == 1

    def test_log_level_accepted_after_subcommand(self, workdir, capsys):
        assert main(["evaluate", "--data", _data(workdir), "--checkpoint", _ckpt(workdir), "--log-level", "WARNING"]) == 0


class TestDataErrors:
    def test_missing_checkpoint(self, workdir, capsys):
        assert main(["evaluate", "--data", _data(workdir), "--checkpoint", str(workdir / "nope.srgf")]) == 2
        assert "checkpoint not found" in capsys.readouterr().err

    def test_missing_interactions(self, tmp_path):
        assert main(["prepare", "--interactions", str(tmp_path / "none.tsv"), "--out", str(tmp_path / "o")]) == 2

    def test_feature_row_mismatch(self, tmp_path, workdir):
        inter = tmp_path / "i.tsv"
        inter.write_text("a\t1\t1\nb\t2\t2\n")
        feat = workdir / "data" / "features.visual.fmat"
        assert main(["prepare", "--interactions", str(inter), "--feature", f"visual={feat}", "--out", str(tmp_path / "o")]) == 2

    def test_unknown_user(self, workdir):
        assert main(["recommend", "--data", _data(workdir), "--checkpoint", _ckpt(workdir), "--user", "ghost"]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exit_code(workdir, capsys):
    code = main(["train", "--data", _data(workdir), "--out", str(workdir / "bad.srgf"), *FAST, "--set", "lr=1e200"])
    assert code == 3
    assert "numeric failure" in capsys.readouterr().err


class TestCommands:
    def test_prepare_writes_manifest(self, workdir):
        manifest = json.loads((workdir / "data" / "manifest.json").read_text())
        assert manifest["seed"] == 1 and manifest["ratios"] == [8.0, 1.0, 1.0]
        assert set(manifest["features"]) == {"visual", "textual"}

    def test_train_sidecar(self, workdir):
        report = json.loads((workdir / "model.srgf.train.json").read_text())
        assert report["epochs_run"] >= 1 and len(report["val_trace"]) == report["epochs_run"]

    def test_evaluate_prints_tsv(self, workdir, capsys):
        out_path = workdir / "eval.tsv"
        assert main(["evaluate", "--data", _data(workdir), "--checkpoint", _ckpt(workdir), "--out", str(out_path)]) == 0
        out = capsys.readouterr().out
        assert out.splitlines()[0].startswith("variant\tdataset\tR@10")
        assert out_path.read_text() == out
        assert (workdir / "eval.tsv.json").exists()

    def test_recommend_n(self, workdir, capsys):
        assert main(["recommend", "--data", _data(workdir), "--checkpoint", _ckpt(workdir), "--user", "u0003", "--n", "10"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 10 and len(set(lines)) == 10

    def test_recommend_short_list_warns(self, workdir, capsys):
        args = ["recommend", "--data", _data(workdir), "--checkpoint", _ckpt(workdir), "--user", "u0003", "--n", "1000", "--scores"]
        assert main(args) == 0
        captured = capsys.readouterr()
        assert 0 < len(captured.out.splitlines()) < 1000
        assert "only" in captured.err
        assert all(len(line.split("\t")) == 2 for line in captured.out.splitlines())

    def test_recommend_excludes_train_items(self, workdir, capsys):
        main(["recommend", "--data", _data(workdir), "--checkpoint", _ckpt(workdir), "--user", "u0003", "--n", "1000"])
        recommended = set(capsys.readouterr().out.split())
        train = {ln.split("\t")[1] for ln in (workdir / "data" / "train.tsv").read_text().splitlines() if ln.startswith("u0003\t")}
        assert train and not (recommended & train)

    def test_ablate_three_rows(self, workdir, capsys):
        out_path = workdir / "ablate.tsv"
        args = ["ablate", "--data", _data(workdir), "--variants", "w/GT,w/MCL", "--out", str(out_path), *FAST]
        assert main(args) == 0
        rows = capsys.readouterr().out.splitlines()[1:]
        assert [r.split("\t")[0] for r in rows] == ["full", "w/GT", "w/MCL"]
        sidecar = json.loads((workdir / "ablate.tsv.json").read_text())
        assert len(sidecar["rows"]) == 3 and len(sidecar["configs"]) == 3

    def test_seed_env_override(self, workdir, monkeypatch):
        monkeypatch.setenv("SRGF_SEED", "77")
        out = workdir / "seeded.srgf"
        assert main(["train", "--data", _data(workdir), "--out", str(out), *FAST]) == 0
        assert checkpoint.read_config(out).seed == 77

    def test_masked_dataset_variant(self, workdir, capsys):
        args = ["evaluate", "--data", _data(workdir), "--checkpoint", _ckpt(workdir), "--dataset", "RBM-D"]
        assert main(args) == 0
        assert "\tRBM-D\t" in capsys.readouterr().out
