import json

import numpy as np
import pytest

from armik.cli import main


@pytest.fixture(scope="module")
def family_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("family3")
    rc = main(
        [
            "generate",
            "--dof", "3",
            "--configs", "3",
            "--samples", "120",
            "--seed", "7",
            "--out", str(out),
            "--val-samples", "60",
        ]
    )
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory, family_dir):
    out = tmp_path_factory.mktemp("run-rgn")
    rc = main(
        [
            "train",
            "--variant", "rg-n",
            "--dof", "3",
            "--layers", "2",
            "--neurons", "8",
            "--data", str(family_dir),
            "--seed", "3",
            "--out", str(out),
            "--batch-size", "64",
            "--epochs", "4",
        ]
    )
    assert rc == 0
    return out


class TestGenerate:
    def test_layout(self, family_dir):
        splits = json.loads((family_dir / "splits.json").read_text())
        assert len(splits["train"]) == 2
        assert splits["test"] not in splits["train"]
        assert splits["validation"] == ["val_config_00"]
        for name, fname in splits["files"].items():
            assert (family_dir / fname).exists(), name
        manifest = json.loads((family_dir / "manifest.json").read_text())
        assert manifest["subcommand"] == "generate"
        assert manifest["seed"] == 7
        assert "splits.json" in manifest["outputs"]

    def test_rerun_is_byte_identical(self, family_dir, tmp_path):
        rc = main(
            [
                "generate",
                "--dof", "3",
                "--configs", "3",
                "--samples", "120",
                "--seed", "7",
                "--out", str(tmp_path),
                "--val-samples", "60",
            ]
        )
        assert rc == 0
        for name in ("config_00.dat", "config_01.dat", "config_02.dat", "val_config_00.dat"):
            assert (tmp_path / name).read_bytes() == (family_dir / name).read_bytes()

    def test_usage_error_exit_code(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["generate", "--dof", "3", "--nope"])
        assert exc.value.code == 2


class TestTrain:
    def test_checkpoint_named_by_variant(self, trained_dir):
        assert (trained_dir / "RG-N-3-2-8.ckpt.json").exists()
        assert (trained_dir / "report.csv").exists()
        assert (trained_dir / "report.json").exists()
        manifest = json.loads((trained_dir / "manifest.json").read_text())
        assert manifest["subcommand"] == "train"
        curve = (trained_dir / "report.csv").read_text().strip().splitlines()
        assert curve[0] == "epoch,train_loss,es_loss"
        assert len(curve) == 1 + 4

    def test_bad_variant_token(self, family_dir, tmp_path, capsys):
        rc = main(
            [
                "train",
                "--variant", "zz-q",
                "--dof", "3",
                "--layers", "2",
                "--neurons", "8",
                "--data", str(family_dir),
                "--seed", "3",
                "--out", str(tmp_path),
            ]
        )
        assert rc == 1
        assert "invalid-argument" in capsys.readouterr().err

    def test_corrupted_input_fails_integrity(self, family_dir, tmp_path, capsys):
        import shutil

        broken = tmp_path / "broken"
        shutil.copytree(family_dir, broken)
        with open(broken / "config_00.dat", "r+b") as f:
            f.seek(-8, 2)
            f.write(b"\0" * 8)
        rc = main(
            [
                "train",
                "--variant", "rg-n",
                "--dof", "3",
                "--layers", "2",
                "--neurons", "8",
                "--data", str(broken),
                "--seed", "3",
                "--out", str(tmp_path / "out"),
                "--epochs", "1",
            ]
        )
        assert rc == 1
        assert "integrity" in capsys.readouterr().err


class TestEvalAnalyze:
    def test_eval_and_analyze(self, family_dir, trained_dir, tmp_path, capsys):
        eval_dir = tmp_path / "eval"
        rc = main(
            [
                "eval",
                "--ckpt", str(trained_dir / "RG-N-3-2-8.ckpt.json"),
                "--data", str(family_dir),
                "--split", "test",
                "--out", str(eval_dir),
            ]
        )
        assert rc == 0
        assert "RG-N-3-2-8 on test" in capsys.readouterr().out
        report = json.loads((eval_dir / "report.json").read_text())
        assert report["n_samples"] == 120
        assert (eval_dir / "samples.csv").exists()

        out_dir = tmp_path / "analysis"
        rc = main(
            [
                "analyze",
                "--report", str(eval_dir / "report.json"),
                "--fraction", "0.05",
                "--out", str(out_dir),
            ]
        )
        assert rc == 0
        assert (out_dir / "position_error_histogram.csv").exists()
        assert (out_dir / "theta_pair_scatter.csv").exists()
        hist = np.loadtxt(out_dir / "position_error_histogram.csv", delimiter=",", skiprows=1)
        assert hist[:, 2].sum() == np.ceil(0.05 * 120)

    def test_dof_mismatch_exit_code(self, trained_dir, tmp_path, capsys):
        fam5 = tmp_path / "fam5"
        rc = main(
            [
                "generate",
                "--dof", "5",
                "--configs", "2",
                "--samples", "30",
                "--seed", "12",
                "--out", str(fam5),
                "--val-samples", "10",
            ]
        )
        assert rc == 0
        rc = main(
            [
                "eval",
                "--ckpt", str(trained_dir / "RG-N-3-2-8.ckpt.json"),
                "--data", str(fam5),
                "--split", "test",
                "--out", str(tmp_path / "eval5"),
            ]
        )
        assert rc == 1
        assert "invalid-argument" in capsys.readouterr().err


class TestInspect:
    def test_dataset(self, family_dir, capsys):
        rc = main(["inspect", str(family_dir / "config_00.dat")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "rows: 120" in out
        assert "dof: 3" in out

    def test_checkpoint(self, trained_dir, capsys):
        rc = main(["inspect", str(trained_dir / "RG-N-3-2-8.ckpt.json")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "variant: RG-N-3-2-8" in out
        assert "parameters:" in out

    def test_unknown_file(self, tmp_path, capsys):
        path = tmp_path / "mystery.bin"
        path.write_bytes(b"??")
        assert main(["inspect", str(path)]) == 1


class TestMultiRun:
    def test_repeat_runs_get_subdirectories(self, family_dir, tmp_path):
        out = tmp_path / "runs"
        rc = main(
            [
                "train",
                "--variant", "de-n",
                "--dof", "3",
                "--layers", "2",
                "--neurons", "8",
                "--data", str(family_dir),
                "--seed", "3",
                "--out", str(out),
                "--batch-size", "64",
                "--epochs", "2",
                "--runs", "2",
            ]
        )
        assert rc == 0
        assert (out / "run_00" / "DE-N-3-2-8.ckpt.json").exists()
        assert (out / "run_01" / "DE-N-3-2-8.ckpt.json").exists()
