"""Command line interface: subcommand flows and exit codes."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from pcda.cli import main
from pcda.dataio import load_archive, load_cloud, load_tensors, save_cloud

from conftest import make_cloud

BENCH_FLAGS = [
    "--n-points", "48",
    "--classes", "3",
    "--source-train", "9",
    "--source-test", "6",
    "--target-train", "9",
    "--target-test", "6",
    "--seed", "1",
]


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def last_json(out: str) -> dict:
    return json.loads(out.strip().splitlines()[-1])


@pytest.fixture(scope="module")
def bench_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "bench"
    code = main(["gen-bench", "--out", str(out)] + BENCH_FLAGS)
    assert code == 0
    return out


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, bench_dir):
    out = tmp_path_factory.mktemp("cli") / "run"
    code = main(
        [
            "train",
            "--bench", str(bench_dir),
            "--out", str(out),
            "--epochs", "1",
            "--batch-size", "4",
            "--dtype", "float32",
            "--kind", "sphere",
        ]
    )
    assert code == 0
    return out


class TestUsageErrors:
    def test_no_subcommand(self, capsys):
        code, _, err = run_cli(capsys, )
        assert code == 1
        assert "subcommand" in err

    def test_unknown_subcommand(self, capsys):
        code, _, err = run_cli(capsys, "frobnicate")
        assert code == 1
        assert "usage error" in err

    def test_bad_flag_value(self, capsys):
        code, _, err = run_cli(capsys, "eval", "--bench", "x", "--ckpt", "y",
                               "--split", "imaginary")
        assert code == 1
        assert "usage error" in err


class TestGenBench:
    def test_creates_archives_and_meta(self, bench_dir, capsys):
        names = {p.name for p in bench_dir.iterdir()}
        assert names >= {
            "source_train.dfrc", "source_test.dfrc",
            "target_train.dfrc", "target_test.dfrc", "meta.json",
        }
        ds = load_archive(bench_dir / "source_train.dfrc")
        assert len(ds.samples) == 9
        assert ds.samples[0].points.shape == (48, 3)
        meta = json.loads((bench_dir / "meta.json").read_text())
        assert meta["kind"] == "classification"
        assert len(meta["classes"]) == 3

    def test_reports_counts(self, tmp_path, capsys):
        out = tmp_path / "b2"
        code, stdout, _ = run_cli(
            capsys, "gen-bench", "--out", str(out), *BENCH_FLAGS
        )
        assert code == 0
        payload = last_json(stdout)
        assert payload["counts"] == {
            "source_train": 9, "source_test": 6,
            "target_train": 9, "target_test": 6,
        }

    def test_invalid_bench_config(self, tmp_path, capsys):
        code, _, err = run_cli(
            capsys, "gen-bench", "--out", str(tmp_path / "b3"), "--classes", "9"
        )
        assert code == 2
        assert "data error" in err


class TestDeform:
    def test_deform_flow_with_region_file(self, tmp_path, capsys):
        src = tmp_path / "in.xyz"
        save_cloud(src, make_cloud(0, 60))
        out = tmp_path / "out.xyz"
        region_out = tmp_path / "region.json"
        code, stdout, _ = run_cli(
            capsys, "deform", "--input", str(src), "--out", str(out),
            "--kind", "sphere", "--radius", "0.5", "--seed", "3",
            "--region-out", str(region_out),
        )
        assert code == 0
        payload = last_json(stdout)
        assert payload["kind"] == "sphere"
        assert payload["n"] == 60

        original = load_cloud(src)
        deformed = load_cloud(out)
        region = json.loads(region_out.read_text())
        assert deformed.shape == original.shape
        assert len(region) == payload["region_size"] > 0
        outside = np.setdiff1d(np.arange(60), region)
        np.testing.assert_allclose(deformed[outside], original[outside], atol=1e-15)
        assert not np.allclose(deformed[region], original[region])

    def test_missing_input_is_data_error(self, tmp_path, capsys):
        code, _, err = run_cli(
            capsys, "deform", "--input", str(tmp_path / "nope.xyz"),
            "--out", str(tmp_path / "o.xyz"),
        )
        assert code == 2
        assert "data error" in err


class TestMixup:
    def test_forced_gamma_one_copies_first_cloud(self, tmp_path, capsys):
        a_path, b_path = tmp_path / "a.xyz", tmp_path / "b.xyz"
        save_cloud(a_path, make_cloud(1, 40))
        save_cloud(b_path, make_cloud(2, 40))
        out = tmp_path / "m.xyz"
        code, stdout, _ = run_cli(
            capsys, "mixup", "--in-a", str(a_path), "--in-b", str(b_path),
            "--label-a", "0", "--label-b", "2", "--num-classes", "3",
            "--out", str(out), "--gamma", "1.0",
        )
        assert code == 0
        payload = last_json(stdout)
        assert payload["gamma"] == 1.0
        assert payload["soft_label"] == [1.0, 0.0, 0.0]
        # all points come from cloud a, in shuffled order
        mixed = load_cloud(out)
        orig = load_cloud(a_path)
        order = lambda p: p[np.lexsort(p.T)]
        np.testing.assert_allclose(order(mixed), order(orig), atol=1e-15)

    def test_random_gamma_reports_soft_label(self, tmp_path, capsys):
        a_path, b_path = tmp_path / "a.xyz", tmp_path / "b.xyz"
        save_cloud(a_path, make_cloud(1, 40))
        save_cloud(b_path, make_cloud(2, 40))
        code, stdout, _ = run_cli(
            capsys, "mixup", "--in-a", str(a_path), "--in-b", str(b_path),
            "--label-a", "0", "--label-b", "1", "--num-classes", "2",
            "--out", str(tmp_path / "m.xyz"), "--seed", "5",
        )
        assert code == 0
        payload = last_json(stdout)
        assert sum(payload["soft_label"]) == pytest.approx(1.0, abs=1e-12)


class TestTrainEvalPerplexity:
    def test_train_artifacts_and_lock_released(self, run_dir, capsys):
        for name in ("config.json", "metrics.jsonl", "last.ckpt", "best.ckpt"):
            assert (run_dir / name).exists()
        assert not (run_dir / ".lock").exists()

    def test_lock_conflict_is_usage_error(self, bench_dir, tmp_path, capsys):
        out = tmp_path / "locked"
        out.mkdir()
        (out / ".lock").write_text("12345\n")
        code, _, err = run_cli(
            capsys, "train", "--bench", str(bench_dir), "--out", str(out),
            "--epochs", "1",
        )
        assert code == 1
        assert "locked" in err
        assert (out / ".lock").exists()  # a foreign lock is never removed

    def test_missing_bench_is_data_error(self, tmp_path, capsys):
        code, _, err = run_cli(
            capsys, "train", "--bench", str(tmp_path / "ghost"),
            "--out", str(tmp_path / "r"),
        )
        assert code == 2
        assert "data error" in err

    def test_config_file_task_mismatch(self, bench_dir, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text('{"train": {"task": "segmentation"}}\n')
        code, _, err = run_cli(
            capsys, "train", "--bench", str(bench_dir),
            "--out", str(tmp_path / "r"), "--config", str(cfg_path),
        )
        assert code == 2
        assert "does not match" in err

    def test_eval_reports_metrics(self, bench_dir, run_dir, capsys):
        code, stdout, _ = run_cli(
            capsys, "eval", "--bench", str(bench_dir),
            "--ckpt", str(run_dir / "best.ckpt"), "--split", "target_test",
        )
        assert code == 0
        payload = last_json(stdout)
        assert payload["split"] == "target_test"
        assert set(payload) == {"split", "accuracy", "cross_entropy", "count"}
        assert payload["count"] == 6

    def test_perplexity_scores_and_feature_dump(self, bench_dir, run_dir, tmp_path, capsys):
        feats_path = tmp_path / "feats.tens"
        code, stdout, _ = run_cli(
            capsys, "perplexity", "--bench", str(bench_dir),
            "--ckpt", str(run_dir / "best.ckpt"), "--split", "target_test",
            "--features-out", str(feats_path),
        )
        assert code == 0
        payload = last_json(stdout)
        assert payload["count"] == 6
        assert np.isfinite(payload["log_perplexity"])
        assert np.isfinite(payload["log_perplexity_balanced"])
        tensors, meta = load_tensors(feats_path)
        assert tensors["features"].shape == (6, 1024)
        assert tensors["projection"].shape == (6, 2)
        assert list(tensors["labels"]) == [0, 1, 2, 0, 1, 2]
        assert meta["split"] == "target_test"

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_train_numerical_blowup_is_exit_3(self, bench_dir, tmp_path, capsys):
        code, _, err = run_cli(
            capsys, "train", "--bench", str(bench_dir),
            "--out", str(tmp_path / "boom"), "--epochs", "1",
            "--batch-size", "4", "--dtype", "float32", "--lr", "1e12",
        )
        assert code == 3
        assert "numerical error" in err


class TestSelftest:
    def test_selftest_passes(self, capsys):
        code, stdout, _ = run_cli(capsys, "selftest")
        assert code == 0
        assert "9/9 checks passed" in stdout
        assert stdout.count("PASS") == 9
        assert "FAIL" not in stdout

    def test_console_script_entry_point(self):
        proc = subprocess.run(
            [sys.executable, "-m", "pcda.cli", "--help"],
            capture_output=True, text=True, timeout=60,
        )
        assert proc.returncode == 0
        for name in ("gen-bench", "deform", "mixup", "train", "eval",
                     "perplexity", "selftest"):
            assert name in proc.stdout
