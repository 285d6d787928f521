import json

import numpy as np
import pytest

from pulseforge import cli, recovery, waveform
from pulseforge.datasets import read_manifest
from pulseforge.recovery import BvpEstimate

SYNTH_SMALL = {
    "identities": 2,
    "clips_per_identity": 3,
    "duration_s": 12.0,
    "patch_size": 12,
    "seed": 5,
}


def run_cli(args):
    return cli.main([str(a) for a in args])


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    cfg = out / "synth.json"
    cfg.write_text(json.dumps(SYNTH_SMALL))
    assert run_cli(["synth", "--config", cfg, "--out", out / "ds"]) == 0
    return out / "ds"


class TestSynth:
    def test_counts_and_manifest(self, dataset):
        rows, base = read_manifest(dataset)
        assert len(rows) == 6
        clips = sorted((dataset / "clips").glob("*.vten"))
        waves = sorted((dataset / "waveforms").glob("*.csv"))
        assert len(clips) == 6
        assert len(waves) == 6
        for row in rows:
            assert (base / row.clip_path).exists()
            assert (base / row.waveform_path).exists()

    def test_rerun_identical_manifest(self, dataset, tmp_path):
        cfg = tmp_path / "synth.json"
        cfg.write_text(json.dumps(SYNTH_SMALL))
        assert run_cli(["synth", "--config", cfg, "--out", tmp_path / "ds2"]) == 0
        a = (dataset / "manifest.csv").read_bytes()
        b = (tmp_path / "ds2" / "manifest.csv").read_bytes()
        assert a == b

    def test_parallel_matches_serial(self, dataset, tmp_path):
        cfg = tmp_path / "synth.json"
        cfg.write_text(json.dumps(SYNTH_SMALL))
        assert run_cli(["synth", "--config", cfg, "--out", tmp_path / "ds2",
                        "--jobs", 2]) == 0
        a = (dataset / "manifest.csv").read_bytes()
        b = (tmp_path / "ds2" / "manifest.csv").read_bytes()
        assert a == b
        row = read_manifest(dataset)[0][0]
        clip_a = (dataset / row.clip_path).read_bytes()
        clip_b = (tmp_path / "ds2" / row.clip_path).read_bytes()
        assert clip_a == clip_b

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"identities": 2, "bogus_knob": 1}))
        assert run_cli(["synth", "--config", cfg, "--out", tmp_path / "x"]) == 1
        assert "bogus_knob" in capsys.readouterr().err

    def test_motion_schedule(self, dataset):
        rows, _ = read_manifest(dataset)
        per_identity = {}
        for r in rows:
            per_identity.setdefault(r.identity, []).append(r.motion_deg_s)
        for vels in per_identity.values():
            assert vels == [0.0, 0.0, 0.0]


class TestRecover:
    def test_estimates_and_summary(self, dataset, tmp_path):
        out = tmp_path / "rec"
        assert run_cli(["recover", "--data", dataset, "--method", "pos",
                        "--out", out]) == 0
        rows, _ = read_manifest(dataset)
        estimates = sorted((out / "estimates").glob("*.csv"))
        assert len(estimates) == len(rows)
        hr_lines = (out / "hr.csv").read_text().splitlines()
        assert len(hr_lines) == len(rows) + 1
        est = recovery.read_estimate_csv(estimates[0])
        assert est.method == "pos"

    def test_recovered_hr_close(self, dataset, tmp_path):
        out = tmp_path / "rec"
        assert run_cli(["recover", "--data", dataset, "--method", "chrom",
                        "--out", out]) == 0
        for line in (out / "hr.csv").read_text().splitlines()[1:]:
            _, _, hr_est, hr_ref, _ = line.split(",")
            assert abs(float(hr_est) - float(hr_ref)) < 3.0

    def test_corrupt_clip_named(self, dataset, tmp_path, capsys):
        import shutil
        broken = tmp_path / "broken"
        shutil.copytree(dataset, broken)
        rows, _ = read_manifest(broken)
        victim = broken / rows[0].clip_path
        victim.write_bytes(b"JUNKJUNKJUNK" + b"\x00" * 64)
        assert run_cli(["recover", "--data", broken, "--method", "pos",
                        "--out", tmp_path / "o"]) == 1
        assert victim.name in capsys.readouterr().err

    def test_missing_clip_named(self, dataset, tmp_path, capsys):
        import shutil
        broken = tmp_path / "missing"
        shutil.copytree(dataset, broken)
        rows, _ = read_manifest(broken)
        (broken / rows[-1].clip_path).unlink()
        assert run_cli(["recover", "--data", broken, "--method", "pos",
                        "--out", tmp_path / "o2"]) == 1
        assert rows[-1].clip_id in capsys.readouterr().err

    def test_unknown_method(self, dataset, tmp_path, capsys):
        assert run_cli(["recover", "--data", dataset, "--method", "pca",
                        "--out", tmp_path / "o3"]) == 1
        assert "pca" in capsys.readouterr().err


class TestEval:
    def test_perfect_estimates_zero_mae(self, dataset, tmp_path):
        rows, base = read_manifest(dataset)
        est_dir = tmp_path / "perfect"
        est_dir.mkdir()
        for row in rows:
            pulse = waveform.load_ppg_csv(base / row.waveform_path)
            est = BvpEstimate(samples=pulse.samples,
                              sample_rate=pulse.sample_rate, method="oracle")
            recovery.write_estimate_csv(est, est_dir / f"{row.clip_id}.csv")
        out = tmp_path / "scored"
        assert run_cli(["eval", "--data", dataset, "--estimates", est_dir,
                        "--out", out]) == 0
        lines = (out / "metrics.csv").read_text().splitlines()
        assert len(lines) == 2
        record = dict(zip(lines[0].split(","), lines[1].split(",")))
        assert float(record["mae_bpm"]) < 1e-9
        assert (out / "figures" / "hr_scatter.png").exists()

    def test_missing_estimate_named(self, dataset, tmp_path, capsys):
        est_dir = tmp_path / "empty"
        est_dir.mkdir()
        assert run_cli(["eval", "--data", dataset, "--estimates", est_dir,
                        "--out", tmp_path / "s"]) == 1
        assert "id000_c00" in capsys.readouterr().err


class TestTrainCli:
    def test_train_writes_artifacts(self, tmp_path):
        cfg = tmp_path / "synth.json"
        cfg.write_text(json.dumps({
            "identities": 3, "clips_per_identity": 2, "duration_s": 12.0,
            "patch_size": 12, "seed": 1}))
        data = tmp_path / "ds"
        assert run_cli(["synth", "--config", cfg, "--out", data]) == 0
        tcfg = tmp_path / "train.json"
        tcfg.write_text(json.dumps({
            "epochs": 2, "conv_channels": [4, 4, 6, 6], "hidden_units": 8,
            "seed": 0}))
        out = tmp_path / "trained"
        assert run_cli(["train", "--data", data, "--config", tcfg,
                        "--out", out]) == 0
        assert (out / "model.canw").exists()
        report = json.loads((out / "train_report.json").read_text())
        assert len(report["train_mse"]) == 2
        assert report["selected_epoch"] == int(np.argmin(report["val_mse"]))
        assert (out / "figures" / "training.png").exists()
        splits = json.loads((out / "splits.json").read_text())
        assert not set(splits["train"]) & set(splits["test"])

    def test_zero_lr_flat_report(self, tmp_path):
        cfg = tmp_path / "synth.json"
        cfg.write_text(json.dumps({
            "identities": 3, "clips_per_identity": 1, "duration_s": 12.0,
            "patch_size": 12, "seed": 2}))
        data = tmp_path / "ds"
        assert run_cli(["synth", "--config", cfg, "--out", data]) == 0
        tcfg = tmp_path / "train.json"
        tcfg.write_text(json.dumps({
            "epochs": 3, "lr": 0.0, "conv_channels": [4, 4, 6, 6],
            "hidden_units": 8, "seed": 0}))
        out = tmp_path / "flat"
        assert run_cli(["train", "--data", data, "--config", tcfg,
                        "--out", out]) == 0
        report = json.loads((out / "train_report.json").read_text())
        assert len(set(report["val_mse"])) == 1
        spread = max(report["train_mse"]) - min(report["train_mse"])
        assert spread <= 1e-12 * max(report["train_mse"])


class TestSweepCli:
    def test_grid_rows_and_figures(self, tmp_path):
        cfg = tmp_path / "sweep.json"
        cfg.write_text(json.dumps({
            "methods": ["pos", "chrom", "ica"],
            "motion_velocities": [0.0, 10.0, 20.0, 30.0],
            "skin_types": ["I"],
            "clips_per_cell": 2,
            "seeds": [0],
            "clip_duration_s": 12.0,
            "patch_size": 10,
        }))
        out = tmp_path / "sweep"
        assert run_cli(["sweep", "--config", cfg, "--out", out]) == 0
        lines = (out / "sweep.csv").read_text().splitlines()
        assert len(lines) == 1 + 4 * 3
        assert (out / "sweep.json").exists()
        assert (out / "figures" / "snr_vs_motion.png").exists()
        assert (out / "figures" / "mae_vs_motion.png").exists()

    def test_method_flag_restricts(self, tmp_path):
        cfg = tmp_path / "sweep.json"
        cfg.write_text(json.dumps({
            "motion_velocities": [0.0],
            "clips_per_cell": 2,
            "seeds": [1],
            "clip_duration_s": 12.0,
            "patch_size": 10,
        }))
        out = tmp_path / "sweep"
        assert run_cli(["sweep", "--config", cfg, "--method", "pos",
                        "--out", out]) == 0
        lines = (out / "sweep.csv").read_text().splitlines()
        assert len(lines) == 2
        assert lines[1].startswith("pos,")


def test_module_entry_point():
    import subprocess
    import sys
    proc = subprocess.run([sys.executable, "-m", "pulseforge", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "synth" in proc.stdout
