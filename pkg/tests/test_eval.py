import numpy as np
import pytest

from pulseforge import eval as evaluation
from pulseforge.errors import ConfigurationError


class TestComputeMetrics:
    def test_perfect(self):
        r = evaluation.compute_metrics([60, 70, 80], [60, 70, 80])
        assert r.mae == 0.0
        assert r.rmse == 0.0
        assert r.pearson_rho == pytest.approx(1.0)

    def test_hand_computed(self):
        r = evaluation.compute_metrics([70, 75, 80], [72, 73, 82])
        assert r.mae == pytest.approx(2.0)
        assert r.rmse == pytest.approx(2.0)

    def test_anticorrelation(self):
        r = evaluation.compute_metrics([80, 70, 60], [60, 70, 80])
        assert r.pearson_rho == pytest.approx(-1.0)

    def test_rmse_at_least_mae(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            est = rng.uniform(50, 150, 8)
            ref = rng.uniform(50, 150, 8)
            r = evaluation.compute_metrics(est, ref)
            assert r.rmse >= r.mae >= 0.0

    def test_zero_variance_reference(self):
        r = evaluation.compute_metrics([70, 71, 72], [70, 70, 70])
        assert r.pearson_rho is None

    def test_snr_mean(self):
        r = evaluation.compute_metrics([70, 72], [70, 72], snr_db=[4.0, 8.0])
        assert r.snr_db == pytest.approx(6.0)

    def test_length_mismatch(self):
        with pytest.raises(ConfigurationError):
            evaluation.compute_metrics([70], [70, 71])


class TestMakeFolds:
    def test_reference_split(self):
        plan = evaluation.make_folds(list(range(25)), 5, (15, 5, 5), seed=0)
        assert plan.k == 5
        tested = [i for f in plan.folds for i in f["test"]]
        assert sorted(tested) == list(range(25))
        for f in plan.folds:
            assert len(f["train"]) == 15
            assert len(f["val"]) == 5
            assert len(f["test"]) == 5
            assert not set(f["train"]) & set(f["test"])
            assert not set(f["train"]) & set(f["val"])
            assert not set(f["val"]) & set(f["test"])

    def test_seed_determinism(self):
        a = evaluation.make_folds(list(range(25)), 5, (15, 5, 5), seed=7)
        b = evaluation.make_folds(list(range(25)), 5, (15, 5, 5), seed=7)
        assert a == b

    def test_size_mismatch(self):
        with pytest.raises(ConfigurationError):
            evaluation.make_folds(list(range(25)), 5, (15, 5, 4), seed=0)

    def test_uncoverable_test_blocks(self):
        with pytest.raises(ConfigurationError):
            evaluation.make_folds(list(range(24)), 5, (14, 5, 5), seed=0)


class TestSweep:
    def test_unknown_method(self):
        with pytest.raises(ConfigurationError, match="pos"):
            evaluation.SweepConfig(methods=("pos", "pca"))

    def test_single_cell_oracle(self):
        config = evaluation.SweepConfig(
            methods=("pos",), motion_velocities=(0.0,), skin_types=("I",),
            clips_per_cell=4, seeds=(0,), clip_duration_s=30.0, patch_size=12)
        rows = evaluation.run_sweep(config)
        assert len(rows) == 1
        assert rows[0].mae <= 1.0
        assert rows[0].n_clips == 4

    def test_grid_shape_and_labels(self):
        config = evaluation.SweepConfig(
            methods=("pos", "chrom"), motion_velocities=(0.0, 10.0),
            skin_types=(1, 3), clips_per_cell=2, seeds=(0, 1),
            clip_duration_s=10.0, patch_size=10)
        rows = evaluation.run_sweep(config)
        assert len(rows) == 2 * 2 * 2 * 2
        labels = {(r.method, r.motion_deg_s, r.skin_type, r.seed) for r in rows}
        assert len(labels) == len(rows)

    def test_rerun_reproduces_csv(self, tmp_path):
        config = evaluation.SweepConfig(
            methods=("pos",), motion_velocities=(0.0, 10.0), skin_types=(1,),
            clips_per_cell=2, seeds=(0,), clip_duration_s=10.0, patch_size=10)
        paths = []
        for tag in ("a", "b"):
            rows = evaluation.run_sweep(config)
            path = tmp_path / f"sweep_{tag}.csv"
            evaluation.write_reports_csv(rows, path)
            paths.append(path)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_json_nested(self, tmp_path):
        import json
        config = evaluation.SweepConfig(
            methods=("pos",), motion_velocities=(0.0,), skin_types=(2,),
            clips_per_cell=2, seeds=(3,), clip_duration_s=10.0, patch_size=10)
        rows = evaluation.run_sweep(config)
        path = tmp_path / "sweep.json"
        evaluation.write_reports_json(rows, path)
        nested = json.loads(path.read_text())
        assert "pos" in nested
        assert "II" in nested["pos"]["0.0"]
        cell = nested["pos"]["0.0"]["II"]["3"]
        assert set(cell) == {"mae_bpm", "rmse_bpm", "pearson_rho",
                             "snr_db", "n_clips"}

    def test_csv_columns(self, tmp_path):
        config = evaluation.SweepConfig(
            methods=("pos",), motion_velocities=(0.0,), skin_types=(1,),
            clips_per_cell=2, seeds=(0,), clip_duration_s=10.0, patch_size=10)
        rows = evaluation.run_sweep(config)
        path = tmp_path / "sweep.csv"
        evaluation.write_reports_csv(rows, path)
        header = path.read_text().splitlines()[0]
        assert header == ",".join(evaluation.REPORT_COLUMNS)

    def test_can_requires_checkpoint(self):
        with pytest.raises(ConfigurationError, match="checkpoint"):
            evaluation.SweepConfig(methods=("can",))


class TestFigures:
    def test_sweep_figures_rendered(self, tmp_path):
        from pulseforge import figures
        rows = []
        for method in ("pos", "chrom"):
            for vel in (0.0, 10.0, 20.0):
                for skin in (1, 3, 5):
                    rows.append(evaluation.MetricsReport(
                        mae=2.0 + vel / 10, rmse=3.0, pearson_rho=0.9,
                        snr_db=8.0 - vel / 5 - skin, n_clips=4, method=method,
                        motion_deg_s=vel, skin_type=skin, seed=0))
        paths = figures.sweep_figures(rows, tmp_path)
        names = {p.name for p in paths}
        assert names == {"snr_vs_motion.png", "mae_vs_motion.png",
                         "snr_vs_skin_type.png"}
        assert all(p.stat().st_size > 0 for p in paths)
