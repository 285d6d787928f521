"""Metrics, fold protocol, and experiment sweeps.

Sweeps synthesize clips cell by cell over a factorial grid of recovery
method, motion velocity, and skin type; every random draw descends from
the cell's integer labels, so reruns reproduce every number bit for bit
regardless of execution order.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dsp, neural, recovery
from .datasets import (ClipCondition, _atomic_write_text, build_clip,
                       clip_seed, skin_type_from_label, skin_type_to_roman)
from .errors import ConfigurationError, DegenerateInputError
from .recovery import spatial_average

VALID_METHODS = ("pos", "chrom", "ica", "can")

REPORT_COLUMNS = ("method", "motion_deg_s", "skin_type", "seed", "n_clips",
                  "mae_bpm", "rmse_bpm", "pearson_rho", "snr_db")


@dataclass(frozen=True)
class MetricsReport:
    """Scores for one experiment cell."""

    mae: float
    rmse: float
    pearson_rho: float | None
    snr_db: float | None
    n_clips: int
    method: str = ""
    motion_deg_s: float = 0.0
    skin_type: int = 1
    seed: int = 0

    def row(self) -> list:
        return [self.method, repr(float(self.motion_deg_s)),
                skin_type_to_roman(self.skin_type), self.seed, self.n_clips,
                repr(float(self.mae)), repr(float(self.rmse)),
                "undefined" if self.pearson_rho is None else repr(float(self.pearson_rho)),
                "" if self.snr_db is None else repr(float(self.snr_db))]


def compute_metrics(estimated_hr, reference_hr, snr_db=None,
                    method: str = "", motion_deg_s: float = 0.0,
                    skin_type: int = 1, seed: int = 0) -> MetricsReport:
    """MAE/RMSE and Pearson correlation over per-clip heart rates, plus
    the mean per-clip SNR when given.

    A zero-variance reference leaves the correlation undefined (None)
    rather than propagating NaN.
    """
    est = np.asarray(estimated_hr, dtype=np.float64)
    ref = np.asarray(reference_hr, dtype=np.float64)
    if est.shape != ref.shape or est.ndim != 1 or est.size < 2:
        raise ConfigurationError(
            "need equal-length HR lists with at least 2 entries")
    err = est - ref
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err ** 2)))
    if np.std(ref) == 0 or np.std(est) == 0:
        rho = None
    else:
        rho = float(np.corrcoef(est, ref)[0, 1])
    snr = None if snr_db is None else float(np.mean(np.asarray(snr_db)))
    return MetricsReport(mae=mae, rmse=rmse, pearson_rho=rho, snr_db=snr,
                         n_clips=est.size, method=method,
                         motion_deg_s=motion_deg_s, skin_type=skin_type,
                         seed=seed)


@dataclass(frozen=True)
class FoldPlan:
    """Identity-disjoint train/validation/test assignments per fold."""

    folds: tuple
    k: int

    def __post_init__(self) -> None:
        tested = []
        for f in self.folds:
            parts = [set(f["train"]), set(f["val"]), set(f["test"])]
            if parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2]:
                raise ConfigurationError("fold partitions overlap")
            tested.extend(f["test"])
        if len(tested) != len(set(tested)):
            raise ConfigurationError("an identity is tested more than once")


def make_folds(identities, k: int = 5, sizes=(15, 5, 5),
               seed: int = 0) -> FoldPlan:
    """Seeded shuffle with rotating test blocks.

    Every identity lands in exactly one test block, which requires
    ``k * test_size == len(identities)``.
    """
    identities = list(identities)
    n = len(identities)
    n_train, n_val, n_test = sizes
    if n_train + n_val + n_test != n:
        raise ConfigurationError(
            f"sizes {sizes} sum to {n_train + n_val + n_test}, "
            f"but there are {n} identities")
    if k * n_test != n:
        raise ConfigurationError(
            f"k * test_size ({k} * {n_test}) must equal the identity count {n}")
    rng = np.random.default_rng(seed)
    order = [identities[i] for i in rng.permutation(n)]
    folds = []
    for i in range(k):
        test = order[i * n_test:(i + 1) * n_test]
        rest = [order[(((i + 1) * n_test) + j) % n] for j in range(n - n_test)]
        folds.append({"train": rest[n_val:], "val": rest[:n_val], "test": test})
    return FoldPlan(folds=tuple(folds), k=k)


@dataclass(frozen=True)
class SweepConfig:
    """Factorial sweep grid and the shared synthesis parameters."""

    methods: tuple = ("pos", "chrom", "ica")
    motion_velocities: tuple = (0.0, 10.0, 20.0, 30.0)
    skin_types: tuple = (1,)
    clips_per_cell: int = 10
    seeds: tuple = (0,)
    clip_duration_s: float = 60.0
    sample_rate: float = 30.0
    patch_size: int = 16
    hr_range_bpm: tuple = (48.0, 148.0)
    phi_motion: float = 0.2
    psi_motion: float = 0.2
    noise_sigma: float = 0.0
    quantization_bits: int | None = None
    max_angle_range_deg: tuple = (20.0, 40.0)
    can_checkpoint: str | None = None

    def __post_init__(self) -> None:
        unknown = [m for m in self.methods if m not in VALID_METHODS]
        if unknown:
            raise ConfigurationError(
                f"unknown method name(s) {unknown}; valid: {list(VALID_METHODS)}")
        if "can" in self.methods and not self.can_checkpoint:
            raise ConfigurationError(
                "method 'can' needs a trained checkpoint (can_checkpoint)")
        object.__setattr__(self, "skin_types",
                           tuple(skin_type_from_label(t) for t in self.skin_types))
        if self.clips_per_cell < 1 or not self.seeds:
            raise ConfigurationError("need at least one clip and one seed")


def _synthesize_cell(config: SweepConfig, velocity: float, skin: int,
                     seed: int):
    """All clips of one cell: (trace, video, ref_hr, ica_seed) tuples."""
    clips = []
    for ci in range(config.clips_per_cell):
        s = clip_seed(seed, int(round(velocity * 1000)), skin, ci)
        rng = np.random.default_rng(s)
        hr = float(rng.integers(int(config.hr_range_bpm[0]),
                                int(config.hr_range_bpm[1]) + 1))
        max_angle = float(rng.uniform(*config.max_angle_range_deg))
        cond = ClipCondition(
            hr_bpm=hr, angular_velocity=velocity, fitzpatrick_type=skin,
            duration_s=config.clip_duration_s, sample_rate=config.sample_rate,
            patch_size=config.patch_size, max_angle_deg=max_angle,
            phi_motion=config.phi_motion, psi_motion=config.psi_motion,
            noise_sigma=config.noise_sigma,
            quantization_bits=config.quantization_bits)
        video, pulse, spec = build_clip(cond, s)
        trace = spatial_average(video, spec.skin_mask)
        ref_hr = float(np.clip(dsp.estimate_hr(pulse.samples, pulse.sample_rate),
                               42.0, 150.0))
        clips.append((trace, video, ref_hr, s))
    return clips


def _recover_cell(clips, method: str, can_model=None):
    est_hr, snrs = [], []
    for trace, video, ref_hr, s in clips:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            if method == "can":
                est = neural.predict_bvp(can_model, video)
            else:
                est = recovery.recover(trace, method, seed=s)
        try:
            est_hr.append(dsp.estimate_hr(est.samples, est.sample_rate))
        except DegenerateInputError:
            est_hr.append(0.0)
        snrs.append(dsp.snr_bvp(est, ref_hr))
    return est_hr, snrs


def run_sweep(config: SweepConfig) -> list[MetricsReport]:
    """Full factorial sweep; one report row per
    (method, velocity, skin type, seed) cell."""
    can_model = None
    if "can" in config.methods:
        can_model = neural.load_model(config.can_checkpoint)
    rows = []
    for velocity in config.motion_velocities:
        for skin in config.skin_types:
            for seed in config.seeds:
                clips = _synthesize_cell(config, velocity, skin, seed)
                ref_hr = [c[2] for c in clips]
                for method in config.methods:
                    est_hr, snrs = _recover_cell(clips, method, can_model)
                    rows.append(compute_metrics(
                        est_hr, ref_hr, snr_db=snrs, method=method,
                        motion_deg_s=velocity, skin_type=skin, seed=seed))
    return rows


def write_reports_csv(rows: list[MetricsReport], path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for r in rows:
        writer.writerow(r.row())
    _atomic_write_text(Path(path), buf.getvalue())


def write_reports_json(rows: list[MetricsReport], path) -> None:
    nested: dict = {}
    for r in rows:
        nested.setdefault(r.method, {}) \
            .setdefault(repr(float(r.motion_deg_s)), {}) \
            .setdefault(skin_type_to_roman(r.skin_type), {})[str(r.seed)] = {
                "mae_bpm": r.mae,
                "rmse_bpm": r.rmse,
                "pearson_rho": r.pearson_rho,
                "snr_db": r.snr_db,
                "n_clips": r.n_clips,
        }
    _atomic_write_text(Path(path),
                       json.dumps(nested, sort_keys=True, indent=2) + "\n")


@dataclass(frozen=True)
class CrossConditionConfig:
    """Desk-scale setup for the static-vs-augmented training comparison."""

    n_train_identities: int = 3
    n_val_identities: int = 1
    n_test_identities: int = 2
    static_clips_per_identity: int = 2
    motion_clips_per_velocity: int = 1
    test_clips_per_velocity: int = 1
    clip_duration_s: float = 10.0
    sample_rate: float = 30.0
    patch_size: int = 16
    phi_motion: float = 0.2
    psi_motion: float = 0.2
    noise_sigma: float = 0.0
    quantization_bits: int | None = None
    hr_range_bpm: tuple = (48.0, 148.0)
    epochs: int = 12
    lr: float = 1e-3
    batch_size: int = 16
    can: neural.CanConfig | None = None

    def resolved_can(self) -> neural.CanConfig:
        if self.can is not None:
            return self.can
        return neural.CanConfig(input_size=self.patch_size,
                                conv_channels=(8, 8, 12, 12), hidden_units=32)


def _experiment_clip(config: CrossConditionConfig, identity: int,
                     velocity: float, index: int, seed: int):
    s = clip_seed(seed, identity, int(round(velocity * 1000)), index)
    rng = np.random.default_rng(s)
    hr = float(rng.integers(int(config.hr_range_bpm[0]),
                            int(config.hr_range_bpm[1]) + 1))
    max_angle = float(rng.uniform(20.0, 40.0))
    cond = ClipCondition(
        hr_bpm=hr, angular_velocity=velocity, duration_s=config.clip_duration_s,
        sample_rate=config.sample_rate, patch_size=config.patch_size,
        max_angle_deg=max_angle, phi_motion=config.phi_motion,
        psi_motion=config.psi_motion, noise_sigma=config.noise_sigma,
        quantization_bits=config.quantization_bits)
    video, pulse, _ = build_clip(cond, s)
    return video, pulse


def cross_condition_experiment(train_conditions, test_conditions,
                               config: CrossConditionConfig | None = None,
                               seed: int = 0):
    """Train static-only and static+motion models; score both on held-out
    motion clips.

    Identities are disjoint between training/validation and test; the
    augmented model sees extra clips of the *training* identities at the
    test velocities.  Returns (static_report, augmented_report).
    """
    train_conditions = tuple(train_conditions)
    test_conditions = tuple(test_conditions)
    if not train_conditions or not test_conditions:
        raise ConfigurationError("condition sets must be non-empty")
    config = config or CrossConditionConfig()
    can_config = config.resolved_can()

    n_ids = (config.n_train_identities + config.n_val_identities
             + config.n_test_identities)
    identities = list(range(n_ids))
    train_ids = identities[:config.n_train_identities]
    val_ids = identities[config.n_train_identities:
                         config.n_train_identities + config.n_val_identities]
    test_ids = identities[config.n_train_identities + config.n_val_identities:]
    assert not (set(train_ids) | set(val_ids)) & set(test_ids)

    def clips_for(ids, velocities, per_velocity):
        out = []
        for ident in ids:
            for vel in velocities:
                for idx in range(per_velocity):
                    video, pulse = _experiment_clip(config, ident, vel, idx, seed)
                    out.append(neural.prepare_clip(video, pulse, can_config))
        return out

    static_train = clips_for(train_ids, train_conditions,
                             config.static_clips_per_identity)
    motion_extra = clips_for(train_ids, test_conditions,
                             config.motion_clips_per_velocity)
    val_clips = clips_for(val_ids, train_conditions,
                          config.static_clips_per_identity)

    model_init = neural.init_model(can_config, seed=seed)
    static_model, _ = neural.train(
        model_init.copy(), static_train, val_clips, epochs=config.epochs,
        lr=config.lr, batch_size=config.batch_size, seed=seed)
    augmented_model, _ = neural.train(
        model_init.copy(), static_train + motion_extra, val_clips,
        epochs=config.epochs, lr=config.lr, batch_size=config.batch_size,
        seed=seed)

    reports = []
    for name, model in (("can_static", static_model),
                        ("can_augmented", augmented_model)):
        est_hr, ref_hr, snrs = [], [], []
        for ident in test_ids:
            for vel in test_conditions:
                for idx in range(config.test_clips_per_velocity):
                    video, pulse = _experiment_clip(config, ident, vel,
                                                    100 + idx, seed)
                    est = neural.predict_bvp(model, video)
                    ref = float(np.clip(
                        dsp.estimate_hr(pulse.samples, pulse.sample_rate),
                        42.0, 150.0))
                    try:
                        est_hr.append(dsp.estimate_hr(est.samples,
                                                      est.sample_rate))
                    except DegenerateInputError:
                        est_hr.append(0.0)
                    ref_hr.append(ref)
                    snrs.append(dsp.snr_bvp(est, ref))
        reports.append(compute_metrics(est_hr, ref_hr, snr_db=snrs,
                                       method=name, seed=seed))
    return reports[0], reports[1]
