"""Command-line entry point: synthesis, recovery, training, evaluation,
sweeps.

Configuration comes from an optional JSON file (either flat or with one
section per command) with command-line flags taking precedence.  Outputs
are deterministic for a fixed seed; anything timestamped goes only to the
run log.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dsp, drm, eval as evaluation, figures, neural, recovery, videoio, waveform
from .datasets import (ClipCondition, ManifestRow, build_clip, clip_seed,
                       assign_skin_types, read_manifest, skin_type_to_roman,
                       write_manifest, write_waveform_csv)
from .errors import ConfigurationError, ParseError, PulseforgeError

log = logging.getLogger("pulseforge")

# Per-identity clip schedule mirroring the reference dataset: three static
# clips and two at each nonzero velocity.
MOTION_PATTERN = (0.0, 0.0, 0.0, 10.0, 10.0, 20.0, 20.0, 30.0, 30.0)


def _from_dict(cls, data: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigurationError(
            f"unknown config keys {unknown}; valid: {sorted(names)}")
    coerced = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            value = data[f.name]
            if isinstance(value, list):
                value = tuple(value)
            coerced[f.name] = value
    return cls(**coerced)


@dataclass(frozen=True)
class SynthConfig:
    identities: int = 50
    clips_per_identity: int = 9
    duration_s: float = 10.0
    sample_rate: float = 30.0
    patch_size: int = 36
    hr_range_bpm: tuple = (48.0, 148.0)
    phi_motion: float = 0.2
    psi_motion: float = 0.2
    noise_sigma: float = 0.002
    quantization_bits: int | None = 8
    max_angle_range_deg: tuple = (20.0, 40.0)
    motion_schedule: tuple | None = None
    ppg_dir: str | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.identities < 1 or self.clips_per_identity < 1:
            raise ConfigurationError("identities and clips_per_identity must be >= 1")
        if self.duration_s <= 0 or self.sample_rate <= 0:
            raise ConfigurationError("duration_s and sample_rate must be > 0")

    def schedule(self) -> tuple:
        if self.motion_schedule is not None:
            return tuple(float(v) for v in self.motion_schedule)
        return tuple(MOTION_PATTERN[i % len(MOTION_PATTERN)]
                     for i in range(self.clips_per_identity))


@dataclass(frozen=True)
class TrainCliConfig:
    n_val_identities: int = 1
    n_test_identities: int = 1
    epochs: int = 10
    lr: float = 1e-3
    batch_size: int = 16
    conv_channels: tuple = (32, 32, 64, 64)
    hidden_units: int = 128
    target: str = "derivative"
    seed: int = 0


@dataclass(frozen=True)
class RecoverConfig:
    method: str = "pos"
    checkpoint: str | None = None
    seed: int = 0


def _load_config_file(path: str | None, command: str) -> dict:
    if not path:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})")
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: config must be a JSON object")
    if command in data and isinstance(data[command], dict):
        return data[command]
    return data


def _setup_logging(out_dir: Path) -> None:
    level = os.environ.get("PULSEFORGE_LOG", "INFO").upper()
    log.setLevel(getattr(logging, level, logging.INFO))
    log.handlers.clear()
    stream = logging.StreamHandler(sys.stderr)
    stream.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    log.addHandler(stream)
    out_dir.mkdir(parents=True, exist_ok=True)
    filelog = logging.FileHandler(out_dir / "run.log")
    filelog.setFormatter(
        logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(filelog)


def _synth_one(args) -> ManifestRow:
    config, identity, clip_index, skin, out_dir = args
    velocity = config.schedule()[clip_index]
    seed = clip_seed(config.seed, identity, clip_index)
    rng = np.random.default_rng(seed)
    hr = float(rng.integers(int(config.hr_range_bpm[0]),
                            int(config.hr_range_bpm[1]) + 1))
    max_angle = float(rng.uniform(*config.max_angle_range_deg))
    cond = ClipCondition(
        hr_bpm=hr, angular_velocity=velocity, fitzpatrick_type=skin,
        duration_s=config.duration_s, sample_rate=config.sample_rate,
        patch_size=config.patch_size, max_angle_deg=max_angle,
        phi_motion=config.phi_motion, psi_motion=config.psi_motion,
        noise_sigma=config.noise_sigma,
        quantization_bits=config.quantization_bits)
    video, pulse, _ = build_clip(cond, seed)

    clip_id = f"id{identity:03d}_c{clip_index:02d}"
    clip_path = Path("clips") / f"{clip_id}.vten"
    wave_path = Path("waveforms") / f"{clip_id}.csv"
    hr_ref = dsp.estimate_hr(pulse.samples, pulse.sample_rate)
    sidecar = {"condition": cond.to_dict(), "seed": seed,
               "waveform_path": str(wave_path), "hr_ref_bpm": hr_ref}
    videoio.save_video(video, out_dir / clip_path, sidecar=sidecar)
    write_waveform_csv(pulse, out_dir / wave_path)
    return ManifestRow(
        clip_id=clip_id, identity=identity, clip_index=clip_index,
        motion_deg_s=velocity, skin_type=skin, hr_bpm=hr, hr_ref_bpm=hr_ref,
        seed=seed, clip_path=str(clip_path), waveform_path=str(wave_path))


def cmd_synth(config: SynthConfig, out_dir: Path, jobs: int = 1) -> Path:
    """Synthesize a clip dataset with manifest and ground-truth waveforms."""
    skins = assign_skin_types(config.identities, config.seed)
    tasks = [(config, identity, ci, skins[identity], out_dir)
             for identity in range(config.identities)
             for ci in range(config.clips_per_identity)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_synth_one, tasks))
    else:
        rows = [_synth_one(t) for t in tasks]
    manifest = write_manifest(rows, out_dir)
    log.info("wrote %d clips and %s", len(rows), manifest)
    return manifest


def _mask_for_row(out_dir: Path, row: ManifestRow) -> np.ndarray:
    side = videoio.load_sidecar(out_dir / row.clip_path)
    cond = side.get("condition", {})
    spec = drm.default_patch_spec(int(cond.get("patch_size", 36)),
                                  fitzpatrick_type=row.skin_type)
    return spec.skin_mask


def cmd_recover(data_dir: Path, config: RecoverConfig, out_dir: Path) -> Path:
    """Recover one pulse estimate per manifest clip; write the HR summary."""
    rows, base = read_manifest(data_dir)
    can_model = None
    if config.method == "can":
        if not config.checkpoint:
            raise ConfigurationError("method 'can' needs --checkpoint")
        can_model = neural.load_model(config.checkpoint)
    elif config.method not in ("pos", "chrom", "ica"):
        raise ConfigurationError(
            f"unknown method {config.method!r}; valid: can, chrom, ica, pos")
    est_dir = out_dir / "estimates"
    est_dir.mkdir(parents=True, exist_ok=True)
    summary = ["clip_id,method,hr_est_bpm,hr_ref_bpm,snr_db"]
    for row in rows:
        clip_file = base / row.clip_path
        if not clip_file.exists():
            raise ParseError(f"manifest references missing clip: {clip_file}")
        video = videoio.load_video(clip_file)
        if can_model is not None:
            est = neural.predict_bvp(can_model, video)
        else:
            trace = recovery.spatial_average(video, _mask_for_row(base, row))
            est = recovery.recover(trace, config.method, seed=row.seed)
        recovery.write_estimate_csv(est, est_dir / f"{row.clip_id}.csv")
        hr_est = dsp.estimate_hr(est.samples, est.sample_rate)
        snr = dsp.snr_bvp(est, row.hr_ref_bpm)
        summary.append(f"{row.clip_id},{config.method},{hr_est!r},"
                       f"{row.hr_ref_bpm!r},{snr!r}")
    hr_csv = out_dir / "hr.csv"
    hr_csv.write_text("\n".join(summary) + "\n", encoding="utf-8")
    log.info("recovered %d clips with %s", len(rows), config.method)
    return hr_csv


def cmd_train(data_dir: Path, config: TrainCliConfig, out_dir: Path) -> Path:
    """Train the attention network on a synthesized dataset."""
    rows, base = read_manifest(data_dir)
    identities = sorted({r.identity for r in rows})
    n_holdout = config.n_val_identities + config.n_test_identities
    if len(identities) <= n_holdout:
        raise ConfigurationError(
            f"{len(identities)} identities cannot cover "
            f"{n_holdout} validation/test identities")
    rng = np.random.default_rng(config.seed)
    order = [identities[i] for i in rng.permutation(len(identities))]
    val_ids = set(order[:config.n_val_identities])
    test_ids = set(order[config.n_val_identities:n_holdout])
    train_ids = set(order[n_holdout:])

    first = videoio.load_video(base / rows[0].clip_path)
    can_config = neural.CanConfig(
        input_size=first.frames.shape[1],
        conv_channels=tuple(config.conv_channels),
        hidden_units=config.hidden_units, target=config.target)

    def clips_of(id_set):
        out = []
        for row in rows:
            if row.identity not in id_set:
                continue
            video = videoio.load_video(base / row.clip_path)
            pulse = waveform.load_ppg_csv(base / row.waveform_path)
            out.append(neural.prepare_clip(video, pulse, can_config))
        return out

    model = neural.init_model(can_config, seed=config.seed)
    model, report = neural.train(
        model, clips_of(train_ids), clips_of(val_ids), epochs=config.epochs,
        lr=config.lr, batch_size=config.batch_size, seed=config.seed)

    ckpt = out_dir / "model.canw"
    neural.save_model(model, ckpt)
    (out_dir / "train_report.json").write_text(report.to_json() + "\n",
                                               encoding="utf-8")
    (out_dir / "splits.json").write_text(json.dumps({
        "train": sorted(train_ids), "val": sorted(val_ids),
        "test": sorted(test_ids)}, sort_keys=True) + "\n", encoding="utf-8")
    figures.training_figure(report, out_dir / "figures" / "training.png")
    log.info("trained %d epochs; selected epoch %d; checkpoint %s",
             config.epochs, report.selected_epoch, ckpt)
    return ckpt


def cmd_eval(estimates_dir: Path, data_dir: Path, out_dir: Path) -> Path:
    """Score an estimate directory against a dataset manifest."""
    rows, _ = read_manifest(data_dir)
    est_hr, ref_hr, snrs, methods = [], [], [], set()
    per_clip = ["clip_id,method,hr_est_bpm,hr_ref_bpm,snr_db"]
    for row in rows:
        est_file = Path(estimates_dir) / f"{row.clip_id}.csv"
        if not est_file.exists():
            raise ParseError(f"missing estimate for clip {row.clip_id}: {est_file}")
        est = recovery.read_estimate_csv(est_file)
        methods.add(est.method)
        hr = dsp.estimate_hr(est.samples, est.sample_rate)
        snr = dsp.snr_bvp(est, row.hr_ref_bpm)
        est_hr.append(hr)
        ref_hr.append(row.hr_ref_bpm)
        snrs.append(snr)
        per_clip.append(f"{row.clip_id},{est.method},{hr!r},"
                        f"{row.hr_ref_bpm!r},{snr!r}")
    method = methods.pop() if len(methods) == 1 else "mixed"
    report = evaluation.compute_metrics(est_hr, ref_hr, snr_db=snrs,
                                        method=method)
    evaluation.write_reports_csv([report], out_dir / "metrics.csv")
    evaluation.write_reports_json([report], out_dir / "metrics.json")
    (out_dir / "per_clip.csv").write_text("\n".join(per_clip) + "\n",
                                          encoding="utf-8")
    figures.hr_scatter_figure(est_hr, ref_hr,
                              out_dir / "figures" / "hr_scatter.png")
    log.info("scored %d clips: MAE %.2f BPM, RMSE %.2f BPM",
             report.n_clips, report.mae, report.rmse)
    return out_dir / "metrics.csv"


def _sweep_cell(args):
    config, velocity, skin, seed = args
    clips = evaluation._synthesize_cell(config, velocity, skin, seed)
    ref_hr = [c[2] for c in clips]
    can_model = None
    if "can" in config.methods:
        can_model = neural.load_model(config.can_checkpoint)
    out = []
    for method in config.methods:
        est_hr, cell_snrs = evaluation._recover_cell(clips, method, can_model)
        out.append(evaluation.compute_metrics(
            est_hr, ref_hr, snr_db=cell_snrs, method=method,
            motion_deg_s=velocity, skin_type=skin, seed=seed))
    return out


def cmd_sweep(config: evaluation.SweepConfig, out_dir: Path,
              jobs: int = 1) -> Path:
    """Run a factorial sweep; write CSV/JSON reports and figures."""
    cells = [(config, velocity, skin, seed)
             for velocity in config.motion_velocities
             for skin in config.skin_types
             for seed in config.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            nested = list(pool.map(_sweep_cell, cells))
        rows = [r for cell in nested for r in cell]
    else:
        rows = evaluation.run_sweep(config)
    evaluation.write_reports_csv(rows, out_dir / "sweep.csv")
    evaluation.write_reports_json(rows, out_dir / "sweep.json")
    paths = figures.sweep_figures(rows, out_dir / "figures")
    log.info("sweep wrote %d rows and %d figures", len(rows), len(paths))
    return out_dir / "sweep.csv"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pulseforge",
        description="Synthetic pulse-video workbench: synthesize clips, "
                    "recover pulse signals, train and evaluate models.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="global seed override")
        p.add_argument("--out", default="pulseforge_out", help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="worker cap")

    p = sub.add_parser("synth", help="synthesize a clip dataset")
    common(p)

    p = sub.add_parser("recover", help="recover pulse estimates from a dataset")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory (manifest)")
    p.add_argument("--method", help="pos | chrom | ica | can")
    p.add_argument("--checkpoint", help="model checkpoint for method 'can'")

    p = sub.add_parser("train", help="train the attention network")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory (manifest)")

    p = sub.add_parser("eval", help="score estimates against a manifest")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory (manifest)")
    p.add_argument("--estimates", required=True, help="directory of estimate CSVs")

    p = sub.add_parser("sweep", help="run a factorial condition sweep")
    common(p)
    p.add_argument("--method", help="restrict the sweep to one method")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = Path(args.out)
    try:
        _setup_logging(out_dir)
        raw = _load_config_file(args.config, args.command)
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.command == "synth":
            cmd_synth(_from_dict(SynthConfig, raw), out_dir, jobs=args.jobs)
        elif args.command == "recover":
            if args.method:
                raw["method"] = args.method
            if args.checkpoint:
                raw["checkpoint"] = args.checkpoint
            cmd_recover(Path(args.data), _from_dict(RecoverConfig, raw), out_dir)
        elif args.command == "train":
            cmd_train(Path(args.data), _from_dict(TrainCliConfig, raw), out_dir)
        elif args.command == "eval":
            raw.pop("seed", None)
            cmd_eval(Path(args.estimates), Path(args.data), out_dir)
        elif args.command == "sweep":
            seeds = raw.pop("seeds", None)
            seed = raw.pop("seed", None)
            if seed is not None and seeds is None:
                seeds = [seed]
            if args.method:
                raw["methods"] = [args.method]
            config = _from_dict(evaluation.SweepConfig,
                                raw | ({"seeds": tuple(seeds)} if seeds else {}))
            cmd_sweep(config, out_dir, jobs=args.jobs)
    except PulseforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
