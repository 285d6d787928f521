"""Clip synthesis from condition labels, dataset manifests, and loading.

A clip condition names everything the synthesizer needs (heart rate,
motion velocity, skin type, geometry, coupling strengths, noise); a
single seed drives every random draw, so a condition plus its seed
reproduces a clip bit for bit.
"""

from __future__ import annotations

import csv
import io
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import drm, waveform
from .errors import ConfigurationError, ParseError

ROMAN_TYPES = ("I", "II", "III", "IV", "V", "VI")

# Skin-type counts for a 50-identity roster; other population sizes are
# sampled from the same proportions.
SKIN_TYPE_COUNTS = {1: 9, 2: 15, 3: 12, 4: 4, 5: 5, 6: 5}

MANIFEST_NAME = "manifest.csv"

MANIFEST_COLUMNS = (
    "clip_id", "identity", "clip_index", "motion_deg_s", "skin_type",
    "hr_bpm", "hr_ref_bpm", "seed", "clip_path", "waveform_path",
)


def skin_type_to_roman(fitzpatrick_type: int) -> str:
    return ROMAN_TYPES[fitzpatrick_type - 1]


def skin_type_from_label(label) -> int:
    if isinstance(label, str):
        text = label.strip().upper()
        if text in ROMAN_TYPES:
            return ROMAN_TYPES.index(text) + 1
        if text.isdigit():
            label = int(text)
        else:
            raise ConfigurationError(
                f"unknown skin type {label!r}; use I..VI or 1..6")
    if label not in range(1, 7):
        raise ConfigurationError(f"skin type must be in 1..6, got {label!r}")
    return int(label)


@dataclass(frozen=True)
class ClipCondition:
    """Everything needed to synthesize one clip deterministically."""

    hr_bpm: float
    angular_velocity: float = 0.0
    fitzpatrick_type: int = 1
    duration_s: float = 10.0
    sample_rate: float = 30.0
    patch_size: int = 36
    max_angle_deg: float = 30.0
    phi_motion: float = 0.2
    psi_motion: float = 0.2
    phi_pulse: float = 0.0
    psi_pulse: float = 0.0
    noise_sigma: float = 0.0
    quantization_bits: int | None = None
    background_rgb: tuple[float, float, float] = (0.32, 0.30, 0.36)
    pulse_amplitude: float | None = None
    exact: bool = True

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["background_rgb"] = list(self.background_rgb)
        return d


def build_clip(condition: ClipCondition, seed: int):
    """Synthesize a clip; returns (video, pulse, patch_spec).

    The pulse phase and per-pixel sensor noise derive from `seed`.
    """
    cond = condition
    pulse = waveform.synth_pulse(cond.hr_bpm, cond.duration_s,
                                 cond.sample_rate, seed=seed)
    motion = drm.make_motion(cond.angular_velocity, cond.duration_s,
                             cond.sample_rate, max_angle_deg=cond.max_angle_deg)
    mod = drm.ModulationModel(phi_motion=cond.phi_motion,
                              phi_pulse=cond.phi_pulse,
                              psi_motion=cond.psi_motion,
                              psi_pulse=cond.psi_pulse)
    spec = drm.default_patch_spec(cond.patch_size,
                                  fitzpatrick_type=cond.fitzpatrick_type,
                                  background_rgb=cond.background_rgb)
    model = drm.default_optical_model(pulse_amplitude=cond.pulse_amplitude)
    model = drm.apply_skin_type(model, cond.fitzpatrick_type)
    noise = None
    if cond.quantization_bits is not None or cond.noise_sigma > 0:
        noise = drm.NoiseModel(
            quantization_bits=cond.quantization_bits or 16,
            gaussian_sigma=cond.noise_sigma, seed=seed)
    video = drm.render_patch_video(spec, model, mod, pulse, motion, noise,
                                   exact=cond.exact)
    return video, pulse, spec


def assign_skin_types(n_identities: int, seed: int) -> list[int]:
    """Deterministic skin-type roster following the reference distribution."""
    total = sum(SKIN_TYPE_COUNTS.values())
    roster: list[int] = []
    for t, count in sorted(SKIN_TYPE_COUNTS.items()):
        roster.extend([t] * max(1, round(count * n_identities / total)))
    roster = roster[:n_identities]
    while len(roster) < n_identities:
        roster.append(2)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC1A0)))
    perm = rng.permutation(len(roster))
    return [roster[i] for i in perm]


def clip_seed(base_seed: int, *parts: int) -> int:
    """Stable derived seed for one clip from integer condition labels."""
    ss = np.random.SeedSequence((int(base_seed),) + tuple(int(p) for p in parts))
    return int(ss.generate_state(1, np.uint64)[0] % (2 ** 63))


@dataclass(frozen=True)
class ManifestRow:
    clip_id: str
    identity: int
    clip_index: int
    motion_deg_s: float
    skin_type: int
    hr_bpm: float
    hr_ref_bpm: float
    seed: int
    clip_path: str
    waveform_path: str


def write_manifest(rows: list[ManifestRow], directory) -> Path:
    path = Path(directory) / MANIFEST_NAME
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_COLUMNS)
    for r in rows:
        writer.writerow([
            r.clip_id, r.identity, r.clip_index, repr(r.motion_deg_s),
            skin_type_to_roman(r.skin_type), repr(r.hr_bpm),
            repr(r.hr_ref_bpm), r.seed, r.clip_path, r.waveform_path,
        ])
    _atomic_write_text(path, buf.getvalue())
    return path


def read_manifest(directory) -> tuple[list[ManifestRow], Path]:
    """Read a dataset manifest; returns (rows, dataset base directory)."""
    path = Path(directory) / MANIFEST_NAME
    if path.is_file():
        base = Path(directory)
    elif Path(directory).is_file():
        path = Path(directory)
        base = path.parent
    else:
        raise ParseError(f"manifest not found under {directory}")
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != list(MANIFEST_COLUMNS):
            raise ParseError(f"{path}: unexpected manifest columns "
                             f"{reader.fieldnames}")
        for lineno, rec in enumerate(reader, start=2):
            try:
                rows.append(ManifestRow(
                    clip_id=rec["clip_id"],
                    identity=int(rec["identity"]),
                    clip_index=int(rec["clip_index"]),
                    motion_deg_s=float(rec["motion_deg_s"]),
                    skin_type=skin_type_from_label(rec["skin_type"]),
                    hr_bpm=float(rec["hr_bpm"]),
                    hr_ref_bpm=float(rec["hr_ref_bpm"]),
                    seed=int(rec["seed"]),
                    clip_path=rec["clip_path"],
                    waveform_path=rec["waveform_path"],
                ))
            except (KeyError, ValueError) as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from None
    return rows, base


def write_waveform_csv(pulse: waveform.PulseWaveform, path) -> None:
    lines = [f"# sample_rate_hz={float(pulse.sample_rate)!r}", "amplitude"]
    lines.extend(repr(float(v)) for v in pulse.samples)
    _atomic_write_text(Path(path), "\n".join(lines) + "\n")


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
