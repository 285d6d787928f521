"""Pulse waveforms: parametric generation, CSV ingestion, resampling.

Waveforms drive the video synthesizer and serve as ground truth for
recovery experiments.  Resampling is plain linear interpolation: the pulse
band (below 4 Hz) sits far under Nyquist at every rate used here, so
band-limited sinc interpolation would buy nothing.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateInputError, DomainError, ParseError

# Relative amplitudes and phase offsets of the fixed harmonic pulse shape.
# The fundamental plus a strong 2nd and weak 3rd harmonic reproduce the
# asymmetric systolic upstroke of a contact PPG pulse.
HARMONIC_AMPLITUDES = (1.0, 0.3, 0.1)
HARMONIC_PHASES = (0.0, np.pi / 2.0, np.pi)

HR_BPM_MIN = 30.0
HR_BPM_MAX = 240.0


@dataclass(frozen=True)
class PulseWaveform:
    """A sampled blood-volume-pulse signal.

    Attributes
    ----------
    samples : np.ndarray
        Real amplitudes, dimensionless.
    sample_rate : float
        Sampling rate in Hz, > 0.
    hr_reference : float or None
        Ground-truth heart rate in BPM when known.
    """

    samples: np.ndarray
    sample_rate: float
    hr_reference: float | None = None

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if self.sample_rate <= 0:
            raise DomainError(f"sample_rate must be > 0, got {self.sample_rate}")
        if samples.ndim != 1 or samples.size == 0:
            raise DomainError("samples must be a non-empty 1-D sequence")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate

    def first_seconds(self, duration_s: float) -> "PulseWaveform":
        """Truncate to the leading `duration_s` seconds."""
        n = min(self.samples.size, int(round(duration_s * self.sample_rate)))
        if n < 1:
            raise DomainError("truncation would leave no samples")
        return replace(self, samples=self.samples[:n].copy())


def synth_pulse(hr_bpm: float, duration_s: float, sample_rate: float,
                seed: int = 0) -> PulseWaveform:
    """Generate a normalized pulse waveform at a fixed heart rate.

    The shape is the fixed harmonic series (1.0, 0.3, 0.1) with phase
    offsets (0, pi/2, pi).  The seed draws a random global phase so that
    clips sharing a heart rate are not sample-identical; it does not
    change the spectrum.

    Parameters
    ----------
    hr_bpm : float
        Heart rate in beats per minute, in [30, 240].
    duration_s : float
        Signal length in seconds, > 0.
    sample_rate : float
        Sampling rate in Hz.
    seed : int
        Seed for the global phase draw.

    Returns
    -------
    PulseWaveform
        Zero-mean, unit-variance waveform with `hr_reference` set.
    """
    if not (HR_BPM_MIN <= hr_bpm <= HR_BPM_MAX):
        raise DomainError(
            f"hr_bpm must be in [{HR_BPM_MIN:g}, {HR_BPM_MAX:g}], got {hr_bpm}")
    if duration_s <= 0:
        raise DomainError(f"duration_s must be > 0, got {duration_s}")
    f0 = hr_bpm / 60.0
    n = int(round(duration_s * sample_rate))
    if n < 2:
        raise DomainError("duration_s too short for the given sample_rate")
    rng = np.random.default_rng(seed)
    phase0 = rng.uniform(0.0, 2.0 * np.pi)
    t = np.arange(n, dtype=np.float64) / sample_rate
    x = np.zeros(n, dtype=np.float64)
    for k, (amp, phi) in enumerate(zip(HARMONIC_AMPLITUDES, HARMONIC_PHASES), start=1):
        x += amp * np.sin(2.0 * np.pi * k * f0 * t + k * phase0 + phi)
    out = PulseWaveform(x, sample_rate, hr_reference=float(hr_bpm))
    return normalize(out)


def normalize(w: PulseWaveform) -> PulseWaveform:
    """Standardize a waveform to zero mean and unit variance."""
    if w.samples.size < 2:
        raise DegenerateInputError("normalize needs at least 2 samples")
    mu = float(np.mean(w.samples))
    sigma = float(np.std(w.samples))
    if sigma == 0.0:
        raise DegenerateInputError("cannot normalize a constant waveform")
    return replace(w, samples=(w.samples - mu) / sigma)


def resample(w: PulseWaveform, target_rate: float) -> PulseWaveform:
    """Linearly interpolate onto a uniform grid at `target_rate` Hz.

    Duration is preserved to within one sample period of either rate.
    """
    if target_rate <= 0:
        raise DomainError(f"target_rate must be > 0, got {target_rate}")
    if target_rate == w.sample_rate:
        return replace(w, samples=w.samples.copy())
    n_out = int(round(w.samples.size * target_rate / w.sample_rate))
    n_out = max(n_out, 2)
    t_in = np.arange(w.samples.size, dtype=np.float64) / w.sample_rate
    t_out = np.arange(n_out, dtype=np.float64) / target_rate
    samples = np.interp(t_out, t_in, w.samples)
    return replace(w, samples=samples, sample_rate=float(target_rate))


def load_ppg_csv(path) -> PulseWaveform:
    """Load a contact-PPG trace from CSV.

    Accepted layouts (UTF-8, newline-delimited):

    * optional comment line ``# sample_rate_hz=<float>``, column header
      ``amplitude``, one numeric column;
    * column header ``time_s,amplitude``, two numeric columns with a
      strictly increasing, uniformly spaced time column (the rate is
      inferred from the spacing).

    The trace is returned at its native rate with no normalization.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw_lines = fh.read().splitlines()
    except FileNotFoundError:
        raise ParseError(f"PPG file not found: {path}") from None

    declared_rate: float | None = None
    columns: list[str] | None = None
    times: list[float] = []
    amps: list[float] = []
    saw_data = False

    for lineno, line in enumerate(raw_lines, start=1):
        text = line.strip()
        if not text:
            continue
        if text.startswith("#"):
            body = text.lstrip("#").strip()
            if body.startswith("sample_rate_hz"):
                try:
                    declared_rate = float(body.split("=", 1)[1])
                except (IndexError, ValueError):
                    raise ParseError(
                        f"{path}: line {lineno}: malformed sample_rate_hz header")
            continue
        fields = [f.strip() for f in text.split(",")]
        if columns is None and not _all_numeric(fields):
            columns = [f.lower() for f in fields]
            if columns not in (["amplitude"], ["time_s", "amplitude"]):
                raise ParseError(
                    f"{path}: line {lineno}: unsupported columns {fields}")
            continue
        if columns is None:
            # Headerless fallback: infer layout from the field count.
            columns = ["amplitude"] if len(fields) == 1 else ["time_s", "amplitude"]
        if len(fields) != len(columns):
            raise ParseError(
                f"{path}: line {lineno}: expected {len(columns)} fields, got {len(fields)}")
        try:
            values = [float(f) for f in fields]
        except ValueError:
            raise ParseError(f"{path}: line {lineno}: non-numeric row {text!r}")
        if len(columns) == 2:
            times.append(values[0])
            amps.append(values[1])
        else:
            amps.append(values[0])
        saw_data = True

    if not saw_data:
        raise ParseError(f"{path}: no data rows")

    if columns == ["time_s", "amplitude"]:
        t = np.asarray(times, dtype=np.float64)
        dt = np.diff(t)
        if np.any(dt <= 0):
            bad = int(np.argmax(dt <= 0))
            raise ParseError(
                f"{path}: non-monotonic time column near row {bad + 2}")
        spacing = float(np.median(dt))
        if np.max(np.abs(dt - spacing)) > 0.01 * spacing:
            raise ParseError(f"{path}: time column is not uniformly spaced")
        rate = 1.0 / spacing
    else:
        if declared_rate is None:
            raise ParseError(
                f"{path}: single-column file needs a '# sample_rate_hz=' header")
        rate = declared_rate

    return PulseWaveform(np.asarray(amps, dtype=np.float64), float(rate))


def _all_numeric(fields) -> bool:
    try:
        for f in fields:
            float(f)
    except ValueError:
        return False
    return True
