"""Dichromatic-reflection synthesis of skin-pixel RGB traces and patch videos.

The observed color of a skin pixel is modeled as a shared illumination
intensity modulating a specular (surface, illuminant-colored) and a
diffuse (subsurface, pulse-carrying) reflection, plus camera sensor
noise.  The stationary specular and diffuse parts combine into a single
skin-reflection color; the pulse enters through a fixed hemoglobin-derived
color direction scaled by `pulse_amplitude`.

Both the full product form of the model and its first-order linearization
are implemented; the `exact` flag toggles between them so the size of the
neglected cross terms can be measured directly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, DomainError
from .waveform import PulseWaveform

# Relative pulsatile strengths per RGB channel, from hemoglobin absorption
# folded through typical camera band sensitivities (strongest in green).
HEMOGLOBIN_RGB = (0.33, 0.77, 0.53)

# Per-Fitzpatrick-type attenuation: illumination reaching the camera and
# effective pulsatile amplitude both drop as melanin concentration rises.
# These magnitudes are a workbench parameterization (config-overridable);
# only the direction of the effect is physically pinned.
MELANIN_I0_FACTORS = (1.00, 0.85, 0.70, 0.55, 0.40, 0.28)
MELANIN_PULSE_FACTORS = (1.00, 0.90, 0.75, 0.55, 0.40, 0.30)

# Lateral translation at full deflection is width/8 pixels: large enough to
# dominate frame differences at 30 deg/s, small enough to keep most skin in
# frame.
PIXEL_SHIFT_FRACTION = 1.0 / 8.0

DEFAULT_MAX_ANGLE_DEG = 30.0


def hemoglobin_channel_weights() -> np.ndarray:
    """Unit RGB vector used as the pulsatile color direction."""
    v = np.asarray(HEMOGLOBIN_RGB, dtype=np.float64)
    return v / np.linalg.norm(v)


def melanin_attenuation(fitzpatrick_type: int):
    """Attenuation factors for a Fitzpatrick skin type.

    Returns
    -------
    (np.ndarray, float)
        Per-channel multipliers applied to the stationary illumination and
        a scalar multiplier applied to `pulse_amplitude`.  Type I is the
        reference (all ones); both factors strictly decrease with type.
    """
    if fitzpatrick_type not in range(1, 7):
        raise DomainError(
            f"fitzpatrick_type must be 1..6 (I..VI), got {fitzpatrick_type}")
    g = MELANIN_I0_FACTORS[fitzpatrick_type - 1]
    return np.full(3, g, dtype=np.float64), MELANIN_PULSE_FACTORS[fitzpatrick_type - 1]


def _check_unit_vector(name: str, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (3,):
        raise DomainError(f"{name} must have 3 components")
    if np.any(v < 0):
        raise DomainError(f"{name} must have non-negative components")
    if abs(np.linalg.norm(v) - 1.0) > 1e-9:
        raise DomainError(f"{name} must have unit L2 norm")
    return v


@dataclass(frozen=True)
class SkinOpticalModel:
    """Stationary reflection constants and unit color vectors.

    The combined skin-reflection direction `u_c` and strength `c0` are
    always derived from the specular and diffuse parts
    (``u_c * c0 = u_s * s0 + u_d * d0``), so the decomposition is
    consistent by construction.

    `pulse_amplitude` scales the effect of the normalized pulse on the
    diffuse reflection.  The linearized evaluation path is a good
    approximation only while the pulsatile component stays orders of
    magnitude below the stationary one; a warning is issued above
    ``0.01 * c0``.

    `channel_gain` carries per-channel illumination attenuation (melanin;
    see `apply_skin_type`) without disturbing the unit-vector invariants.
    """

    u_s: np.ndarray
    u_d: np.ndarray
    u_abs: np.ndarray
    u_sub: np.ndarray
    s0: float
    d0: float
    I0: float
    pulse_amplitude: float | None = None
    channel_gain: np.ndarray = field(
        default_factory=lambda: np.ones(3, dtype=np.float64))
    u_c: np.ndarray = field(init=False)
    c0: float = field(init=False)

    def __post_init__(self) -> None:
        for name in ("u_s", "u_d", "u_abs", "u_sub"):
            object.__setattr__(self, name, _check_unit_vector(name, getattr(self, name)))
        if self.s0 < 0 or self.d0 < 0 or self.I0 < 0:
            raise DomainError("s0, d0 and I0 must be non-negative")
        gain = np.asarray(self.channel_gain, dtype=np.float64)
        if gain.shape != (3,) or np.any(gain < 0):
            raise DomainError("channel_gain must be 3 non-negative factors")
        object.__setattr__(self, "channel_gain", gain)
        combined = self.u_s * self.s0 + self.u_d * self.d0
        c0 = float(np.linalg.norm(combined))
        if c0 == 0.0:
            raise DomainError("s0 and d0 cannot both be zero")
        object.__setattr__(self, "c0", c0)
        object.__setattr__(self, "u_c", combined / c0)
        if self.pulse_amplitude is None:
            object.__setattr__(self, "pulse_amplitude", 0.005 * c0)
        elif self.pulse_amplitude < 0:
            raise DomainError("pulse_amplitude must be non-negative")
        elif self.pulse_amplitude > 0.01 * c0:
            warnings.warn(
                f"pulse_amplitude {self.pulse_amplitude:.4g} exceeds 0.01*c0 "
                f"({0.01 * c0:.4g}); the linearized path degrades",
                stacklevel=2)

    @property
    def u_pulse(self) -> np.ndarray:
        """Normalized pulsatile color direction (absorption + scattering)."""
        v = self.u_abs + self.u_sub
        return v / np.linalg.norm(v)


def default_optical_model(I0: float = 1.0, s0: float = 0.08, d0: float = 0.55,
                          pulse_amplitude: float | None = None) -> SkinOpticalModel:
    """Workbench defaults: white illuminant, light-skin tissue color,
    hemoglobin pulsatile direction."""
    u_s = np.ones(3) / np.sqrt(3.0)
    u_d = np.asarray([0.72, 0.56, 0.44])
    u_d = u_d / np.linalg.norm(u_d)
    h = hemoglobin_channel_weights()
    return SkinOpticalModel(u_s=u_s, u_d=u_d, u_abs=h, u_sub=h,
                            s0=s0, d0=d0, I0=I0,
                            pulse_amplitude=pulse_amplitude)


def apply_skin_type(model: SkinOpticalModel,
                    fitzpatrick_type: int) -> SkinOpticalModel:
    """Fold melanin attenuation for a skin type into the model."""
    gain, pulse_factor = melanin_attenuation(fitzpatrick_type)
    return replace(model,
                   channel_gain=model.channel_gain * gain,
                   pulse_amplitude=model.pulse_amplitude * pulse_factor)


@dataclass(frozen=True)
class ModulationModel:
    """First-order coupling of motion and pulse into the specular and
    intensity modulations.

    The true couplings are complex and nonlinear; a linear model is the
    minimal form that still produces motion-correlated specular and
    illumination noise, and the exact/linearized trace toggle quantifies
    what the neglected products amount to.
    """

    phi_motion: float = 0.0
    phi_pulse: float = 0.0
    psi_motion: float = 0.0
    psi_pulse: float = 0.0

    def __post_init__(self) -> None:
        for name in ("phi_motion", "phi_pulse", "psi_motion", "psi_pulse"):
            if not np.isfinite(getattr(self, name)):
                raise DomainError(f"{name} must be finite")

    def phi(self, m: np.ndarray, p: np.ndarray) -> np.ndarray:
        return self.phi_motion * m + self.phi_pulse * p

    def psi(self, m: np.ndarray, p: np.ndarray) -> np.ndarray:
        return self.psi_motion * m + self.psi_pulse * p


@dataclass(frozen=True)
class MotionTrace:
    """Normalized rigid-motion trace m(t) in [-1, 1] with its angular velocity.

    Per-frame lateral pixel translations are derived deterministically
    from m(t) once the patch width is known (`pixel_shift`).
    """

    angular_velocity: float
    samples: np.ndarray
    sample_rate: float

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if self.angular_velocity < 0:
            raise DomainError("angular_velocity must be >= 0")
        if np.max(np.abs(samples), initial=0.0) > 1.0 + 1e-12:
            raise DomainError("|m(t)| must not exceed 1")

    def pixel_shift(self, width: int) -> np.ndarray:
        """Integer lateral translation per frame: round(m * width/8)."""
        return np.round(self.samples * width * PIXEL_SHIFT_FRACTION).astype(np.int64)


def make_motion(angular_velocity: float, duration_s: float, sample_rate: float,
                max_angle_deg: float = DEFAULT_MAX_ANGLE_DEG) -> MotionTrace:
    """Triangular-wave yaw sweep at constant angular speed.

    The yaw angle sweeps +/-`max_angle_deg` at `angular_velocity`
    degrees/second, starting at 0 moving positive; m(t) is the angle
    normalized by `max_angle_deg`.
    """
    if angular_velocity < 0:
        raise DomainError("angular_velocity must be >= 0")
    if max_angle_deg <= 0:
        raise DomainError("max_angle_deg must be > 0")
    n = int(round(duration_s * sample_rate))
    if n < 1:
        raise DomainError("duration_s too short for the given sample_rate")
    t = np.arange(n, dtype=np.float64) / sample_rate
    x = angular_velocity * t / max_angle_deg
    m = (2.0 / np.pi) * np.arcsin(np.sin(np.pi * x / 2.0))
    return MotionTrace(angular_velocity=float(angular_velocity), samples=m,
                       sample_rate=float(sample_rate))


@dataclass(frozen=True)
class NoiseModel:
    """Camera sensor noise: Gaussian read noise followed by quantization."""

    quantization_bits: int = 8
    gaussian_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not (1 <= self.quantization_bits <= 16):
            raise DomainError("quantization_bits must be in 1..16")
        if self.gaussian_sigma < 0:
            raise DomainError("gaussian_sigma must be >= 0")


@dataclass(frozen=True)
class PatchSpec:
    """Geometry and appearance of a synthetic skin patch."""

    height: int
    width: int
    skin_mask: np.ndarray
    perfusion_map: np.ndarray
    background_rgb: np.ndarray
    fitzpatrick_type: int = 1

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise DomainError("patch dimensions must be >= 1")
        mask = np.asarray(self.skin_mask, dtype=bool)
        perf = np.asarray(self.perfusion_map, dtype=np.float64)
        bg = np.asarray(self.background_rgb, dtype=np.float64)
        shape = (self.height, self.width)
        if mask.shape != shape or perf.shape != shape:
            raise DomainError("skin_mask and perfusion_map must match height x width")
        if np.any(perf < 0) or np.any(perf > 1):
            raise DomainError("perfusion_map values must be in [0, 1]")
        if np.any(perf[~mask] != 0):
            raise DomainError("perfusion_map must be 0 outside skin_mask")
        if bg.shape != (3,) or np.any(bg < 0) or np.any(bg > 1):
            raise DomainError("background_rgb must be 3 values in [0, 1]")
        if self.fitzpatrick_type not in range(1, 7):
            raise DomainError("fitzpatrick_type must be 1..6")
        object.__setattr__(self, "skin_mask", mask)
        object.__setattr__(self, "perfusion_map", perf)
        object.__setattr__(self, "background_rgb", bg)


def default_patch_spec(size: int = 36, fitzpatrick_type: int = 1,
                       background_rgb=(0.32, 0.30, 0.36)) -> PatchSpec:
    """Inscribed-ellipse skin mask with a radial raised-cosine perfusion map.

    These stand in for the artist-painted skin and scattering-radius maps
    a full face renderer would use.
    """
    yy, xx = np.mgrid[0:size, 0:size]
    cy = cx = (size - 1) / 2.0
    r = np.sqrt(((yy - cy) / (size / 2.0)) ** 2 + ((xx - cx) / (size / 2.0)) ** 2)
    mask = r <= 1.0
    perf = np.where(mask, 0.5 * (1.0 + np.cos(np.pi * np.minimum(r, 1.0))), 0.0)
    return PatchSpec(height=size, width=size, skin_mask=mask, perfusion_map=perf,
                     background_rgb=np.asarray(background_rgb, dtype=np.float64),
                     fitzpatrick_type=fitzpatrick_type)


@dataclass(frozen=True)
class VideoTensor:
    """T x H x W x 3 clip with values in [0, 1], stored as float32."""

    frames: np.ndarray
    sample_rate: float

    def __post_init__(self) -> None:
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 4 or frames.shape[3] != 3:
            raise DomainError("frames must have shape (T, H, W, 3)")
        if frames.shape[0] < 2:
            raise DomainError("a video needs at least 2 frames")
        if float(frames.min()) < 0.0 or float(frames.max()) > 1.0:
            raise DomainError("frame values must lie in [0, 1]")
        if self.sample_rate <= 0:
            raise DomainError("sample_rate must be > 0")
        object.__setattr__(self, "frames", frames)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.frames.shape


def _check_inputs(pulse: PulseWaveform, motion: MotionTrace | None) -> np.ndarray:
    p = pulse.samples
    if abs(float(np.mean(p))) > 1e-6 or abs(float(np.std(p)) - 1.0) > 1e-3:
        raise DomainError("pulse must be normalized (zero mean, unit variance)")
    if motion is None:
        return np.zeros_like(p)
    if motion.sample_rate != pulse.sample_rate:
        raise ConfigurationError(
            f"pulse sampled at {pulse.sample_rate} Hz but motion at "
            f"{motion.sample_rate} Hz")
    if motion.samples.size != p.size:
        raise ConfigurationError(
            f"pulse has {p.size} samples but motion has {motion.samples.size}")
    return motion.samples


def _stationary_and_pulse_terms(model: SkinOpticalModel, mod: ModulationModel,
                                p: np.ndarray, m: np.ndarray, exact: bool):
    """Split the trace into a perfusion-independent part and the
    coefficient of the (perfusion-scaled) pulse term; both (T, 3)."""
    phi = mod.phi(m, p)
    psi = mod.psi(m, p)
    gain = model.I0 * model.channel_gain
    u_p = model.u_pulse
    if exact:
        envelope = (1.0 + psi)[:, None] * gain[None, :]
        base = envelope * (model.c0 * model.u_c + phi[:, None] * model.u_s)
        pulse_term = envelope * (model.pulse_amplitude * p)[:, None] * u_p[None, :]
    else:
        base = (gain * model.c0 * model.u_c)[None, :] \
            + psi[:, None] * (gain * model.c0 * model.u_c)[None, :] \
            + phi[:, None] * (gain * model.u_s)[None, :]
        pulse_term = (model.pulse_amplitude * p)[:, None] * (gain * u_p)[None, :]
    return base, pulse_term, psi


def _quantize_array(values: np.ndarray, bits: int) -> np.ndarray:
    levels = float(2 ** bits - 1)
    return np.round(values * levels) / levels


def pixel_trace(model: SkinOpticalModel, mod: ModulationModel,
                pulse: PulseWaveform, motion: MotionTrace | None = None,
                noise: NoiseModel | None = None, exact: bool = True) -> np.ndarray:
    """RGB time series of a single skin pixel, shape (T, 3), float64.

    With ``exact=True`` the full product form of the reflection model is
    evaluated; with ``exact=False`` the first-order linearization (the
    form recovery algorithms implicitly assume).  Gaussian noise is added
    and then quantized when a `NoiseModel` is given; the output is
    clamped to [0, 1].
    """
    m = _check_inputs(pulse, motion)
    base, pulse_term, _ = _stationary_and_pulse_terms(model, mod,
                                                      pulse.samples, m, exact)
    trace = base + pulse_term
    if noise is not None:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(noise.seed)))
        if noise.gaussian_sigma > 0:
            trace = trace + rng.normal(0.0, noise.gaussian_sigma, trace.shape)
        trace = _quantize_array(trace, noise.quantization_bits)
    return np.clip(trace, 0.0, 1.0)


def render_patch_video(spec: PatchSpec, model: SkinOpticalModel,
                       mod: ModulationModel, pulse: PulseWaveform,
                       motion: MotionTrace | None = None,
                       noise: NoiseModel | None = None,
                       exact: bool = True) -> VideoTensor:
    """Render a patch clip from the reflection model.

    Skin pixels follow `pixel_trace` with `pulse_amplitude` weighted by
    the perfusion map; background pixels carry `background_rgb` under the
    same illumination modulation.  Frames are then translated laterally
    by the motion-derived pixel shift (background fill), and sensor noise
    is applied to every pixel independently, each pixel seeded by its
    flat index so results cannot depend on evaluation order.
    """
    m = _check_inputs(pulse, motion)
    base, pulse_term, psi = _stationary_and_pulse_terms(model, mod,
                                                        pulse.samples, m, exact)
    n_frames = pulse.samples.size
    h, w = spec.height, spec.width
    bg = spec.background_rgb[None, :] * (1.0 + psi)[:, None]

    frames = np.empty((n_frames, h, w, 3), dtype=np.float64)
    frames[:] = bg[:, None, None, :]
    mask = spec.skin_mask
    if np.any(mask):
        perf = spec.perfusion_map[mask]
        frames[:, mask, :] = base[:, None, :] + perf[None, :, None] * pulse_term[:, None, :]

    if motion is not None:
        shifts = motion.pixel_shift(w)
        for s in np.unique(shifts):
            if s == 0:
                continue
            idx = np.flatnonzero(shifts == s)
            block = np.empty_like(frames[idx])
            block[:] = bg[idx][:, None, None, :]
            if s > 0:
                block[:, :, s:, :] = frames[idx][:, :, :-s, :]
            else:
                block[:, :, :s, :] = frames[idx][:, :, -s:, :]
            frames[idx] = block

    if noise is not None:
        if noise.gaussian_sigma > 0:
            flat = frames.reshape(n_frames, h * w, 3)
            for q in range(h * w):
                rng = np.random.Generator(
                    np.random.Philox(np.random.SeedSequence((noise.seed, q))))
                flat[:, q, :] += rng.normal(0.0, noise.gaussian_sigma,
                                            (n_frames, 3))
        frames = _quantize_array(frames, noise.quantization_bits)

    np.clip(frames, 0.0, 1.0, out=frames)
    return VideoTensor(frames=frames.astype(np.float32),
                       sample_rate=pulse.sample_rate)


def quantize(video: VideoTensor, bits: int) -> VideoTensor:
    """Round every value to the nearest multiple of 1/(2^bits - 1)."""
    if not (1 <= bits <= 16):
        raise DomainError("bits must be in 1..16")
    frames = _quantize_array(video.frames.astype(np.float64), bits)
    return VideoTensor(frames=frames.astype(np.float32),
                       sample_rate=video.sample_rate)
