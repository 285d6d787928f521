"""pulseforge: synthetic skin-pixel videos with embedded pulse signals,
classical and neural pulse recovery, and evaluation sweeps."""

__version__ = "0.1.0"

from .waveform import PulseWaveform, load_ppg_csv, normalize, resample, synth_pulse
from .drm import (
    ModulationModel,
    MotionTrace,
    NoiseModel,
    PatchSpec,
    SkinOpticalModel,
    VideoTensor,
    default_optical_model,
    default_patch_spec,
    hemoglobin_channel_weights,
    make_motion,
    melanin_attenuation,
    pixel_trace,
    quantize,
    render_patch_video,
)
from .recovery import BvpEstimate, RoiTrace, chrom, ica, pos, spatial_average
from .dsp import (
    BandpassFilter,
    Spectrum,
    design_butterworth,
    estimate_hr,
    filtfilt,
    power_spectrum,
    snr_bvp,
)

__all__ = [
    "BandpassFilter",
    "BvpEstimate",
    "ModulationModel",
    "MotionTrace",
    "NoiseModel",
    "PatchSpec",
    "PulseWaveform",
    "RoiTrace",
    "SkinOpticalModel",
    "Spectrum",
    "VideoTensor",
    "chrom",
    "default_optical_model",
    "default_patch_spec",
    "design_butterworth",
    "estimate_hr",
    "filtfilt",
    "hemoglobin_channel_weights",
    "ica",
    "load_ppg_csv",
    "make_motion",
    "melanin_attenuation",
    "normalize",
    "pixel_trace",
    "pos",
    "power_spectrum",
    "quantize",
    "render_patch_video",
    "resample",
    "snr_bvp",
    "spatial_average",
    "synth_pulse",
]
