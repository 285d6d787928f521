"""Unsupervised pulse recovery from RGB traces: POS, CHROM, and ICA.

All three operate on the spatial mean of the skin pixels per frame and
are invariant to a global positive gain on the input.  POS and CHROM are
deterministic; ICA is deterministic given its seed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter1d

from . import dsp
from .drm import VideoTensor
from .errors import ConfigurationError, DegenerateInputError, DomainError

WINDOW_S = 1.6
ICA_MAX_ITER = 200
ICA_TOL = 1e-6
ICA_DETREND_S = 2.0

_POS_PLANE = np.array([[0.0, 1.0, -1.0],
                       [-2.0, 1.0, 1.0]])


@dataclass(frozen=True)
class RoiTrace:
    """Spatial mean over skin pixels per frame, shape (T, 3)."""

    rgb: np.ndarray
    sample_rate: float

    def __post_init__(self) -> None:
        rgb = np.asarray(self.rgb, dtype=np.float64)
        if rgb.ndim != 2 or rgb.shape[1] != 3:
            raise DomainError("rgb must have shape (T, 3)")
        if rgb.shape[0] < 2 * self.sample_rate:
            raise DomainError("trace must cover at least 2 seconds")
        if not np.all(np.isfinite(rgb)):
            raise DomainError("trace contains non-finite values")
        object.__setattr__(self, "rgb", rgb)


@dataclass(frozen=True)
class BvpEstimate:
    """Recovered pulse signal, same length as the input trace."""

    samples: np.ndarray
    sample_rate: float
    method: str
    converged: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "samples",
                           np.asarray(self.samples, dtype=np.float64))


def spatial_average(video: VideoTensor, mask: np.ndarray) -> RoiTrace:
    """Per-frame mean of the masked pixels, per channel."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != video.frames.shape[1:3]:
        raise DomainError("mask shape must match the frame geometry")
    if not np.any(mask):
        raise DomainError("mask selects no pixels")
    rgb = video.frames[:, mask, :].mean(axis=1, dtype=np.float64)
    return RoiTrace(rgb=rgb, sample_rate=video.sample_rate)


def _window_starts(n: int, length: int) -> list[int]:
    step = max(1, length // 2)
    starts = list(range(0, n - length + 1, step))
    if starts[-1] != n - length:
        starts.append(n - length)
    return starts


def pos(trace: RoiTrace) -> BvpEstimate:
    """Plane-orthogonal-to-skin projection with overlap-added windows.

    Each 1.6 s window is temporally normalized by its channel means,
    projected onto the two rows of the skin-orthogonal plane, and the
    projections combined with the adaptive ratio of their deviations.
    """
    n = trace.rgb.shape[0]
    length = int(round(WINDOW_S * trace.sample_rate))
    if length < 2 or length > n:
        raise DomainError(
            f"trace too short for a {WINDOW_S:g} s window at "
            f"{trace.sample_rate:g} Hz")
    out = np.zeros(n)
    for start in _window_starts(n, length):
        c = trace.rgb[start:start + length]
        mu = c.mean(axis=0)
        cn = np.divide(c, mu[None, :], out=np.ones_like(c), where=mu != 0)
        s = cn @ _POS_PLANE.T
        sigma2 = s[:, 1].std()
        alpha = s[:, 0].std() / sigma2 if sigma2 > 0 else 0.0
        h = s[:, 0] + alpha * s[:, 1]
        out[start:start + length] += h - h.mean()
    return BvpEstimate(samples=out, sample_rate=trace.sample_rate, method="pos")


def chrom(trace: RoiTrace) -> BvpEstimate:
    """Chrominance-based recovery with Hann overlap-add.

    Per window: channels normalized by their means, fixed chrominance
    combinations X = 3R - 2G and Y = 1.5R + G - 1.5B, both band-passed,
    combined as X - (sigma_X / sigma_Y) * Y.
    """
    n = trace.rgb.shape[0]
    length = int(round(WINDOW_S * trace.sample_rate))
    if length < 2 or length > n:
        raise DomainError(
            f"trace too short for a {WINDOW_S:g} s window at "
            f"{trace.sample_rate:g} Hz")
    filt = dsp.design_butterworth(6, *dsp.HR_BAND_HZ, trace.sample_rate)
    taper = np.hanning(length)
    out = np.zeros(n)
    for start in _window_starts(n, length):
        c = trace.rgb[start:start + length]
        mu = c.mean(axis=0)
        cn = np.divide(c, mu[None, :], out=np.ones_like(c), where=mu != 0)
        x = 3.0 * cn[:, 0] - 2.0 * cn[:, 1]
        y = 1.5 * cn[:, 0] + cn[:, 1] - 1.5 * cn[:, 2]
        xf = dsp.filtfilt(filt, x)
        yf = dsp.filtfilt(filt, y)
        sigma_y = yf.std()
        alpha = xf.std() / sigma_y if sigma_y > 0 else 0.0
        out[start:start + length] += (xf - alpha * yf) * taper
    return BvpEstimate(samples=out, sample_rate=trace.sample_rate, method="chrom")


def ica(trace: RoiTrace, seed: int = 0) -> BvpEstimate:
    """Blind source separation with pulse-band component selection.

    Channels are detrended (2 s moving average) and standardized, the
    3 x T matrix whitened, and a fixed-point negentropy search (log-cosh
    contrast) run from a seeded random rotation.  The component whose
    band-limited spectrum concentrates most power in a single peak is
    returned, signed to correlate positively with the green channel.
    """
    n = trace.rgb.shape[0]
    x = trace.rgb.T.copy()
    win = max(2, int(round(ICA_DETREND_S * trace.sample_rate)))
    x -= uniform_filter1d(x, size=win, axis=1, mode="reflect")
    stds = x.std(axis=1)
    if np.all(stds == 0):
        raise DegenerateInputError("trace has no variation after detrending")
    x[stds > 0] /= stds[stds > 0, None]

    z = _whiten(x)
    w, converged = _fixed_point_ica(z, seed)
    if not converged:
        warnings.warn("ICA did not converge; returning the best iterate",
                      stacklevel=2)
    sources = w @ z

    best, best_ratio = 0, -1.0
    for k in range(sources.shape[0]):
        spec = dsp.power_spectrum(sources[k], trace.sample_rate).band(*dsp.HR_BAND_HZ)
        total = float(np.sum(spec.power))
        ratio = float(np.max(spec.power)) / total if total > 0 else 0.0
        if ratio > best_ratio:
            best, best_ratio = k, ratio
    selected = sources[best]
    green = trace.rgb[:, 1] - trace.rgb[:, 1].mean()
    if float(selected @ green) < 0:
        selected = -selected
    return BvpEstimate(samples=selected, sample_rate=trace.sample_rate,
                       method="ica", converged=converged)


def recover(trace: RoiTrace, method: str, seed: int = 0) -> BvpEstimate:
    """Dispatch a named recovery method; unknown names list valid ones."""
    if method == "pos":
        return pos(trace)
    if method == "chrom":
        return chrom(trace)
    if method == "ica":
        return ica(trace, seed=seed)
    raise ConfigurationError(
        f"unknown method {method!r}; valid: chrom, ica, pos")


def _whiten(x: np.ndarray) -> np.ndarray:
    """PCA whitening; rank-deficient directions are dropped."""
    n = x.shape[1]
    cov = x @ x.T / n
    eigval, eigvec = np.linalg.eigh(cov)
    keep = eigval > max(float(eigval[-1]), 0.0) * 1e-12
    if not np.any(keep):
        raise DegenerateInputError("trace covariance is numerically zero")
    eigval = eigval[keep]
    eigvec = eigvec[:, keep]
    k = (eigvec / np.sqrt(eigval)[None, :]).T
    return k @ x


def _fixed_point_ica(z: np.ndarray, seed: int):
    """Symmetric fixed-point iteration with the log-cosh contrast."""
    dim, n = z.shape
    rng = np.random.default_rng(seed)
    w, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    if dim == 1:
        return np.ones((1, 1)), True
    for _ in range(ICA_MAX_ITER):
        wz = w @ z
        g = np.tanh(wz)
        g_prime = 1.0 - g ** 2
        w_new = (g @ z.T) / n - g_prime.mean(axis=1)[:, None] * w
        w_new = _sym_decorrelate(w_new)
        lim = float(np.max(np.abs(np.abs(np.diag(w_new @ w.T)) - 1.0)))
        w = w_new
        if lim < ICA_TOL:
            return w, True
    return w, False


def _sym_decorrelate(w: np.ndarray) -> np.ndarray:
    eigval, eigvec = np.linalg.eigh(w @ w.T)
    eigval = np.maximum(eigval, 1e-30)
    inv_sqrt = (eigvec / np.sqrt(eigval)[None, :]) @ eigvec.T
    return inv_sqrt @ w


def write_roi_csv(trace: RoiTrace, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t_s,r,g,b\n")
        dt = 1.0 / trace.sample_rate
        for i, row in enumerate(trace.rgb):
            fh.write(f"{i * dt!r},{float(row[0])!r},{float(row[1])!r},"
                     f"{float(row[2])!r}\n")


def read_roi_csv(path, sample_rate: float | None = None) -> RoiTrace:
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    if data.ndim != 2 or data.shape[1] != 4 or np.any(~np.isfinite(data)):
        raise DomainError(f"{path}: expected numeric columns t_s,r,g,b")
    if sample_rate is None:
        sample_rate = 1.0 / float(np.median(np.diff(data[:, 0])))
    return RoiTrace(rgb=data[:, 1:], sample_rate=sample_rate)


def write_estimate_csv(estimate: BvpEstimate, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# method={estimate.method}\n")
        fh.write("t_s,amplitude\n")
        dt = 1.0 / estimate.sample_rate
        for i, v in enumerate(estimate.samples):
            fh.write(f"{i * dt!r},{float(v)!r}\n")


def read_estimate_csv(path) -> BvpEstimate:
    method = "unknown"
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().strip()
        if first.startswith("#") and "method=" in first:
            method = first.split("method=", 1)[1].strip()
    data = np.genfromtxt(path, delimiter=",", skip_header=2)
    if data.ndim != 2 or data.shape[1] != 2 or np.any(~np.isfinite(data)):
        raise DomainError(f"{path}: expected numeric columns t_s,amplitude")
    rate = 1.0 / float(np.median(np.diff(data[:, 0])))
    return BvpEstimate(samples=data[:, 1], sample_rate=rate, method=method)
