"""Two-branch convolutional attention network for pulse recovery.

A motion branch consumes normalized frame differences; an appearance
branch consumes normalized frames and gates the motion branch through
soft attention masks at two junctions.  Everything runs in numpy in
double precision with a hand-derived backward pass, gated by a central
finite-difference gradient check.

Shapes are channels-last throughout: (batch, height, width, channels).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from . import dsp
from .drm import VideoTensor
from .errors import (ConfigurationError, DegenerateInputError, ParseError,
                     TrainingDiverged)
from .recovery import BvpEstimate
from .waveform import PulseWaveform

EPS_FRAME = 1e-7

CHECKPOINT_MAGIC = b"CANW"

# Declaration order of every parameter array; checkpoint layout and
# gradient bookkeeping both follow it.
PARAM_NAMES = (
    "m1_w", "m1_b", "m2_w", "m2_b", "m3_w", "m3_b", "m4_w", "m4_b",
    "d1_w", "d1_b", "d2_w", "d2_b",
    "a1_w", "a1_b", "a2_w", "a2_b", "a3_w", "a3_b", "a4_w", "a4_b",
    "g1_w", "g1_b", "g2_w", "g2_b",
)


@dataclass(frozen=True)
class CanConfig:
    input_size: int = 36
    conv_channels: tuple[int, int, int, int] = (32, 32, 64, 64)
    hidden_units: int = 128
    kernel_size: int = 3
    activation: str = "tanh"
    target: str = "derivative"

    def __post_init__(self) -> None:
        if self.input_size % 4 != 0 or self.input_size < 4:
            raise ConfigurationError("input_size must be a positive multiple of 4")
        if len(self.conv_channels) != 4 or any(c < 1 for c in self.conv_channels):
            raise ConfigurationError("conv_channels must be 4 positive counts")
        if self.hidden_units < 1:
            raise ConfigurationError("hidden_units must be >= 1")
        if self.kernel_size != 3:
            raise ConfigurationError("only 3x3 kernels are supported")
        if self.activation not in ("tanh", "identity"):
            raise ConfigurationError("activation must be 'tanh' or 'identity'")
        if self.target not in ("derivative", "waveform"):
            raise ConfigurationError("target must be 'derivative' or 'waveform'")
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))

    def to_dict(self) -> dict:
        return {
            "input_size": self.input_size,
            "conv_channels": list(self.conv_channels),
            "hidden_units": self.hidden_units,
            "kernel_size": self.kernel_size,
            "activation": self.activation,
            "target": self.target,
        }


@dataclass
class CanModel:
    config: CanConfig
    params: dict[str, np.ndarray]

    def copy(self) -> "CanModel":
        return CanModel(self.config, {k: v.copy() for k, v in self.params.items()})


@dataclass(frozen=True)
class TrainReport:
    train_mse: list[float]
    val_mse: list[float]
    selected_epoch: int
    seed: int

    def to_json(self) -> str:
        return json.dumps({
            "train_mse": self.train_mse,
            "val_mse": self.val_mse,
            "selected_epoch": self.selected_epoch,
            "seed": self.seed,
        }, sort_keys=True)


def init_model(config: CanConfig, seed: int = 0) -> CanModel:
    """Glorot-uniform conv/dense weights; attention starts neutral
    (zero weights -> uniform masks)."""
    rng = np.random.default_rng(seed)
    c1, c2, c3, c4 = config.conv_channels
    k = config.kernel_size
    s = config.input_size
    flat = (s // 4) * (s // 4) * c4
    params: dict[str, np.ndarray] = {}

    def conv(name: str, cin: int, cout: int) -> None:
        limit = np.sqrt(6.0 / (k * k * cin + k * k * cout))
        params[f"{name}_w"] = rng.uniform(-limit, limit, (k, k, cin, cout))
        params[f"{name}_b"] = np.zeros(cout)

    def dense(name: str, nin: int, nout: int) -> None:
        limit = np.sqrt(6.0 / (nin + nout))
        params[f"{name}_w"] = rng.uniform(-limit, limit, (nin, nout))
        params[f"{name}_b"] = np.zeros(nout)

    conv("m1", 3, c1)
    conv("m2", c1, c2)
    conv("m3", c2, c3)
    conv("m4", c3, c4)
    dense("d1", flat, config.hidden_units)
    dense("d2", config.hidden_units, 1)
    conv("a1", 3, c1)
    conv("a2", c1, c2)
    conv("a3", c2, c3)
    conv("a4", c3, c4)
    params["g1_w"] = np.zeros(c2)
    params["g1_b"] = np.zeros(1)
    params["g2_w"] = np.zeros(c4)
    params["g2_b"] = np.zeros(1)
    return CanModel(config=config, params={n: params[n] for n in PARAM_NAMES})


def normalize_frames(video: VideoTensor):
    """Build the two network inputs from a clip.

    The motion input is the gain-free frame-difference ratio
    (f[t+1] - f[t]) / (f[t+1] + f[t] + eps); the appearance input is the
    raw frame.  Both are standardized over the whole clip.
    """
    frames = video.frames.astype(np.float64)
    num = frames[1:] - frames[:-1]
    den = frames[1:] + frames[:-1] + EPS_FRAME
    motion = num / den
    appearance = frames[:-1].copy()
    for name, arr in (("motion", motion), ("appearance", appearance)):
        sd = arr.std()
        if sd == 0:
            raise DegenerateInputError(f"{name} input has zero variance")
        arr -= arr.mean()
        arr /= sd
    return motion, appearance


def attention_mask(features: np.ndarray, weight: np.ndarray,
                   bias: np.ndarray) -> np.ndarray:
    """1x1 convolution, sigmoid, then scale-preserving normalization.

    The mask sums to H*W/2 per sample, so gating neither inflates nor
    starves the downstream activations on average.
    """
    z = features @ weight + bias[0]
    sig = _sigmoid(z)
    h, w = sig.shape[1], sig.shape[2]
    ssum = sig.sum(axis=(1, 2), keepdims=True)
    return sig * (h * w / 2.0) / ssum


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    batch, h, wd, cin = x.shape
    k = w.shape[0]
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    cols = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    cols = np.ascontiguousarray(cols.transpose(0, 1, 2, 4, 5, 3))
    cols = cols.reshape(batch * h * wd, k * k * cin)
    out = cols @ w.reshape(k * k * cin, -1) + b
    return out.reshape(batch, h, wd, -1), cols


def _conv_backward(dout: np.ndarray, cols: np.ndarray, w: np.ndarray):
    batch, h, wd, cout = dout.shape
    dout2 = dout.reshape(batch * h * wd, cout)
    dw = (cols.T @ dout2).reshape(w.shape)
    db = dout2.sum(axis=0)
    w_flip = w[::-1, ::-1].transpose(0, 1, 3, 2)
    dx, _ = _conv_forward(dout, w_flip, np.zeros(w.shape[2]))
    return dx, dw, db


def _pool_forward(x: np.ndarray) -> np.ndarray:
    batch, h, w, c = x.shape
    return x.reshape(batch, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))


def _pool_backward(dout: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(dout, 2, axis=1), 2, axis=2) / 4.0


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    return np.tanh(z) if kind == "tanh" else z


def _act_grad_from_out(out: np.ndarray, kind: str) -> np.ndarray:
    return 1.0 - out ** 2 if kind == "tanh" else np.ones_like(out)


def _forward_full(model: CanModel, motion_input: np.ndarray,
                  appearance_input: np.ndarray):
    p = model.params
    kind = model.config.activation
    cache: dict[str, np.ndarray] = {}

    def conv_act(name: str, x: np.ndarray) -> np.ndarray:
        z, cols = _conv_forward(x, p[f"{name}_w"], p[f"{name}_b"])
        out = _act(z, kind)
        cache[f"{name}_cols"] = cols
        cache[f"{name}_out"] = out
        return out

    a1 = conv_act("a1", appearance_input)
    a2 = conv_act("a2", a1)
    a2p = _pool_forward(a2)
    a3 = conv_act("a3", a2p)
    a4 = conv_act("a4", a3)
    cache["a2p"] = a2p

    mask1, att1 = _attention_full(a2, p["g1_w"], p["g1_b"])
    mask2, att2 = _attention_full(a4, p["g2_w"], p["g2_b"])
    cache["att1"], cache["att2"] = att1, att2

    m1 = conv_act("m1", motion_input)
    m2 = conv_act("m2", m1)
    g1 = m2 * mask1[..., None]
    p1 = _pool_forward(g1)
    m3 = conv_act("m3", p1)
    m4 = conv_act("m4", m3)
    g2 = m4 * mask2[..., None]
    p2 = _pool_forward(g2)
    cache["g_inputs"] = (m2, m4)
    cache["masks"] = (mask1, mask2)

    flat = p2.reshape(p2.shape[0], -1)
    h_lin = flat @ p["d1_w"] + p["d1_b"]
    h = _act(h_lin, kind)
    y = (h @ p["d2_w"] + p["d2_b"])[:, 0]
    cache["flat"] = flat
    cache["h"] = h
    cache["p2_shape"] = p2.shape
    cache["inputs"] = (motion_input, appearance_input)
    return y, cache


def _attention_full(features: np.ndarray, weight: np.ndarray, bias: np.ndarray):
    z = features @ weight + bias[0]
    sig = _sigmoid(z)
    h, w = sig.shape[1], sig.shape[2]
    ssum = sig.sum(axis=(1, 2), keepdims=True)
    scale = h * w / 2.0
    mask = sig * scale / ssum
    return mask, (features, sig, ssum, scale)


def forward(model: CanModel, motion_input: np.ndarray,
            appearance_input: np.ndarray) -> np.ndarray:
    """Per-frame-pair scalar outputs, shape (B,)."""
    _check_shapes(model.config, motion_input, appearance_input)
    y, _ = _forward_full(model, motion_input, appearance_input)
    return y


def _check_shapes(config: CanConfig, motion_input: np.ndarray,
                  appearance_input: np.ndarray) -> None:
    s = config.input_size
    for name, arr in (("motion_input", motion_input),
                      ("appearance_input", appearance_input)):
        if arr.ndim != 4 or arr.shape[1:] != (s, s, 3):
            raise ConfigurationError(
                f"{name} must have shape (B, {s}, {s}, 3), got {arr.shape}")
    if motion_input.shape[0] != appearance_input.shape[0]:
        raise ConfigurationError("motion and appearance batches differ in size")


def batch_mse(model: CanModel, motion_input: np.ndarray,
              appearance_input: np.ndarray, targets: np.ndarray) -> float:
    y = forward(model, motion_input, appearance_input)
    return float(np.mean((y - targets) ** 2))


def loss_and_grads(model: CanModel, motion_input: np.ndarray,
                   appearance_input: np.ndarray, targets: np.ndarray):
    """MSE loss and gradients for every parameter array."""
    _check_shapes(model.config, motion_input, appearance_input)
    p = model.params
    kind = model.config.activation
    y, cache = _forward_full(model, motion_input, appearance_input)
    batch = y.shape[0]
    diff = y - targets
    loss = float(np.mean(diff ** 2))
    grads = {name: None for name in PARAM_NAMES}

    dy = (2.0 / batch) * diff

    # dense head
    h = cache["h"]
    grads["d2_w"] = h.T @ dy[:, None]
    grads["d2_b"] = np.array([dy.sum()])
    dh = dy[:, None] @ p["d2_w"].T
    dh_lin = dh * _act_grad_from_out(h, kind)
    flat = cache["flat"]
    grads["d1_w"] = flat.T @ dh_lin
    grads["d1_b"] = dh_lin.sum(axis=0)
    dflat = dh_lin @ p["d1_w"].T
    dp2 = dflat.reshape(cache["p2_shape"])

    # motion branch, junction 2
    m2, m4 = cache["g_inputs"]
    mask1, mask2 = cache["masks"]
    dg2 = _pool_backward(dp2)
    dm4 = dg2 * mask2[..., None]
    dmask2 = (dg2 * m4).sum(axis=-1)

    dm4_lin = dm4 * _act_grad_from_out(cache["m4_out"], kind)
    dm3, grads["m4_w"], grads["m4_b"] = _conv_backward(dm4_lin, cache["m4_cols"], p["m4_w"])
    dm3_lin = dm3 * _act_grad_from_out(cache["m3_out"], kind)
    dp1, grads["m3_w"], grads["m3_b"] = _conv_backward(dm3_lin, cache["m3_cols"], p["m3_w"])
    dg1 = _pool_backward(dp1)
    dm2 = dg1 * mask1[..., None]
    dmask1 = (dg1 * m2).sum(axis=-1)
    dm2_lin = dm2 * _act_grad_from_out(cache["m2_out"], kind)
    dm1, grads["m2_w"], grads["m2_b"] = _conv_backward(dm2_lin, cache["m2_cols"], p["m2_w"])
    dm1_lin = dm1 * _act_grad_from_out(cache["m1_out"], kind)
    _, grads["m1_w"], grads["m1_b"] = _conv_backward(dm1_lin, cache["m1_cols"], p["m1_w"])

    # attention junctions back into the appearance branch
    da4_from_mask, grads["g2_w"], grads["g2_b"] = _attention_param_backward(
        dmask2, cache["att2"], p["g2_w"])
    da2_from_mask, grads["g1_w"], grads["g1_b"] = _attention_param_backward(
        dmask1, cache["att1"], p["g1_w"])

    da4 = da4_from_mask
    da4_lin = da4 * _act_grad_from_out(cache["a4_out"], kind)
    da3, grads["a4_w"], grads["a4_b"] = _conv_backward(da4_lin, cache["a4_cols"], p["a4_w"])
    da3_lin = da3 * _act_grad_from_out(cache["a3_out"], kind)
    da2p, grads["a3_w"], grads["a3_b"] = _conv_backward(da3_lin, cache["a3_cols"], p["a3_w"])
    da2 = _pool_backward(da2p) + da2_from_mask
    da2_lin = da2 * _act_grad_from_out(cache["a2_out"], kind)
    da1, grads["a2_w"], grads["a2_b"] = _conv_backward(da2_lin, cache["a2_cols"], p["a2_w"])
    da1_lin = da1 * _act_grad_from_out(cache["a1_out"], kind)
    _, grads["a1_w"], grads["a1_b"] = _conv_backward(da1_lin, cache["a1_cols"], p["a1_w"])

    return loss, grads


def _attention_param_backward(dmask: np.ndarray, att_cache, weight: np.ndarray):
    features, sig, ssum, scale = att_cache
    # The mask normalization couples every position, so the sigmoid
    # gradient carries a weighted-mean correction term.
    weighted = (dmask * sig).sum(axis=(1, 2), keepdims=True) / ssum
    dsig = scale / ssum * (dmask - weighted)
    dz = dsig * sig * (1.0 - sig)
    dw = (features * dz[..., None]).sum(axis=(0, 1, 2))
    db = np.array([dz.sum()])
    dfeat = dz[..., None] * weight
    return dfeat, dw, db


@dataclass(frozen=True)
class ClipData:
    """Network-ready tensors for one clip."""

    motion: np.ndarray
    appearance: np.ndarray
    targets: np.ndarray


def prepare_clip(video: VideoTensor, pulse: PulseWaveform,
                 config: CanConfig) -> ClipData:
    """Normalize a clip and align its regression targets.

    Targets are the standardized first differences of the pulse (the
    derivative naturally pairs with frame differences); the `waveform`
    config switch regresses the standardized waveform itself instead.
    """
    if pulse.samples.size != video.frames.shape[0]:
        raise ConfigurationError("pulse length must equal the frame count")
    if pulse.sample_rate != video.sample_rate:
        raise ConfigurationError("pulse and video sample rates differ")
    if video.frames.shape[1] != config.input_size or \
            video.frames.shape[2] != config.input_size:
        raise ConfigurationError(
            f"clip is {video.frames.shape[1]}x{video.frames.shape[2]} but the "
            f"network expects {config.input_size}x{config.input_size}")
    motion, appearance = normalize_frames(video)
    if config.target == "derivative":
        raw = np.diff(pulse.samples)
    else:
        raw = pulse.samples[1:]
    sd = raw.std()
    if sd == 0:
        raise DegenerateInputError("pulse targets have zero variance")
    targets = (raw - raw.mean()) / sd
    return ClipData(motion=motion, appearance=appearance, targets=targets)


def _pool_clips(clips) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    motion = np.concatenate([c.motion for c in clips])
    appearance = np.concatenate([c.appearance for c in clips])
    targets = np.concatenate([c.targets for c in clips])
    return motion, appearance, targets


def _dataset_mse(model: CanModel, motion, appearance, targets,
                 chunk: int = 256) -> float:
    total, count = 0.0, 0
    for i in range(0, targets.size, chunk):
        y = forward(model, motion[i:i + chunk], appearance[i:i + chunk])
        total += float(np.sum((y - targets[i:i + chunk]) ** 2))
        count += y.size
    return total / count


def train(model: CanModel, train_clips, val_clips=None, epochs: int = 10,
          lr: float = 1e-3, batch_size: int = 16, seed: int = 0,
          momentum: float = 0.9):
    """Mini-batch SGD with momentum; returns the model from the epoch with
    the lowest validation MSE plus the full per-epoch report.

    Without a validation set the training pool doubles as one (useful for
    overfit sanity runs).  Everything (init order, shuffling, updates) is
    driven by `seed`, so identical seeds reproduce identical reports.
    """
    if not train_clips:
        raise ConfigurationError("training set is empty")
    tm, ta, tt = _pool_clips(train_clips)
    if val_clips:
        vm, va, vt = _pool_clips(val_clips)
    else:
        vm, va, vt = tm, ta, tt

    rng = np.random.default_rng(seed)
    work = model.copy()
    velocity = {k: np.zeros_like(v) for k, v in work.params.items()}
    n = tt.size
    train_curve: list[float] = []
    val_curve: list[float] = []
    best_epoch, best_val, best_model = 0, np.inf, work.copy()

    for epoch in range(epochs):
        order = rng.permutation(n)
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            loss, grads = loss_and_grads(work, tm[idx], ta[idx], tt[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"loss became non-finite at epoch {epoch}, batch {n_batches}")
            epoch_loss += loss * idx.size
            n_batches += 1
            if lr != 0.0:
                for name in PARAM_NAMES:
                    velocity[name] = momentum * velocity[name] - lr * grads[name]
                    work.params[name] += velocity[name]
        train_curve.append(epoch_loss / n)
        val_mse = _dataset_mse(work, vm, va, vt)
        val_curve.append(val_mse)
        if val_mse < best_val:
            best_epoch, best_val, best_model = epoch, val_mse, work.copy()

    report = TrainReport(train_mse=train_curve, val_mse=val_curve,
                         selected_epoch=best_epoch, seed=seed)
    return best_model, report


def grad_check(model: CanModel, batch, h: float = 1e-5, n_samples: int = 200,
               seed: int = 0, param_names=None, details: bool = False):
    """Max relative error between analytic and central-difference gradients.

    At least `n_samples` weights are sampled, spread over every parameter
    array (so every layer is covered); `param_names` restricts the set,
    e.g. to the motion branch for the exact-linear check.  With
    ``details=True`` also returns the per-array sample counts.
    """
    motion, appearance, targets = batch
    names = list(param_names) if param_names is not None else list(PARAM_NAMES)
    rng = np.random.default_rng(seed)
    _, grads = loss_and_grads(model, motion, appearance, targets)
    sizes = {name: model.params[name].size for name in names}
    capacity = sum(sizes.values())
    budget = min(n_samples, capacity)
    counts = {name: 1 for name in names}
    while sum(counts.values()) < budget:
        grew = False
        for name in names:
            if counts[name] < sizes[name] and sum(counts.values()) < budget:
                counts[name] += 1
                grew = True
        if not grew:
            break
    worst = 0.0
    for name in names:
        arr = model.params[name]
        flat = arr.reshape(-1)
        g_flat = grads[name].reshape(-1)
        picks = rng.choice(flat.size, size=counts[name], replace=False)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + h
            lp = batch_mse(model, motion, appearance, targets)
            flat[i] = orig - h
            lm = batch_mse(model, motion, appearance, targets)
            flat[i] = orig
            g_num = (lp - lm) / (2.0 * h)
            g_ana = g_flat[i]
            rel = abs(g_ana - g_num) / max(abs(g_ana), abs(g_num), 1e-8)
            worst = max(worst, rel)
    if details:
        return worst, counts
    return worst


def predict_bvp(model: CanModel, video: VideoTensor) -> BvpEstimate:
    """Recover a pulse waveform from a clip with a trained model.

    Derivative outputs are integrated (cumulative sum, zero-prepended),
    band-passed to the heart-rate band, and standardized.
    """
    clip_motion, clip_appearance = normalize_frames(video)
    y = []
    for i in range(0, clip_motion.shape[0], 256):
        y.append(forward(model, clip_motion[i:i + 256],
                         clip_appearance[i:i + 256]))
    y = np.concatenate(y)
    if model.config.target == "derivative":
        wave = np.concatenate([[0.0], np.cumsum(y)])
    else:
        wave = np.concatenate([[y[0]], y])
    filt = dsp.design_butterworth(6, *dsp.HR_BAND_HZ, video.sample_rate)
    wave = dsp.filtfilt(filt, wave)
    sd = wave.std()
    if sd > 0:
        wave = (wave - wave.mean()) / sd
    return BvpEstimate(samples=wave, sample_rate=video.sample_rate, method="can")


def save_model(model: CanModel, path) -> None:
    """Versioned binary checkpoint: magic, length-prefixed config JSON,
    then float32 little-endian arrays in declaration order."""
    blob = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", len(blob)), blob]
    for name in PARAM_NAMES:
        parts.append(np.ascontiguousarray(
            model.params[name], dtype="<f4").tobytes())
    data = b"".join(parts)
    path = os.fspath(path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".",
                               prefix=os.path.basename(path) + ".tmp")
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_model(path) -> CanModel:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError:
        raise ParseError(f"checkpoint not found: {path}") from None
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ParseError(f"{path}: bad magic {blob[:4]!r}, expected "
                         f"{CHECKPOINT_MAGIC!r}")
    (length,) = struct.unpack_from("<I", blob, 4)
    config = CanConfig(**json.loads(blob[8:8 + length].decode("utf-8")))
    reference = init_model(config, seed=0)
    offset = 8 + length
    params = {}
    for name in PARAM_NAMES:
        shape = reference.params[name].shape
        n = int(np.prod(shape)) * 4
        if offset + n > len(blob):
            raise ParseError(f"{path}: truncated weights at {name}")
        params[name] = np.frombuffer(
            blob[offset:offset + n], dtype="<f4").astype(np.float64).reshape(shape)
        offset += n
    if offset != len(blob):
        raise ParseError(f"{path}: {len(blob) - offset} trailing bytes")
    return CanModel(config=config, params=params)
