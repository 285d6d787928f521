"""Binary clip format and sidecar metadata.

Layout: magic ``VTEN``, version u16, then T, H, W as u32 little-endian,
sample rate as f32, then T*H*W*3 float32 little-endian values, row-major,
channel-last.  Each clip may carry a JSON sidecar holding the full
generation config and the path of its ground-truth waveform.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .drm import VideoTensor
from .errors import ParseError

MAGIC = b"VTEN"
VERSION = 1
_HEADER = struct.Struct("<4sHIIIf")


def save_video(video: VideoTensor, path, sidecar: dict | None = None) -> None:
    """Write a clip (and optional sidecar JSON) atomically."""
    path = Path(path)
    t, h, w, _ = video.frames.shape
    header = _HEADER.pack(MAGIC, VERSION, t, h, w, float(video.sample_rate))
    payload = np.ascontiguousarray(video.frames, dtype="<f4").tobytes()
    _atomic_write_bytes(path, header + payload)
    if sidecar is not None:
        _atomic_write_bytes(sidecar_path(path),
                            (json.dumps(sidecar, sort_keys=True, indent=2)
                             + "\n").encode("utf-8"))


def load_video(path) -> VideoTensor:
    """Read a clip; raises `ParseError` naming the file on any corruption."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise ParseError(f"clip not found: {path}") from None
    if len(blob) < _HEADER.size:
        raise ParseError(f"{path}: truncated header")
    magic, version, t, h, w, rate = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ParseError(f"{path}: unsupported version {version}")
    expected = t * h * w * 3 * 4
    body = blob[_HEADER.size:]
    if len(body) != expected:
        raise ParseError(
            f"{path}: payload is {len(body)} bytes, expected {expected}")
    frames = np.frombuffer(body, dtype="<f4").reshape(t, h, w, 3)
    return VideoTensor(frames=frames.copy(), sample_rate=float(rate))


def load_sidecar(path) -> dict:
    side = sidecar_path(Path(path))
    try:
        return json.loads(side.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ParseError(f"sidecar not found: {side}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{side}: invalid JSON ({exc})") from None


def sidecar_path(path: Path) -> Path:
    return Path(path).with_suffix(".json")


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
