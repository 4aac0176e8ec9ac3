"""Bit-exact file formats for external inputs.

Tensor files ("VCMT", little-endian):

    magic   4s   b"VCMT"
    version u8   1
    C,H,W   u32  x3
    network u8 length + utf-8 bytes
    layer   u8 length + utf-8 bytes
    values  C*H*W float32, row-major within channel, channel-major

Raw video is headerless planar 8-bit luma: frame-major, then rows, then
columns; geometry is supplied by the caller.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .errors import FormatError, TruncationError, ValidationError
from .model import FeatureTensor, Frame, VideoClip

TENSOR_MAGIC = b"VCMT"
TENSOR_VERSION = 1
# Refuse implausible dim declarations instead of attempting the allocation.
_MAX_PAYLOAD_BYTES = 1 << 31


def _read_exact(source: BinaryIO, n: int, context: str) -> bytes:
    data = source.read(n)
    if len(data) != n:
        raise TruncationError(n, len(data), context)
    return data


def write_tensor_file(t: FeatureTensor, destination: BinaryIO) -> int:
    """Serialize a tensor; returns the byte count written."""
    c, h, w = t.values.shape
    net = t.network_id.encode("utf-8")
    lay = t.layer_id.encode("utf-8")
    head = (
        TENSOR_MAGIC
        + struct.pack("<B", TENSOR_VERSION)
        + struct.pack("<III", c, h, w)
        + struct.pack("<B", len(net))
        + net
        + struct.pack("<B", len(lay))
        + lay
    )
    payload = t.values.astype("<f4").tobytes()
    destination.write(head)
    destination.write(payload)
    return len(head) + len(payload)


def read_tensor_file(source: BinaryIO) -> FeatureTensor:
    """Parse a tensor file, validating all invariants."""
    magic = _read_exact(source, 4, "tensor magic")
    if magic != TENSOR_MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}, expected {TENSOR_MAGIC!r}")
    (version,) = struct.unpack("<B", _read_exact(source, 1, "tensor version"))
    if version != TENSOR_VERSION:
        raise FormatError(f"unsupported tensor version {version}")
    c, h, w = struct.unpack("<III", _read_exact(source, 12, "tensor dims"))
    if min(c, h, w) < 1:
        raise FormatError(f"tensor dims must be positive, got ({c},{h},{w})")
    if 4 * c * h * w > _MAX_PAYLOAD_BYTES:
        raise FormatError(f"tensor payload implausibly large: {c}x{h}x{w}")
    (nlen,) = struct.unpack("<B", _read_exact(source, 1, "network label length"))
    try:
        network_id = _read_exact(source, nlen, "network label").decode("utf-8")
        (llen,) = struct.unpack("<B", _read_exact(source, 1, "layer label length"))
        layer_id = _read_exact(source, llen, "layer label").decode("utf-8")
    except UnicodeDecodeError as e:
        raise FormatError(f"label is not valid utf-8: {e}") from e
    raw = _read_exact(source, 4 * c * h * w, "tensor values")
    values = np.frombuffer(raw, dtype="<f4").reshape(c, h, w)
    if not np.all(np.isfinite(values)):
        raise ValidationError("tensor file contains non-finite values")
    return FeatureTensor(values=values, network_id=network_id, layer_id=layer_id)


def read_raw_video(
    source: BinaryIO, width: int, height: int, frame_count: int, fps: float = 30.0
) -> VideoClip:
    """Read headerless planar 8-bit luma with caller-supplied geometry."""
    if width < 1 or height < 1:
        raise ValidationError(f"frame dims must be positive, got {width}x{height}")
    if frame_count < 1:
        raise ValidationError(f"frame_count must be positive, got {frame_count}")
    total = width * height * frame_count
    raw = _read_exact(source, total, "raw video samples")
    data = np.frombuffer(raw, dtype=np.uint8).reshape(frame_count, height, width)
    return VideoClip(tuple(Frame(data[i]) for i in range(frame_count)), fps=fps)


def write_raw_video(clip: VideoClip, destination: BinaryIO) -> int:
    total = 0
    for f in clip.frames:
        b = f.samples.tobytes()
        destination.write(b)
        total += len(b)
    return total
