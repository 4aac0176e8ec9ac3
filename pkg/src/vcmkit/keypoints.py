"""Keypoint stream codec: lattice quantization plus lossless LZMA packing.

Positions quantize with step 2, inverse-covariance elements with step 64.
Quantized indices serialize as 6 signed 16-bit fields per point, delta-coded
against the same point in the previous frame (wrap-around arithmetic, so the
delta stage is a pure rearrangement), then compressed with LZMA.

Stream payload: codec id u8 (0 = LZMA-class), u32 raw length, compressed
bytes. Raw layout: u16 frame count, u8 K, then frames x points x 6 fields.
"""

from __future__ import annotations

import lzma
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, FormatError, TruncationError, ValidationError
from .model import Keypoint, KeypointSet

POSITION_STEP = 2
INV_COV_STEP = 64
DEFAULT_INV_COV = (64.0, 0.0, 0.0, 64.0)  # isotropic fallback for degenerate points

_LZMA_ID = 0
_FIELDS = 6
_I16_MIN, _I16_MAX = -(1 << 15), (1 << 15) - 1


def _round_half_up(v: np.ndarray) -> np.ndarray:
    return np.floor(v + 0.5).astype(np.int64)


@dataclass(frozen=True)
class QuantizedKeypointSet:
    frame_index: int
    positions: np.ndarray  # (K, 2) int16 lattice indices, step 2
    inv_cov: np.ndarray  # (K, 4) int16 lattice indices, step 64

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.int16)
        cov = np.asarray(self.inv_cov, dtype=np.int16)
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] < 1:
            raise ValidationError(f"positions must be (K,2), got {pos.shape}")
        if cov.shape != (pos.shape[0], 4):
            raise ValidationError(f"inv_cov must be (K,4), got {cov.shape}")
        pos.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "inv_cov", cov)

    @property
    def k(self) -> int:
        return self.positions.shape[0]


def quantize_keypoints(s: KeypointSet) -> QuantizedKeypointSet:
    """Quantize positions (step 2) and inverse-covariance elements (step 64)."""
    xy = np.array([[p.x, p.y] for p in s.points], dtype=np.float64)
    ic = np.array([p.inv_cov for p in s.points], dtype=np.float64)
    # Off-diagonals are symmetric within tolerance; quantize their mean so
    # both indices stay equal and the dequantized matrix stays symmetric.
    off = (ic[:, 1] + ic[:, 2]) / 2.0
    ic[:, 1] = off
    ic[:, 2] = off
    qpos = _round_half_up(xy / POSITION_STEP)
    qcov = _round_half_up(ic / INV_COV_STEP)
    hi = max(abs(int(qpos.min())), int(qpos.max()), abs(int(qcov.min())), int(qcov.max()))
    if hi > _I16_MAX:
        raise ValidationError(f"quantized index {hi} exceeds 16-bit range")
    return QuantizedKeypointSet(s.frame_index, qpos.astype(np.int16), qcov.astype(np.int16))


def dequantize_keypoints(
    q: QuantizedKeypointSet,
    width: int | None = None,
    height: int | None = None,
    default_inv_cov: tuple[float, float, float, float] = DEFAULT_INV_COV,
) -> tuple[KeypointSet, tuple[bool, ...]]:
    """Rebuild keypoints from lattice indices.

    Returns the set plus one degenerate flag per point; degenerate points
    (non-positive-definite after dequantization) get the default isotropic
    inverse covariance. Positions clamp into the frame when dims are given.
    """
    pos = q.positions.astype(np.float64) * POSITION_STEP
    cov = q.inv_cov.astype(np.float64) * INV_COV_STEP
    if width is not None:
        pos[:, 0] = np.clip(pos[:, 0], 0, width - 1)
    if height is not None:
        pos[:, 1] = np.clip(pos[:, 1], 0, height - 1)
    points = []
    flags = []
    for i in range(q.k):
        a, b, c, d = cov[i]
        degenerate = a <= 0 or a * d - b * c <= 0
        flags.append(bool(degenerate))
        points.append(
            Keypoint(
                x=float(pos[i, 0]),
                y=float(pos[i, 1]),
                inv_cov=default_inv_cov if degenerate else (a, b, c, d),
            )
        )
    return KeypointSet(q.frame_index, tuple(points)), tuple(flags)


def lzma_wrap(raw: bytes) -> bytes:
    compressed = lzma.compress(raw, format=lzma.FORMAT_ALONE, preset=9)
    return struct.pack("<BI", _LZMA_ID, len(raw)) + compressed


def lzma_unwrap(data: bytes) -> bytes:
    if len(data) < 5:
        raise TruncationError(5, len(data), "lossless stream header")
    codec_id, raw_len = struct.unpack("<BI", data[:5])
    if codec_id != _LZMA_ID:
        raise FormatError(f"unknown lossless codec id {codec_id}")
    try:
        raw = lzma.decompress(data[5:], format=lzma.FORMAT_ALONE)
    except lzma.LZMAError as e:
        raise FormatError(f"lossless stream corrupt: {e}") from e
    if len(raw) != raw_len:
        raise FormatError(f"declared raw length {raw_len}, decompressed {len(raw)}")
    return raw


def _delta_encode(vals: np.ndarray) -> np.ndarray:
    d = vals.astype(np.int64).copy()
    d[1:] -= vals[:-1].astype(np.int64)
    return (d & 0xFFFF).astype("<u2")


def _delta_decode(deltas: np.ndarray) -> np.ndarray:
    acc = np.cumsum(deltas.astype(np.int64), axis=0) & 0xFFFF
    acc[acc > _I16_MAX] -= 1 << 16
    return acc.astype(np.int16)


def encode_keypoint_stream(sets: list[QuantizedKeypointSet]) -> bytes:
    if not sets:
        raise ContractError("need at least one keypoint set")
    k = sets[0].k
    if any(s.k != k for s in sets):
        raise ContractError("all keypoint sets must share K")
    if len(sets) > 0xFFFF or k > 0xFF:
        raise ContractError(f"stream too large: {len(sets)} frames, K={k}")
    vals = np.stack(
        [np.concatenate([s.positions, s.inv_cov], axis=1) for s in sets]
    )  # (N, K, 6) int16
    raw = struct.pack("<HB", len(sets), k) + _delta_encode(vals).tobytes()
    return lzma_wrap(raw)


def decode_keypoint_stream(data: bytes) -> list[QuantizedKeypointSet]:
    raw = lzma_unwrap(data)
    if len(raw) < 3:
        raise TruncationError(3, len(raw), "keypoint stream header")
    n, k = struct.unpack("<HB", raw[:3])
    if n < 1 or k < 1:
        raise FormatError(f"empty keypoint stream (frames={n}, K={k})")
    body = raw[3:]
    expected = n * k * _FIELDS * 2
    if len(body) != expected:
        raise FormatError(f"keypoint stream body is {len(body)} bytes, expected {expected}")
    deltas = np.frombuffer(body, dtype="<u2").reshape(n, k, _FIELDS)
    vals = _delta_decode(deltas)
    return [
        QuantizedKeypointSet(i, vals[i, :, :2].copy(), vals[i, :, 2:].copy())
        for i in range(n)
    ]
