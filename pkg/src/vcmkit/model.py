"""Core data model: feature tensors, frames, clips, keypoints, schedules.

All values are immutable after construction (arrays are locked read-only),
so instances are safe to share across concurrent workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

MAX_LABEL_BYTES = 255


def _lock(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FeatureTensor:
    """A C x H x W float32 feature map with its network/layer identity."""

    values: np.ndarray
    network_id: str = ""
    layer_id: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 3:
            raise ValidationError(f"tensor must be 3-d (C,H,W), got ndim={v.ndim}")
        if min(v.shape) < 1:
            raise ValidationError(f"tensor dims must be positive, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("tensor values must be finite")
        for name in ("network_id", "layer_id"):
            if len(getattr(self, name).encode("utf-8")) > MAX_LABEL_BYTES:
                raise ValidationError(f"{name} exceeds {MAX_LABEL_BYTES} utf-8 bytes")
        object.__setattr__(self, "values", _lock(v))

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class Frame:
    """Single-plane 8-bit luma frame."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 2:
            raise ValidationError(f"frame must be 2-d (H,W), got ndim={s.ndim}")
        if min(s.shape) < 1:
            raise ValidationError(f"frame dims must be positive, got {s.shape}")
        if s.dtype != np.uint8:
            if not np.issubdtype(s.dtype, np.integer):
                raise ValidationError(f"frame samples must be integer, got {s.dtype}")
            if s.min() < 0 or s.max() > 255:
                raise ValidationError("frame samples must fit in 8 bits")
            s = s.astype(np.uint8)
        object.__setattr__(self, "samples", _lock(s))

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class VideoClip:
    """Ordered frames sharing one geometry."""

    frames: tuple[Frame, ...]
    fps: float = 30.0

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise ValidationError("clip needs at least one frame")
        w, h = frames[0].width, frames[0].height
        for i, f in enumerate(frames):
            if (f.width, f.height) != (w, h):
                raise ValidationError(
                    f"frame {i} is {f.width}x{f.height}, expected {w}x{h}"
                )
        if not (self.fps > 0 and np.isfinite(self.fps)):
            raise ValidationError(f"fps must be positive, got {self.fps}")
        object.__setattr__(self, "frames", frames)

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    def __len__(self) -> int:
        return len(self.frames)


# Keypoint geometry: positions are in pixel units of the coded resolution.
# The 2x2 inverse covariance is expressed in normalized units (displacements
# divided by max(width, height)), so a value around 50 means a footprint of
# roughly a seventh of the frame.
SYMMETRY_TOL = 1e-6


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    inv_cov: tuple[float, float, float, float]

    def __post_init__(self):
        a, b, c, d = (float(v) for v in self.inv_cov)
        vals = (self.x, self.y, a, b, c, d)
        if not all(np.isfinite(v) for v in vals):
            raise ValidationError("keypoint fields must be finite")
        if self.x < 0 or self.y < 0:
            raise ValidationError(f"position must be non-negative, got ({self.x}, {self.y})")
        if abs(b - c) > SYMMETRY_TOL:
            raise ValidationError(f"inverse covariance not symmetric: b={b}, c={c}")
        if a <= 0 or a * d - b * c <= 0:
            raise ValidationError("inverse covariance must be positive-definite")
        object.__setattr__(self, "inv_cov", (a, b, c, d))

    @classmethod
    def from_covariance(cls, x: float, y: float, cov: tuple[float, float, float, float]) -> "Keypoint":
        """Build from a covariance matrix, inverting it up front."""
        a, b, c, d = (float(v) for v in cov)
        det = a * d - b * c
        if not np.isfinite(det) or det <= 0 or a <= 0:
            raise ValidationError("covariance must be positive-definite")
        return cls(x, y, (d / det, -b / det, -c / det, a / det))

    def matrix(self) -> np.ndarray:
        a, b, c, d = self.inv_cov
        return np.array([[a, b], [c, d]], dtype=np.float64)


@dataclass(frozen=True)
class KeypointSet:
    """Keypoints of one frame; K is fixed across the frames of a clip."""

    frame_index: int
    points: tuple[Keypoint, ...]

    def __post_init__(self):
        points = tuple(self.points)
        if not points:
            raise ValidationError("keypoint set needs at least one point")
        if self.frame_index < 0:
            raise ValidationError("frame_index must be non-negative")
        object.__setattr__(self, "points", points)

    @property
    def k(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class KeyFrameSchedule:
    """Maps each frame index to the index of its key frame."""

    key_index: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        ki = tuple(int(v) for v in self.key_index)
        for t, k in enumerate(ki):
            if not 0 <= k <= t:
                raise ValidationError(f"key index of frame {t} must be in [0, {t}], got {k}")
            if ki[k] != k:
                raise ValidationError(f"frame {t} points at {k}, which is not itself a key frame")
        object.__setattr__(self, "key_index", ki)

    @classmethod
    def first_frame(cls, frame_count: int) -> "KeyFrameSchedule":
        return cls((0,) * frame_count)

    def key_of(self, t: int) -> int:
        return self.key_index[t]

    def is_key(self, t: int) -> bool:
        return self.key_index[t] == t

    def __len__(self) -> int:
        return len(self.key_index)
