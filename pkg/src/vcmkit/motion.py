"""Deterministic keypoint extraction and keypoint-driven frame synthesis.

The extractor ranks corner strength (minimum eigenvalue of the 5x5
second-moment matrix), applies greedy non-maximum suppression, and pads with
frame-center points so every frame yields exactly K keypoints.

The generator builds a dense backward motion field from Gaussian keypoint
weights and warps the key frame. Displacements inside the Gaussians are
normalized by max(width, height), matching the units of the stored inverse
covariances; a weight mass below 1e-6 leaves a pixel unmoved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ContractError
from .model import Frame, Keypoint, KeypointSet, VideoClip

WEIGHT_FLOOR = 1e-6
_DETECT_MARGIN = 2  # keeps peaks (and their step-2 lattice images) inside the frame
_BASE_INV_COV = 64.0


@dataclass(frozen=True)
class ExtractorConfig:
    k: int = 20
    lambda_rate: float = 1.0
    corner_threshold: float = 1.0

    def __post_init__(self):
        if self.k < 1:
            raise ContractError(f"k must be >= 1, got {self.k}")
        if not self.lambda_rate > 0:
            raise ContractError(f"lambda_rate must be positive, got {self.lambda_rate}")

    @property
    def effective_k(self) -> int:
        """Rate knob: larger lambda never increases the point count."""
        return max(1, round(self.k / self.lambda_rate))


def _corner_response(img: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    gy, gx = np.gradient(img.astype(np.float64))
    win = dict(size=5, mode="constant")
    a = ndimage.uniform_filter(gx * gx, **win) * 25.0
    b = ndimage.uniform_filter(gx * gy, **win) * 25.0
    c = ndimage.uniform_filter(gy * gy, **win) * 25.0
    trace = a + c
    root = np.sqrt(np.square(a - c) + 4.0 * np.square(b))
    return (trace - root) / 2.0, a, b, c


def _nms_peaks(response: np.ndarray, count: int, radius: int, threshold: float) -> list[tuple[int, int]]:
    h, w = response.shape
    masked = response.copy()
    masked[:_DETECT_MARGIN] = -np.inf
    masked[-_DETECT_MARGIN:] = -np.inf
    masked[:, :_DETECT_MARGIN] = -np.inf
    masked[:, -_DETECT_MARGIN:] = -np.inf
    flat = masked.ravel()
    cand = np.flatnonzero(flat > threshold)
    if cand.size == 0:
        return []
    cand = cand[np.argsort(-flat[cand], kind="stable")]
    picked: list[tuple[int, int]] = []
    r2 = radius * radius
    for idx in cand:
        y, x = divmod(int(idx), w)
        if any((y - py) ** 2 + (x - px) ** 2 <= r2 for py, px in picked):
            continue
        picked.append((y, x))
        if len(picked) == count:
            break
    return picked


def _point_inv_cov(a: float, b: float, c: float, response: float, scale: float) -> tuple[float, float, float, float]:
    det = a * c - b * b
    contrast = _BASE_INV_COV * (1.0 + response / (response + scale))
    if a <= 0 or det <= 1e-12:
        return (contrast, 0.0, 0.0, contrast)
    s = contrast / np.sqrt(det)  # unit-determinant shape, scaled by contrast
    return (a * s, b * s, b * s, c * s)


def _center_point(width: int, height: int) -> Keypoint:
    return Keypoint(
        x=(width - 1) / 2.0,
        y=(height - 1) / 2.0,
        inv_cov=(_BASE_INV_COV, 0.0, 0.0, _BASE_INV_COV),
    )


def extract_keypoints(
    v: VideoClip, cfg: ExtractorConfig, extra_points: int = 0
) -> list[KeypointSet]:
    """Exactly effective_k (+ extra_points) keypoints per frame.

    extra_points extends the greedy selection without changing the
    suppression radius, so the first effective_k points are identical to a
    plain extraction; the tail is what an enhancement layer adds.
    """
    k = cfg.effective_k
    h, w = v.height, v.width
    radius = max(8, int(min(h, w) / k))
    count = k + extra_points
    sets = []
    for t, frame in enumerate(v.frames):
        resp, a, b, c = _corner_response(frame.samples)
        peaks = _nms_peaks(resp, count, radius, cfg.corner_threshold)
        scale = float(resp[resp > 0].mean()) if np.any(resp > 0) else 1.0
        points = [
            Keypoint(
                x=float(x),
                y=float(y),
                inv_cov=_point_inv_cov(a[y, x], b[y, x], c[y, x], resp[y, x], scale),
            )
            for y, x in peaks
        ]
        points.extend(_center_point(w, h) for _ in range(count - len(points)))
        sets.append(KeypointSet(t, tuple(points)))
    return sets


def generate_predicted_frame(key_frame: Frame, kp_key: KeypointSet, kp_target: KeypointSet) -> Frame:
    """Warp the key frame toward the target keypoints (dense backward field)."""
    if kp_key.k != kp_target.k:
        raise ContractError(f"keypoint counts differ: {kp_key.k} vs {kp_target.k}")
    h, w = key_frame.height, key_frame.width
    span = float(max(h, w))
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)

    num_x = np.zeros((h, w))
    num_y = np.zeros((h, w))
    den = np.zeros((h, w))
    for pk, pt in zip(kp_key.points, kp_target.points):
        dx = (xs - pt.x) / span
        dy = (ys - pt.y) / span
        a, b, c, d = pt.inv_cov
        quad = a * dx * dx + (b + c) * dx * dy + d * dy * dy
        wgt = np.exp(-0.5 * quad)
        num_x += wgt * (pk.x - pt.x)
        num_y += wgt * (pk.y - pt.y)
        den += wgt

    live = den >= WEIGHT_FLOOR
    mx = np.where(live, num_x / np.where(live, den, 1.0), 0.0)
    my = np.where(live, num_y / np.where(live, den, 1.0), 0.0)

    sx = np.clip(xs + mx, 0.0, w - 1.0)
    sy = np.clip(ys + my, 0.0, h - 1.0)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sx - x0
    fy = sy - y0
    img = key_frame.samples.astype(np.float64)
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    out = top * (1 - fy) + bot * fy
    return Frame(np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8))
