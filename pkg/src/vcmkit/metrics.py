"""Quality and rate metrics: PSNR, SSIM, compression rate, bitrate, fidelity."""

from __future__ import annotations

import csv
import io
import math
import subprocess
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ContractError, OracleError
from .fileio import write_tensor_file
from .model import FeatureTensor, Frame, VideoClip

PSNR_LOSSLESS = 99.0  # reported instead of infinity for identical inputs
_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_SSIM_L = 255.0


@dataclass(frozen=True)
class MetricResult:
    metric_id: str
    value: float
    lossless: bool = False


def _frame_arrays(a, b) -> tuple[list[np.ndarray], list[np.ndarray]]:
    if isinstance(a, Frame) and isinstance(b, Frame):
        pa, pb = [a.samples], [b.samples]
    elif isinstance(a, VideoClip) and isinstance(b, VideoClip):
        if len(a) != len(b):
            raise ContractError(f"clip lengths differ: {len(a)} vs {len(b)}")
        pa = [f.samples for f in a.frames]
        pb = [f.samples for f in b.frames]
    else:
        raise ContractError("psnr compares two frames or two clips")
    if pa[0].shape != pb[0].shape:
        raise ContractError(f"geometry differs: {pa[0].shape} vs {pb[0].shape}")
    return pa, pb


def psnr(a: Frame | VideoClip, b: Frame | VideoClip) -> MetricResult:
    """Peak signal-to-noise ratio; clips average per-frame MSE before the log."""
    pa, pb = _frame_arrays(a, b)
    mse = float(
        np.mean([np.mean(np.square(x.astype(np.float64) - y.astype(np.float64))) for x, y in zip(pa, pb)])
    )
    if mse == 0.0:
        return MetricResult("psnr", PSNR_LOSSLESS, lossless=True)
    return MetricResult("psnr", 10.0 * math.log10(255.0 * 255.0 / mse))


def _gauss_kernel() -> np.ndarray:
    half = _SSIM_WINDOW // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * _SSIM_SIGMA * _SSIM_SIGMA))
    return g / g.sum()


_GAUSS = _gauss_kernel()


def _gauss_valid(img: np.ndarray) -> np.ndarray:
    half = _SSIM_WINDOW // 2
    out = correlate1d(img, _GAUSS, axis=0, mode="constant")
    out = correlate1d(out, _GAUSS, axis=1, mode="constant")
    return out[half:-half, half:-half]


def ssim(a: Frame, b: Frame) -> MetricResult:
    """Structural similarity, 11x11 Gaussian window, mean over valid positions."""
    if not (isinstance(a, Frame) and isinstance(b, Frame)):
        raise ContractError("ssim compares two frames")
    if (a.height, a.width) != (b.height, b.width):
        raise ContractError(f"geometry differs: {a.width}x{a.height} vs {b.width}x{b.height}")
    if a.height < _SSIM_WINDOW or a.width < _SSIM_WINDOW:
        raise ContractError(f"frame smaller than the {_SSIM_WINDOW}x{_SSIM_WINDOW} window")
    x = a.samples.astype(np.float64)
    y = b.samples.astype(np.float64)
    c1 = (_SSIM_K1 * _SSIM_L) ** 2
    c2 = (_SSIM_K2 * _SSIM_L) ** 2
    mu_x = _gauss_valid(x)
    mu_y = _gauss_valid(y)
    var_x = _gauss_valid(x * x) - mu_x * mu_x
    var_y = _gauss_valid(y * y) - mu_y * mu_y
    cov = _gauss_valid(x * y) - mu_x * mu_y
    score = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    )
    return MetricResult("ssim", float(score.mean()), lossless=bool(np.array_equal(a.samples, b.samples)))


def compression_rate(original_bytes: int, compressed_bytes: int) -> float:
    """Compressed size over original size (0.001 means a 1000x reduction)."""
    if original_bytes <= 0:
        raise ContractError(f"original size must be positive, got {original_bytes}")
    if compressed_bytes < 0:
        raise ContractError(f"compressed size must be non-negative, got {compressed_bytes}")
    return compressed_bytes / original_bytes


def bitrate_kbps(total_bytes: int, frame_count: int, fps: float) -> float:
    if frame_count <= 0:
        raise ContractError(f"frame_count must be positive, got {frame_count}")
    if fps <= 0:
        raise ContractError(f"fps must be positive, got {fps}")
    if total_bytes < 0:
        raise ContractError(f"total_bytes must be non-negative, got {total_bytes}")
    return total_bytes * 8.0 * fps / frame_count / 1000.0


@dataclass(frozen=True)
class ExternalOracle:
    """Child-process fidelity hook: gets both tensors on stdin, prints a float."""

    command: tuple[str, ...]


def feature_fidelity(
    original: FeatureTensor,
    reconstructed: FeatureTensor,
    kind: str | ExternalOracle = "cosine",
) -> MetricResult:
    if isinstance(kind, ExternalOracle):
        buf = io.BytesIO()
        write_tensor_file(original, buf)
        write_tensor_file(reconstructed, buf)
        try:
            proc = subprocess.run(
                list(kind.command), input=buf.getvalue(), capture_output=True, timeout=60
            )
        except (OSError, subprocess.TimeoutExpired) as e:
            raise OracleError(f"oracle process failed: {e}") from e
        if proc.returncode != 0:
            raise OracleError(f"oracle exited with {proc.returncode}: {proc.stderr[:200]!r}")
        try:
            value = float(proc.stdout.strip().split()[0])
        except (ValueError, IndexError) as e:
            raise OracleError(f"oracle output unparseable: {proc.stdout[:200]!r}") from e
        return MetricResult("external", value)

    if original.values.shape != reconstructed.values.shape:
        raise ContractError(
            f"shapes differ: {original.values.shape} vs {reconstructed.values.shape}"
        )
    x = original.values.astype(np.float64).ravel()
    y = reconstructed.values.astype(np.float64).ravel()
    lossless = bool(np.array_equal(x, y))
    if kind == "cosine":
        nx, ny = np.linalg.norm(x), np.linalg.norm(y)
        if nx == 0.0 and ny == 0.0:
            return MetricResult("cosine_sim", 1.0, lossless=True)
        if nx == 0.0 or ny == 0.0:
            return MetricResult("cosine_sim", 0.0)
        return MetricResult("cosine_sim", float(np.dot(x, y) / (nx * ny)), lossless=lossless)
    if kind == "one_minus_nmse":
        err = float(np.square(x - y).sum())
        energy = float(np.square(x).sum())
        if energy == 0.0:
            return MetricResult("one_minus_nmse", 1.0 if err == 0.0 else 0.0, lossless=lossless)
        return MetricResult("one_minus_nmse", max(0.0, 1.0 - err / energy), lossless=lossless)
    raise ContractError(f"unknown fidelity kind {kind!r}")


def write_metrics_csv(rows: Iterable[tuple[object, str, float]], f) -> None:
    """Rows are (frame, metric, value); frame may be an index or 'all'."""
    w = csv.writer(f, lineterminator="\n")
    w.writerow(["frame", "metric", "value"])
    for frame, metric, value in rows:
        w.writerow([frame, metric, repr(float(value))])
