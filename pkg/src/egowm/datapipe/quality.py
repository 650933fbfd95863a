"""Clip quality statistics and the four-threshold acceptance rule."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


class QualityError(ValueError):
    pass


@dataclass(frozen=True)
class QualityConfig:
    """How statistics are measured. Pixel thresholds are on 0-255 luma."""

    black_max: int = 10
    white_min: int = 245
    crop: int = 326

    def __post_init__(self) -> None:
        if not 0 <= self.black_max < self.white_min <= 255:
            raise QualityError("need 0 <= black_max < white_min <= 255")
        if self.crop < 3:
            raise QualityError("crop must be at least 3 px")


@dataclass(frozen=True)
class QualityThresholds:
    """Acceptance bounds; every comparison is strict."""

    black_fraction: float = 0.30
    white_fraction: float = 0.20
    blur: float = 50.0
    motion: float = 32.5


@dataclass(frozen=True)
class ClipQualityStats:
    black_fraction_mean: float
    white_fraction_mean: float
    blur_median: float
    motion_median: float

    def __post_init__(self) -> None:
        for name in ("black_fraction_mean", "white_fraction_mean"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise QualityError(f"{name} must lie in [0, 1], got {v}")
        for name in ("blur_median", "motion_median"):
            v = getattr(self, name)
            if not (v >= 0.0 and math.isfinite(v)):
                raise QualityError(f"{name} must be finite and >= 0, got {v}")

    def to_dict(self) -> dict:
        return asdict(self)


def luma_u8(frames: np.ndarray) -> np.ndarray:
    """Integer BT.601 luma, rounded half up: (299 R + 587 G + 114 B + 500) // 1000."""
    f = np.asarray(frames)
    if f.dtype != np.uint8 or f.shape[-1] != 3:
        raise QualityError("frames must be uint8 RGB")
    rgb = f.astype(np.int32)
    return ((299 * rgb[..., 0] + 587 * rgb[..., 1] + 114 * rgb[..., 2] + 500) // 1000).astype(np.int32)


def center_crop(frames: np.ndarray, size: int) -> np.ndarray:
    """Central ``size`` square (clamped to the frame) of a (T, H, W, ...) stack."""
    h, w = frames.shape[1:3]
    ch, cw = min(size, h), min(size, w)
    y0, x0 = (h - ch) // 2, (w - cw) // 2
    return frames[:, y0 : y0 + ch, x0 : x0 + cw]


def laplacian_variance(luma: np.ndarray) -> float:
    """Variance of the 4-neighbour Laplacian over the interior (no padding)."""
    l = luma.astype(np.int64)
    lap = l[:-2, 1:-1] + l[2:, 1:-1] + l[1:-1, :-2] + l[1:-1, 2:] - 4 * l[1:-1, 1:-1]
    return float(np.var(lap))


def compute_quality_stats(frames: np.ndarray, cfg: QualityConfig = QualityConfig()) -> ClipQualityStats:
    frames = np.asarray(frames)
    if frames.ndim != 4 or len(frames) < 2:
        raise QualityError("need a (T, H, W, 3) clip with at least 2 frames")
    luma = luma_u8(center_crop(frames, cfg.crop))
    if min(luma.shape[1:]) < 3:
        raise QualityError("frames are too small for the Laplacian")
    black = np.mean(luma <= cfg.black_max, axis=(1, 2))
    white = np.mean(luma >= cfg.white_min, axis=(1, 2))
    blur = [laplacian_variance(f) for f in luma]
    motion = np.mean(np.abs(np.diff(luma, axis=0)), axis=(1, 2))
    return ClipQualityStats(
        black_fraction_mean=float(np.mean(black)),
        white_fraction_mean=float(np.mean(white)),
        blur_median=float(np.median(blur)),
        motion_median=float(np.median(motion)),
    )


def failed_checks(s: ClipQualityStats, thr: QualityThresholds = QualityThresholds()) -> list[str]:
    """Names of the statistics that miss their bound; empty means the clip passes."""
    failed = []
    if not s.black_fraction_mean < thr.black_fraction:
        failed.append("black_fraction_mean")
    if not s.white_fraction_mean < thr.white_fraction:
        failed.append("white_fraction_mean")
    if not s.blur_median > thr.blur:
        failed.append("blur_median")
    if not s.motion_median < thr.motion:
        failed.append("motion_median")
    return failed


def passes_quality(s: ClipQualityStats, thr: QualityThresholds = QualityThresholds()) -> bool:
    return not failed_checks(s, thr)
