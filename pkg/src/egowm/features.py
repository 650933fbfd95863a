"""Frozen observation encoder and wrist-heatmap targets.

The encoder is mean-luma pooling over a fixed cell grid. Wrist heatmaps
live on a coarse ``G x G`` grid; pixel-scale parameters (sigma, dedup
radius) are given at the 224-px reference resolution and rescaled.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

REFERENCE_SIZE = 224
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class Keypoint(NamedTuple):
    x: float
    y: float
    confidence: float


class NoWrist(LookupError):
    """Raised by :func:`heatmap_argmax` on an all-zero heatmap."""


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int = 64
    grid: int = 8

    def __post_init__(self) -> None:
        if self.image_size % self.grid:
            raise ValueError("image_size must be divisible by the encoder grid")

    @property
    def dim(self) -> int:
        return self.grid * self.grid


def encode(img: np.ndarray, cfg: EncoderConfig = EncoderConfig()) -> np.ndarray:
    """Per-cell mean luma in [0, 1], row-major over the cell grid."""
    img = np.asarray(img)
    s, g = cfg.image_size, cfg.grid
    if img.shape != (s, s, 3):
        raise ValueError(f"expected image of shape {(s, s, 3)}, got {img.shape}")
    luma = img.astype(np.float64) @ LUMA_WEIGHTS / 255.0
    c = s // g
    return luma.reshape(g, c, g, c).mean(axis=(1, 3)).reshape(-1)


def encode_batch(images: np.ndarray, cfg: EncoderConfig = EncoderConfig()) -> np.ndarray:
    images = np.asarray(images)
    s, g = cfg.image_size, cfg.grid
    if images.shape[1:] != (s, s, 3):
        raise ValueError(f"expected images of shape (N, {s}, {s}, 3), got {images.shape}")
    luma = images.astype(np.float64) @ LUMA_WEIGHTS / 255.0
    c = s // g
    return luma.reshape(-1, g, c, g, c).mean(axis=(2, 4)).reshape(len(images), -1)


@dataclass(frozen=True)
class HeatmapConfig:
    grid: int = 28
    image_size: int = 64
    sigma_ref: float = 3.0
    confidence_threshold: float = 0.3
    dedup_radius_ref: float = 5.0
    reference_size: int = REFERENCE_SIZE

    @property
    def sigma(self) -> float:
        """Gaussian sigma in grid cells."""
        return self.sigma_ref * self.grid / self.reference_size

    @property
    def dedup_radius(self) -> float:
        return self.dedup_radius_ref * self.grid / self.reference_size

    def to_grid(self, x: float, y: float) -> tuple[float, float]:
        """Continuous image coords -> grid index coords (cell centres at integers)."""
        k = self.grid / self.image_size
        return (x * k - 0.5, y * k - 0.5)

    def cell_to_reference(self, row: int, col: int) -> tuple[float, float]:
        """Cell centre in continuous reference-frame coords, as (x, y)."""
        k = self.reference_size / self.grid
        return ((col + 0.5) * k, (row + 0.5) * k)


def _passes(kp: Keypoint, cfg: HeatmapConfig) -> bool:
    # Detections are kept only when confidence is strictly above the threshold.
    return kp.confidence > cfg.confidence_threshold


def filter_keypoints(kps: Sequence[Keypoint], cfg: HeatmapConfig = HeatmapConfig()) -> list[Keypoint]:
    """Confidence gate, then merge detections within the dedup radius into the first."""
    kept: list[Keypoint] = []
    r2 = cfg.dedup_radius**2
    for kp in kps:
        kp = Keypoint(*kp)
        if not _passes(kp, cfg):
            continue
        gx, gy = cfg.to_grid(kp.x, kp.y)
        dup = False
        for other in kept:
            ox, oy = cfg.to_grid(other.x, other.y)
            if (gx - ox) ** 2 + (gy - oy) ** 2 <= r2:
                dup = True
                break
        if not dup:
            kept.append(kp)
    return kept


def gaussian_splat(cx: float, cy: float, grid: int, sigma: float) -> np.ndarray:
    """Isotropic Gaussian centred at grid coords (cx, cy), scaled so its
    largest cell is exactly 1 (sigma is under a cell, so an off-centre
    keypoint would otherwise peak well below 1)."""
    idx = np.arange(grid, dtype=np.float64)
    gx = np.exp(-((idx - cx) ** 2) / (2 * sigma**2))
    gy = np.exp(-((idx - cy) ** 2) / (2 * sigma**2))
    mx, my = gx.max(), gy.max()
    if mx == 0.0 or my == 0.0:
        return np.zeros((grid, grid))
    return (gy / my)[:, None] * (gx / mx)[None, :]


def make_wrist_heatmap(kps: Sequence[Keypoint], cfg: HeatmapConfig = HeatmapConfig()) -> np.ndarray:
    heat = np.zeros((cfg.grid, cfg.grid))
    for kp in filter_keypoints(kps, cfg):
        gx, gy = cfg.to_grid(kp.x, kp.y)
        np.maximum(heat, gaussian_splat(gx, gy, cfg.grid, cfg.sigma), out=heat)
    return heat


def keypoints_from_array(arr: np.ndarray) -> list[Keypoint]:
    return [Keypoint(float(x), float(y), float(c)) for x, y, c in np.asarray(arr).reshape(-1, 3)]


def wrist_visible(kps: Sequence[Keypoint], cfg: HeatmapConfig = HeatmapConfig()) -> bool:
    s = cfg.image_size
    for kp in kps:
        kp = Keypoint(*kp)
        if _passes(kp, cfg) and 0.0 <= kp.x < s and 0.0 <= kp.y < s:
            return True
    return False


def heatmap_argmax(h: np.ndarray) -> tuple[int, int]:
    """(row, col) of the maximum; ties go to the lowest row-major index."""
    h = np.asarray(h)
    if not np.any(h > 0):
        raise NoWrist("heatmap is all zeros")
    flat = int(np.argmax(h))
    return divmod(flat, h.shape[1])
