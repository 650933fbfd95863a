"""Histogram-based scene segmentation with an adaptive cut threshold."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .quality import luma_u8


@dataclass(frozen=True)
class SceneCutConfig:
    bins: int = 32
    window: int = 12  # previous distances used for the rolling statistics
    k: float = 3.0
    min_threshold: float = 0.3  # floor on the L1 threshold (histograms sum to 1)
    min_duration: int = 8  # frames

    def __post_init__(self) -> None:
        if self.bins < 2 or self.window < 1 or self.min_duration < 1:
            raise ValueError("bins >= 2, window >= 1 and min_duration >= 1 required")
        if self.k < 0 or self.min_threshold < 0:
            raise ValueError("k and min_threshold must be non-negative")


@dataclass(frozen=True)
class Segment:
    start: int
    end: int  # exclusive

    @property
    def length(self) -> int:
        return self.end - self.start


class CameraMotionCheck(Protocol):
    """Plug-in point for rejecting segments with strong camera motion."""

    def rejects(self, frames: np.ndarray) -> bool: ...


def luma_histograms(frames: np.ndarray, bins: int = 32) -> np.ndarray:
    """Normalised luma histograms, one row per frame."""
    luma = luma_u8(np.asarray(frames))
    edges = np.linspace(0, 256, bins + 1)
    out = np.stack([np.histogram(f, bins=edges)[0] for f in luma]).astype(np.float64)
    return out / out.sum(axis=1, keepdims=True)


def histogram_distances(frames: np.ndarray, bins: int = 32) -> np.ndarray:
    h = luma_histograms(frames, bins)
    return np.abs(np.diff(h, axis=0)).sum(axis=1)


def find_cuts(distances: np.ndarray, cfg: SceneCutConfig = SceneCutConfig()) -> list[int]:
    """Frame indices that start a new scene.

    Distance ``i`` compares frames ``i`` and ``i+1``; it is a cut when it
    exceeds ``max(min_threshold, mean + k*std)`` of the previous ``window``
    non-cut distances.
    """
    cuts: list[int] = []
    history: list[float] = []
    for i, d in enumerate(distances):
        past = np.asarray(history[-cfg.window :])
        thr = cfg.min_threshold
        if past.size:
            thr = max(thr, float(past.mean() + cfg.k * past.std()))
        if d > thr:
            cuts.append(i + 1)
        else:
            history.append(float(d))
    return cuts


def detect_scene_cuts(
    frames: np.ndarray,
    cfg: SceneCutConfig = SceneCutConfig(),
    motion_check: CameraMotionCheck | None = None,
) -> list[Segment]:
    frames = np.asarray(frames)
    if len(frames) < 1:
        raise ValueError("need at least one frame")
    cuts = find_cuts(histogram_distances(frames, cfg.bins), cfg) if len(frames) > 1 else []
    bounds = [0, *cuts, len(frames)]
    segs = [Segment(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
    segs = [s for s in segs if s.length >= cfg.min_duration]
    if motion_check is not None:
        segs = [s for s in segs if not motion_check.rejects(frames[s.start : s.end])]
    return segs
