"""Clip standardisation: centre crop, resize and 16 -> 8 Hz downsampling,
with keypoints and actions carried through the same transforms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .dataset import DatasetRecord


class PostprocessError(ValueError):
    pass


@dataclass(frozen=True)
class PostprocessConfig:
    input_frames: int = 49
    stride: int = 2  # keep frames 0, 2, 4, ...
    crop_fraction: float = 0.85
    output_size: int = 224

    def __post_init__(self) -> None:
        if not 0.0 < self.crop_fraction <= 1.0:
            raise PostprocessError("crop_fraction must lie in (0, 1]")
        if self.stride < 1 or self.output_size < 1 or self.input_frames < 1:
            raise PostprocessError("stride, output_size and input_frames must be positive")

    @property
    def output_frames(self) -> int:
        return (self.input_frames - 1) // self.stride + 1


@dataclass(frozen=True)
class CropBox:
    x0: int
    y0: int
    width: int
    height: int


def crop_box(width: int, height: int, fraction: float) -> CropBox:
    """Centred crop keeping ``fraction`` of each side.

    The kept size is rounded to the nearest integer with the same parity as
    the frame, so the margins are equal and the crop centre coincides with
    the frame centre.
    """

    def side(n: int) -> int:
        margin = int(np.floor((n - fraction * n) / 2 + 0.5))
        return n - 2 * min(margin, (n - 1) // 2)

    cw, ch = side(width), side(height)
    return CropBox((width - cw) // 2, (height - ch) // 2, cw, ch)


def map_points(xy: np.ndarray, box: CropBox, size: int) -> np.ndarray:
    """Continuous image coords -> output coords."""
    xy = np.asarray(xy, dtype=np.float64)
    # multiply before dividing so exact results (the crop centre) stay exact
    return (xy - np.array([box.x0, box.y0])) * size / np.array([box.width, box.height])


def unmap_points(xy: np.ndarray, box: CropBox, size: int) -> np.ndarray:
    xy = np.asarray(xy, dtype=np.float64)
    return xy * np.array([box.width, box.height]) / size + np.array([box.x0, box.y0])


def transform_keypoints(keypoints: np.ndarray, box: CropBox, size: int) -> np.ndarray:
    """Map (..., 3) keypoints; points outside the crop get confidence 0."""
    kp = np.array(keypoints, dtype=np.float64)
    kp[..., :2] = map_points(kp[..., :2], box, size)
    inside = (kp[..., 0] >= 0) & (kp[..., 0] < size) & (kp[..., 1] >= 0) & (kp[..., 1] < size)
    kp[..., 2] = np.where(inside, kp[..., 2], 0.0)
    return kp


def crop_resize(frame: np.ndarray, box: CropBox, size: int) -> np.ndarray:
    img = Image.fromarray(np.asarray(frame, dtype=np.uint8))
    out = img.resize((size, size), Image.Resampling.BILINEAR, box=(box.x0, box.y0, box.x0 + box.width, box.y0 + box.height))
    return np.asarray(out, dtype=np.uint8)


def resample_actions(actions: np.ndarray, stride: int) -> np.ndarray:
    """Merge each run of ``stride`` per-frame deltas into one delta.

    Deltas compose by addition (root translation and Euler angles are both
    incremented), so the merged action maps kept frame k to kept frame k+1.
    """
    a = np.asarray(actions, dtype=np.float64)
    if len(a) % stride:
        raise PostprocessError(f"{len(a)} actions do not split into runs of {stride}")
    return a.reshape(len(a) // stride, stride, a.shape[1]).sum(axis=1)


def postprocess_clip(
    frames: np.ndarray,
    keypoints: np.ndarray,
    actions: np.ndarray,
    record_id: str,
    cfg: PostprocessConfig = PostprocessConfig(),
    source: str = "converted",
) -> DatasetRecord:
    frames = np.asarray(frames)
    if len(frames) != cfg.input_frames:
        raise PostprocessError(f"expected {cfg.input_frames} frames, got {len(frames)}")
    if len(keypoints) != len(frames) or len(actions) != len(frames) - 1:
        raise PostprocessError("keypoints need one entry per frame and actions one per transition")
    h, w = frames.shape[1:3]
    box = crop_box(w, h, cfg.crop_fraction)
    keep = np.arange(0, len(frames), cfg.stride)
    if keep[-1] != len(frames) - 1:
        raise PostprocessError("the last frame must fall on the sampling grid")
    out_frames = np.stack([crop_resize(frames[i], box, cfg.output_size) for i in keep])
    out_kp = transform_keypoints(np.asarray(keypoints)[keep], box, cfg.output_size)
    out_actions = resample_actions(actions, cfg.stride)
    return DatasetRecord(record_id, out_actions, out_kp, images=out_frames, source=source)
