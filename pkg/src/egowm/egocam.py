"""Head-anchored virtual camera, pinhole projection and raster primitives.

Camera axes: ``x`` points from the left eye to the right eye (image right),
``y`` points from the camera centre towards the neck (image down) and
``z = x × y`` looks forward. Image coordinates are continuous with the
origin at the top-left corner of the top-left pixel, so pixel ``(i, j)``
has its centre at ``(i + 0.5, j + 0.5)`` and the principal point is
``(width / 2, height / 2)``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, NamedTuple

import numpy as np
from skimage.draw import disk, line

if TYPE_CHECKING:
    from .kinematics import JointPositions
    from .simulator import SceneSpec

CAMERA_PUSH = 0.1
LEFT_COLOR = (255, 0, 0)
RIGHT_COLOR = (0, 0, 255)
BACKGROUND = (96, 96, 96)


class DegenerateCamera(ValueError):
    pass


@dataclass(frozen=True)
class CameraFrame:
    origin: np.ndarray
    x_axis: np.ndarray
    y_axis: np.ndarray
    z_axis: np.ndarray

    @property
    def rotation(self) -> np.ndarray:
        """World-from-camera rotation; columns are the axes."""
        return np.stack([self.x_axis, self.y_axis, self.z_axis], axis=1)

    def to_camera(self, p: np.ndarray) -> np.ndarray:
        return (np.asarray(p, dtype=np.float64) - self.origin) @ self.rotation


@dataclass(frozen=True)
class Intrinsics:
    image_width: int = 64
    image_height: int = 64
    vertical_fov: float = math.pi / 2
    near_plane: float = 0.1

    def __post_init__(self) -> None:
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError("image dimensions must be positive")
        if not 0.0 < self.vertical_fov < math.pi:
            raise ValueError("vertical_fov must lie in (0, pi)")
        if self.near_plane <= 0:
            raise ValueError("near_plane must be positive")

    @property
    def focal(self) -> float:
        return 0.5 * self.image_height / math.tan(0.5 * self.vertical_fov)

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * self.image_width, 0.5 * self.image_height)


class ImagePoint(NamedTuple):
    x: float
    y: float
    depth: float
    in_frame: bool


class Culled(NamedTuple):
    depth: float


def build_ego_camera(joints: "JointPositions", push: float = CAMERA_PUSH, tol: float = 1e-9) -> CameraFrame:
    """Camera at the eye midpoint, pushed forward by ``push`` metres."""
    left = np.asarray(joints.left_eye, dtype=np.float64)
    right = np.asarray(joints.right_eye, dtype=np.float64)
    center = 0.5 * (left + right)
    x = right - left
    nx = np.linalg.norm(x)
    if nx < tol:
        raise DegenerateCamera("eye joints coincide")
    x = x / nx
    y = np.asarray(joints.neck, dtype=np.float64) - center
    ny = np.linalg.norm(y)
    if ny < tol:
        raise DegenerateCamera("neck coincides with the eye midpoint")
    y = y / ny
    y = y - np.dot(y, x) * x
    ny = np.linalg.norm(y)
    if ny < 1e-6:
        raise DegenerateCamera("neck is collinear with the eye axis")
    y = y / ny
    z = np.cross(x, y)
    return CameraFrame(center + push * z, x, y, z)


def project_points(cam: CameraFrame, intr: Intrinsics, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised projection: pixel coords (N, 2), depth (N,), visible-mask (N,).

    ``visible`` is False for culled points; their pixel coordinates are NaN.
    """
    pc = cam.to_camera(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    depth = pc[:, 2]
    visible = depth > intr.near_plane
    f = intr.focal
    cx, cy = intr.center
    uv = np.full((pc.shape[0], 2), np.nan)
    d = depth[visible]
    uv[visible, 0] = cx + f * pc[visible, 0] / d
    uv[visible, 1] = cy + f * pc[visible, 1] / d
    return uv, depth, visible


def in_frame(intr: Intrinsics, x: float, y: float) -> bool:
    return 0.0 <= x < intr.image_width and 0.0 <= y < intr.image_height


def project(cam: CameraFrame, intr: Intrinsics, p: np.ndarray) -> ImagePoint | Culled:
    uv, depth, visible = project_points(cam, intr, p)
    if not visible[0]:
        return Culled(float(depth[0]))
    x, y = float(uv[0, 0]), float(uv[0, 1])
    return ImagePoint(x, y, float(depth[0]), in_frame(intr, x, y))


# -- hand overlay -----------------------------------------------------------

HAND_BONES: tuple[tuple[int, int], ...] = tuple(
    [(0, 1 + 3 * f) for f in range(5)]
    + [(1 + 3 * f + k, 2 + 3 * f + k) for f in range(5) for k in range(2)]
)


@dataclass(frozen=True)
class HandSkeleton:
    joints: np.ndarray  # (16, 3); 0 = wrist, then 3 joints per finger proximal to distal
    side: str
    bones: tuple[tuple[int, int], ...] = HAND_BONES

    def __post_init__(self) -> None:
        j = np.asarray(self.joints, dtype=np.float64)
        object.__setattr__(self, "joints", j)
        if j.shape != (16, 3):
            raise ValueError("a hand has exactly 16 joints")
        if self.side not in ("left", "right"):
            raise ValueError("side must be 'left' or 'right'")
        if len(self.bones) != 15:
            raise ValueError("a hand has exactly 15 bones")
        reached = {0}
        for a, b in self.bones:
            if a not in reached or b in reached:
                raise ValueError("hand bones must form a tree rooted at the wrist")
            reached.add(b)


@dataclass
class Canvas:
    """8-bit RGB raster plus a log of drawn primitives."""

    image: np.ndarray
    primitives: list[tuple] = field(default_factory=list)

    @classmethod
    def blank(cls, intr: Intrinsics, color: tuple[int, int, int] = BACKGROUND) -> "Canvas":
        img = np.empty((intr.image_height, intr.image_width, 3), dtype=np.uint8)
        img[...] = color
        return cls(img)

    def circle(self, x: float, y: float, radius: float, color: tuple[int, int, int]) -> None:
        # skimage works on pixel-centre coordinates: shift by half a pixel.
        rr, cc = disk((y - 0.5, x - 0.5), radius, shape=self.image.shape[:2])
        self.image[rr, cc] = color
        self.primitives.append(("circle", x, y, radius, color))

    def segment(self, p0: tuple[float, float], p1: tuple[float, float], color: tuple[int, int, int]) -> None:
        h, w = self.image.shape[:2]
        lim = 4 * max(h, w)
        r0, c0, r1, c1 = (int(np.clip(np.floor(v), -lim, lim)) for v in (p0[1], p0[0], p1[1], p1[0]))
        rr, cc = line(r0, c0, r1, c1)
        keep = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        self.image[rr[keep], cc[keep]] = color
        self.primitives.append(("line", p0, p1, color))


def render_hand_overlay(
    hand: HandSkeleton, cam: CameraFrame, intr: Intrinsics, canvas: Canvas, joint_radius: float | None = None
) -> Canvas:
    if canvas.image.shape[:2] != (intr.image_height, intr.image_width):
        raise ValueError("canvas does not match intrinsics")
    color = LEFT_COLOR if hand.side == "left" else RIGHT_COLOR
    radius = joint_radius if joint_radius is not None else max(1.0, intr.image_width / 64.0)
    uv, _, visible = project_points(cam, intr, hand.joints)
    for a, b in hand.bones:
        if visible[a] and visible[b]:
            canvas.segment(tuple(uv[a]), tuple(uv[b]), color)
    for k in range(16):
        if visible[k]:
            canvas.circle(uv[k, 0], uv[k, 1], radius, color)
    return canvas


# -- scene rendering --------------------------------------------------------


def render_observation(scene: "SceneSpec", cam: CameraFrame, intr: Intrinsics) -> np.ndarray:
    """Rasterise landmark discs far-to-near over a flat background.

    Disc radius in pixels is ``focal * radius / depth``; edges are
    anti-aliased by pixel-centre distance so the image varies smoothly with
    the camera pose.
    """
    h, w = intr.image_height, intr.image_width
    img = np.empty((h, w, 3), dtype=np.float64)
    img[...] = BACKGROUND
    if scene.landmarks:
        pos = np.array([lm.position for lm in scene.landmarks])
        uv, depth, visible = project_points(cam, intr, pos)
        f = intr.focal
        ys = np.arange(h) + 0.5
        xs = np.arange(w) + 0.5
        for k in np.argsort(-depth, kind="stable"):
            if not visible[k]:
                continue
            lm = scene.landmarks[k]
            r = f * lm.radius / depth[k]
            u, v = uv[k]
            x0, x1 = int(max(0, math.floor(u - r - 1))), int(min(w, math.ceil(u + r + 1)))
            y0, y1 = int(max(0, math.floor(v - r - 1))), int(min(h, math.ceil(v + r + 1)))
            if x0 >= x1 or y0 >= y1:
                continue
            dx = xs[x0:x1][None, :] - u
            dy = ys[y0:y1][:, None] - v
            cover = np.clip(r - np.sqrt(dx * dx + dy * dy) + 0.5, 0.0, 1.0)[..., None]
            patch = img[y0:y1, x0:x1]
            patch += cover * (np.asarray(lm.color, dtype=np.float64) - patch)
    return np.rint(img).astype(np.uint8)


def write_ppm(path, image: np.ndarray) -> None:
    """Binary PPM (P6) writer for debugging."""
    img = np.ascontiguousarray(image, dtype=np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    m = re.match(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise ValueError("not a binary PPM file")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ValueError("only 8-bit PPM is supported")
    start = m.end()
    return np.frombuffer(data[start : start + w * h * 3], dtype=np.uint8).reshape(h, w, 3).copy()
