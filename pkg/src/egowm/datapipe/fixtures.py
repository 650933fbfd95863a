"""Deterministic synthetic clips for exercising the quality filter.

``clean`` passes; every other fixture reproduces a failure mode seen in
generated ego-view footage (black or white frames, blur, strobing,
sped-up cuts) and must be rejected.
"""

from __future__ import annotations

from pathlib import Path
from typing import Callable

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter, uniform_filter1d


def _texture(rng: np.random.Generator, h: int, w: int, sigma: float = 1.0, lo: float = 60, hi: float = 200) -> np.ndarray:
    t = gaussian_filter(rng.uniform(0, 1, (h, w)), sigma)
    t = (t - t.min()) / (t.max() - t.min())
    return lo + (hi - lo) * t


def _rgb(luma: np.ndarray) -> np.ndarray:
    g = np.clip(np.rint(luma), 0, 255).astype(np.uint8)
    return np.repeat(g[..., None], 3, axis=-1)


def _panning(rng, n, size, sigma=1.0, lo=60, hi=200) -> np.ndarray:
    tex = _texture(rng, size, size + n, sigma, lo, hi)
    return np.stack([tex[:, i : i + size] for i in range(n)])


def clean(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Sharp mid-tone texture panning one pixel per frame."""
    return np.stack([_rgb(f) for f in _panning(rng, n, size)])


def all_black(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    return np.zeros((n, size, size, 3), np.uint8)


def all_white(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    return np.full((n, size, size, 3), 255, np.uint8)


def blurred(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    return np.stack([_rgb(gaussian_filter(f, 4.0)) for f in _panning(rng, n, size)])


def motion_blurred(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Horizontal smear, as from a fast camera pan."""
    return np.stack([_rgb(uniform_filter1d(f, 21, axis=1)) for f in _panning(rng, n, size, sigma=2.0)])


def strobing(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Sharp texture whose tone flips every frame."""
    frames = _panning(rng, n, size, lo=20, hi=235)
    return np.stack([_rgb(f if i % 2 == 0 else 255 - f) for i, f in enumerate(frames)])


def sped_up(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Unrelated high-contrast frame every step."""
    return np.stack([_rgb(_texture(rng, size, size, 0.8, 20, 235)) for _ in range(n)])


def near_black(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Mostly dark frame with a small textured patch, as when the actor faces the camera."""
    out = np.zeros((n, size, size), np.float64)
    tex = _panning(rng, n, size // 3)
    c = size // 3
    out[:, c : c + tex.shape[1], c : c + tex.shape[2]] = tex
    return np.stack([_rgb(f) for f in out])


def title_card(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """White card with dark text bars."""
    card = np.full((size, size), 250.0)
    for r in range(size // 4, 3 * size // 4, max(size // 8, 2)):
        card[r : r + max(size // 32, 1), size // 6 : 5 * size // 6] = 20.0
    return np.stack([_rgb(card) for _ in range(n)])


def overexposed(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Texture pushed into saturation."""
    return np.stack([_rgb(f) for f in _panning(rng, n, size, lo=200, hi=330)])


FIXTURES: dict[str, Callable[[int, int, np.random.Generator], np.ndarray]] = {
    "clean": clean,
    "all_black": all_black,
    "all_white": all_white,
    "blurred": blurred,
    "motion_blurred": motion_blurred,
    "strobing": strobing,
    "sped_up": sped_up,
    "near_black": near_black,
    "title_card": title_card,
    "overexposed": overexposed,
}


def make_fixture(name: str, frames: int = 8, size: int = 64, seed: int = 0) -> np.ndarray:
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}")
    return FIXTURES[name](frames, size, np.random.default_rng(seed))


def write_clip_dir(frames: np.ndarray, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames):
        Image.fromarray(np.asarray(f, dtype=np.uint8)).save(d / f"{i:04d}.png")


def read_clip_dir(directory: str | Path) -> np.ndarray:
    """Frames of a clip directory (PNG files, lexicographic order) as (T, H, W, 3) uint8."""
    paths = sorted(Path(directory).glob("*.png"))
    if not paths:
        raise FileNotFoundError(f"no PNG frames in {directory}")
    return np.stack([np.asarray(Image.open(p).convert("RGB"), dtype=np.uint8) for p in paths])
