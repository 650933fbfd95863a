"""Action-conditioned egocentric world model at desk scale: a synthetic
kinematic world, a latent dynamics model with a wrist-heatmap head, MPC
planning on top of it, and the clip-curation tools around it."""

from __future__ import annotations

import subprocess
from functools import lru_cache
from pathlib import Path

__version__ = "0.1.0"


@lru_cache(maxsize=1)
def build_stamp() -> str:
    """``egowm <version>`` plus ``git describe`` of the source tree when available."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
            check=True,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        out = ""
    return f"egowm {__version__}" + (f" ({out})" if out else "")
