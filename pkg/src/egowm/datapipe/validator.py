"""Client side of the visual clip validator.

Three sampled frames and a fixed prompt go to a pluggable endpoint; the
JSON verdict is parsed strictly and its ``passes`` field recomputed here.
"""

from __future__ import annotations

import base64
import io
import json
import logging
import threading
import time
import urllib.error
import urllib.request
from dataclasses import asdict, dataclass
from importlib import resources
from typing import Any, Callable, Protocol

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

PROMPT = resources.files("egowm").joinpath("data/validator_prompt.txt").read_text(encoding="utf-8").rstrip("\n")
NUM_FRAMES = 3
OVERLAY_LIMIT = 20.0
VERDICT_FIELDS = ("human_action", "overlay_pct", "overlay_is_photographic", "passes")


class ClipRejected(Exception):
    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail


class TransportError(OSError):
    """The endpoint could not be reached or answered with an error status."""


@dataclass(frozen=True)
class ValidatorVerdict:
    human_action: bool
    overlay_pct: float
    overlay_is_photographic: bool
    passes: bool

    def to_dict(self) -> dict:
        return asdict(self)


def decide(human_action: bool, overlay_pct: float, overlay_is_photographic: bool) -> bool:
    return bool(human_action) and overlay_pct < OVERLAY_LIMIT and not overlay_is_photographic


class ValidatorClient(Protocol):
    def send(self, request: dict) -> Any:
        """Deliver one request; return the decoded JSON body (or raw text)."""


@dataclass
class HttpValidatorClient:
    """POSTs the request as JSON and returns the decoded response body."""

    url: str
    timeout: float = 30.0
    headers: dict | None = None

    def send(self, request: dict) -> Any:
        body = json.dumps(request).encode("utf-8")
        req = urllib.request.Request(self.url, data=body, method="POST")
        req.add_header("Content-Type", "application/json")
        for k, v in (self.headers or {}).items():
            req.add_header(k, v)
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                raw = resp.read().decode("utf-8")
        except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
            raise TransportError(str(exc)) from exc
        try:
            return json.loads(raw)
        except json.JSONDecodeError:
            return raw


class BoundedClient:
    """Caps the number of requests in flight across threads."""

    def __init__(self, client: ValidatorClient, limit: int = 4):
        if limit < 1:
            raise ValueError("limit must be >= 1")
        self._client = client
        self._slots = threading.BoundedSemaphore(limit)

    def send(self, request: dict) -> Any:
        with self._slots:
            return self._client.send(request)


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 3
    initial_delay: float = 1.0
    backoff: float = 2.0

    def __post_init__(self) -> None:
        if self.attempts < 1 or self.initial_delay < 0 or self.backoff < 1:
            raise ValueError("need attempts >= 1, initial_delay >= 0, backoff >= 1")

    def delays(self) -> list[float]:
        return [self.initial_delay * self.backoff**i for i in range(max(self.attempts - 1, 0))]


def encode_png(frame: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(frame, dtype=np.uint8)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def build_request(frames) -> dict:
    if len(frames) != NUM_FRAMES:
        raise ValueError(f"exactly {NUM_FRAMES} frames are sent to the validator, got {len(frames)}")
    return {"prompt": PROMPT, "frames": [encode_png(f) for f in frames]}


def sample_frames(clip: np.ndarray) -> np.ndarray:
    """First, middle and last frame of a clip."""
    n = len(clip)
    if n < 1:
        raise ValueError("empty clip")
    return np.asarray(clip)[[0, n // 2, n - 1]]


def parse_verdict(payload: Any) -> ValidatorVerdict:
    """Strict parse of the remote verdict. The remote ``passes`` is kept
    as given here; :func:`vlm_validate` reconciles it."""
    if isinstance(payload, (str, bytes)):
        try:
            payload = json.loads(payload)
        except json.JSONDecodeError as exc:
            raise ClipRejected("parse", f"response is not JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ClipRejected("parse", "response is not a JSON object")
    if set(payload) != set(VERDICT_FIELDS):
        raise ClipRejected("parse", f"expected fields {sorted(VERDICT_FIELDS)}, got {sorted(payload)}")
    for name in ("human_action", "overlay_is_photographic", "passes"):
        if not isinstance(payload[name], bool):
            raise ClipRejected("parse", f"{name} must be a boolean")
    pct = payload["overlay_pct"]
    if isinstance(pct, bool) or not isinstance(pct, (int, float)) or not 0 <= pct <= 100:
        raise ClipRejected("parse", "overlay_pct must be a number in [0, 100]")
    return ValidatorVerdict(payload["human_action"], float(pct), payload["overlay_is_photographic"], payload["passes"])


def vlm_validate(
    client: ValidatorClient,
    frames,
    retry: RetryPolicy = RetryPolicy(),
    sleep: Callable[[float], None] = time.sleep,
) -> ValidatorVerdict:
    request = build_request(frames)
    delays = retry.delays()
    payload = None
    for attempt in range(retry.attempts):
        try:
            payload = client.send(request)
            break
        except TransportError as exc:
            if attempt == retry.attempts - 1:
                raise ClipRejected("validator_unavailable", str(exc)) from exc
            log.warning("validator request failed (%s); retrying in %.1fs", exc, delays[attempt])
            sleep(delays[attempt])
    remote = parse_verdict(payload)
    local = decide(remote.human_action, remote.overlay_pct, remote.overlay_is_photographic)
    if local != remote.passes:
        log.warning("validator returned passes=%s but its fields imply %s; using %s", remote.passes, local, local)
    return ValidatorVerdict(remote.human_action, remote.overlay_pct, remote.overlay_is_photographic, local)
