"""Observation-action dataset file and keypoint sidecars.

File layout, all integers little-endian::

    magic      8 bytes  b"EGWMDATA"
    version    u32
    meta_len   u32, then meta_len bytes of UTF-8 JSON (config echo, build stamp)
    count      u32
    index      count x (u16 id_len, id bytes, u64 offset, u64 length, u32 crc32)
    payloads   concatenated record payloads; offsets are from file start

A record payload is ``u32 header_len`` + JSON header (id, source, frame
count, which arrays follow and their shapes) + raw arrays in header order:
images as uint8, everything else as float64. The CRC covers the whole
payload.
"""

from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from ..kinematics import ACTION_DIM

MAGIC = b"EGWMDATA"
FORMAT_VERSION = 1
SOURCES = ("real", "converted", "synthetic")


class DatasetError(ValueError):
    pass


class CorruptRecord(DatasetError):
    def __init__(self, record_id: str, detail: str = "checksum mismatch"):
        super().__init__(f"record {record_id!r}: {detail}")
        self.record_id = record_id


@dataclass
class DatasetRecord:
    record_id: str
    actions: np.ndarray  # (F-1, 69) float64
    keypoints: np.ndarray  # (F, 2, 3) float64: per wrist (x, y, confidence)
    images: np.ndarray | None = None  # (F, H, W, 3) uint8
    latents: np.ndarray | None = None  # (F, D) float64
    source: str = "synthetic"
    version: int = FORMAT_VERSION
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.images is None and self.latents is None:
            raise DatasetError("a record needs images or latents")
        if self.images is not None:
            self.images = np.asarray(self.images)
            if self.images.dtype != np.uint8 or self.images.ndim != 4 or self.images.shape[-1] != 3:
                raise DatasetError("images must be uint8 (F, H, W, 3)")
        if self.latents is not None:
            self.latents = np.asarray(self.latents, dtype=np.float64)
            if self.latents.ndim != 2:
                raise DatasetError("latents must be (F, D)")
        frames = {len(a) for a in (self.images, self.latents) if a is not None}
        if len(frames) != 1:
            raise DatasetError("images and latents disagree on the frame count")
        n = frames.pop()
        actions = np.asarray(self.actions, dtype=np.float64)
        if actions.size == 0:
            actions = actions.reshape(0, ACTION_DIM)
        if actions.ndim != 2 or actions.shape[1] != ACTION_DIM:
            raise DatasetError(f"actions must be (F-1, {ACTION_DIM})")
        self.actions = actions
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64)
        if len(self.actions) != n - 1:
            raise DatasetError(f"{n} frames need {n - 1} actions, got {len(self.actions)}")
        if self.keypoints.shape != (n, 2, 3):
            raise DatasetError(f"keypoints must have shape ({n}, 2, 3)")
        if self.source not in SOURCES:
            raise DatasetError(f"source must be one of {SOURCES}")

    @property
    def frame_count(self) -> int:
        return len(self.images if self.images is not None else self.latents)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DatasetRecord):
            return NotImplemented
        return _encode_record(self) == _encode_record(other)


def _arrays(r: DatasetRecord) -> list[tuple[str, np.ndarray]]:
    out = []
    if r.images is not None:
        out.append(("images", r.images))
    if r.latents is not None:
        out.append(("latents", r.latents))
    out += [("actions", r.actions), ("keypoints", r.keypoints)]
    return out


def _encode_record(r: DatasetRecord) -> bytes:
    arrays = _arrays(r)
    header = {
        "id": r.record_id,
        "source": r.source,
        "version": r.version,
        "frames": r.frame_count,
        "extra": r.extra,
        "arrays": [[name, list(a.shape)] for name, a in arrays],
    }
    text = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(text)))
    buf.write(text)
    for name, a in arrays:
        dtype = "u1" if name == "images" else "<f8"
        buf.write(np.ascontiguousarray(a, dtype=dtype).tobytes())
    return buf.getvalue()


def _decode_record(payload: bytes) -> DatasetRecord:
    (n,) = struct.unpack_from("<I", payload, 0)
    header = json.loads(payload[4 : 4 + n].decode("utf-8"))
    pos = 4 + n
    arrays = {}
    for name, shape in header["arrays"]:
        dtype = np.dtype("u1") if name == "images" else np.dtype("<f8")
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype=dtype, count=count, offset=pos).reshape(shape)
        arrays[name] = arr.astype(np.uint8 if name == "images" else np.float64)
        pos += count * dtype.itemsize
    if pos != len(payload):
        raise DatasetError("record payload has trailing bytes")
    return DatasetRecord(
        record_id=header["id"],
        actions=arrays["actions"],
        keypoints=arrays["keypoints"],
        images=arrays.get("images"),
        latents=arrays.get("latents"),
        source=header["source"],
        version=header["version"],
        extra=header["extra"],
    )


def encode_dataset(records: Iterable[DatasetRecord], metadata: dict | None = None) -> bytes:
    records = list(records)
    ids = [r.record_id for r in records]
    if len(set(ids)) != len(ids):
        raise DatasetError("record ids must be unique")
    payloads = [_encode_record(r) for r in records]
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    raw_ids = [i.encode("utf-8") for i in ids]
    index_size = sum(2 + len(i) + 8 + 8 + 4 for i in raw_ids)
    offset = len(MAGIC) + 8 + len(meta) + 4 + index_size
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(meta)))
    buf.write(meta)
    buf.write(struct.pack("<I", len(records)))
    for rid, p in zip(raw_ids, payloads):
        buf.write(struct.pack("<H", len(rid)))
        buf.write(rid)
        buf.write(struct.pack("<QQI", offset, len(p), zlib.crc32(p)))
        offset += len(p)
    for p in payloads:
        buf.write(p)
    return buf.getvalue()


def decode_dataset(data: bytes) -> tuple[list[DatasetRecord], dict]:
    if len(data) < len(MAGIC) + 12 or data[: len(MAGIC)] != MAGIC:
        raise DatasetError("not a dataset file")
    version, meta_len = struct.unpack_from("<II", data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise DatasetError(f"unsupported dataset format version {version}")
    pos = len(MAGIC) + 8
    try:
        metadata = json.loads(data[pos : pos + meta_len].decode("utf-8"))
        pos += meta_len
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        index = []
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, pos)
            rid = data[pos + 2 : pos + 2 + n].decode("utf-8")
            pos += 2 + n
            off, length, crc = struct.unpack_from("<QQI", data, pos)
            pos += 20
            index.append((rid, off, length, crc))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetError(f"malformed dataset header: {exc}") from exc
    records = []
    for rid, off, length, crc in index:
        payload = data[off : off + length]
        if len(payload) != length:
            raise CorruptRecord(rid, "payload truncated")
        if zlib.crc32(payload) != crc:
            raise CorruptRecord(rid)
        try:
            rec = _decode_record(payload)
        except (struct.error, ValueError, KeyError) as exc:
            raise CorruptRecord(rid, f"undecodable payload: {exc}") from exc
        if rec.record_id != rid:
            raise CorruptRecord(rid, "index and payload ids differ")
        records.append(rec)
    return records, metadata


def write_dataset(records: Iterable[DatasetRecord], path: str | Path, metadata: dict | None = None) -> None:
    Path(path).write_bytes(encode_dataset(records, metadata))


def read_dataset(path: str | Path) -> tuple[list[DatasetRecord], dict]:
    return decode_dataset(Path(path).read_bytes())


# -- keypoint sidecars ----------------------------------------------------

WRIST_NAMES = ("left", "right")


def keypoint_lines(keypoints: np.ndarray) -> list[str]:
    kp = np.asarray(keypoints, dtype=np.float64)
    lines = []
    for f in range(len(kp)):
        for w, name in enumerate(WRIST_NAMES):
            x, y, c = (float(v) for v in kp[f, w])
            lines.append(json.dumps({"frame": f, "wrist": name, "x": x, "y": y, "confidence": c}, sort_keys=True))
    return lines


def write_keypoints(keypoints: np.ndarray, path: str | Path) -> None:
    Path(path).write_text("".join(line + "\n" for line in keypoint_lines(keypoints)), encoding="utf-8")


def read_keypoints(path: str | Path, frames: int | None = None) -> np.ndarray:
    """Parse a sidecar into (F, 2, 3); missing entries are (-1, -1, 0)."""
    rows = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            rows.append((int(rec["frame"]), WRIST_NAMES.index(rec["wrist"]), float(rec["x"]), float(rec["y"]), float(rec["confidence"])))
        except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
            raise DatasetError(f"{path}:{n}: bad keypoint record ({exc})") from exc
    count = frames if frames is not None else (max(r[0] for r in rows) + 1 if rows else 0)
    out = np.tile(np.array([-1.0, -1.0, 0.0]), (count, 2, 1))
    for f, w, x, y, c in rows:
        if not 0 <= f < count:
            raise DatasetError(f"{path}: frame {f} out of range")
        out[f, w] = (x, y, c)
    return out
