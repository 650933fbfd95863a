"""Skeleton topology, the 69-dim action codec, forward kinematics and
Xsens <-> SMPL skeleton conversion.

Poses are parameterized by a world-frame root translation plus one Euler
triple per joint, each relative to the joint's parent. Actions are plain
componentwise deltas of that parameterization, so composing actions is
addition and ``action_between`` is subtraction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

NUM_JOINTS = 22
ACTION_DIM = 3 + NUM_JOINTS * 3
NUM_XSENS_JOINTS = 23
TOPOLOGY_FORMAT_VERSION = 1
JOINT_MAP_FORMAT_VERSION = 1


class KinematicsError(ValueError):
    pass


class JointMapError(KinematicsError):
    pass


def _finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise KinematicsError(f"{name} contains non-finite values")


@dataclass(frozen=True)
class SkeletonTopology:
    joint_names: tuple[str, ...]
    parent_index: np.ndarray
    rest_offset: np.ndarray
    head_joint_index: int
    neck_joint_index: int
    left_wrist_index: int
    right_wrist_index: int
    eye_offsets: np.ndarray  # (2, 3): left, right; head-joint frame
    euler_order: str = "XYZ"
    standing_root_height: float = 0.95

    def __post_init__(self) -> None:
        parents = np.asarray(self.parent_index, dtype=np.int64)
        offsets = np.asarray(self.rest_offset, dtype=np.float64)
        eyes = np.asarray(self.eye_offsets, dtype=np.float64)
        object.__setattr__(self, "parent_index", parents)
        object.__setattr__(self, "rest_offset", offsets)
        object.__setattr__(self, "eye_offsets", eyes)
        n = len(self.joint_names)
        if parents.shape != (n,) or offsets.shape != (n, 3):
            raise KinematicsError("parent_index / rest_offset do not match joint_names")
        if eyes.shape != (2, 3):
            raise KinematicsError("eye_offsets must be two 3-vectors")
        _finite("rest_offset", offsets)
        _finite("eye_offsets", eyes)
        if parents[0] != -1:
            raise KinematicsError("joint 0 must be the root")
        # Parents strictly precede children: guarantees a tree rooted at 0
        # and lets FK run in index order.
        for j in range(1, n):
            if not 0 <= parents[j] < j:
                raise KinematicsError(f"joint {j} has invalid parent {parents[j]}")
        for name in ("head_joint_index", "neck_joint_index", "left_wrist_index", "right_wrist_index"):
            idx = getattr(self, name)
            if not 0 <= idx < n:
                raise KinematicsError(f"{name}={idx} out of range")
        if sorted(self.euler_order.upper()) != ["X", "Y", "Z"]:
            raise KinematicsError(f"unsupported euler order {self.euler_order!r}")

    @property
    def joint_count(self) -> int:
        return len(self.joint_names)

    @property
    def wrist_indices(self) -> tuple[int, int]:
        return (self.left_wrist_index, self.right_wrist_index)

    def index(self, name: str) -> int:
        try:
            return self.joint_names.index(name)
        except ValueError:
            raise KinematicsError(f"unknown joint {name!r}") from None

    def to_dict(self) -> dict:
        names = self.joint_names
        return {
            "format_version": TOPOLOGY_FORMAT_VERSION,
            "euler_order": self.euler_order,
            "joint_names": list(names),
            "parent_index": self.parent_index.tolist(),
            "rest_offset": self.rest_offset.tolist(),
            "standing_root_height": self.standing_root_height,
            "head_joint": names[self.head_joint_index],
            "neck_joint": names[self.neck_joint_index],
            "left_wrist": names[self.left_wrist_index],
            "right_wrist": names[self.right_wrist_index],
            "eye_offsets": {"left": self.eye_offsets[0].tolist(), "right": self.eye_offsets[1].tolist()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SkeletonTopology":
        version = data.get("format_version")
        if version != TOPOLOGY_FORMAT_VERSION:
            raise KinematicsError(f"unsupported topology format_version {version!r}")
        names = tuple(data["joint_names"])

        def idx(key: str) -> int:
            if data[key] not in names:
                raise KinematicsError(f"{key} names unknown joint {data[key]!r}")
            return names.index(data[key])

        return cls(
            joint_names=names,
            parent_index=np.asarray(data["parent_index"]),
            rest_offset=np.asarray(data["rest_offset"], dtype=np.float64),
            head_joint_index=idx("head_joint"),
            neck_joint_index=idx("neck_joint"),
            left_wrist_index=idx("left_wrist"),
            right_wrist_index=idx("right_wrist"),
            eye_offsets=np.asarray([data["eye_offsets"]["left"], data["eye_offsets"]["right"]]),
            euler_order=data.get("euler_order", "XYZ"),
            standing_root_height=float(data.get("standing_root_height", 0.95)),
        )


def _read_json(path: str | Path | None, default_name: str) -> dict:
    if path is None:
        text = resources.files("egowm.data").joinpath(default_name).read_text()
    else:
        text = Path(path).read_text()
    return json.loads(text)


def load_topology(path: str | Path | None = None) -> SkeletonTopology:
    """Load a topology file; ``None`` loads the shipped 1.7 m humanoid."""
    return SkeletonTopology.from_dict(_read_json(path, "smpl_topology.json"))


@dataclass
class BodyPose:
    root_translation: np.ndarray
    joint_euler: np.ndarray

    def __post_init__(self) -> None:
        self.root_translation = np.array(self.root_translation, dtype=np.float64).reshape(3)
        self.joint_euler = np.array(self.joint_euler, dtype=np.float64).reshape(-1, 3)

    @classmethod
    def zeros(cls, joints: int = NUM_JOINTS) -> "BodyPose":
        return cls(np.zeros(3), np.zeros((joints, 3)))

    def copy(self) -> "BodyPose":
        return BodyPose(self.root_translation.copy(), self.joint_euler.copy())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BodyPose):
            return NotImplemented
        return bool(
            np.array_equal(self.root_translation, other.root_translation)
            and np.array_equal(self.joint_euler, other.joint_euler)
        )


@dataclass
class Action:
    delta_root: np.ndarray
    delta_joint_euler: np.ndarray

    def __post_init__(self) -> None:
        self.delta_root = np.array(self.delta_root, dtype=np.float64).reshape(3)
        self.delta_joint_euler = np.array(self.delta_joint_euler, dtype=np.float64).reshape(NUM_JOINTS, 3)

    @classmethod
    def zeros(cls) -> "Action":
        return cls(np.zeros(3), np.zeros((NUM_JOINTS, 3)))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Action):
            return NotImplemented
        return bool(
            np.array_equal(self.delta_root, other.delta_root)
            and np.array_equal(self.delta_joint_euler, other.delta_joint_euler)
        )


@dataclass
class XsensPose:
    root_translation: np.ndarray
    joint_euler: np.ndarray  # (23, 3)

    def __post_init__(self) -> None:
        self.root_translation = np.array(self.root_translation, dtype=np.float64).reshape(3)
        self.joint_euler = np.array(self.joint_euler, dtype=np.float64)
        if self.joint_euler.shape != (NUM_XSENS_JOINTS, 3):
            raise KinematicsError(f"Xsens pose needs {NUM_XSENS_JOINTS} joints, got {self.joint_euler.shape}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, XsensPose):
            return NotImplemented
        return bool(
            np.array_equal(self.root_translation, other.root_translation)
            and np.array_equal(self.joint_euler, other.joint_euler)
        )


@dataclass(frozen=True)
class JointLimits:
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def symmetric(cls, bound: float = np.pi, joints: int = NUM_JOINTS) -> "JointLimits":
        return cls(np.full((joints, 3), -bound), np.full((joints, 3), bound))

    def clamp(self, euler: np.ndarray) -> np.ndarray:
        return np.clip(euler, self.lower, self.upper)


DEFAULT_LIMITS = JointLimits.symmetric()


def flatten_action(a: Action) -> np.ndarray:
    """Layout: ``[delta_root(3), joint 0 (3), ..., joint 21 (3)]``."""
    return np.concatenate([a.delta_root, a.delta_joint_euler.reshape(-1)])


def unflatten_action(vec: np.ndarray) -> Action:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (ACTION_DIM,):
        raise KinematicsError(f"action vector must have length {ACTION_DIM}, got {vec.shape}")
    return Action(vec[:3].copy(), vec[3:].reshape(NUM_JOINTS, 3).copy())


def apply_action(p: BodyPose, a: Action, limits: JointLimits | None = DEFAULT_LIMITS) -> BodyPose:
    _finite("pose", p.root_translation)
    _finite("pose", p.joint_euler)
    _finite("action", a.delta_root)
    _finite("action", a.delta_joint_euler)
    euler = p.joint_euler + a.delta_joint_euler
    if limits is not None:
        euler = limits.clamp(euler)
    return BodyPose(p.root_translation + a.delta_root, euler)


def action_between(p1: BodyPose, p2: BodyPose) -> Action:
    return Action(p2.root_translation - p1.root_translation, p2.joint_euler - p1.joint_euler)


@dataclass
class JointPositions:
    positions: np.ndarray  # (J, 3) world
    rotations: np.ndarray  # (J, 3, 3) world
    left_eye: np.ndarray
    right_eye: np.ndarray
    neck: np.ndarray

    @property
    def eye_midpoint(self) -> np.ndarray:
        return 0.5 * (self.left_eye + self.right_eye)


def local_rotations(joint_euler: np.ndarray, order: str = "XYZ") -> np.ndarray:
    """Euler triples (..., 3) to rotation matrices (..., 3, 3); uppercase order = intrinsic."""
    euler = np.asarray(joint_euler, dtype=np.float64)
    flat = euler.reshape(-1, 3)
    mats = Rotation.from_euler(order.upper(), flat).as_matrix()
    return mats.reshape(euler.shape[:-1] + (3, 3))


def forward_kinematics_batch(
    root_translation: np.ndarray, joint_euler: np.ndarray, topology: SkeletonTopology
) -> tuple[np.ndarray, np.ndarray]:
    """Batched FK. Returns world positions (T, J, 3) and rotations (T, J, 3, 3)."""
    root = np.asarray(root_translation, dtype=np.float64).reshape(-1, 3)
    euler = np.asarray(joint_euler, dtype=np.float64).reshape(root.shape[0], -1, 3)
    n = topology.joint_count
    if euler.shape[1] != n:
        raise KinematicsError(f"pose has {euler.shape[1]} joints, topology has {n}")
    local = local_rotations(euler, topology.euler_order)
    pos = np.empty((root.shape[0], n, 3))
    rot = np.empty((root.shape[0], n, 3, 3))
    pos[:, 0] = root
    rot[:, 0] = local[:, 0]
    for j in range(1, n):
        p = topology.parent_index[j]
        pos[:, j] = pos[:, p] + rot[:, p] @ topology.rest_offset[j]
        rot[:, j] = rot[:, p] @ local[:, j]
    return pos, rot


def forward_kinematics(p: BodyPose, t: SkeletonTopology) -> JointPositions:
    if p.joint_euler.shape != (t.joint_count, 3):
        raise KinematicsError(f"pose has {p.joint_euler.shape[0]} joints, topology has {t.joint_count}")
    pos, rot = forward_kinematics_batch(p.root_translation[None], p.joint_euler[None], t)
    pos, rot = pos[0], rot[0]
    head = t.head_joint_index
    left_eye = pos[head] + rot[head] @ t.eye_offsets[0]
    right_eye = pos[head] + rot[head] @ t.eye_offsets[1]
    return JointPositions(pos, rot, left_eye, right_eye, pos[t.neck_joint_index].copy())


def standing_pose(topology: SkeletonTopology, x: float = 0.0, z: float = 0.0, heading: float = 0.0) -> BodyPose:
    pose = BodyPose(np.array([x, topology.standing_root_height, z]), np.zeros((topology.joint_count, 3)))
    pose.joint_euler[0, 1] = heading
    return pose


@dataclass(frozen=True)
class JointMap:
    """Index table between the 23-joint Xsens skeleton and the 22-joint SMPL body."""

    xsens_to_smpl: dict[int, int]  # every Xsens joint except the dropped one
    dropped_xsens: int
    duplicate_source_xsens: int
    torso_xsens: tuple[int, int, int, int] = field(default=(1, 2, 3, 4))

    @classmethod
    def from_dict(cls, data: dict, topology: SkeletonTopology) -> "JointMap":
        if data.get("format_version") != JOINT_MAP_FORMAT_VERSION:
            raise JointMapError(f"unsupported joint map format_version {data.get('format_version')!r}")
        names = list(data["xsens_joint_names"])
        if len(names) != NUM_XSENS_JOINTS or len(set(names)) != NUM_XSENS_JOINTS:
            raise JointMapError("joint map must list 23 distinct Xsens joints")
        torso = data["torso"]
        if list(torso) != ["L5", "T12", "T8"]:
            raise JointMapError("torso table must map L5, T12, T8 in that order")
        if data["dropped"] != "L3" or data["duplicate_source"] != "L5":
            raise JointMapError("the L3 slot must be dropped and rebuilt from L5")

        def smpl(name: str) -> int:
            if name not in topology.joint_names:
                raise JointMapError(f"unknown SMPL joint {name!r}")
            return topology.joint_names.index(name)

        def xs(name: str) -> int:
            if name not in names:
                raise JointMapError(f"unknown Xsens joint {name!r}")
            return names.index(name)

        table = {xs(k): smpl(v) for k, v in {**torso, **data["non_torso"]}.items()}
        dropped = xs("L3")
        if dropped in table:
            raise JointMapError("L3 must not be mapped")
        if len(table) != NUM_XSENS_JOINTS - 1:
            raise JointMapError("every Xsens joint except L3 must be mapped")
        if sorted(table.values()) != list(range(topology.joint_count)):
            raise JointMapError("joint map must cover every SMPL joint exactly once")
        torso_idx = (xs("L5"), xs("L3"), xs("T12"), xs("T8"))
        if len(set(torso_idx)) != 4:
            raise JointMapError("torso indices must be distinct")
        return cls(table, dropped, xs("L5"), torso_idx)


def load_joint_map(topology: SkeletonTopology, path: str | Path | None = None) -> JointMap:
    return JointMap.from_dict(_read_json(path, "xsens_smpl_map.json"), topology)


def xsens_to_smpl(x: XsensPose, joint_map: JointMap) -> BodyPose:
    euler = np.zeros((NUM_JOINTS, 3))
    for src, dst in joint_map.xsens_to_smpl.items():
        euler[dst] = x.joint_euler[src]
    return BodyPose(x.root_translation.copy(), euler)


def smpl_to_xsens(p: BodyPose, joint_map: JointMap) -> XsensPose:
    euler = np.zeros((NUM_XSENS_JOINTS, 3))
    for src, dst in joint_map.xsens_to_smpl.items():
        euler[src] = p.joint_euler[dst]
    euler[joint_map.dropped_xsens] = euler[joint_map.duplicate_source_xsens]
    return XsensPose(p.root_translation.copy(), euler)
