"""Synthetic kinematic world: scenes of coloured landmarks, a smoothed
random-walk motion prior, and rendered egocentric episodes.

The simulator is the ground truth the rest of the package is tested
against: ``oracle_next_observation`` is exact dynamics, and episode wrist
keypoints are always the projected FK wrists.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .egocam import (
    Canvas,
    HandSkeleton,
    Intrinsics,
    build_ego_camera,
    project_points,
    render_hand_overlay,
    render_observation,
)
from .kinematics import (
    NUM_JOINTS,
    Action,
    BodyPose,
    JointLimits,
    SkeletonTopology,
    apply_action,
    forward_kinematics,
    forward_kinematics_batch,
    load_topology,
    standing_pose,
)

DEFAULT_BOUNDS = (np.array([-3.0, 0.0, -3.0]), np.array([3.0, 3.0, 3.0]))


@dataclass(frozen=True)
class Landmark:
    position: tuple[float, float, float]
    color: tuple[int, int, int]
    radius: float


@dataclass(frozen=True)
class SceneSpec:
    landmarks: tuple[Landmark, ...]
    bounds: tuple[np.ndarray, np.ndarray] = DEFAULT_BOUNDS
    seed: int = 0

    def __post_init__(self) -> None:
        lo, hi = (np.asarray(b, dtype=np.float64) for b in self.bounds)
        object.__setattr__(self, "bounds", (lo, hi))
        for lm in self.landmarks:
            p = np.asarray(lm.position)
            if np.any(p < lo) or np.any(p > hi):
                raise ValueError(f"landmark at {lm.position} lies outside the scene bounds")


def make_scene(
    seed: int,
    num_landmarks: int = 40,
    bounds: tuple[np.ndarray, np.ndarray] = DEFAULT_BOUNDS,
    radius_range: tuple[float, float] = (0.15, 0.45),
) -> SceneSpec:
    rng = np.random.default_rng(seed)
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    pos = rng.uniform(lo, hi, size=(num_landmarks, 3))
    colors = rng.integers(0, 256, size=(num_landmarks, 3))
    radii = rng.uniform(*radius_range, size=num_landmarks)
    landmarks = tuple(
        Landmark(tuple(map(float, p)), tuple(map(int, c)), float(r)) for p, c, r in zip(pos, colors, radii)
    )
    return SceneSpec(landmarks, (lo, hi), seed)


def default_joint_std(topology: SkeletonTopology | None = None) -> np.ndarray:
    """Per-joint angular-velocity std (rad/step) of the default motion prior.

    Heading and arms carry most of the motion. Head and spine jitter is kept
    small so the egocentric view stays informative about the body pose, and
    legs stay still since they barely change the view.
    """
    topo = topology or load_topology()
    std = np.zeros((topo.joint_count, 3))
    std[0] = (0.0, 0.075, 0.0)
    for name, s in [("spine1", 0.005), ("spine2", 0.005), ("spine3", 0.005), ("neck", 0.008), ("head", 0.008)]:
        std[topo.index(name)] = s
    for side in ("left", "right"):
        std[topo.index(f"{side}_shoulder")] = 0.03
        std[topo.index(f"{side}_elbow")] = 0.03
        std[topo.index(f"{side}_wrist")] = 0.015
    return std


@dataclass
class MotionPriorConfig:
    joint_std: np.ndarray = field(default_factory=default_joint_std)
    root_std: np.ndarray = field(default_factory=lambda: np.array([0.015, 0.0, 0.015]))
    # Low smoothing keeps each action mostly unpredictable from past frames,
    # so a learned model has to read the action rather than extrapolate.
    smoothing: float = 0.3
    limits: JointLimits = field(default_factory=JointLimits.symmetric)
    seed: int = 0

    def __post_init__(self) -> None:
        self.joint_std = np.broadcast_to(np.asarray(self.joint_std, dtype=np.float64), (NUM_JOINTS, 3)).copy()
        self.root_std = np.broadcast_to(np.asarray(self.root_std, dtype=np.float64), (3,)).copy()
        if np.any(self.joint_std < 0) or np.any(self.root_std < 0):
            raise ValueError("motion prior stds must be non-negative")
        if not 0.0 <= self.smoothing < 1.0:
            raise ValueError("smoothing must lie in [0, 1)")

    def scaled(self, factor: float) -> "MotionPriorConfig":
        return MotionPriorConfig(self.joint_std * factor, self.root_std * factor, self.smoothing, self.limits, self.seed)


def _inside_delta(euler: np.ndarray, delta: np.ndarray, limits: JointLimits) -> np.ndarray:
    """Nudge ``delta`` by ulps so ``euler + delta`` rounds inside the limits."""
    for _ in range(8):
        nxt = euler + delta
        hi, lo = nxt > limits.upper, nxt < limits.lower
        if not (hi.any() or lo.any()):
            break
        delta = np.where(hi, np.nextafter(delta, -np.inf), np.where(lo, np.nextafter(delta, np.inf), delta))
    return delta


def sample_motion(cfg: MotionPriorConfig, start: BodyPose, horizon: int, seed: int) -> list[Action]:
    """AR(1) Gaussian random walk on root and joint velocities.

    ``v[t+1] = smoothing * v[t] + noise``; joint deltas are clamped so the
    resulting poses stay inside ``cfg.limits``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    rng = np.random.default_rng(seed)
    rho = cfg.smoothing
    v_root = np.zeros(3)
    v_joint = np.zeros((NUM_JOINTS, 3))
    euler = start.joint_euler.copy()
    actions = []
    for _ in range(horizon):
        noise = rng.standard_normal(3 + 3 * NUM_JOINTS)
        v_root = rho * v_root + cfg.root_std * noise[:3]
        v_joint = rho * v_joint + cfg.joint_std * noise[3:].reshape(NUM_JOINTS, 3)
        target = cfg.limits.clamp(euler + v_joint)
        delta = _inside_delta(euler, target - euler, cfg.limits)
        v_joint = delta
        euler = euler + delta
        actions.append(Action(v_root.copy(), delta))
    return actions


def hand_skeleton(position: np.ndarray, rotation: np.ndarray, side: str) -> HandSkeleton:
    """Synthetic 16-joint hand hanging off a wrist frame; fingers extend along +z."""
    sign = 1.0 if side == "left" else -1.0
    lateral = np.array([-0.035, -0.017, 0.0, 0.017, 0.035]) * sign
    base_z = np.array([0.04, 0.08, 0.085, 0.08, 0.07])
    seg = np.array([0.035, 0.025])
    local = [np.zeros(3)]
    for f in range(5):
        p = np.array([lateral[f], 0.0, base_z[f]])
        local.append(p)
        for s in seg:
            p = p + np.array([0.0, 0.0, s])
            local.append(p)
    local = np.asarray(local)
    return HandSkeleton(position + local @ rotation.T, side)


@dataclass
class Episode:
    poses: list[BodyPose]
    actions: list[Action]
    images: np.ndarray  # (T+1, H, W, 3) uint8
    wrist_keypoints: np.ndarray  # (T+1, 2, 3): left/right, (x, y, confidence)
    scene_seed: int = 0
    seed: int = 0

    @property
    def length(self) -> int:
        return len(self.actions)


@dataclass
class Simulator:
    topology: SkeletonTopology = field(default_factory=load_topology)
    intrinsics: Intrinsics = field(default_factory=Intrinsics)
    render_hands: bool = True
    limits: JointLimits = field(default_factory=JointLimits.symmetric)

    def render(self, scene: SceneSpec, pose: BodyPose) -> np.ndarray:
        joints = forward_kinematics(pose, self.topology)
        cam = build_ego_camera(joints)
        image = render_observation(scene, cam, self.intrinsics)
        if self.render_hands:
            canvas = Canvas(image)
            for side, idx in zip(("left", "right"), self.topology.wrist_indices):
                hand = hand_skeleton(joints.positions[idx], joints.rotations[idx], side)
                render_hand_overlay(hand, cam, self.intrinsics, canvas)
            image = canvas.image
        return image

    def wrist_keypoints(self, pose: BodyPose) -> np.ndarray:
        joints = forward_kinematics(pose, self.topology)
        cam = build_ego_camera(joints)
        wrists = joints.positions[list(self.topology.wrist_indices)]
        uv, _, visible = project_points(cam, self.intrinsics, wrists)
        out = np.zeros((2, 3))
        for k in range(2):
            if not visible[k]:
                out[k] = (-1.0, -1.0, 0.0)
                continue
            x, y = uv[k]
            ok = 0.0 <= x < self.intrinsics.image_width and 0.0 <= y < self.intrinsics.image_height
            out[k] = (x, y, 1.0 if ok else 0.0)
        return out

    def start_pose(self, scene: SceneSpec, rng: np.random.Generator) -> BodyPose:
        lo, hi = scene.bounds
        mid, half = 0.5 * (lo + hi), 0.25 * (hi - lo)
        x = rng.uniform(mid[0] - half[0], mid[0] + half[0])
        z = rng.uniform(mid[2] - half[2], mid[2] + half[2])
        heading = rng.uniform(-np.pi, np.pi)
        return standing_pose(self.topology, x, z, heading)

    def rollout_poses(self, start: BodyPose, actions: list[Action]) -> list[BodyPose]:
        poses = [start]
        for a in actions:
            poses.append(apply_action(poses[-1], a, self.limits))
        return poses

    def episode_from_actions(
        self, scene: SceneSpec, start: BodyPose, actions: list[Action], seed: int = 0
    ) -> Episode:
        poses = self.rollout_poses(start, actions)
        images = np.stack([self.render(scene, p) for p in poses])
        kps = np.stack([self.wrist_keypoints(p) for p in poses])
        return Episode(poses, list(actions), images, kps, scene.seed, seed)

    def generate_episode(self, scene: SceneSpec, cfg: MotionPriorConfig, length: int, seed: int) -> Episode:
        """``length`` actions, ``length + 1`` frames."""
        if length < 1:
            raise ValueError("length must be >= 1")
        rng = np.random.default_rng(seed)
        start = self.start_pose(scene, rng)
        motion_seed = int(rng.integers(0, 2**63 - 1))
        actions = sample_motion(cfg, start, length, motion_seed)
        return self.episode_from_actions(scene, start, actions, seed)

    def oracle_next_observation(self, scene: SceneSpec, pose: BodyPose, action: Action) -> tuple[BodyPose, np.ndarray]:
        nxt = apply_action(pose, action, self.limits)
        return nxt, self.render(scene, nxt)

    def fk_positions(self, poses: list[BodyPose]) -> np.ndarray:
        root = np.stack([p.root_translation for p in poses])
        euler = np.stack([p.joint_euler for p in poses])
        return forward_kinematics_batch(root, euler, self.topology)[0]
