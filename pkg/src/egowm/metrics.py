"""Evaluation protocol: open-loop latent rollout error, wrist PCK@20,
MPJPE / wrist MPJPE, and the MPC planning benchmark."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .features import EncoderConfig, HeatmapConfig, Keypoint, encode_batch, heatmap_argmax, keypoints_from_array, wrist_visible
from .kinematics import BodyPose, KinematicsError, SkeletonTopology, flatten_action, forward_kinematics_batch
from .planner import Dynamics, PlanRequest, candidate_seed, plan, plan_report
from .simulator import Episode, MotionPriorConfig, SceneSpec, Simulator, make_scene

log = logging.getLogger(__name__)

PCK_THRESHOLD = 20.0


def latent_l2(z_hat: np.ndarray, z: np.ndarray) -> float:
    """Euclidean norm of the difference (root of sum of squares per vector)."""
    z_hat, z = np.asarray(z_hat, dtype=np.float64), np.asarray(z, dtype=np.float64)
    if z_hat.shape != z.shape:
        raise ValueError("latent dimensions differ")
    return float(np.linalg.norm(z_hat - z))


def pck_at_20(
    pred_cells: Sequence[tuple[int, int] | None],
    gt_keypoints: Sequence[Sequence[Keypoint]],
    hm_cfg: HeatmapConfig = HeatmapConfig(),
    threshold: float = PCK_THRESHOLD,
) -> float:
    """Fraction of frames whose predicted wrist lies within ``threshold``
    reference pixels of the nearest visible ground-truth wrist.

    ``pred_cells`` are heatmap argmax cells ``(row, col)`` (``None`` = no
    prediction, counted wrong). Ground truth is in image pixels of
    ``hm_cfg.image_size``; both are mapped to the reference frame. Frames
    with no visible ground-truth wrist are excluded; returns NaN when no
    frame qualifies.
    """
    if len(pred_cells) != len(gt_keypoints):
        raise ValueError("prediction and ground-truth frame counts differ")
    k = hm_cfg.reference_size / hm_cfg.image_size
    hits = total = 0
    for cell, kps in zip(pred_cells, gt_keypoints):
        kps = [Keypoint(*kp) for kp in kps]
        vis = [kp for kp in kps if wrist_visible([kp], hm_cfg)]
        if not vis:
            continue
        total += 1
        if cell is None:
            continue
        px, py = hm_cfg.cell_to_reference(*cell)
        best = min(math.hypot(px - kp.x * k, py - kp.y * k) for kp in vis)
        if best <= threshold:
            hits += 1
    return hits / total if total else float("nan")


def _positions(poses: Sequence[BodyPose], topology: SkeletonTopology) -> np.ndarray:
    root = np.stack([p.root_translation for p in poses])
    euler = np.stack([p.joint_euler for p in poses])
    return forward_kinematics_batch(root, euler, topology)[0]


def mpjpe(pred_poses: Sequence[BodyPose], gt_poses: Sequence[BodyPose], topology: SkeletonTopology, joints=None) -> float:
    """Mean over frames and joints of Euclidean FK joint-position error, metres."""
    if len(pred_poses) != len(gt_poses):
        raise ValueError("pose sequences differ in length")
    for p in list(pred_poses) + list(gt_poses):
        if p.joint_euler.shape[0] != topology.joint_count:
            raise KinematicsError("pose does not match topology")
    a = _positions(pred_poses, topology)
    b = _positions(gt_poses, topology)
    if joints is not None:
        a, b = a[:, list(joints)], b[:, list(joints)]
    return float(np.mean(np.linalg.norm(a - b, axis=-1)))


def wrist_mpjpe(pred_poses: Sequence[BodyPose], gt_poses: Sequence[BodyPose], topology: SkeletonTopology) -> float:
    return mpjpe(pred_poses, gt_poses, topology, joints=topology.wrist_indices)


@dataclass
class RolloutReport:
    per_step_l2: list[float]
    per_step_pck: list[float]
    episodes: int
    skipped: int = 0

    @property
    def final_error(self) -> float:
        return self.per_step_l2[-1]

    @property
    def avg_error(self) -> float:
        return math.fsum(self.per_step_l2) / len(self.per_step_l2)

    @property
    def final_pck(self) -> float:
        return self.per_step_pck[-1]

    @property
    def avg_pck(self) -> float:
        vals = [v for v in self.per_step_pck if not math.isnan(v)]
        return math.fsum(vals) / len(vals) if vals else float("nan")

    def to_dict(self) -> dict:
        return {
            "episodes": self.episodes,
            "skipped": self.skipped,
            "final_error": self.final_error,
            "avg_error": self.avg_error,
            "final_pck": self.final_pck,
            "avg_pck": self.avg_pck,
            "per_step_l2": self.per_step_l2,
            "per_step_pck": self.per_step_pck,
        }


@dataclass
class RolloutSequence:
    """Minimal view of an episode for evaluation: frames or latents,
    flattened actions and per-frame wrist keypoints."""

    latents: np.ndarray  # (F, D)
    actions: np.ndarray  # (F-1, 69)
    keypoints: np.ndarray  # (F, 2, 3)

    @classmethod
    def from_episode(cls, ep: Episode, enc: EncoderConfig = EncoderConfig()) -> "RolloutSequence":
        return cls(encode_batch(ep.images, enc), np.stack([flatten_action(a) for a in ep.actions]), ep.wrist_keypoints)


def eval_rollout(
    model,
    sequences: Sequence[RolloutSequence],
    horizon: int = 8,
    hm_cfg: HeatmapConfig = HeatmapConfig(),
    wrist_head=None,
    start: int = 0,
) -> RolloutReport:
    """Seed with ``H`` ground-truth latents, roll out ``horizon`` steps
    with ground-truth actions, score every step.

    ``wrist_head`` maps latents to heatmaps (defaults to ``model.heatmap``
    when present); without one PCK is NaN.
    """
    ctx_len = model.config.context if hasattr(model, "config") else 3
    head = wrist_head if wrist_head is not None else getattr(model, "heatmap", None)
    l2 = [[] for _ in range(horizon)]
    cells: list[list] = [[] for _ in range(horizon)]
    gts: list[list] = [[] for _ in range(horizon)]
    used = skipped = 0
    for seq in sequences:
        if len(seq.latents) < start + ctx_len + horizon + 1 - 1 or len(seq.actions) < start + ctx_len - 1 + horizon:
            log.warning("skipping sequence of %d frames: too short for context %d + horizon %d", len(seq.latents), ctx_len, horizon)
            skipped += 1
            continue
        t0 = start + ctx_len - 1
        pred = model.rollout(seq.latents[start : t0 + 1], seq.actions[t0 : t0 + horizon])
        truth = seq.latents[t0 + 1 : t0 + 1 + horizon]
        for s in range(horizon):
            l2[s].append(latent_l2(pred[s], truth[s]))
            if head is not None:
                hm = head(pred[s])
                cells[s].append(heatmap_argmax(hm) if np.any(hm > 0) else None)
                gts[s].append(keypoints_from_array(seq.keypoints[t0 + 1 + s]))
        used += 1
    if used == 0:
        raise ValueError("no sequence long enough for evaluation")
    per_l2 = [math.fsum(v) / len(v) for v in l2]
    per_pck = [pck_at_20(cells[s], gts[s], hm_cfg) if head is not None else float("nan") for s in range(horizon)]
    return RolloutReport(per_l2, per_pck, used, skipped)


# -- planning benchmark ---------------------------------------------------


@dataclass
class PlanningEpisode:
    scene: SceneSpec
    context: np.ndarray  # (H, D)
    current_pose: BodyPose
    goal_latent: np.ndarray
    gt_future: list[BodyPose]  # horizon poses after the current one
    seed: int = 0


def make_planning_episode(
    sim: Simulator,
    prior: MotionPriorConfig,
    seed: int,
    context: int = 3,
    horizon: int = 8,
    enc: EncoderConfig = EncoderConfig(),
    scene_seed: int | None = None,
    num_landmarks: int = 40,
) -> PlanningEpisode:
    """Ground-truth motion from the prior; the goal is its final frame."""
    scene = make_scene(seed if scene_seed is None else scene_seed, num_landmarks)
    ep = sim.generate_episode(scene, prior, context - 1 + horizon, seed)
    lat = encode_batch(ep.images, enc)
    t0 = context - 1
    return PlanningEpisode(scene, lat[:context], ep.poses[t0], lat[t0 + horizon], ep.poses[t0 + 1 :], seed)


@dataclass
class PlanningReport:
    runs: list[dict[str, float]]
    summary: dict[str, dict] = field(default_factory=dict)
    episode_wins: list[list[bool]] = field(default_factory=list)
    plans: list[list[dict]] = field(default_factory=list)  # per run, per episode: chosen index and all costs

    def to_dict(self) -> dict:
        return {"runs": self.runs, "summary": self.summary, "plans": self.plans}


def receding_horizon(
    model: Dynamics,
    ep: PlanningEpisode,
    sim: Simulator,
    prior: MotionPriorConfig,
    seed: int,
    replan_every: int,
    num_candidates: int = 4,
    horizon: int = 8,
    cost_mode: str = "final",
    enc: EncoderConfig = EncoderConfig(),
) -> tuple[list[BodyPose], np.ndarray]:
    """Closed-loop control toward the episode goal.

    Plans over the remaining horizon, executes the first ``replan_every``
    actions of the chosen candidate in the simulator, appends the observed
    latents to the context and replans. Returns the executed poses (one per
    step) and the latent reached at the end of the horizon.
    """
    if replan_every < 1:
        raise ValueError("replan_every must be >= 1")
    context = np.array(ep.context, copy=True)
    pose = ep.current_pose
    poses: list[BodyPose] = []
    latent = context[-1]
    step = 0
    while step < horizon:
        req = PlanRequest(
            context,
            pose,
            ep.goal_latent,
            horizon=horizon - step,
            num_candidates=num_candidates,
            sampler=prior,
            seed=candidate_seed(seed, step),
            cost_mode=cost_mode,
        )
        chosen = plan(model, req).chosen_actions
        for a in chosen[:replan_every]:
            pose, img = sim.oracle_next_observation(ep.scene, pose, a)
            latent = encode_batch(img[None], enc)[0]
            context = np.vstack([context[1:], latent])
            poses.append(pose)
            step += 1
    return poses, latent


def evaluate_planning(
    model: Dynamics,
    episodes: Sequence[PlanningEpisode],
    sim: Simulator,
    prior: MotionPriorConfig,
    run_seeds: Sequence[int],
    num_candidates: int = 4,
    horizon: int = 8,
    cost_mode: str = "final",
    enc: EncoderConfig = EncoderConfig(),
    replan_every: int | None = None,
) -> PlanningReport:
    """Rank sampled candidates with ``model`` and execute them in the simulator.

    Per run, reports the chosen candidate's MPJPE / wrist MPJPE against the
    ground-truth future and its true final goal-latent distance, alongside
    the uniform-random baseline (the mean over candidates, i.e. the
    expectation of a uniformly random pick). ``win_rate`` is the fraction of
    episodes where the chosen candidate's goal distance is strictly below
    that baseline. With ``replan_every`` set, a closed-loop controller is
    also run per episode and reported under the ``replan_`` metrics.
    """
    topo = sim.topology
    runs: list[dict[str, float]] = []
    wins_all: list[list[bool]] = []
    plans_all: list[list[dict]] = []
    for run_seed in run_seeds:
        rows = []
        wins = []
        plans = []
        closed = []
        for ep in episodes:
            req = PlanRequest(
                ep.context,
                ep.current_pose,
                ep.goal_latent,
                horizon=horizon,
                num_candidates=num_candidates,
                sampler=prior,
                seed=int(np.random.SeedSequence([run_seed, ep.seed]).generate_state(1)[0]),
                cost_mode=cost_mode,
            )
            result = plan(model, req)
            dist, mp, wmp = [], [], []
            for cand in result.candidates:
                poses = sim.rollout_poses(ep.current_pose, cand)[1:]
                final = encode_batch(sim.render(ep.scene, poses[-1])[None], enc)[0]
                dist.append(latent_l2(final, ep.goal_latent))
                mp.append(mpjpe(poses, ep.gt_future, topo))
                wmp.append(wrist_mpjpe(poses, ep.gt_future, topo))
            i = result.chosen_index
            plans.append({"chosen": i, "costs": [float(c) for c in result.costs], "true_goal_distances": [float(d) for d in dist]})
            rows.append((dist[i], np.mean(dist), mp[i], np.mean(mp), wmp[i], np.mean(wmp)))
            wins.append(dist[i] < np.mean(dist))
            if replan_every is not None:
                poses, final = receding_horizon(
                    model, ep, sim, prior, req.seed, replan_every, num_candidates, horizon, cost_mode, enc
                )
                closed.append((latent_l2(final, ep.goal_latent), mpjpe(poses, ep.gt_future, topo), wrist_mpjpe(poses, ep.gt_future, topo)))
        arr = np.array(rows)
        runs.append(
            {
                "goal_distance": float(arr[:, 0].mean()),
                "random_goal_distance": float(arr[:, 1].mean()),
                "mpjpe": float(arr[:, 2].mean()),
                "random_mpjpe": float(arr[:, 3].mean()),
                "wrist_mpjpe": float(arr[:, 4].mean()),
                "random_wrist_mpjpe": float(arr[:, 5].mean()),
                "win_rate": float(np.mean(wins)),
            }
        )
        if closed:
            c = np.array(closed)
            runs[-1].update(
                replan_goal_distance=float(c[:, 0].mean()),
                replan_mpjpe=float(c[:, 1].mean()),
                replan_wrist_mpjpe=float(c[:, 2].mean()),
            )
        wins_all.append(wins)
        plans_all.append(plans)
    return PlanningReport(runs, plan_report(runs), wins_all, plans_all)
