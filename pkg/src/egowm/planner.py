"""MPC-style action selection: sample candidate motion sequences, roll each
out under a dynamics model, score the predicted latent against a goal
latent and keep the cheapest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .features import EncoderConfig, encode
from .kinematics import Action, BodyPose, flatten_action
from .simulator import MotionPriorConfig, SceneSpec, Simulator, sample_motion

COST_MODES = ("final", "min_over_horizon")


class Dynamics(Protocol):
    def rollout(self, context: np.ndarray, actions: Sequence[np.ndarray]) -> np.ndarray: ...


class PlanningError(ValueError):
    pass


def candidate_seed(seed: int, index: int) -> int:
    """Per-candidate seed; depends only on (seed, index), so adding
    candidates never changes earlier ones."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(index,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class PlanRequest:
    context: np.ndarray  # (H, D)
    current_pose: BodyPose
    goal_latent: np.ndarray
    horizon: int = 8
    num_candidates: int = 4
    sampler: MotionPriorConfig = field(default_factory=MotionPriorConfig)
    seed: int = 0
    cost_mode: str = "final"

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise PlanningError("horizon must be >= 1")
        if self.num_candidates < 1:
            raise PlanningError("num_candidates must be >= 1")
        if self.cost_mode not in COST_MODES:
            raise PlanningError(f"cost_mode must be one of {COST_MODES}")


@dataclass
class PlanResult:
    chosen_index: int
    chosen_actions: list[Action]
    costs: np.ndarray
    predicted_final_latents: np.ndarray
    candidates: list[list[Action]]

    def to_dict(self) -> dict:
        return {
            "chosen_index": self.chosen_index,
            "costs": [float(c) for c in self.costs],
            "chosen_actions": [flatten_action(a).tolist() for a in self.chosen_actions],
        }


def squared_distance(a: np.ndarray, b: np.ndarray) -> float:
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.dot(d, d))


def score_candidate(
    model: Dynamics, context: np.ndarray, actions: Sequence[Action] | np.ndarray, z_goal: np.ndarray, cost_mode: str = "final"
) -> tuple[float, np.ndarray]:
    """Cost of one candidate and its predicted final latent."""
    vecs = np.stack([flatten_action(a) if isinstance(a, Action) else np.asarray(a) for a in actions])
    pred = model.rollout(context, vecs)
    if cost_mode == "final":
        cost = squared_distance(pred[-1], z_goal)
    elif cost_mode == "min_over_horizon":
        cost = min(squared_distance(z, z_goal) for z in pred)
    else:
        raise PlanningError(f"unknown cost_mode {cost_mode!r}")
    return cost, pred[-1]


def argmin_first(costs: Sequence[float]) -> int:
    """Index of the smallest cost; ties go to the lowest index."""
    best = 0
    for i, c in enumerate(costs):
        if c < costs[best]:
            best = i
    return best


def sample_candidates(req: PlanRequest) -> list[list[Action]]:
    if not np.any(req.sampler.joint_std) and not np.any(req.sampler.root_std):
        raise PlanningError("sampler config has zero variance: all candidates would be identical")
    return [
        sample_motion(req.sampler, req.current_pose, req.horizon, candidate_seed(req.seed, i))
        for i in range(req.num_candidates)
    ]


def plan(model: Dynamics, req: PlanRequest, candidates: list[list[Action]] | None = None) -> PlanResult:
    if candidates is None:
        candidates = sample_candidates(req)
    costs = np.empty(len(candidates))
    finals = []
    for i, cand in enumerate(candidates):
        costs[i], z = score_candidate(model, req.context, cand, req.goal_latent, req.cost_mode)
        finals.append(z)
    idx = argmin_first(list(costs))
    return PlanResult(idx, candidates[idx], costs, np.stack(finals), candidates)


@dataclass
class OracleDynamics:
    """Exact dynamics: replays actions in the simulator from a known pose
    and encodes the rendered frames. The context argument is ignored."""

    simulator: Simulator
    scene: SceneSpec
    pose: BodyPose
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def rollout(self, context: np.ndarray, actions: Sequence[np.ndarray]) -> np.ndarray:
        from .kinematics import unflatten_action

        pose = self.pose
        out = []
        for a in actions:
            a = a if isinstance(a, Action) else unflatten_action(np.asarray(a))
            pose, img = self.simulator.oracle_next_observation(self.scene, pose, a)
            out.append(encode(img, self.encoder))
        return np.stack(out)


def mean_std(values: Sequence[float]) -> tuple[float, float, bool]:
    """Mean and sample standard deviation; a single value has std 0 and is
    flagged (third element True)."""
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("need at least one run")
    n = len(vals)
    mean = math.fsum(vals) / n
    if n == 1:
        return mean, 0.0, True
    var = math.fsum((v - mean) ** 2 for v in vals) / (n - 1)
    return mean, math.sqrt(var), False


def plan_report(runs: Sequence[dict[str, float]]) -> dict[str, dict]:
    """Per-metric mean / sample std over runs."""
    if not runs:
        raise ValueError("need at least one run")
    out: dict[str, dict] = {}
    for key in runs[0]:
        mean, std, single = mean_std([r[key] for r in runs])
        out[key] = {"mean": mean, "std": std, "runs": len(runs), "single_run": single}
    return out
