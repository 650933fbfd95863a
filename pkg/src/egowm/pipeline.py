"""Glue between a :class:`RunConfig` and the library objects it describes.

All randomness derives from the run seed through named streams, so the
same (config, seed) always produces the same episodes and scenes.
"""

from __future__ import annotations

import math

import numpy as np

from .config import RunConfig
from .datapipe.dataset import DatasetRecord
from .egocam import Intrinsics
from .features import EncoderConfig, HeatmapConfig, encode_batch
from .kinematics import flatten_action, load_topology
from .metrics import PlanningEpisode, RolloutSequence, make_planning_episode
from .simulator import MotionPriorConfig, Simulator, default_joint_std, make_scene
from .worldmodel import ModelConfig, TrainConfig, TransitionSet, transitions_from_sequence

STREAM_EPISODE = 1
STREAM_SCENE = 2
STREAM_PLAN_EPISODE = 3
STREAM_PLAN_RUN = 4
STREAM_PLAN_SCENE = 5
STREAM_HELDOUT = 6


def derive_seed(seed: int, stream: int, index: int) -> int:
    """Independent 63-bit seed for item ``index`` of a named stream."""
    return int(np.random.SeedSequence([seed, stream, index]).generate_state(2, dtype=np.uint32).view(np.uint64)[0] >> 1)


def intrinsics_from(cfg: RunConfig) -> Intrinsics:
    i = cfg.intrinsics
    return Intrinsics(i.width, i.height, math.radians(i.fov_deg), i.near)


def encoder_from(cfg: RunConfig) -> EncoderConfig:
    return EncoderConfig(cfg.intrinsics.width, cfg.encoder.grid)


def heatmap_from(cfg: RunConfig) -> HeatmapConfig:
    h = cfg.heatmap
    return HeatmapConfig(h.grid, cfg.intrinsics.width, h.sigma_ref, h.confidence_threshold, h.dedup_radius_ref, h.reference_size)


def simulator_from(cfg: RunConfig) -> Simulator:
    topo = load_topology(cfg.topology.path or None)
    return Simulator(topo, intrinsics_from(cfg), cfg.simulator.render_hands)


def prior_from(cfg: RunConfig, sim: Simulator | None = None) -> MotionPriorConfig:
    base = MotionPriorConfig(default_joint_std(sim.topology if sim else None), smoothing=cfg.simulator.smoothing)
    return MotionPriorConfig(
        base.joint_std * cfg.simulator.motion_scale, base.root_std * cfg.simulator.motion_scale, base.smoothing, base.limits
    )


def model_config_from(cfg: RunConfig) -> ModelConfig:
    m = cfg.model
    return ModelConfig(
        latent_dim=encoder_from(cfg).dim,
        context=m.context,
        hidden=m.hidden,
        activation=m.activation,
        heatmap_grid=cfg.heatmap.grid,
        residual=m.residual,
    )


def train_config_from(cfg: RunConfig) -> TrainConfig:
    t = cfg.train
    return TrainConfig(
        wrist_weight=t.wrist_weight,
        learning_rate=t.learning_rate,
        beta1=t.beta1,
        beta2=t.beta2,
        eps=t.eps,
        weight_decay=t.weight_decay,
        grad_clip=t.grad_clip,
        batch_size=t.batch_size,
        iterations=t.iterations,
        ema_decay=t.ema_decay,
        seed=cfg.run.seed,
    )


def scene_seed(cfg: RunConfig, seed: int, i: int, fresh_stream: int = STREAM_SCENE) -> int:
    """Scene for item ``i``: drawn from a fixed pool of ``num_scenes`` when
    set, otherwise a fresh scene from ``fresh_stream``."""
    n = cfg.simulator.num_scenes
    return derive_seed(seed, STREAM_SCENE, i % n) if n else derive_seed(seed, fresh_stream, i)


def generate_records(cfg: RunConfig, episodes: int, length: int, seed: int, sim: Simulator | None = None) -> list[DatasetRecord]:
    sim = sim or simulator_from(cfg)
    prior = prior_from(cfg, sim)
    records = []
    for i in range(episodes):
        s_seed = scene_seed(cfg, seed, i)
        e_seed = derive_seed(seed, STREAM_EPISODE, i)
        ep = sim.generate_episode(make_scene(s_seed, cfg.simulator.num_landmarks), prior, length, e_seed)
        records.append(
            DatasetRecord(
                record_id=f"ep{i:05d}",
                actions=np.stack([flatten_action(a) for a in ep.actions]),
                keypoints=ep.wrist_keypoints,
                images=ep.images,
                source="synthetic",
                extra={"scene_seed": s_seed, "episode_seed": e_seed},
            )
        )
    return records


def heldout_records(cfg: RunConfig, sim: Simulator | None = None) -> list[DatasetRecord]:
    """``eval.episodes`` fresh episodes from a seed stream disjoint from training data."""
    return generate_records(cfg, cfg.eval.episodes, cfg.data.episode_length, derive_seed(cfg.run.seed, STREAM_HELDOUT, 0), sim)


def record_latents(rec: DatasetRecord, enc: EncoderConfig) -> np.ndarray:
    return rec.latents if rec.latents is not None else encode_batch(rec.images, enc)


def transitions_from_records(records: list[DatasetRecord], cfg: RunConfig) -> TransitionSet:
    enc, hm = encoder_from(cfg), heatmap_from(cfg)
    return TransitionSet.concat(
        transitions_from_sequence(record_latents(r, enc), r.actions, r.keypoints, cfg.model.context, hm) for r in records
    )


def sequences_from_records(records: list[DatasetRecord], cfg: RunConfig) -> list[RolloutSequence]:
    enc = encoder_from(cfg)
    return [RolloutSequence(record_latents(r, enc), r.actions, r.keypoints) for r in records]


def planning_episodes(cfg: RunConfig, n: int, seed: int, sim: Simulator | None = None) -> list[PlanningEpisode]:
    sim = sim or simulator_from(cfg)
    prior = prior_from(cfg, sim)
    out = []
    for i in range(n):
        ep = make_planning_episode(
            sim,
            prior,
            derive_seed(seed, STREAM_PLAN_EPISODE, i),
            context=cfg.model.context,
            horizon=cfg.planner.horizon,
            enc=encoder_from(cfg),
            scene_seed=scene_seed(cfg, seed, i, STREAM_PLAN_SCENE),
            num_landmarks=cfg.simulator.num_landmarks,
        )
        out.append(ep)
    return out


def run_seeds(seed: int, runs: int) -> list[int]:
    return [derive_seed(seed, STREAM_PLAN_RUN, r) for r in range(runs)]
