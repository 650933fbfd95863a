"""Sectioned TOML run configuration.

Every section is a dataclass whose field defaults are the package
defaults. Unknown sections or keys are rejected, and the whole resolved
config is echoed into every artifact the CLI writes.
"""

from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunSection:
    seed: int = 0


@dataclass(frozen=True)
class TopologySection:
    path: str = ""  # empty: built-in 22-joint skeleton


@dataclass(frozen=True)
class IntrinsicsSection:
    width: int = 64
    height: int = 64
    fov_deg: float = 90.0
    near: float = 0.1


@dataclass(frozen=True)
class EncoderSection:
    grid: int = 8


@dataclass(frozen=True)
class HeatmapSection:
    grid: int = 28
    sigma_ref: float = 3.0
    confidence_threshold: float = 0.3
    dedup_radius_ref: float = 5.0
    reference_size: int = 224


@dataclass(frozen=True)
class SimulatorSection:
    num_landmarks: int = 40
    num_scenes: int = 0  # 0: a fresh scene per episode
    motion_scale: float = 1.0  # multiplies the default per-joint and root stds
    smoothing: float = 0.3
    render_hands: bool = True


@dataclass(frozen=True)
class DataSection:
    episodes: int = 91
    episode_length: int = 24  # actions per episode; frames = length + 1


@dataclass(frozen=True)
class ModelSection:
    context: int = 3
    hidden: tuple = (256, 256)
    activation: str = "tanh"
    residual: bool = False


@dataclass(frozen=True)
class TrainSection:
    wrist_weight: float = 1.0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.0
    grad_clip: float = 10.0
    batch_size: int = 64
    iterations: int = 5000
    ema_decay: float = 0.99


@dataclass(frozen=True)
class EvalSection:
    horizon: int = 8
    episodes: int = 40


@dataclass(frozen=True)
class PlannerSection:
    num_candidates: int = 4
    horizon: int = 8
    cost_mode: str = "final"
    episodes: int = 200
    runs: int = 5


@dataclass(frozen=True)
class FilterSection:
    black_max: int = 10
    white_min: int = 245
    crop: int = 326
    black_fraction: float = 0.30
    white_fraction: float = 0.20
    blur: float = 50.0
    motion: float = 32.5
    histogram_bins: int = 32
    cut_window: int = 12
    cut_k: float = 3.0
    cut_min_threshold: float = 0.3
    min_duration: int = 8
    validator_url: str = ""  # empty: validator step skipped
    validator_attempts: int = 3
    validator_initial_delay: float = 1.0
    validator_backoff: float = 2.0
    validator_max_in_flight: int = 4


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    topology: TopologySection = field(default_factory=TopologySection)
    intrinsics: IntrinsicsSection = field(default_factory=IntrinsicsSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    heatmap: HeatmapSection = field(default_factory=HeatmapSection)
    simulator: SimulatorSection = field(default_factory=SimulatorSection)
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    planner: PlannerSection = field(default_factory=PlannerSection)
    filter: FilterSection = field(default_factory=FilterSection)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["model"]["hidden"] = list(self.model.hidden)
        return out


def _coerce(section: str, key: str, default: Any, value: Any) -> Any:
    where = f"{section}.{key}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"{where} must be a finite number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) and v > 0 for v in value):
            raise ConfigError(f"{where} must be a list of positive integers")
        return tuple(value)
    raise ConfigError(f"{where}: unsupported type")


def merge(cfg: RunConfig, data: dict) -> RunConfig:
    """Overlay a parsed TOML mapping onto ``cfg``, rejecting unknown names."""
    known = {f.name: f for f in fields(RunConfig)}
    updates = {}
    for section, values in data.items():
        if section not in known:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(values, dict):
            raise ConfigError(f"[{section}] must be a table")
        current = getattr(cfg, section)
        keys = {f.name for f in fields(current)}
        changes = {}
        for key, value in values.items():
            if key not in keys:
                raise ConfigError(f"unknown config key {section}.{key}")
            changes[key] = _coerce(section, key, getattr(current, key), value)
        updates[section] = replace(current, **changes)
    return validate(replace(cfg, **updates))


def validate(cfg: RunConfig) -> RunConfig:
    checks = [
        (cfg.intrinsics.width == cfg.intrinsics.height, "intrinsics must be square (the encoder and heatmap assume it)"),
        (cfg.intrinsics.width % cfg.encoder.grid == 0, "intrinsics.width must be divisible by encoder.grid"),
        (0 < cfg.intrinsics.fov_deg < 180, "intrinsics.fov_deg must lie in (0, 180)"),
        (cfg.intrinsics.near > 0, "intrinsics.near must be positive"),
        (cfg.simulator.num_landmarks >= 1, "simulator.num_landmarks must be >= 1"),
        (cfg.simulator.num_scenes >= 0, "simulator.num_scenes must be >= 0"),
        (cfg.simulator.motion_scale >= 0, "simulator.motion_scale must be >= 0"),
        (0 <= cfg.simulator.smoothing < 1, "simulator.smoothing must lie in [0, 1)"),
        (cfg.data.episodes >= 1 and cfg.data.episode_length >= 1, "data.episodes and data.episode_length must be >= 1"),
        (cfg.model.activation in ("tanh", "linear"), "model.activation must be 'tanh' or 'linear'"),
        (cfg.model.context >= 1, "model.context must be >= 1"),
        (cfg.eval.horizon >= 1 and cfg.eval.episodes >= 1, "eval.horizon and eval.episodes must be >= 1"),
        (cfg.planner.cost_mode in ("final", "min_over_horizon"), "planner.cost_mode must be 'final' or 'min_over_horizon'"),
        (cfg.planner.num_candidates >= 1 and cfg.planner.horizon >= 1, "planner.num_candidates and planner.horizon must be >= 1"),
        (cfg.planner.episodes >= 1 and cfg.planner.runs >= 1, "planner.episodes and planner.runs must be >= 1"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)
    return cfg


def load_config(path: str | Path | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return merge(cfg, data)


def parse_override(text: str) -> dict:
    """``section.key=value`` with a TOML value, e.g. ``train.iterations=200``."""
    if "=" not in text or "." not in text.split("=", 1)[0]:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    name, raw = text.split("=", 1)
    section, key = name.strip().split(".", 1)
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()  # bare strings need no quotes
    return {section: {key: value}}


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    for text in overrides:
        cfg = merge(cfg, parse_override(text))
    return cfg


def _toml_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)


def describe_defaults() -> str:
    """Every config key with its default, one per line, grouped by section."""
    lines = []
    for sec in fields(RunConfig):
        lines.append(f"[{sec.name}]")
        for f in fields(sec.default_factory()):
            lines.append(f"  {f.name} = {_toml_value(getattr(sec.default_factory(), f.name))}")
    return "\n".join(lines)


def to_toml(cfg: RunConfig) -> str:
    out = []
    for sec in fields(RunConfig):
        out.append(f"[{sec.name}]")
        s = getattr(cfg, sec.name)
        for f in fields(s):
            out.append(f"{f.name} = {_toml_value(getattr(s, f.name))}")
        out.append("")
    return "\n".join(out)
