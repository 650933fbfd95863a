"""Action-conditioned latent dynamics model with a wrist-heatmap head.

Everything here is plain numpy with hand-written backpropagation so the
gradients can be audited against finite differences
(:func:`gradient_check`). The dynamics network maps ``H`` context latents
plus a 69-dim action to the next latent; the wrist head is an affine map
from a latent to ``G x G`` logits squashed by a sigmoid.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .features import HeatmapConfig, keypoints_from_array, make_wrist_heatmap, wrist_visible
from .kinematics import ACTION_DIM

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"EGWMCKPT"
CHECKPOINT_VERSION = 1
PAPER_LEARNING_RATE = 8e-5


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    latent_dim: int = 64
    context: int = 3
    action_dim: int = ACTION_DIM
    hidden: tuple[int, ...] = (256, 256)
    activation: str = "tanh"
    heatmap_grid: int = 28
    zero_init_output: bool = False
    residual: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.activation not in ("tanh", "linear"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.context < 1 or self.latent_dim < 1:
            raise ValueError("context and latent_dim must be positive")

    @property
    def input_dim(self) -> int:
        return self.context * self.latent_dim + self.action_dim


@dataclass(frozen=True)
class TrainConfig:
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
    seed: int = 0

    def __post_init__(self) -> None:
        if self.wrist_weight < 0:
            raise ValueError("wrist_weight must be >= 0")
        if self.grad_clip <= 0:
            raise ValueError("grad_clip must be > 0")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in [0, 1)")
        if self.batch_size < 1 or self.iterations < 0:
            raise ValueError("batch_size must be >= 1 and iterations >= 0")


def _act(x: np.ndarray, kind: str) -> np.ndarray:
    return np.tanh(x) if kind == "tanh" else x


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class WorldModel:
    """Dynamics network ``f`` and wrist head ``h`` sharing one parameter dict.

    Parameter names: ``dyn.W{k}``, ``dyn.b{k}`` for the dynamics layers,
    ``head.W`` and ``head.b`` for the wrist head. Input normalisation
    (``shift``, ``scale``) and output de-normalisation (``out_shift``,
    ``out_scale``) are fixed data statistics, not trained: the network
    output ``y`` becomes ``y * out_scale + out_shift``, plus the last
    context latent when ``config.residual`` is set.
    """

    def __init__(
        self,
        config: ModelConfig,
        params: dict[str, np.ndarray],
        shift=None,
        scale=None,
        out_shift=None,
        out_scale=None,
    ):
        self.config = config
        self.params = params
        n, d = config.input_dim, config.latent_dim
        self.shift = np.zeros(n) if shift is None else np.asarray(shift, dtype=np.float64)
        self.scale = np.ones(n) if scale is None else np.asarray(scale, dtype=np.float64)
        self.out_shift = np.zeros(d) if out_shift is None else np.asarray(out_shift, dtype=np.float64)
        self.out_scale = np.ones(d) if out_scale is None else np.asarray(out_scale, dtype=np.float64)
        self._check()

    @classmethod
    def init(
        cls, config: ModelConfig, seed: int = 0, shift=None, scale=None, out_shift=None, out_scale=None
    ) -> "WorldModel":
        rng = np.random.default_rng(seed)
        sizes = [config.input_dim, *config.hidden, config.latent_dim]
        params: dict[str, np.ndarray] = {}
        last = len(sizes) - 2
        for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            w = rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)
            if k == last and config.zero_init_output:
                w = np.zeros_like(w)
            params[f"dyn.W{k}"] = w
            params[f"dyn.b{k}"] = np.zeros(fan_out)
        cells = config.heatmap_grid**2
        params["head.W"] = rng.standard_normal((config.latent_dim, cells)) / np.sqrt(config.latent_dim)
        params["head.b"] = np.zeros(cells)
        return cls(config, params, shift, scale, out_shift, out_scale)

    def _check(self) -> None:
        sizes = [self.config.input_dim, *self.config.hidden, self.config.latent_dim]
        for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            if self.params[f"dyn.W{k}"].shape != (a, b) or self.params[f"dyn.b{k}"].shape != (b,):
                raise ValueError(f"layer {k} parameters do not match the config")
        cells = self.config.heatmap_grid**2
        if self.params["head.W"].shape != (self.config.latent_dim, cells):
            raise ValueError("wrist head does not match the config")
        if self.shift.shape != (self.config.input_dim,) or self.scale.shape != (self.config.input_dim,):
            raise ValueError("input normalisation does not match the config")
        if self.out_shift.shape != (self.config.latent_dim,) or self.out_scale.shape != (self.config.latent_dim,):
            raise ValueError("output normalisation does not match the config")
        for name, p in self.params.items():
            if not np.all(np.isfinite(p)):
                raise ValueError(f"parameter {name} is not finite")

    @property
    def num_layers(self) -> int:
        return len(self.config.hidden) + 1

    def copy(self) -> "WorldModel":
        return WorldModel(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            self.shift.copy(),
            self.scale.copy(),
            self.out_shift.copy(),
            self.out_scale.copy(),
        )

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    # -- forward ----------------------------------------------------------

    def _inputs(self, context: np.ndarray, actions: np.ndarray) -> np.ndarray:
        cfg = self.config
        context = np.asarray(context, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.float64)
        if context.ndim != 3 or context.shape[1:] != (cfg.context, cfg.latent_dim):
            raise ValueError(f"context must have shape (B, {cfg.context}, {cfg.latent_dim}), got {context.shape}")
        if actions.shape != (context.shape[0], cfg.action_dim):
            raise ValueError(f"actions must have shape (B, {cfg.action_dim}), got {actions.shape}")
        x = np.concatenate([context.reshape(context.shape[0], -1), actions], axis=1)
        return (x - self.shift) / self.scale

    def dynamics_forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        acts = [x]
        h = x
        for k in range(self.num_layers):
            h = h @ self.params[f"dyn.W{k}"] + self.params[f"dyn.b{k}"]
            if k < self.num_layers - 1:
                h = _act(h, self.config.activation)
                acts.append(h)
        return h, acts

    def _outputs(self, y: np.ndarray, context: np.ndarray) -> np.ndarray:
        out = y * self.out_scale + self.out_shift
        if self.config.residual:
            out = out + np.asarray(context, dtype=np.float64)[:, -1]
        return out

    def predict_batch(self, context: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return self._outputs(self.dynamics_forward(self._inputs(context, actions))[0], context)

    def predict_next(self, context: np.ndarray, action: np.ndarray) -> np.ndarray:
        return self.predict_batch(np.asarray(context)[None], np.asarray(action).reshape(1, -1))[0]

    def heatmap(self, latents: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(np.asarray(latents, dtype=np.float64))
        out = _sigmoid(z @ self.params["head.W"] + self.params["head.b"])
        g = self.config.heatmap_grid
        out = out.reshape(-1, g, g)
        return out[0] if np.asarray(latents).ndim == 1 else out

    def rollout(self, context: np.ndarray, actions: Sequence[np.ndarray]) -> np.ndarray:
        """Autoregressive rollout: each prediction is appended to the context window."""
        actions = np.asarray(actions, dtype=np.float64).reshape(-1, self.config.action_dim)
        if len(actions) < 1:
            raise ValueError("rollout needs at least one action")
        window = np.array(context, dtype=np.float64)
        out = np.empty((len(actions), self.config.latent_dim))
        for t, a in enumerate(actions):
            z = self.predict_next(window, a)
            out[t] = z
            window = np.concatenate([window[1:], z[None]], axis=0)
        return out

    def rollout_batch(self, context: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Rollouts for B independent (context, action-sequence) pairs: (B, T, D)."""
        actions = np.asarray(actions, dtype=np.float64)
        window = np.array(context, dtype=np.float64)
        b, t_steps = actions.shape[:2]
        out = np.empty((b, t_steps, self.config.latent_dim))
        for t in range(t_steps):
            z = self.predict_batch(window, actions[:, t])
            out[:, t] = z
            window = np.concatenate([window[:, 1:], z[:, None]], axis=1)
        return out

    # -- loss and gradients ----------------------------------------------

    def loss_and_grads(
        self,
        context: np.ndarray,
        actions: np.ndarray,
        targets: np.ndarray,
        heatmaps: np.ndarray,
        masks: np.ndarray,
        wrist_weight: float,
        need_grads: bool = True,
    ) -> tuple[float, float, float, dict[str, np.ndarray] | None]:
        """Returns (total, latent, wrist, grads); losses are batch means."""
        x = self._inputs(context, actions)
        y, acts = self.dynamics_forward(x)
        z_hat = self._outputs(y, context)
        b, d = z_hat.shape
        dz = z_hat - targets
        latent = float(np.mean(np.sum(dz * dz, axis=1) / d))

        g = self.config.heatmap_grid
        v_hat = _sigmoid(z_hat @ self.params["head.W"] + self.params["head.b"])
        dv = v_hat - np.asarray(heatmaps, dtype=np.float64).reshape(b, g * g)
        m = np.asarray(masks, dtype=np.float64).reshape(b)
        per_sample_wrist = np.sum(dv * dv, axis=1) / (g * g)
        wrist = float(np.mean(m * per_sample_wrist))
        total = latent + wrist_weight * wrist
        if not need_grads:
            return total, latent, wrist, None

        grads: dict[str, np.ndarray] = {}
        d_z = 2.0 * dz / (b * d)
        if wrist_weight != 0.0:
            d_logits = (wrist_weight * 2.0 / (b * g * g)) * m[:, None] * dv * v_hat * (1.0 - v_hat)
            grads["head.W"] = z_hat.T @ d_logits
            grads["head.b"] = d_logits.sum(axis=0)
            d_z = d_z + d_logits @ self.params["head.W"].T
        else:
            grads["head.W"] = np.zeros_like(self.params["head.W"])
            grads["head.b"] = np.zeros_like(self.params["head.b"])

        delta = d_z * self.out_scale
        for k in range(self.num_layers - 1, -1, -1):
            grads[f"dyn.W{k}"] = acts[k].T @ delta
            grads[f"dyn.b{k}"] = delta.sum(axis=0)
            if k > 0:
                delta = delta @ self.params[f"dyn.W{k}"].T
                if self.config.activation == "tanh":
                    delta = delta * (1.0 - acts[k] ** 2)
        return total, latent, wrist, grads


def loss(
    z_hat: np.ndarray,
    z: np.ndarray,
    v_hat: np.ndarray,
    v: np.ndarray,
    wrist_weight: float,
    wrist_mask: bool,
) -> float:
    """Per-dimension mean squared latent error, plus the weighted
    per-cell mean squared heatmap error when ``wrist_mask`` is set."""
    z_hat, z = np.asarray(z_hat, dtype=np.float64), np.asarray(z, dtype=np.float64)
    if z_hat.shape != z.shape:
        raise ValueError("latent shapes disagree")
    out = float(np.mean((z_hat - z) ** 2))
    if wrist_mask:
        v_hat, v = np.asarray(v_hat, dtype=np.float64), np.asarray(v, dtype=np.float64)
        if v_hat.shape != v.shape:
            raise ValueError("heatmap shapes disagree")
        out += wrist_weight * float(np.mean((v_hat - v) ** 2))
    return out


# -- transitions ----------------------------------------------------------


@dataclass
class TransitionSet:
    context: np.ndarray  # (N, H, D)
    actions: np.ndarray  # (N, 69)
    targets: np.ndarray  # (N, D)
    heatmaps: np.ndarray  # (N, G, G)
    masks: np.ndarray  # (N,) bool

    def __len__(self) -> int:
        return len(self.targets)

    def subset(self, idx) -> "TransitionSet":
        return TransitionSet(self.context[idx], self.actions[idx], self.targets[idx], self.heatmaps[idx], self.masks[idx])

    @classmethod
    def concat(cls, parts: Iterable["TransitionSet"]) -> "TransitionSet":
        parts = list(parts)
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in ("context", "actions", "targets", "heatmaps", "masks")))


def transitions_from_sequence(
    latents: np.ndarray, actions: np.ndarray, keypoints: np.ndarray, context: int, hm_cfg: HeatmapConfig
) -> TransitionSet:
    """Teacher-forced (context, action, next latent, next heatmap, mask) tuples."""
    latents = np.asarray(latents, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    frames = len(latents)
    if len(actions) != frames - 1:
        raise ValueError("need one action per frame transition")
    ts = list(range(context - 1, frames - 1))
    ctx = np.stack([latents[t - context + 1 : t + 1] for t in ts]) if ts else np.zeros((0, context, latents.shape[1]))
    heat, mask = [], []
    for t in ts:
        kps = keypoints_from_array(keypoints[t + 1])
        heat.append(make_wrist_heatmap(kps, hm_cfg))
        mask.append(wrist_visible(kps, hm_cfg))
    g = hm_cfg.grid
    return TransitionSet(
        ctx,
        actions[ts] if ts else np.zeros((0, actions.shape[1])),
        latents[[t + 1 for t in ts]] if ts else np.zeros((0, latents.shape[1])),
        np.stack(heat) if heat else np.zeros((0, g, g)),
        np.array(mask, dtype=bool),
    )


def _mean_std(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    scale = x.std(axis=0)
    return x.mean(axis=0), np.where(scale > 1e-8, scale, 1.0)


def input_statistics(data: TransitionSet) -> tuple[np.ndarray, np.ndarray]:
    return _mean_std(np.concatenate([data.context.reshape(len(data), -1), data.actions], axis=1))


def target_statistics(data: TransitionSet, residual: bool) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean/std of what the network regresses: the next
    latent, or its change from the last context latent when residual."""
    y = data.targets - data.context[:, -1] if residual else data.targets
    return _mean_std(np.asarray(y, dtype=np.float64))


def init_world_model(config: ModelConfig, data: TransitionSet | None, seed: int) -> WorldModel:
    """Fresh model whose input and output normalisation come from ``data``."""
    if data is None or len(data) == 0:
        return WorldModel.init(config, seed)
    shift, scale = input_statistics(data)
    out_shift, out_scale = target_statistics(data, config.residual)
    return WorldModel.init(config, seed, shift, scale, out_shift, out_scale)


# -- training -------------------------------------------------------------


@dataclass
class TrainHistory:
    latent_loss: list[float] = field(default_factory=list)
    wrist_loss: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    clipped_norm: list[float] = field(default_factory=list)


@dataclass
class TrainResult:
    model: WorldModel
    ema: WorldModel
    history: TrainHistory


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


class AdamW:
    """Adam with decoupled weight decay and bias correction."""

    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * g * g
            update = (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + c.eps)
            if c.weight_decay:
                update = update + c.weight_decay * p
            p -= c.learning_rate * update


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    while True:
        perm = rng.permutation(n)
        for i in range(0, n, batch_size):
            yield perm[i : i + batch_size]


def train(
    data: TransitionSet,
    cfg: TrainConfig,
    model: WorldModel | None = None,
    model_config: ModelConfig | None = None,
    log_fn: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Teacher-forced AdamW training with global-norm clipping and EMA.

    ``model`` is trained in place when given; otherwise a fresh model is
    initialised from ``model_config`` with input statistics of ``data``.
    """
    if len(data) == 0:
        raise ValueError("training set is empty")
    if model is None:
        model = init_world_model(model_config or ModelConfig(), data, cfg.seed)
    ema = model.copy()
    opt = AdamW(model.params, cfg)
    rng = np.random.default_rng(cfg.seed)
    batches = _batches(len(data), cfg.batch_size, rng)
    hist = TrainHistory()
    for step in range(cfg.iterations):
        idx = next(batches)
        _, lat, wr, grads = model.loss_and_grads(
            data.context[idx], data.actions[idx], data.targets[idx], data.heatmaps[idx], data.masks[idx], cfg.wrist_weight
        )
        norm = global_norm(grads)
        if norm > cfg.grad_clip:
            s = cfg.grad_clip / norm
            grads = {k: g * s for k, g in grads.items()}
            clipped = global_norm(grads)
        else:
            clipped = norm
        opt.step(model.params, grads)
        d = cfg.ema_decay
        for k, p in model.params.items():
            ema.params[k] *= d
            ema.params[k] += (1.0 - d) * p
        hist.latent_loss.append(lat)
        hist.wrist_loss.append(wr)
        hist.grad_norm.append(norm)
        hist.clipped_norm.append(clipped)
        if log_fn is not None:
            log_fn({"step": step, "latent_loss": lat, "wrist_loss": wr, "grad_norm": norm})
    return TrainResult(model, ema, hist)


def evaluate_one_step(model: WorldModel, data: TransitionSet, wrist_weight: float = 0.0) -> float:
    """Mean one-step latent loss (per-dimension MSE) over ``data``."""
    total, lat, _, _ = model.loss_and_grads(
        data.context, data.actions, data.targets, data.heatmaps, data.masks, wrist_weight, need_grads=False
    )
    return lat if wrist_weight == 0.0 else total


# -- gradient check -------------------------------------------------------


def gradient_check(
    model: WorldModel,
    sample: TransitionSet,
    eps: float = 1e-5,
    wrist_weight: float = 1.0,
    grad_fn: Callable[..., dict[str, np.ndarray]] | None = None,
    floor: float = 1e-6,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per entry is ``|a - n| / max(|a|, |n|, floor)``; the floor
    keeps entries whose true gradient is ~0 from dominating via round-off.
    ``grad_fn`` overrides the analytic gradient (used for mutation tests).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    args = (sample.context, sample.actions, sample.targets, sample.heatmaps, sample.masks, wrist_weight)
    if grad_fn is None:
        analytic = model.loss_and_grads(*args)[3]
    else:
        analytic = grad_fn(model, *args)

    def f() -> float:
        return model.loss_and_grads(*args, need_grads=False)[0]

    worst = 0.0
    for name, p in model.params.items():
        flat = p.reshape(-1)
        a = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f()
            flat[i] = orig - eps
            fm = f()
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            err = abs(a[i] - num) / max(abs(a[i]), abs(num), floor)
            worst = max(worst, err)
    return worst


# -- checkpoints ----------------------------------------------------------


def _write_array(buf: io.BytesIO, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<B", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def save_checkpoint(path: str | Path, model: WorldModel, ema: WorldModel | None = None, echo: dict | None = None) -> None:
    """Layout (little-endian): magic[8] | u32 version | u32 n + JSON echo |
    u32 count | per array (u16 name_len, name, u8 ndim, u32 dims, f64 data) |
    sha256 of everything before."""
    header = {"model_config": asdict(model.config), **(echo or {})}
    text = json.dumps(header, sort_keys=True).encode("utf-8")
    arrays: list[tuple[str, np.ndarray]] = [
        ("norm.shift", model.shift),
        ("norm.scale", model.scale),
        ("norm.out_shift", model.out_shift),
        ("norm.out_scale", model.out_scale),
    ]
    arrays += [(f"model/{k}", v) for k, v in model.params.items()]
    if ema is not None:
        arrays += [(f"ema/{k}", v) for k, v in ema.params.items()]
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(text)))
    buf.write(text)
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays:
        _write_array(buf, name, np.asarray(arr, dtype=np.float64))
    body = buf.getvalue()
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def load_checkpoint(path: str | Path) -> tuple[WorldModel, WorldModel | None, dict]:
    try:
        return _load_checkpoint(path)
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError, TypeError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc


def _load_checkpoint(path: str | Path) -> tuple[WorldModel, WorldModel | None, dict]:
    data = Path(path).read_bytes()
    if len(data) < 48 or data[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a world-model checkpoint")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch")
    version, n = struct.unpack_from("<II", body, 8)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 16
    echo = json.loads(body[pos : pos + n].decode("utf-8"))
    pos += n
    (count,) = struct.unpack_from("<I", body, pos)
    pos += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", body, pos)
        pos += 2
        name = body[pos : pos + ln].decode("utf-8")
        pos += ln
        (ndim,) = struct.unpack_from("<B", body, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", body, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(body, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    mc = dict(echo["model_config"])
    mc["hidden"] = tuple(mc["hidden"])
    config = ModelConfig(**mc)
    try:
        norm = [arrays[f"norm.{k}"] for k in ("shift", "scale", "out_shift", "out_scale")]
        model = WorldModel(config, {k[6:]: v for k, v in arrays.items() if k.startswith("model/")}, *norm)
        ema_params = {k[4:]: v for k, v in arrays.items() if k.startswith("ema/")}
        ema = WorldModel(config, ema_params, *[a.copy() for a in norm]) if ema_params else None
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    return model, ema, echo
