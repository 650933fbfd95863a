"""Command-line entry point: ``egowm <command> [options]``.

Exit codes: 0 success, 1 usage or config error, 2 data error. Failures
print one JSON line to stderr: ``{"error", "type", "message", "exit_code"}``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import contextmanager
from pathlib import Path

from filelock import FileLock, Timeout

from . import __version__, build_stamp
from . import pipeline as pl
from .config import ConfigError, RunConfig, apply_overrides, describe_defaults, load_config, merge
from .datapipe.dataset import DatasetError, read_dataset, write_dataset, write_keypoints
from .datapipe.fixtures import read_clip_dir
from .datapipe.quality import QualityConfig, QualityError, QualityThresholds, compute_quality_stats, failed_checks
from .datapipe.scenes import SceneCutConfig, detect_scene_cuts
from .datapipe.validator import BoundedClient, ClipRejected, HttpValidatorClient, RetryPolicy, sample_frames, vlm_validate
from .kinematics import KinematicsError
from .metrics import eval_rollout, evaluate_planning
from .plotting import planning_summary, rollout_curves, training_curves, write_csv
from .worldmodel import CheckpointError, init_world_model, load_checkpoint, save_checkpoint, train

log = logging.getLogger("egowm")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with status 2
        raise UsageError(f"{self.prog}: {message}")


# -- shared helpers ---------------------------------------------------------


def _dump_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _echo(cfg: RunConfig, command: str) -> dict:
    return {"command": command, "config": cfg.to_dict(), "build": build_stamp()}


@contextmanager
def _locked(out: Path):
    out.parent.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(out) + ".lock", timeout=0)
    try:
        lock.acquire()
    except Timeout as exc:
        raise DataError(f"{out} is locked by another process") from exc
    try:
        yield
    finally:
        lock.release()
        Path(lock.lock_file).unlink(missing_ok=True)


def _require(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise DataError(f"{what} not found: {path}")
    return p


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    cfg = apply_overrides(cfg, args.set or [])
    if args.seed is not None:
        cfg = merge(cfg, {"run": {"seed": args.seed}})
    return cfg


def _flag_overrides(cfg: RunConfig, pairs: dict) -> RunConfig:
    """Apply ``{"section.key": value}`` for flags that were given."""
    data: dict = {}
    for name, value in pairs.items():
        if value is None:
            continue
        section, key = name.split(".")
        data.setdefault(section, {})[key] = value
    return merge(cfg, data) if data else cfg


def _load_model(path: str, use_raw: bool):
    model, ema, echo = load_checkpoint(_require(path, "checkpoint"))
    return (model if use_raw or ema is None else ema), echo


# -- commands ---------------------------------------------------------------


def cmd_gen_data(args, cfg: RunConfig) -> int:
    cfg = _flag_overrides(cfg, {"data.episodes": args.episodes, "data.episode_length": args.length})
    out = Path(args.out)
    with _locked(out):
        records = pl.generate_records(cfg, cfg.data.episodes, cfg.data.episode_length, cfg.run.seed)
        write_dataset(records, out, _echo(cfg, "gen-data"))
        if args.keypoints_dir:
            kd = Path(args.keypoints_dir)
            kd.mkdir(parents=True, exist_ok=True)
            for r in records:
                write_keypoints(r.keypoints, kd / f"{r.record_id}.jsonl")
    frames = sum(r.frame_count for r in records)
    print(f"wrote {len(records)} episodes ({frames} frames) to {out}")
    return EXIT_OK


def _clip_dirs(root: Path) -> list[Path]:
    if any(root.glob("*.png")):
        return [root]
    dirs = sorted(d for d in root.iterdir() if d.is_dir() and any(d.glob("*.png")))
    if not dirs:
        raise DataError(f"no clip directories with PNG frames under {root}")
    return dirs


def cmd_filter(args, cfg: RunConfig) -> int:
    if args.thresholds:
        cfg = load_config_overlay(cfg, args.thresholds)
    cfg = _flag_overrides(cfg, {"filter.min_duration": args.min_duration, "filter.validator_url": args.validator_url})
    f = cfg.filter
    qcfg = QualityConfig(f.black_max, f.white_min, f.crop)
    thr = QualityThresholds(f.black_fraction, f.white_fraction, f.blur, f.motion)
    scfg = SceneCutConfig(f.histogram_bins, f.cut_window, f.cut_k, f.cut_min_threshold, f.min_duration)
    client = BoundedClient(HttpValidatorClient(f.validator_url), f.validator_max_in_flight) if f.validator_url else None
    retry = RetryPolicy(f.validator_attempts, f.validator_initial_delay, f.validator_backoff)
    root = _require(args.input, "input directory")
    out = Path(args.out)
    header = (
        "clip", "start", "end", "black_fraction_mean", "white_fraction_mean",
        "blur_median", "motion_median", "passes", "reasons",
    )
    rows = []
    with _locked(out):
        for d in _clip_dirs(root):
            frames = read_clip_dir(d)
            segments = detect_scene_cuts(frames, scfg) if len(frames) >= 2 else []
            if not segments:
                rows.append((d.name, 0, len(frames), "", "", "", "", "false", "no_segment"))
                continue
            for seg in segments:
                clip = frames[seg.start : seg.end]
                if len(clip) < 2:
                    rows.append((d.name, seg.start, seg.end, "", "", "", "", "false", "too_short"))
                    continue
                stats = compute_quality_stats(clip, qcfg)
                reasons = failed_checks(stats, thr)
                if not reasons and client is not None:
                    try:
                        if not vlm_validate(client, sample_frames(clip), retry).passes:
                            reasons.append("validator")
                    except ClipRejected as exc:
                        reasons.append(f"validator_{exc.reason}")
                rows.append(
                    (
                        d.name, seg.start, seg.end, stats.black_fraction_mean, stats.white_fraction_mean,
                        stats.blur_median, stats.motion_median, "false" if reasons else "true", ";".join(reasons),
                    )
                )
        write_csv(out, header, rows)
        _dump_json(out.with_name(out.name + ".meta.json"), _echo(cfg, "filter"))
    kept = sum(r[7] == "true" for r in rows)
    print(f"{kept} of {len(rows)} segments pass; manifest written to {out}")
    return EXIT_OK


def load_config_overlay(cfg: RunConfig, path: str) -> RunConfig:
    overlay = load_config(_require(path, "thresholds file"))
    return merge(cfg, {"filter": overlay.to_dict()["filter"]})


def cmd_train(args, cfg: RunConfig) -> int:
    cfg = _flag_overrides(cfg, {"train.iterations": args.iterations, "train.wrist_weight": args.wrist_weight})
    records, meta = read_dataset(_require(args.data, "dataset"))
    if not records:
        raise DataError("dataset has no records")
    data = pl.transitions_from_records(records, cfg)
    if len(data) == 0:
        raise DataError("episodes are too short for the configured context length")
    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_name(out.name + ".log.jsonl")
    with _locked(out):
        model = init_world_model(pl.model_config_from(cfg), data, cfg.run.seed)
        with log_path.open("w", encoding="utf-8") as fh:

            def write_log(rec: dict) -> None:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

            result = train(data, pl.train_config_from(cfg), model=model, log_fn=write_log)
        echo = _echo(cfg, "train")
        echo["data"] = {"path": str(args.data), "records": len(records), "transitions": len(data), "build": meta.get("build")}
        save_checkpoint(out, result.model, result.ema, echo)
    h = result.history
    print(f"trained {cfg.train.iterations} steps on {len(data)} transitions; final latent loss {h.latent_loss[-1]:.6g}")
    return EXIT_OK


def cmd_eval_rollout(args, cfg: RunConfig) -> int:
    cfg = _flag_overrides(cfg, {"eval.horizon": args.horizon})
    model, _ = _load_model(args.model, args.raw)
    if args.data:
        records, _ = read_dataset(_require(args.data, "dataset"))
    else:
        records = pl.heldout_records(cfg)
    seqs = pl.sequences_from_records(records, cfg)
    out = Path(args.out)
    with _locked(out):
        report = eval_rollout(model, seqs, cfg.eval.horizon, pl.heatmap_from(cfg))
        data = str(args.data) if args.data else f"generated: {cfg.eval.episodes} held-out episodes"
        _dump_json(out, {"report": report.to_dict(), **_echo(cfg, "eval-rollout"), "model": str(args.model), "data": data})
        if args.csv:
            rows = [(i + 1, a, b) for i, (a, b) in enumerate(zip(report.per_step_l2, report.per_step_pck))]
            write_csv(args.csv, ("step", "latent_l2", "pck20"), rows)
    print(
        f"{report.episodes} episodes ({report.skipped} skipped): avg L2 {report.avg_error:.4f}, "
        f"final L2 {report.final_error:.4f}, avg PCK@20 {report.avg_pck:.3f}"
    )
    return EXIT_OK


def cmd_plan(args, cfg: RunConfig) -> int:
    cfg = _flag_overrides(
        cfg,
        {
            "planner.runs": args.runs,
            "planner.episodes": args.episodes,
            "planner.num_candidates": args.candidates,
            "planner.horizon": args.horizon,
            "planner.cost_mode": args.cost_mode,
        },
    )
    if args.replan_every is not None and args.replan_every < 1:
        raise UsageError("--replan-every must be >= 1")
    model, _ = _load_model(args.model, args.raw)
    p = cfg.planner
    out = Path(args.out)
    with _locked(out):
        sim = pl.simulator_from(cfg)
        episodes = pl.planning_episodes(cfg, p.episodes, cfg.run.seed, sim)
        report = evaluate_planning(
            model, episodes, sim, pl.prior_from(cfg, sim), pl.run_seeds(cfg.run.seed, p.runs),
            p.num_candidates, p.horizon, p.cost_mode, pl.encoder_from(cfg), args.replan_every,
        )
        _dump_json(out, {**report.to_dict(), **_echo(cfg, "plan"), "model": str(args.model)})
    keys = list(report.runs[0])
    print("run  " + "  ".join(f"{k:>20}" for k in keys))
    for i, r in enumerate(report.runs):
        print(f"{i:<4} " + "  ".join(f"{r[k]:>20.5f}" for k in keys))
    s = report.summary
    print("mean " + "  ".join(f"{s[k]['mean']:>20.5f}" for k in keys))
    print("std  " + "  ".join(f"{s[k]['std']:>20.5f}" for k in keys))
    return EXIT_OK


def cmd_report(args, cfg: RunConfig) -> int:
    if not (args.train_log or args.rollout or args.plan):
        raise UsageError("report needs at least one of --train-log, --rollout, --plan")
    out_dir = Path(args.out_dir)
    written: list[Path] = []
    with _locked(out_dir / "report.json"):
        if args.train_log:
            lines = _require(args.train_log, "training log").read_text(encoding="utf-8").splitlines()
            try:
                recs = [json.loads(line) for line in lines if line.strip()]
            except json.JSONDecodeError as exc:
                raise DataError(f"bad training log: {exc}") from exc
            if not recs:
                raise DataError("training log is empty")
            written += training_curves(recs, out_dir)
        if args.rollout:
            rep = json.loads(_require(args.rollout, "rollout report").read_text(encoding="utf-8"))
            written += rollout_curves(rep["report"], out_dir)
        if args.plan:
            rep = json.loads(_require(args.plan, "planning report").read_text(encoding="utf-8"))
            written += planning_summary(rep, out_dir)
        _dump_json(out_dir / "report.json", {"files": sorted(p.name for p in written), **_echo(cfg, "report")})
    for p in written:
        print(p)
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    epilog = "configuration keys and defaults (set in a TOML file or with --set section.key=value):\n" + describe_defaults()
    fmt = argparse.RawDescriptionHelpFormatter
    parser = _Parser(prog="egowm", description=__doc__.splitlines()[0], epilog=epilog, formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"egowm {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config key (repeatable)")
    common.add_argument("--seed", type=int, help="run seed (overrides run.seed)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name: str, helptext: str):
        return sub.add_parser(name, parents=[common], help=helptext, description=helptext, epilog=epilog, formatter_class=fmt)

    p = add("gen-data", "generate synthetic episodes into a dataset file")
    p.add_argument("--out", required=True)
    p.add_argument("--episodes", type=int)
    p.add_argument("--length", type=int, help="actions per episode")
    p.add_argument("--keypoints-dir", help="also write per-episode keypoint JSONL sidecars here")
    p.set_defaults(func=cmd_gen_data)

    p = add("filter", "segment clips and apply the quality filter, writing a CSV manifest")
    p.add_argument("--in", dest="input", required=True, help="clip directory, or a directory of clip directories")
    p.add_argument("--out", required=True)
    p.add_argument("--min-duration", type=int)
    p.add_argument("--thresholds", help="TOML file whose [filter] table overrides the thresholds")
    p.add_argument("--validator-url", help="endpoint of the visual validator (skipped when empty)")
    p.set_defaults(func=cmd_filter)

    p = add("train", "train the world model on a dataset file")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="JSONL training log (default: <out>.log.jsonl)")
    p.add_argument("--iterations", type=int)
    p.add_argument("--wrist-weight", type=float)
    p.set_defaults(func=cmd_train)

    p = add("eval-rollout", "open-loop rollout evaluation on a dataset file")
    p.add_argument("--model", required=True)
    p.add_argument("--data", help="dataset file (default: generate eval.episodes held-out episodes)")
    p.add_argument("--out", required=True)
    p.add_argument("--horizon", type=int)
    p.add_argument("--csv", help="also write per-step errors as CSV")
    p.add_argument("--raw", action="store_true", help="use raw instead of EMA weights")
    p.set_defaults(func=cmd_eval_rollout)

    p = add("plan", "MPC planning benchmark against uniform-random candidate choice")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--runs", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--candidates", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--cost-mode", choices=("final", "min_over_horizon"))
    p.add_argument("--replan-every", type=int, metavar="K", help="also run closed-loop control, replanning every K steps")
    p.add_argument("--raw", action="store_true", help="use raw instead of EMA weights")
    p.set_defaults(func=cmd_plan)

    p = add("report", "export CSV tables and PNG figures from earlier outputs")
    p.add_argument("--train-log")
    p.add_argument("--rollout", help="eval-rollout JSON")
    p.add_argument("--plan", help="plan JSON")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def _fail(kind: str, exc: BaseException, code: int) -> int:
    rec = {"error": kind, "type": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        cfg = _resolve_config(args)
        return args.func(args, cfg)
    except (UsageError, ConfigError) as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except (DataError, DatasetError, CheckpointError, QualityError, KinematicsError, OSError) as exc:
        return _fail("data", exc, EXIT_DATA)
    except ValueError as exc:
        return _fail("data", exc, EXIT_DATA)


if __name__ == "__main__":
    sys.exit(main())
