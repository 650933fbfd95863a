"""CSV exports and matplotlib figures for training logs, rollout reports
and planning reports. Figures use the Agg backend and carry no timestamp
metadata, so identical inputs give identical files."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

PNG_METADATA = {"Software": None}


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in row])
    return path


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=PNG_METADATA)
    plt.close(fig)
    return path


def training_curves(log: list[dict], out_dir: Path) -> list[Path]:
    rows = [(r["step"], r["latent_loss"], r["wrist_loss"], r["grad_norm"]) for r in log]
    csv_path = write_csv(out_dir / "train_loss.csv", ("step", "latent_loss", "wrist_loss", "grad_norm"), rows)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    steps = [r[0] for r in rows]
    ax.semilogy(steps, [max(r[1], 1e-12) for r in rows], label="latent")
    ax.semilogy(steps, [max(r[2], 1e-12) for r in rows], label="wrist")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    return [csv_path, _save(fig, out_dir / "train_loss.png")]


def rollout_curves(report: dict, out_dir: Path) -> list[Path]:
    l2, pck = report["per_step_l2"], report["per_step_pck"]
    rows = [(i + 1, a, b) for i, (a, b) in enumerate(zip(l2, pck))]
    csv_path = write_csv(out_dir / "rollout.csv", ("step", "latent_l2", "pck20"), rows)
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3.2))
    a1.plot([r[0] for r in rows], l2, marker="o")
    a1.set_xlabel("rollout step")
    a1.set_ylabel("latent L2")
    a2.plot([r[0] for r in rows], pck, marker="o", color="tab:red")
    a2.set_xlabel("rollout step")
    a2.set_ylabel("wrist PCK@20")
    a2.set_ylim(0, 1)
    return [csv_path, _save(fig, out_dir / "rollout.png")]


PLAN_METRICS = ("goal_distance", "mpjpe", "wrist_mpjpe")


def planning_summary(report: dict, out_dir: Path) -> list[Path]:
    runs = report["runs"]
    keys = list(runs[0])
    runs_csv = write_csv(out_dir / "planning_runs.csv", ("run", *keys), [(i, *(r[k] for k in keys)) for i, r in enumerate(runs)])
    summary = report["summary"]
    sum_csv = write_csv(
        out_dir / "planning_summary.csv",
        ("metric", "mean", "std", "runs"),
        [(k, v["mean"], v["std"], v["runs"]) for k, v in summary.items()],
    )
    fig, ax = plt.subplots(figsize=(6, 3.5))
    x = range(len(PLAN_METRICS))
    w = 0.38
    for off, prefix, label in ((-w / 2, "", "MPC"), (w / 2, "random_", "random choice")):
        means = [summary[prefix + m]["mean"] for m in PLAN_METRICS]
        stds = [summary[prefix + m]["std"] for m in PLAN_METRICS]
        ax.bar([i + off for i in x], means, w, yerr=stds, label=label, capsize=3)
    ax.set_xticks(list(x))
    ax.set_xticklabels(PLAN_METRICS)
    ax.legend()
    return [runs_csv, sum_csv, _save(fig, out_dir / "planning.png")]
