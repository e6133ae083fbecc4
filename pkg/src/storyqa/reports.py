"""Report writers: JSON/CSV/Markdown tables plus rendered figures.

Every CLI report path writes the delimited data and, next to it, a PNG
rendering of the same numbers (loss curves, per-difficulty accuracy bars,
ablation comparison, dataset statistics).
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from pathlib import Path
from typing import Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .schema import ClipBundle, QAItem
from .synth import episode_key
from .training import DIFFICULTIES, EvalReport


def write_json(payload: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False, indent=1, sort_keys=True)
        fh.write("\n")


def write_eval_report(report: EvalReport, json_path, csv_path=None,
                      figure_path=None) -> None:
    write_json(report.to_json_dict(), json_path)
    if csv_path is not None:
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["difficulty", "count", "accuracy"])
            for d in DIFFICULTIES:
                acc = report.accuracy_by_difficulty.get(d)
                writer.writerow([d, report.counts.get(d, 0),
                                 "" if acc is None else f"{acc:.4f}"])
            writer.writerow(["overall", report.n_items, f"{report.overall:.4f}"])
            writer.writerow(["diff_avg", "", f"{report.diff_avg:.4f}"])
    if figure_path is not None:
        plot_eval_report(report, figure_path)


def plot_eval_report(report: EvalReport, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    labels, values = [], []
    for d in DIFFICULTIES:
        acc = report.accuracy_by_difficulty.get(d)
        if acc is not None:
            labels.append(f"Diff. {d}")
            values.append(acc)
    labels += ["Overall", "Diff. Avg"]
    values += [report.overall, report.diff_avg]
    colors = ["#4878d0"] * (len(values) - 2) + ["#ee854a", "#6acc64"]
    ax.bar(labels, values, color=colors)
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 100)
    for i, v in enumerate(values):
        ax.text(i, v + 1, f"{v:.1f}", ha="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_loss_curve(history: Sequence[dict], csv_path, figure_path=None) -> None:
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "train_acc", "val_acc"])
        for row in history:
            writer.writerow([row["epoch"], f"{row['train_loss']:.6f}",
                             f"{row['train_acc']:.6f}", f"{row['val_acc']:.6f}"])
    if figure_path is not None:
        plot_loss_curve(history, figure_path)


def plot_loss_curve(history: Sequence[dict], path) -> None:
    epochs = [row["epoch"] for row in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(epochs, [row["train_loss"] for row in history], marker="o", ms=3)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss")
    ax2.plot(epochs, [row["train_acc"] for row in history], marker="o", ms=3,
             label="train")
    vals = [row["val_acc"] for row in history]
    if any(v == v for v in vals):  # at least one non-NaN
        ax2.plot(epochs, vals, marker="s", ms=3, label="val")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("accuracy")
    ax2.set_ylim(0, 1.02)
    ax2.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_ablation_table(reports: Mapping[str, EvalReport], md_path,
                         json_path=None, figure_path=None) -> None:
    """Markdown table with one row per variant, columns per difficulty."""
    lines = [
        "| Model | Diff. 1 | Diff. 2 | Diff. 3 | Diff. 4 | Overall | Diff. Avg. |",
        "|---|---|---|---|---|---|---|",
    ]
    for name, report in reports.items():
        cells = []
        for d in DIFFICULTIES:
            acc = report.accuracy_by_difficulty.get(d)
            cells.append("-" if acc is None else f"{acc:.2f}")
        lines.append(
            f"| {name} | " + " | ".join(cells)
            + f" | {report.overall:.2f} | {report.diff_avg:.2f} |"
        )
    Path(md_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if json_path is not None:
        write_json({name: r.to_json_dict() for name, r in reports.items()}, json_path)
    if figure_path is not None:
        plot_ablation(reports, figure_path)


def plot_ablation(reports: Mapping[str, EvalReport], path) -> None:
    names = list(reports)
    fig, ax = plt.subplots(figsize=(1.6 * max(4, len(names)), 4))
    width = 0.15
    xs = range(len(names))
    for k, d in enumerate(DIFFICULTIES):
        vals = [reports[n].accuracy_by_difficulty.get(d) or 0.0 for n in names]
        ax.bar([x + (k - 2) * width for x in xs], vals, width, label=f"Diff. {d}")
    ax.bar([x + 2 * width for x in xs], [reports[n].overall for n in names],
           width, label="Overall", color="#333333")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("accuracy (%)")
    ax.legend(fontsize=8, ncol=3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


# ---------------------------------------------------------------------------
# Dataset statistics


def dataset_statistics(episodes: Sequence[ClipBundle], qas: Sequence[QAItem]) -> dict:
    difficulty = Counter(qa.difficulty for qa in qas)
    per_episode_clips: Counter = Counter()
    per_episode_qas: Counter = Counter()
    characters: Counter = Counter()
    behaviors: Counter = Counter()
    emotions: Counter = Counter()
    clip_to_episode = {}
    scene_keys = {
        episode_key(c.clip_id) for c in episodes if c.granularity.value == "scene"
    }
    for clip in episodes:
        key = episode_key(clip.clip_id)
        clip_to_episode[clip.clip_id] = key
        per_episode_clips[key] += 1
        # count boxes once per source video: scene clips subsume their shots
        if clip.granularity.value == "scene" or key not in scene_keys:
            for shot in clip.shots:
                for frame in shot:
                    for box in frame.boxes:
                        characters[box.character] += 1
                        behaviors[box.behavior] += 1
                        emotions[box.emotion] += 1
    for qa in qas:
        per_episode_qas[clip_to_episode.get(qa.clip_id, "?")] += 1
    return {
        "n_clips": len(episodes),
        "n_qas": len(qas),
        "difficulty": dict(sorted(difficulty.items())),
        "episode_clips": dict(sorted(per_episode_clips.items())),
        "episode_qas": dict(sorted(per_episode_qas.items())),
        "characters": dict(characters.most_common()),
        "behaviors": dict(behaviors.most_common()),
        "emotions": dict(emotions.most_common()),
    }


def _write_counts_csv(path, header: tuple[str, str], counts: Mapping) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(header))
        for key, value in counts.items():
            writer.writerow([key, value])


def write_statistics(stats: dict, out_dir, figures: bool = True) -> list[str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    _write_counts_csv(out / "stats_difficulty.csv", ("difficulty", "qas"),
                      stats["difficulty"])
    written.append("stats_difficulty.csv")
    with open(out / "stats_episodes.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "clips", "qas"])
        for key in stats["episode_clips"]:
            writer.writerow([key, stats["episode_clips"][key],
                             stats["episode_qas"].get(key, 0)])
    written.append("stats_episodes.csv")
    for name in ("characters", "behaviors", "emotions"):
        _write_counts_csv(out / f"stats_{name}.csv", (name[:-1], "boxes"), stats[name])
        written.append(f"stats_{name}.csv")
    if figures:
        for name in ("characters", "behaviors", "emotions", "difficulty"):
            data = stats[name] if name != "difficulty" else {
                f"Diff. {k}": v for k, v in stats["difficulty"].items()
            }
            fig, ax = plt.subplots(figsize=(max(4, 0.42 * len(data)), 3.6))
            ax.bar(list(map(str, data.keys())), list(data.values()), color="#4878d0")
            ax.set_ylabel("count")
            ax.set_title(name)
            plt.setp(ax.get_xticklabels(), rotation=60, ha="right", fontsize=7)
            fig.tight_layout()
            fig.savefig(out / f"stats_{name}.png", dpi=150)
            plt.close(fig)
            written.append(f"stats_{name}.png")
    return written
