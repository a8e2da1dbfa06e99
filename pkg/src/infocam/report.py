"""Structured experiment records, consolidated tables, and figures.

Records are stored as JSON lines, one per command invocation; every metric
key is prefixed with the split it was computed on ("test/mi_softmax").
The report command groups records by experiment name, verifies that merged
rows share a config digest, renders a text table plus a TSV file, and
draws summary figures next to the delimited output.
"""

import json
from dataclasses import asdict, dataclass, field

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


@dataclass
class ReportRecord:
    name: str
    task: str
    config_digest: str
    seed: int
    metrics: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    artifacts: list = field(default_factory=list)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


def write_records(path, records, mode="a"):
    with open(path, mode) as f:
        for record in records:
            f.write(record.to_json() + "\n")


def read_records(path):
    records = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            records.append(ReportRecord(**json.loads(line)))
    return records


def group_records(records):
    """Group by experiment name; a merged row must share a config digest."""
    groups = {}
    for record in records:
        groups.setdefault(record.name, []).append(record)
    for name, group in groups.items():
        digests = {r.config_digest for r in group}
        if len(digests) > 1:
            raise ValueError(
                f"records named {name!r} carry conflicting config digests "
                f"{sorted(digests)}; refusing to merge")
    return dict(sorted(groups.items()))


def summarize_group(group):
    """Per-metric mean and (for multi-seed groups) standard deviation."""
    keys = sorted({k for r in group for k in r.metrics})
    summary = {}
    for key in keys:
        values = [r.metrics[key] for r in group if key in r.metrics]
        summary[key] = (float(np.mean(values)),
                        float(np.std(values, ddof=1)) if len(values) > 1
                        else None)
    return summary


def render_table(records):
    lines = []
    for name, group in group_records(records).items():
        seeds = sorted(r.seed for r in group)
        lines.append(f"{name}  [task={group[0].task}, "
                     f"digest={group[0].config_digest}, seeds={seeds}]")
        for key, (mean, std) in summarize_group(group).items():
            if std is None:
                lines.append(f"  {key:<40s} {mean:.6g}")
            else:
                lines.append(f"  {key:<40s} {mean:.6g} +- {std:.3g}")
    return "\n".join(lines)


def write_tsv(records, path):
    groups = group_records(records)
    keys = sorted({k for g in groups.values() for r in g for k in r.metrics})
    with open(path, "w") as f:
        f.write("\t".join(["name", "task", "digest", "n_seeds"]
                          + [f"{k}\t{k}_std" for k in keys]) + "\n")
        for name, group in groups.items():
            summary = summarize_group(group)
            row = [name, group[0].task, group[0].config_digest,
                   str(len(group))]
            for key in keys:
                if key in summary:
                    mean, std = summary[key]
                    row.append(f"{mean!r}")
                    row.append("" if std is None else f"{std!r}")
                else:
                    row.extend(["", ""])
            f.write("\t".join(row) + "\n")


# ---------------------------------------------------------------------------
# Figures: one PNG per task family found in the records.
# ---------------------------------------------------------------------------

def _bar_groups(ax, groups, metric_keys, labels):
    names = list(groups)
    x = np.arange(len(names))
    width = 0.8 / len(metric_keys)
    for j, (key, label) in enumerate(zip(metric_keys, labels)):
        means, stds = [], []
        for group in groups.values():
            summary = summarize_group(group)
            mean, std = summary.get(key, (np.nan, None))
            means.append(mean)
            stds.append(0.0 if std is None else std)
        ax.bar(x + j * width, means, width, yerr=stds, label=label,
               capsize=2)
    ax.set_xticks(x + 0.4 - width / 2)
    ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    ax.legend(fontsize=8)


def render_figures(records, out_dir):
    """Render MI and localization summary figures; returns written paths."""
    groups = group_records(records)
    written = []

    mi_groups = {n: g for n, g in groups.items()
                 if any("mi_" in k for r in g for k in r.metrics)}
    if mi_groups:
        fig, ax = plt.subplots(figsize=(7, 3.5))
        keys = ["test/mi_mc", "test/mi_softmax", "test/mi_pc_softmax"]
        present = [k for k in keys
                   if any(k in r.metrics for g in mi_groups.values()
                          for r in g)]
        _bar_groups(ax, mi_groups, present,
                    [k.split("mi_")[1] for k in present])
        ax.set_ylabel("mutual information (nats)")
        ax.set_title("MC oracle vs classifier-based MI estimates")
        fig.tight_layout()
        path = f"{out_dir}/mi_estimates.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)

    loc_groups = {n: g for n, g in groups.items()
                  if any(k.endswith("gt_loc") for r in g for k in r.metrics)}
    if loc_groups:
        fig, ax = plt.subplots(figsize=(7, 3.5))
        keys = sorted({k for g in loc_groups.values() for r in g
                       for k in r.metrics if k.endswith("gt_loc")})
        _bar_groups(ax, loc_groups, keys,
                    [k.split("/")[-1].replace("_gt_loc", "") for k in keys])
        ax.set_ylabel("localization accuracy (IoU > 0.5)")
        ax.set_ylim(0, 1.05)
        ax.set_title("CAM vs infoCAM localization")
        fig.tight_layout()
        path = f"{out_dir}/localization_accuracy.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)

    acc_groups = {n: g for n, g in groups.items()
                  if any(k.endswith("accuracy") for r in g
                         for k in r.metrics)}
    if acc_groups:
        fig, ax = plt.subplots(figsize=(7, 3.5))
        keys = sorted({k for g in acc_groups.values() for r in g
                       for k in r.metrics if k.endswith("accuracy")})
        _bar_groups(ax, acc_groups, keys, [k.split("/")[-1] for k in keys])
        ax.set_ylabel("accuracy")
        ax.set_ylim(0, 1.05)
        ax.set_title("Classification accuracy")
        fig.tight_layout()
        path = f"{out_dir}/classification_accuracy.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)

    return written


def render_overlay(image, grid, pred_box, gt_box, path, title=""):
    """One localization example: image, heatmap, and both boxes."""
    fig, axes = plt.subplots(1, 2, figsize=(7, 2.6))
    axes[0].imshow(image, cmap="gray", interpolation="nearest")
    axes[0].set_title("input", fontsize=8)
    axes[1].imshow(image, cmap="gray", interpolation="nearest")
    h, w = image.shape
    hm = axes[1].imshow(grid, cmap="jet", alpha=0.45,
                        interpolation="bilinear",
                        extent=(-0.5, w - 0.5, h - 0.5, -0.5))
    fig.colorbar(hm, ax=axes[1], fraction=0.03)
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
    for box, color in ((gt_box, "red"), (pred_box, "lime")):
        axes[1].add_patch(plt.Rectangle(
            (box.x_min - 0.5, box.y_min - 0.5),
            box.x_max - box.x_min + 1, box.y_max - box.y_min + 1,
            fill=False, edgecolor=color, linewidth=1.2))
    if title:
        axes[1].set_title(title, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
