"""Figure rendering for the report paths.

Every report command writes its delimited output first; these helpers render
companion PNGs next to it. All plotting uses the Agg backend so the CLI works
headless.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .evalkit import MetricReport  # noqa: E402


def render_training_curves(metrics_jsonl, out_path) -> Path:
    rows = [json.loads(line) for line in Path(metrics_jsonl).read_text().splitlines()
            if line.strip()]
    if not rows:
        raise ValueError(f"no metric rows in {metrics_jsonl}")
    iters = [r["iteration"] for r in rows]

    panels = [("mean_reward", "mean reward / transition"),
              ("loss", "total loss"),
              ("kl", "policy KL per update"),
              ("lr", "learning rate")]
    extra = [key for key in ("csr", "throughput") if any(key in r for r in rows)]
    fig, axes = plt.subplots(2, 2 + (1 if extra else 0), figsize=(12 + 4 * bool(extra), 7))
    axes = axes.ravel()
    for ax, (key, label) in zip(axes, panels):
        ax.plot(iters, [r.get(key) for r in rows], lw=1.2)
        ax.set_xlabel("iteration")
        ax.set_title(label)
        ax.grid(alpha=0.3)
    for offset, key in enumerate(extra):
        ax = axes[len(panels) + offset]
        pts = [(r["iteration"], r[key]) for r in rows if key in r]
        ax.plot(*zip(*pts), "o-", ms=3, lw=1.0)
        ax.set_xlabel("iteration")
        ax.set_title(key)
        ax.grid(alpha=0.3)
    for ax in axes[len(panels) + len(extra):]:
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)


def render_sweep(reports: list[MetricReport], out_path) -> Path:
    """CSR / ISR / SoC against corridor length with CI bands."""
    metrics = sorted({r.metric for r in reports})
    fig, axes = plt.subplots(1, len(metrics), figsize=(5 * len(metrics), 4))
    if len(metrics) == 1:
        axes = [axes]
    for ax, metric in zip(axes, metrics):
        pts = sorted((int(r.group), r.value, r.ci95) for r in reports if r.metric == metric)
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        ci = [p[2] for p in pts]
        ax.plot(xs, ys, "o-", ms=4)
        ax.fill_between(xs, [y - c for y, c in zip(ys, ci)],
                        [y + c for y, c in zip(ys, ci)], alpha=0.2)
        ax.set_xlabel("corridor length")
        ax.set_ylabel(metric)
        ax.set_xscale("log")
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)


def render_map_reports(reports: list[MetricReport], out_path) -> Path:
    """Bar chart per metric across evaluated maps."""
    metrics = sorted({r.metric for r in reports})
    fig, axes = plt.subplots(1, len(metrics), figsize=(5 * len(metrics), 4))
    if len(metrics) == 1:
        axes = [axes]
    for ax, metric in zip(axes, metrics):
        rows = [r for r in reports if r.metric == metric]
        labels = [r.group for r in rows]
        ax.bar(range(len(rows)), [r.value for r in rows],
               yerr=[r.ci95 for r in rows], capsize=3)
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
        ax.set_ylabel(metric)
        ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)


def render_memory_trace(rows: list[dict], out_path) -> Path:
    """Memory cosine distance aligned with map distance, events marked."""
    pairs = sorted({r["pair"] for r in rows})
    fig, axes = plt.subplots(len(pairs), 1, figsize=(9, 3.2 * len(pairs)), squeeze=False)
    for ax_row, pair in zip(axes, pairs):
        ax = ax_row[0]
        sub = [r for r in rows if r["pair"] == pair]
        steps = [r["step"] for r in sub]
        cos = [r["cosine_distance"] for r in sub]
        euc = [r["euclidean_distance"] for r in sub]
        ax.plot(steps, [c if c is not None else float("nan") for c in cos],
                label="memory cosine distance", color="tab:blue")
        twin = ax.twinx()
        twin.plot(steps, euc, label="map euclidean distance", color="tab:orange", alpha=0.7)
        for r in sub:
            if r["facing_event"]:
                ax.axvline(r["step"], color="tab:green", ls="--", lw=1)
                ax.annotate("facing", (r["step"], ax.get_ylim()[1]), fontsize=7,
                            color="tab:green")
            if r["first_goal_event"]:
                ax.axvline(r["step"], color="tab:red", ls=":", lw=1)
                ax.annotate("first goal", (r["step"], ax.get_ylim()[0]), fontsize=7,
                            color="tab:red")
        ax.set_title(f"agents {pair}")
        ax.set_xlabel("step")
        ax.set_ylabel("cosine distance")
        twin.set_ylabel("euclidean distance")
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)
