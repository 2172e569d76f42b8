"""Figure rendering for study reports.

Every function writes a PNG next to the delimited output and returns
the path.  Rendering uses the Agg backend, so it works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = [
    "save_power_curves",
    "save_power_agreement",
    "save_level_bars",
    "save_rate_bars",
    "save_bias_bar",
    "save_ratio_curves",
    "save_risk_curves",
]


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_power_curves(path, curves, alpha):
    """curves: iterable of (label, phi2 values, power values)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, phi2, power in curves:
        ax.plot(phi2, power, marker="o", markersize=3, label=label)
    ax.axhline(alpha, color="gray", linestyle=":", linewidth=1)
    ax.set_xlabel("signal-to-noise ratio")
    ax.set_ylabel("power")
    ax.set_ylim(0, 1.02)
    ax.legend(fontsize=8)
    return _finish(fig, path)


def save_power_agreement(path, rows):
    fig, ax = plt.subplots(figsize=(6, 4))
    labels = [
        f"{r['dist']} phi2={r['phi2']}" + (f" pi={r['pi_c']}" if r["pi_c"] != "" else "")
        for r in rows
    ]
    x = range(len(rows))
    ax.bar(
        [i - 0.2 for i in x],
        [r["empirical"] for r in rows],
        width=0.4,
        label="empirical",
    )
    ax.bar(
        [i + 0.2 for i in x],
        [r["theoretical"] for r in rows],
        width=0.4,
        label="closed form",
    )
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=7)
    ax.set_ylabel("rejection rate")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def save_level_bars(path, rows, alpha):
    fig, ax = plt.subplots(figsize=(5, 4))
    x = range(len(rows))
    ax.bar(list(x), [r["level"] for r in rows], width=0.6)
    ax.errorbar(
        list(x),
        [r["level"] for r in rows],
        yerr=[2 * r["se"] for r in rows],
        fmt="none",
        ecolor="black",
        capsize=3,
    )
    ax.axhline(alpha, color="red", linestyle="--", linewidth=1, label="nominal")
    ax.set_xticks(list(x))
    ax.set_xticklabels([f"s2c={r['sigma2_c']}" for r in rows], fontsize=8)
    ax.set_ylabel("empirical level")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def save_rate_bars(path, rows):
    fig, ax = plt.subplots(figsize=(5, 4))
    x = range(len(rows))
    ax.bar(list(x), [100 * r["rate_clipped_c"] for r in rows], width=0.6)
    ax.set_xticks(list(x))
    ax.set_xticklabels([f"s2c={r['sigma2_c']}" for r in rows], fontsize=8)
    ax.set_ylabel("clipped interaction variance (%)")
    return _finish(fig, path)


def save_bias_bar(path, rows):
    fig, ax = plt.subplots(figsize=(4, 4))
    row = rows[0]
    ax.errorbar(
        [0],
        [row["observed_mean"]],
        yerr=[3 * row["se"]],
        fmt="o",
        capsize=4,
        label="observed mean (3 SE)",
    )
    ax.axhline(row["predicted_mean"], color="red", linestyle="--", label="exact value")
    ax.set_xticks([])
    ax.set_ylabel("mean raw fourth-moment estimate")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def save_ratio_curves(path, rows):
    fig, ax = plt.subplots(figsize=(6, 4))
    by_dist: dict[str, list] = {}
    for row in rows:
        by_dist.setdefault(row["dist"], []).append(row)
    for dist, group in by_dist.items():
        xs = list(range(len(group)))
        ax.plot(xs, [r["median_ratio"] for r in group], marker="o", label=f"{dist} observed")
        ax.plot(
            xs,
            [r["predicted_ratio"] for r in group],
            marker="x",
            linestyle="--",
            label=f"{dist} limit",
        )
    ax.set_xlabel("grid point")
    ax.set_ylabel("interaction variance ratio")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def save_risk_curves(path, table):
    """One panel per second grid parameter, log relative risk curves."""
    first = [name for name, _ in table.points[0].params]
    x_key = first[1]
    panel_key = first[2] if len(first) > 2 else None
    panels: dict[object, list] = {}
    for point in table.points:
        params = dict(point.params)
        panels.setdefault(params.get(panel_key), []).append(point)
    fig, axes = plt.subplots(
        1, len(panels), figsize=(4 * len(panels), 4), squeeze=False, sharey=True
    )
    for ax, (panel_value, points) in zip(axes[0], panels.items()):
        xs = [dict(p.params)[x_key] for p in points]
        for label in table.labels:
            if label == "lanova":
                continue
            ys = [table.log_relative_risk(p, label) for p in points]
            ax.plot(xs, ys, marker="o", markersize=3, label=label)
        ax.axhline(0.0, color="gray", linewidth=1)
        ax.set_xlabel(x_key)
        if panel_key is not None:
            ax.set_title(f"{panel_key} = {panel_value}", fontsize=9)
    axes[0][0].set_ylabel("log relative risk vs penalized fit")
    axes[0][-1].legend(fontsize=7)
    return _finish(fig, path)
