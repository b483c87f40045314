"""Figures written next to the CSV/JSONL outputs."""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}

_LOSS_KEYS = ("total", "mvlm_text", "mvlm_image", "itc", "itm")


def _figure(ncols=1, width=3.4, height=2.6):
    with plt.rc_context(STYLE):
        return plt.subplots(1, ncols, figsize=(width * ncols, height), squeeze=False)


def _save(fig, path):
    with plt.rc_context(STYLE):
        fig.savefig(path)
    plt.close(fig)


def plot_mask_panel(original, masked, response, path, title=None):
    """Original | masked | ridge response, side by side."""
    fig, axes = _figure(3, width=2.2, height=2.4)
    panels = (("original", original, "gray"), ("masked", masked, "gray"),
              ("ridge response", response, "magma"))
    for ax, (label, img, cmap) in zip(axes[0], panels):
        vmax = 1.0 if cmap == "gray" else max(float(np.max(img)), 1e-12)
        ax.imshow(img, cmap=cmap, vmin=0.0, vmax=vmax, interpolation="nearest")
        ax.set_title(label)
        ax.set_xticks([])
        ax.set_yticks([])
    if title:
        fig.suptitle(title)
    _save(fig, path)


def plot_loss_curve(rows, path):
    fig, axes = _figure(1, width=4.2, height=2.8)
    ax = axes[0][0]
    steps = [r["step"] for r in rows]
    for key in _LOSS_KEYS:
        values = [np.nan if r.get(key) is None else r[key] for r in rows]
        ax.plot(steps, values, lw=1.6 if key == "total" else 0.9, label=key)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(frameon=False, loc="upper left", bbox_to_anchor=(1.0, 1.0))
    _save(fig, path)


def plot_ablation(summary, path, metric="recall_i2t"):
    """Bar chart of the median ``metric`` per arm with per-seed points."""
    fig, axes = _figure(1, width=3.6, height=2.6)
    ax = axes[0][0]
    arms = list(summary)
    med = [summary[a]["median"] for a in arms]
    ax.bar(range(len(arms)), med, color="0.75", edgecolor="0.2")
    for i, a in enumerate(arms):
        vals = summary[a]["values"]
        ax.scatter([i] * len(vals), vals, s=10, color="k", zorder=3)
    ax.set_xticks(range(len(arms)))
    ax.set_xticklabels(arms, rotation=30, ha="right")
    ax.set_ylabel(metric.replace("_", " "))
    _save(fig, path)
