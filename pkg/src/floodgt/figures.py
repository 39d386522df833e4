"""Report figures rendered to files alongside the delimited outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.colors import BoundaryNorm, ListedColormap

from .mapping import CLASS_NAMES_5, ClassBreaks, RasterGrid

# cream / tan / green / salmon / red progression for the five classes
CLASS_COLORS = ("#fff5d6", "#d2b48c", "#7fbf7f", "#fa8072", "#d7191c")

_DPI = 150


def _save(fig, path):
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)


def moran_scatter_png(z_values, lags, labels, path, statistic=None):
    """Standardized values vs spatial lag, quadrant lines at zero."""
    fig, ax = plt.subplots(figsize=(5.5, 5.0))
    z_values = np.asarray(z_values, dtype=np.float64)
    lags = np.asarray(lags, dtype=np.float64)
    if labels is None:
        ax.scatter(z_values, lags, s=10, alpha=0.6, color="#3465a4")
    else:
        labels = np.asarray(labels)
        for value, color, name in ((0, "#3465a4", "non-flooded"), (1, "#d7191c", "flooded")):
            sel = labels == value
            ax.scatter(z_values[sel], lags[sel], s=10, alpha=0.6, color=color, label=name)
        ax.legend(frameon=False, fontsize=8)
    slope = np.polyfit(z_values, lags, 1)[0]
    xs = np.linspace(z_values.min(), z_values.max(), 2)
    ax.plot(xs, slope * xs + np.polyfit(z_values, lags, 1)[1], color="black", lw=1)
    ax.axhline(0.0, color="grey", lw=0.6)
    ax.axvline(0.0, color="grey", lw=0.6)
    title = "Spatial autocorrelation scatter"
    if statistic is not None:
        title += f" (I = {statistic:.4f})"
    ax.set_title(title, fontsize=10)
    ax.set_xlabel("standardized value")
    ax.set_ylabel("spatial lag")
    _save(fig, path)


def importance_png(names, importance, ci_low, ci_high, threshold, path):
    """Horizontal importance bars with confidence whiskers and the equal-share line."""
    order = np.argsort(importance)
    names = [names[i] for i in order]
    imp = np.asarray(importance)[order]
    lo = imp - np.asarray(ci_low)[order]
    hi = np.asarray(ci_high)[order] - imp
    fig, ax = plt.subplots(figsize=(6.0, 0.32 * len(names) + 1.2))
    ax.barh(range(len(names)), imp, xerr=[np.clip(lo, 0, None), np.clip(hi, 0, None)],
            color="#3465a4", height=0.6, error_kw={"lw": 0.8})
    ax.axvline(threshold, color="#d7191c", lw=1.0, ls="--", label="equal-share threshold")
    ax.set_yticks(range(len(names)))
    ax.set_yticklabels(names, fontsize=8)
    ax.set_xlabel("normalized importance")
    ax.legend(frameon=False, fontsize=8)
    _save(fig, path)


def history_png(epochs, path):
    """Training and validation loss with the validation AUC on a twin axis."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    xs = np.arange(len(epochs))
    ax.plot(xs, [e["train_loss"] for e in epochs], label="train loss", color="#3465a4")
    ax.plot(xs, [e["val_loss"] for e in epochs], label="validation loss", color="#d7191c")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    twin = ax.twinx()
    twin.plot(xs, [e["val_auc"] for e in epochs], label="validation AUC",
              color="#4e9a06", lw=1.0)
    twin.set_ylabel("AUC")
    handles, labels = ax.get_legend_handles_labels()
    handles2, labels2 = twin.get_legend_handles_labels()
    ax.legend(handles + handles2, labels + labels2, frameon=False, fontsize=8)
    _save(fig, path)


def _extent(grid: RasterGrid):
    return (grid.x_ll, grid.x_ll + grid.ncols * grid.cell_size,
            grid.y_ll, grid.y_ll + grid.nrows * grid.cell_size)


def raster_png(grid: RasterGrid, path, title="", cmap="viridis", vmin=None, vmax=None):
    """Continuous raster with nodata masked out."""
    values = np.ma.masked_equal(grid.values, grid.nodata)
    fig, ax = plt.subplots(figsize=(6.0, 5.0))
    im = ax.imshow(values, extent=_extent(grid), origin="upper", cmap=cmap,
                   vmin=vmin, vmax=vmax)
    fig.colorbar(im, ax=ax, shrink=0.8)
    ax.set_title(title, fontsize=10)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    _save(fig, path)


def class_raster_png(grid: RasterGrid, path, breaks: ClassBreaks | None = None,
                     title="", track=None):
    """Five-class susceptibility map, optionally with the railway overlaid."""
    names = breaks.names if breaks is not None else CLASS_NAMES_5
    k = len(names)
    cmap = ListedColormap(CLASS_COLORS[:k])
    norm = BoundaryNorm(np.arange(0.5, k + 1.0), k)
    values = np.ma.masked_equal(grid.values, grid.nodata)
    fig, ax = plt.subplots(figsize=(6.0, 5.0))
    im = ax.imshow(values, extent=_extent(grid), origin="upper", cmap=cmap, norm=norm)
    bar = fig.colorbar(im, ax=ax, shrink=0.8, ticks=np.arange(1, k + 1))
    bar.ax.set_yticklabels(names, fontsize=8)
    if track is not None:
        for line in track.polylines:
            ax.plot(line[:, 0], line[:, 1], color="black", lw=1.2)
        ax.plot([], [], color="black", lw=1.2, label="railway")
        ax.legend(frameon=False, fontsize=8, loc="lower right")
    ax.set_title(title, fontsize=10)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    _save(fig, path)


def sensitivity_png(rows, path):
    """Grouped bars: per-hyperparameter max deviation of each metric."""
    params = [r["parameter"] for r in rows]
    metrics = (("max_abs_delta_auc", "AUC-ROC"),
               ("max_abs_delta_moran", "clustering stat"),
               ("max_abs_delta_geary", "dispersion stat"))
    xs = np.arange(len(params))
    width = 0.27
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    for offset, (key, label) in enumerate(metrics):
        ax.bar(xs + (offset - 1) * width, [r[key] for r in rows], width, label=label)
    ax.set_xticks(xs)
    ax.set_xticklabels(params, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("max |deviation from baseline|")
    ax.legend(frameon=False, fontsize=8)
    _save(fig, path)
