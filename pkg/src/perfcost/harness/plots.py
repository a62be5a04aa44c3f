"""Self-contained SVG line plots.

Output is reproducible: the SVG carries no date and element ids come from a
fixed hash salt.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_STYLE = {"svg.hashsalt": "perfcost", "svg.fonttype": "path"}


def _save(fig, path):
    with matplotlib.rc_context(_STYLE):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def line_plot(series, path, xlabel, ylabel, title=None, logx=False, logy=False):
    """One line per ``(label, xs, ys)`` entry in ``series``."""
    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    for label, xs, ys in series:
        ax.plot(xs, ys, marker="o", label=str(label))
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def overlay_plot(grid, truth, estimates, path, xlabel="x", ylabel="phi'(x), centered"):
    """True curve against estimated curves on a common grid."""
    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    ax.plot(grid, truth, color="black", linewidth=2.0, label="true")
    for label, ys in estimates:
        ax.plot(grid, ys, linewidth=1.0, label=str(label))
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def median_series(aggregated, x_key, y_col, group_key=None):
    """Turn ``aggregate`` output into ``line_plot`` series."""
    series = {}
    for entry in aggregated:
        stat = entry.get(y_col)
        if stat is None:
            continue
        label = entry[group_key] if group_key else y_col
        series.setdefault(label, []).append((entry[x_key], stat["median"]))
    out = []
    for label in sorted(series, key=str):
        pts = sorted(series[label])
        out.append((label, [p[0] for p in pts], [p[1] for p in pts]))
    return out
