"""Static bar charts of reserves, written as SVG files.

SVG output is made byte-stable (no timestamp, fixed id salt) so the CLI's
replay check can cover figures as well as CSVs.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {"svg.hashsalt": "ptu-reserving", "svg.fonttype": "none", "font.size": 9}
_SVG_META = {"Date": None, "Creator": None}


def _sum_by(key, values, n):
    out = np.zeros(n)
    np.add.at(out, key, values)
    return out


def _series(result, true_ultimates):
    series = {}
    if true_ultimates is not None:
        developed = result.accident_period <= result.n_acc - result.n_dev
        series["true OLL"] = np.where(developed, 0.0, np.asarray(true_ultimates) - result.paid_to_date)
    series["RBNS CL"] = result.rbns_cl_reserve
    series["FNN"] = result.reserve
    return series


def _grouped_split(ax, labels, series, key, n, open_mask):
    width = 0.8 / len(series)
    x = np.arange(n)
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for k, (name, values) in enumerate(series.items()):
        closed = _sum_by(key, np.where(open_mask, 0.0, values), n)
        opened = _sum_by(key, np.where(open_mask, values, 0.0), n)
        pos = x + (k - (len(series) - 1) / 2) * width
        ax.bar(pos, opened, width, color=colors[k], label=f"{name} (open)")
        ax.bar(pos, closed, width, bottom=opened, color=colors[k], alpha=0.45, label=f"{name} (closed)")
    ax.set_xticks(x, labels)
    ax.axhline(0.0, color="black", linewidth=0.6)
    ax.set_ylabel("reserve")
    ax.legend(fontsize=7, ncol=len(series), frameon=False)


def plot_reserves_by_period(result, path, true_ultimates=None):
    """Reserves per accident period, split by claim status at the evaluation date."""
    series = _series(result, true_ultimates)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(7, 4))
        _grouped_split(ax, [str(i) for i in range(1, result.n_acc + 1)], series,
                       result.accident_period - 1, result.n_acc, result.status_to_date == 1)
        ax.set_xlabel("accident period")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata=_SVG_META)
        plt.close(fig)


def plot_reserves_by_month(result, path, true_ultimates=None):
    """Reserves per accident month, split by claim status at the evaluation date."""
    series = _series(result, true_ultimates)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(8, 4))
        _grouped_split(ax, [str(m) for m in range(1, 13)], series,
                       result.accident_month - 1, 12, result.status_to_date == 1)
        ax.set_xlabel("accident month")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata=_SVG_META)
        plt.close(fig)
