"""Optional PNG figures written next to the CSV traces.

Uses the non-interactive Agg backend; nothing is ever shown on screen.
"""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "lines.linewidth": 1.2,
    "figure.figsize": (4.8, 3.2),
    "figure.dpi": 120,
}


def _save(fig, out, name):
    fig.tight_layout()
    fig.savefig(os.path.join(out, name))
    plt.close(fig)
    return name


def plot_cell(out, stem, traces, agg):
    """Normalized error band across seeds and per-entry gain progress."""
    files = []
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        ax.fill_between(agg.k, agg.min, agg.max, color="0.85", label="min/max")
        ax.plot(agg.k, agg.mean, color="C1", label="mean")
        ax.fill_between(agg.k, agg.mean - agg.std, agg.mean + agg.std, color="C1", alpha=0.3, label="mean ± std")
        ax.set_yscale("log")
        ax.set_xlabel("iteration k")
        ax.set_ylabel("J(L_k) / J(L_0)")
        ax.legend(loc="upper right")
        files.append(_save(fig, out, f"{stem}_error.png"))

        gains = np.array([t.gains[: agg.k.size] for t in traces])  # (S, K, n, m)
        S, K, n, m = gains.shape
        fig, ax = plt.subplots()
        for i in range(n):
            for j in range(m):
                g = gains[:, :, i, j]
                mu, sd = g.mean(axis=0), g.std(axis=0)
                line = ax.plot(agg.k, mu, label=f"L[{i},{j}] mean")[0]
                ax.plot(agg.k, sd, color=line.get_color(), ls="--", lw=0.8, label=f"L[{i},{j}] std")
        ax.set_xlabel("iteration k")
        ax.set_ylabel("gain entry")
        ax.legend(loc="best")
        files.append(_save(fig, out, f"{stem}_gain.png"))
    return files


def plot_sweep(out, traces_by_cell):
    """Mean normalized error for every (T, M) cell on one axis."""
    from .runner import aggregate

    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        for (T, M), traces in sorted(traces_by_cell.items()):
            agg = aggregate(traces)
            ax.plot(agg.k, agg.mean, label=f"T={T}, M={M}")
        ax.set_yscale("log")
        ax.set_xlabel("iteration k")
        ax.set_ylabel("mean J(L_k) / J(L_0)")
        ax.legend(loc="upper right", ncol=2)
        return [_save(fig, out, "sweep_error.png")]
