"""Figure rendering for benchmark and store reports (headless matplotlib)."""

from __future__ import annotations

import os
from typing import Optional


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def save_bench_figure(rows, path: str) -> str:
    """Median wall time per benchmark, grouped by granularity, cold vs hot."""
    from .bench import summarize

    plt = _plt()
    summary = summarize(rows)
    grans = sorted({g for (_, g, _) in summary}, key=lambda s: ("1d", "1h", "15m").index(s))
    benches = sorted({b for (b, _, _) in summary})
    fig, axes = plt.subplots(1, len(grans), figsize=(4.2 * len(grans), 3.4), sharey=True)
    if len(grans) == 1:
        axes = [axes]
    for ax, gran in zip(axes, grans):
        xs, cold, hot = [], [], []
        for b in benches:
            if (b, gran, "cold") not in summary:
                continue
            xs.append(b)
            cold.append(summary[(b, gran, "cold")]["median"])
            hot.append(summary[(b, gran, "hot")]["median"])
        offs = range(len(xs))
        ax.bar([x - 0.2 for x in offs], cold, width=0.4, label="cold", color="#888")
        ax.bar([x + 0.2 for x in offs], hot, width=0.4, label="hot", color="#c33")
        ax.set_xticks(list(offs))
        ax.set_xticklabels([str(x) for x in xs])
        ax.set_yscale("log")
        ax.set_title(f"{gran} trees")
        ax.set_xlabel("benchmark")
    axes[0].set_ylabel("median wall time [ms]")
    axes[0].legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def save_store_figures(db, outdir: str, prefix: str = "store") -> list[str]:
    """Byte footprint by granularity and the tree-size distribution."""
    plt = _plt()
    os.makedirs(outdir, exist_ok=True)
    paths = []

    st = db.stats()
    if st.by_granularity:
        fig, ax = plt.subplots(figsize=(4.2, 3.4))
        labels = sorted(st.by_granularity, key=lambda g: g)
        sizes = [st.by_granularity[g][1] for g in labels]
        ax.pie(sizes, labels=[f"{g}\n{s/1e6:.1f} MB" for g, s in zip(labels, sizes)],
               autopct="%1.0f%%", textprops={"fontsize": 8})
        ax.set_title("stored bytes by granularity")
        path = os.path.join(outdir, f"{prefix}_footprint.png")
        fig.tight_layout()
        fig.savefig(path, dpi=110)
        plt.close(fig)
        paths.append(path)

    sizes = sorted(size for _, size in db.entry_sizes())
    if sizes:
        fig, ax = plt.subplots(figsize=(4.2, 3.4))
        ys = [i / len(sizes) for i in range(1, len(sizes) + 1)]
        ax.plot(sizes, ys, drawstyle="steps-post")
        ax.set_xscale("log")
        ax.set_xlabel("serialized tree size [bytes]")
        ax.set_ylabel("ECDF")
        ax.set_title("tree size distribution")
        ax.grid(alpha=0.3)
        path = os.path.join(outdir, f"{prefix}_tree_sizes.png")
        fig.tight_layout()
        fig.savefig(path, dpi=110)
        plt.close(fig)
        paths.append(path)
    return paths
