"""Figure rendering for the report path.

Every figure is derived from the same rows that land in the delimited
tables; the tables stay the canonical artifact and the figures are a
convenience rendering written alongside them.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_SAVE_KWARGS = {"dpi": 120, "metadata": {"Software": "fairrerank"}}

MODE_ORDER = ("N", "C", "P", "CP")
MODE_COLORS = {"N": "#7f7f7f", "C": "#1f77b4", "P": "#2ca02c", "CP": "#d62728"}


def _mode_sort_key(mode: str) -> int:
    return MODE_ORDER.index(mode) if mode in MODE_ORDER else len(MODE_ORDER)


def render_mode_comparison(reports, path: str | Path) -> Path:
    """Grouped bars of mCPF and overall nDCG per ranker and mode."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    rankers = sorted({r.ranker_tag for r in reports})
    modes = sorted({r.mode for r in reports}, key=_mode_sort_key)
    # one bar per (ranker, mode): for grids, the cell maximizing ndcg - mcpf
    chosen = {}
    for rep in reports:
        key = (rep.ranker_tag, rep.mode)
        if key not in chosen or (rep.ndcg_all - rep.mcpf) > (
            chosen[key].ndcg_all - chosen[key].mcpf
        ):
            chosen[key] = rep

    fig, (ax_fair, ax_acc) = plt.subplots(1, 2, figsize=(9, 3.6))
    width = 0.8 / max(len(modes), 1)
    for j, mode in enumerate(modes):
        xs, f_ys, a_ys = [], [], []
        for i, ranker in enumerate(rankers):
            rep = chosen.get((ranker, mode))
            if rep is None:
                continue
            xs.append(i + j * width)
            f_ys.append(rep.mcpf)
            a_ys.append(rep.ndcg_all)
        color = MODE_COLORS.get(mode, "#444444")
        ax_fair.bar(xs, f_ys, width=width, label=mode, color=color)
        ax_acc.bar(xs, a_ys, width=width, label=mode, color=color)

    ticks = [i + 0.4 - width / 2 for i in range(len(rankers))]
    for ax, title in ((ax_fair, "mCPF (lower is fairer)"), (ax_acc, "nDCG, all users")):
        ax.set_xticks(ticks)
        ax.set_xticklabels(rankers, rotation=15)
        ax.set_title(title, fontsize=10)
        ax.axhline(0.0, color="black", linewidth=0.6)
    ax_fair.legend(fontsize=8)
    dataset = reports[0].dataset or "dataset"
    fig.suptitle(f"{dataset}: fairness modes", fontsize=11)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
    return path


def render_sweep(rows: list[dict], vary: str, path: str | Path) -> Path:
    """Two-panel trace of group nDCG and item-group exposure along a lambda grid."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    xs = [row["varied"] for row in rows]
    fig, (ax_user, ax_item) = plt.subplots(1, 2, figsize=(9, 3.6))
    ax_user.plot(xs, [r["ndcg_all"] for r in rows], marker="o", label="all")
    ax_user.plot(xs, [r["ndcg_advantaged"] for r in rows], marker="s", label="advantaged")
    ax_user.plot(xs, [r["ndcg_protected"] for r in rows], marker="^", label="protected")
    ax_user.set_xlabel(vary)
    ax_user.set_ylabel("nDCG")
    ax_user.legend(fontsize=8)

    ax_item.plot(xs, [r["exposure_short"] for r in rows], marker="o", label="short-head")
    ax_item.plot(xs, [r["exposure_long"] for r in rows], marker="s", label="long-tail")
    ax_item.set_xlabel(vary)
    ax_item.set_ylabel("exposure fraction")
    ax_item.set_ylim(-0.02, 1.02)
    ax_item.legend(fontsize=8)

    label = f"{rows[0].get('dataset', '')} / {rows[0].get('ranker', '')}"
    fig.suptitle(f"{label}: sweep over {vary}", fontsize=11)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
    return path
