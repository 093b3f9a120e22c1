"""Figures and text tables rendered from logged rows; nothing is recomputed here."""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

MODE_LABELS = {"uniform": "Uniform", "hac": "HAC", "cogs": "COGS", "cogs_no_hac": "COGS w/o HAC", "no_vae": "COGS w/o VAE"}


class MixedOracleError(ValueError):
    pass


def check_single_oracle(rows) -> str | None:
    methods = {r["oracle"] for r in rows if r.get("oracle") is not None}
    if len(methods) > 1:
        raise MixedOracleError(f"refusing to mix oracle methods in one panel: {sorted(methods)}")
    return methods.pop() if methods else None


def format_rows(rows: list[dict], columns: list[str], floatfmt: str = ".6g") -> str:
    """Left-aligned plain-text table."""
    def cell(v):
        if v is None:
            return "n/a"
        if isinstance(v, float):
            return format(v, floatfmt)
        return str(v)

    body = [[cell(r.get(c)) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(b[i]) for b in body]) for i, c in enumerate(columns)]
    out = ["  ".join(c.ljust(w) for c, w in zip(columns, widths)).rstrip(),
           "  ".join("-" * w for w in widths)]
    out += ["  ".join(v.ljust(w) for v, w in zip(b, widths)).rstrip() for b in body]
    return "\n".join(out) + "\n"


def curve_table(rows, metric: str) -> list[dict]:
    """Across-seed mean and sample std of `metric` per (mode, epoch)."""
    check_single_oracle(rows)
    groups = defaultdict(list)
    for r in rows:
        if r.get(metric) is not None:
            groups[(r["mode"], int(r["epoch"]))].append(float(r[metric]))
    if not groups:
        raise ValueError(f"no logged rows carry metric {metric!r}")
    table = []
    for (mode, epoch), vals in sorted(groups.items()):
        v = np.asarray(vals)
        table.append({
            "mode": mode,
            "epoch": epoch,
            "mean": float(v.mean()),
            "std": float(v.std(ddof=1)) if len(v) > 1 else 0.0,
            "n": len(v),
        })
    return table


def plot_curves(rows, metric: str, path, ylabel: str | None = None, scale: float = 1.0) -> list[dict]:
    """Metric vs epoch, one line per mode with a +/- one std band across seeds."""
    table = curve_table(rows, metric)
    fig, ax = plt.subplots(figsize=(6, 4))
    for mode in dict.fromkeys(r["mode"] for r in table):
        sub = [r for r in table if r["mode"] == mode]
        x = np.array([r["epoch"] for r in sub])
        m = np.array([r["mean"] for r in sub]) * scale
        s = np.array([r["std"] for r in sub]) * scale
        (line,) = ax.plot(x, m, label=MODE_LABELS.get(mode, mode))
        ax.fill_between(x, m - s, m + s, color=line.get_color(), alpha=0.2)
    ax.set_xlabel("Epoch")
    ax.set_ylabel(ylabel or metric)
    ax.legend()
    _save(fig, path)
    return table


def plot_gap_vs_size(records, path, label: str = "") -> dict:
    from .hac import gap_size_correlation

    sizes = np.array([r[0] for r in records], dtype=float)
    gaps = np.array([r[1] for r in records], dtype=float)
    r = gap_size_correlation(records)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter(sizes, 100 * gaps, s=10)
    ax.set_xlabel("Instance size")
    ax.set_ylabel("Gap (%)")
    ax.set_title(f"{label} Pearson r = {r:.3f}".strip())
    _save(fig, path)
    return {"pearson_r": r, "rows": [{"size": s, "gap": g} for s, g in zip(sizes.tolist(), gaps.tolist())]}


def _draw_tour(ax, pts, tour, **kw):
    seq = pts[list(tour) + [tour[0]]]
    ax.plot(seq[:, 0], seq[:, 1], **kw)


def plot_worst_instances(points, worst: list[dict], path, cols: int = 3) -> list[dict]:
    """Render instances with oracle and model tours; `worst` entries come from an eval report."""
    k = len(worst)
    if k == 0:
        raise ValueError("no worst-instance records to draw")
    rows_n = int(np.ceil(k / cols))
    fig, axes = plt.subplots(rows_n, min(cols, k), figsize=(3.2 * min(cols, k), 3.2 * rows_n), squeeze=False)
    for ax in axes.flat[k:]:
        ax.axis("off")
    for ax, w in zip(axes.flat, worst):
        pts = np.asarray(points[w["index"]])
        _draw_tour(ax, pts, w["oracle_tour"], color="tab:green", lw=1.2, label="oracle")
        _draw_tour(ax, pts, w["model_tour"], color="tab:red", lw=0.8, ls="--", label="model")
        ax.scatter(pts[:, 0], pts[:, 1], s=6, c="k", zorder=3)
        ax.set_title(f"#{w['index']} gap {100 * w['gap']:.1f}%", fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
        ax.set_aspect("equal")
    axes.flat[0].legend(fontsize=7, loc="upper right")
    _save(fig, path)
    return [{"index": w["index"], "gap": w["gap"]} for w in worst]


def plot_gallery(datasets: dict, path, per_row: int = 4) -> list[dict]:
    """One row per labelled dataset, `per_row` instances each."""
    labels = list(datasets)
    fig, axes = plt.subplots(len(labels), per_row, figsize=(2.2 * per_row, 2.2 * len(labels)), squeeze=False)
    table = []
    for r, label in enumerate(labels):
        pts = np.asarray(datasets[label])
        for c in range(per_row):
            ax = axes[r, c]
            ax.set_xticks([])
            ax.set_yticks([])
            ax.set_xlim(0, 1)
            ax.set_ylim(0, 1)
            ax.set_aspect("equal")
            if c < len(pts):
                ax.scatter(pts[c][:, 0], pts[c][:, 1], s=4)
                table.append({"label": label, "index": c, "n": int(pts[c].shape[0])})
        axes[r, 0].set_ylabel(label)
    _save(fig, path)
    return table


def plot_latent(coords: dict, ratios, path) -> list[dict]:
    fig, ax = plt.subplots(figsize=(5, 4))
    table = []
    for label, xy in coords.items():
        xy = np.asarray(xy)
        ax.scatter(xy[:, 0], xy[:, 1], s=8, alpha=0.7, label=label)
        table.append({"label": label, "count": int(len(xy))})
    ax.set_xlabel(f"PC 1 ({100 * ratios[0]:.1f}% var.)")
    ax.set_ylabel(f"PC 2 ({100 * ratios[1]:.1f}% var.)")
    ax.legend()
    _save(fig, path)
    return table


def _save(fig, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps vector output reproducible
    meta = {"Date": None} if path.suffix == ".svg" else {}
    if path.suffix == ".svg":
        matplotlib.rcParams["svg.hashsalt"] = "cogs"
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata=meta or None)
    plt.close(fig)
