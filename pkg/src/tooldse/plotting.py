"""Static scatter figures of BDR vs BDDE for search runs.

Figures are written to files only; nothing here opens a window.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .dse import DSETrace, Evaluated, pareto_front  # noqa: E402

# Deterministic SVG output: fixed hash salt, no embedded date.
plt.rcParams["svg.hashsalt"] = "tooldse"
ITERATION_COLORS = ("tab:blue", "tab:orange", "tab:red", "tab:green", "tab:purple",
                    "tab:brown", "tab:pink", "tab:olive", "tab:cyan")


def _save(fig, path: Path) -> Path:
    path = Path(path)
    fmt = path.suffix.lstrip(".") or "svg"
    meta = {"Date": None} if fmt == "svg" else {}
    fig.savefig(path, format=fmt, metadata=meta, bbox_inches="tight")
    plt.close(fig)
    return path


def _label_axes(ax, quality: str = "PSNR"):
    ax.set_xlabel(f"BDR-{quality} in %")
    ax.set_ylabel(f"BDDE-{quality} in %")
    ax.grid(True, linestyle="--", linewidth=0.5)
    ax.axhline(0, color="0.6", linewidth=0.8)
    ax.axvline(0, color="0.6", linewidth=0.8)


def plot_search(
    trace: DSETrace,
    path,
    *,
    background: Sequence[Evaluated] = (),
    ee: Evaluated | None = None,
    ebe: Evaluated | None = None,
    objective: str = "bdde_psnr",
    title: str | None = None,
) -> Path:
    """Greedy candidates coloured by iteration, optionally over a full search.

    ``background`` (e.g. every profile of a full search) is drawn as hollow
    black circles underneath.
    """
    bdr_key = "bdr_psnr" if objective == "bdde_psnr" else "bdr_vmaf"
    quality = "PSNR" if objective == "bdde_psnr" else "VMAF"
    fig, ax = plt.subplots(figsize=(5.5, 4.2))
    if background:
        ax.scatter([e.bdr for e in background], [e.value for e in background],
                   s=14, facecolors="none", edgecolors="black", linewidths=0.6,
                   label="all profiles")
    for i in range(1, trace.iterations() + 1):
        recs = [r for r in trace.by_iteration(i) if r.bd is not None
                and r.bd.get(bdr_key) is not None and r.bd.get(objective) is not None]
        if not recs:
            continue
        color = ITERATION_COLORS[(i - 1) % len(ITERATION_COLORS)]
        ax.scatter([r.bd.get(bdr_key) for r in recs], [r.bd.get(objective) for r in recs],
                   s=22, color=color, label=f"iteration {i}", zorder=3)
    ax.scatter([0], [0], marker="+", s=90, color="red", label="CTC", zorder=4)
    if ee is not None:
        ax.scatter([ee.bdr], [ee.value], marker="D", s=60, color="green",
                   edgecolors="black", label="EE", zorder=5)
    if ebe is not None:
        ax.scatter([ebe.bdr], [ebe.value], marker="*", s=120, color="green",
                   edgecolors="black", label="EBE", zorder=5)
    _label_axes(ax, quality)
    if title:
        ax.set_title(title)
    ax.legend(fontsize="small", loc="best")
    return _save(fig, path)


def plot_pareto(evaluated: Sequence[Evaluated], path, *, title: str | None = None) -> Path:
    """All evaluated profiles with the non-dominated front drawn as a step line."""
    usable = [e for e in evaluated if e.error is None]
    front = pareto_front(usable)
    quality = "PSNR" if (usable and usable[0].objective == "bdde_psnr") else "VMAF"
    fig, ax = plt.subplots(figsize=(5.5, 4.2))
    ax.scatter([e.bdr for e in usable], [e.value for e in usable], s=14, color="0.55",
               label="evaluated")
    ax.plot([e.bdr for e in front], [e.value for e in front], drawstyle="steps-post",
            color="tab:red", marker="o", markersize=4, label="Pareto front")
    _label_axes(ax, quality)
    if title:
        ax.set_title(title)
    ax.legend(fontsize="small", loc="best")
    return _save(fig, path)
