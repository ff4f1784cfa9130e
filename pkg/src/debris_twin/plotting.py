"""Report figures: side-by-side risk panels per category and instance volumes.

Figures are drawn on explicit Agg canvases (no pyplot state), so rendering
is thread-safe and the PNG bytes depend only on the data.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib as mpl
import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.colors import Normalize
from matplotlib.figure import Figure

from .risk import HEATMAP_CMAP, RiskMap

REPORT_RC = {
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "legend.fontsize": 7,
    "savefig.dpi": 110,
    "image.interpolation": "nearest",
    "svg.hashsalt": "debris-twin",
}

# Agg writes the matplotlib version into PNG text chunks unless told not to.
_PNG_METADATA = {"Software": None}


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    FigureCanvasAgg(fig)
    fig.savefig(path, format="png", metadata=_PNG_METADATA)
    return path


def risk_panel(maps: Sequence[RiskMap], path, log_range=None) -> Path:
    """All categories in one row with a shared log10(KE) colour bar."""
    with mpl.rc_context(REPORT_RC):
        n = max(1, len(maps))
        fig = Figure(figsize=(2.4 * n + 0.8, 2.8))
        axes = fig.subplots(1, n, squeeze=False)[0]
        lo, hi = log_range if log_range else (0.0, 1.0)
        if hi <= lo:
            hi = lo + 1.0
        norm = Normalize(lo, hi)
        image = None
        for ax, m in zip(axes, maps):
            ke = m.ke
            with np.errstate(divide="ignore"):
                logke = np.where(ke > 0, np.log10(np.where(ke > 0, ke, 1.0)), np.nan)
            g = m.grid
            nrows, ncols = ke.shape
            extent = (g.origin[0], g.origin[0] + ncols * g.cell_size,
                      g.origin[1], g.origin[1] + nrows * g.cell_size)
            image = ax.imshow(logke, origin="lower", extent=extent,
                              cmap=HEATMAP_CMAP, norm=norm)
            ax.set_title(f"Category {m.category} ({m.speed:g} m/s)")
            ax.set_xlabel("s [m]")
            ax.set_aspect("equal")
        axes[0].set_ylabel("t [m]")
        if image is not None:
            cbar = fig.colorbar(image, ax=list(axes), shrink=0.85)
            cbar.set_label("log10 KE [J]")
        return _save(fig, path)


def volume_bars(instances, path, class_table: Sequence[str] = ()) -> Path:
    """Horizontal bars of instance volume, largest first."""
    with mpl.rc_context(REPORT_RC):
        k = len(instances)
        fig = Figure(figsize=(5.0, 1.2 + 0.22 * max(k, 1)))
        ax = fig.subplots()
        if k:
            labels = []
            for inst in instances:
                name = (class_table[inst.class_index]
                        if inst.class_index < len(class_table)
                        else str(inst.class_index))
                labels.append(f"#{inst.instance_id} {name}")
            ypos = np.arange(k)
            ax.barh(ypos, [i.volume for i in instances], color="#4c72b0")
            ax.set_yticks(ypos, labels)
            ax.invert_yaxis()
        else:
            ax.text(0.5, 0.5, "no debris instances", ha="center", va="center",
                    transform=ax.transAxes)
            ax.set_yticks([])
        ax.set_xlabel("volume [m$^3$]")
        fig.tight_layout()
        return _save(fig, path)
