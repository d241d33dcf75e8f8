"""SVG figures: bias-score scatter with a rule's boundary, and accuracy/criterion frontiers.

Figures are built on a bare ``Figure`` with the SVG canvas, so no global
pyplot state is touched. Artists carry ``gid`` attributes (``cell-y1a0``,
``rule-line``, ``frontier``, ...) so tests can count elements in the output.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import LabeledDataset, ModificationRule
from .scores import BiasScores

CELL_COLORS = {(0, 0): "#1f77b4", (0, 1): "#2ca02c", (1, 0): "#d62728", (1, 1): "#ff7f0e"}


def _figure(size=(5.0, 4.0)):
    import matplotlib

    from matplotlib.backends.backend_svg import FigureCanvasSVG
    from matplotlib.figure import Figure

    matplotlib.rcParams["svg.hashsalt"] = "fairflip"
    fig = Figure(figsize=size)
    FigureCanvasSVG(fig)
    return fig


def _save(fig, out_path) -> None:
    fig.savefig(out_path, format="svg", metadata={"Date": None})


def _line_in_box(z, xlim, ylim):
    """Endpoints of ``z . s = 1`` clipped to the axes box, or ``None``."""
    (x0, x1), (y0, y1) = xlim, ylim
    pts = []
    if z[1] != 0:
        for x in (x0, x1):
            y = (1.0 - z[0] * x) / z[1]
            if y0 <= y <= y1:
                pts.append((x, y))
    if z[0] != 0:
        for y in (y0, y1):
            x = (1.0 - z[1] * y) / z[0]
            if x0 <= x <= x1:
                pts.append((x, y))
    pts = sorted(set(pts))
    if len(pts) < 2:
        return None
    return pts[0], pts[-1]


def render_scatter(
    scores: BiasScores,
    out_path,
    rule: ModificationRule | None = None,
    data: LabeledDataset | None = None,
    attr: str = "A",
) -> None:
    """Scatter of the two score coordinates, colored by ``(Y, A)`` cell when
    ``data`` is given, with the rule's boundary ``z . s = 1`` drawn on top."""
    if scores.K != 2:
        raise ValueError(f"scatter needs exactly 2 score columns, got {scores.K}")
    if rule is not None and rule.K != 2:
        raise ValueError(f"rule has {rule.K} weights; the scatter is two-dimensional")
    if data is not None and data.n != scores.n:
        raise ValueError(f"{scores.n} score rows but {data.n} labeled rows")
    fig = _figure()
    ax = fig.add_subplot(1, 1, 1)
    s = scores.s
    if data is None:
        sc = ax.scatter(s[:, 0], s[:, 1], s=6, color="0.4", linewidths=0)
        sc.set_gid("cell-all")
    else:
        cells = 2 * data.labels + data.column(attr)
        for (y, a), color in CELL_COLORS.items():
            m = cells == 2 * y + a
            if not m.any():
                continue
            sc = ax.scatter(s[m, 0], s[m, 1], s=6, color=color, linewidths=0, label=f"Y={y}, A={a}")
            sc.set_gid(f"cell-y{y}a{a}")
        if scores.n:
            ax.legend(loc="best", fontsize=7, markerscale=2)
    if scores.n:
        pad_x = 0.05 * max(np.ptp(s[:, 0]), 1e-9)
        pad_y = 0.05 * max(np.ptp(s[:, 1]), 1e-9)
        ax.set_xlim(s[:, 0].min() - pad_x, s[:, 0].max() + pad_x)
        ax.set_ylim(s[:, 1].min() - pad_y, s[:, 1].max() + pad_y)
    if rule is not None and np.any(rule.z != 0):
        seg = _line_in_box(rule.z, ax.get_xlim(), ax.get_ylim())
        if seg is not None:
            (line,) = ax.plot([seg[0][0], seg[1][0]], [seg[0][1], seg[1][1]], color="k", lw=1.2)
            line.set_gid("rule-line")
    ax.set_xlabel("score 1")
    ax.set_ylabel("score 2")
    fig.tight_layout()
    _save(fig, out_path)


def render_frontier(points: Sequence, out_path, split: str = "auto") -> None:
    """Accuracy against criterion value, one marker per delta in the given order.

    ``split`` picks the reports plotted: ``"val"``, ``"test"``, or ``"auto"``
    (test when every point has a test report, validation otherwise).
    """
    points = list(points)
    if not points:
        raise ValueError("frontier plot needs at least one point")
    if split == "auto":
        split = "test" if all(p.test_report is not None for p in points) else "val"
    if split not in ("val", "test"):
        raise ValueError(f"split must be 'val', 'test' or 'auto', got {split!r}")
    reports = [p.val_report if split == "val" else p.test_report for p in points]
    if any(r is None for r in reports):
        raise ValueError("some points have no test report")
    cc = np.array([r.cc for r in reports])
    acc = np.array([r.accuracy for r in reports])
    fig = _figure()
    ax = fig.add_subplot(1, 1, 1)
    (line,) = ax.plot(cc, acc, "-o", color="#1f77b4", ms=5)
    line.set_gid("frontier")
    for p, x, y in zip(points, cc, acc):
        label = "inf" if np.isinf(p.delta) else f"{p.delta:g}"
        ax.annotate(f"δ={label}", (x, y), textcoords="offset points", xytext=(4, 4), fontsize=7)
    ax.set_xlabel(f"criterion ({split})")
    ax.set_ylabel(f"accuracy ({split})")
    fig.tight_layout()
    _save(fig, out_path)
