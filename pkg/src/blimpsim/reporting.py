"""Text tables, CSV, and matplotlib figures for flight and stain reports."""

from __future__ import annotations

import csv
import io
import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.patches import Rectangle

from .planner import CoverageMap, PlanMetrics, RunLog, coverage_from_frames
from .stains import STAIN_CLASSES, ClassificationReport, StainPrediction, StainRaster
from .world import CELL_OBSTACLE, CELL_WALL, Scene

_CLASS_COLORS = {
    # Fig-style convention: red passive, green active, blue transfer.
    "passive_drip": (1.0, 0.15, 0.15),
    "active_spatter": (0.1, 0.8, 0.1),
    "transfer_smear": (0.15, 0.3, 1.0),
    "not_blood": (0.6, 0.6, 0.6),
}


def format_table(headers: list[str], rows: list[list]) -> str:
    """Aligned plain-text table."""
    cells = [[_fmt(v) for v in row] for row in rows]
    widths = [
        max(len(headers[i]), *(len(r[i]) for r in cells)) if cells else len(headers[i])
        for i in range(len(headers))
    ]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
        "  ".join("-" * w for w in widths),
    ]
    for row in cells:
        lines.append("  ".join(row[i].ljust(widths[i]) for i in range(len(headers))))
    return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def metrics_rows(per_seed: dict[int, PlanMetrics]) -> tuple[list[str], list[list]]:
    headers = ["seed"] + list(PlanMetrics.__dataclass_fields__)
    rows = [
        [seed] + [getattr(m, k) for k in PlanMetrics.__dataclass_fields__]
        for seed, m in sorted(per_seed.items())
    ]
    return headers, rows


def aggregate_table(aggregate: dict) -> str:
    headers = ["metric", "mean", "sd", "min", "max"]
    rows = [
        [name, stats["mean"], stats["sd"], stats["min"], stats["max"]]
        for name, stats in aggregate.items()
    ]
    return format_table(headers, rows)


def metrics_csv(per_seed: dict[int, PlanMetrics]) -> str:
    headers, rows = metrics_rows(per_seed)
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(headers)
    writer.writerows(rows)
    return buf.getvalue()


def confusion_table(report: ClassificationReport) -> str:
    headers = ["truth \\ predicted"] + [c for c in STAIN_CLASSES]
    rows = [
        [STAIN_CLASSES[i]] + list(report.confusion[i]) for i in range(len(STAIN_CLASSES))
    ]
    table = format_table(headers, rows)
    footer = (
        f"accuracy on true blood: {report.accuracy_on_true_blood:.1%} "
        f"({report.correct} of {report.matched_blood})\n"
        f"accuracy incl. false positives: {report.accuracy_including_false_positives:.1%} "
        f"({report.correct} of {report.matched_blood + report.false_positives})"
    )
    return table + "\n" + footer


def scene_manifest_table(scene: Scene) -> str:
    headers = ["id", "kind", "x_m", "y_m", "mass", "scatterable", "displaced"]
    rows = [
        [
            it.id,
            it.kind.name,
            round(it.position_m[0], 3),
            round(it.position_m[1], 3),
            it.kind.mass_class,
            it.kind.scatterable,
            it.displaced,
        ]
        for it in scene.evidence
    ]
    return format_table(headers, rows)


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------


def save_coverage_figure(scene: Scene, log: RunLog, out_path: str,
                         coverage: CoverageMap | None = None) -> None:
    """Floor plan, coverage heatmap, flight track, and evidence markers."""
    plan = scene.floor_plan
    if coverage is None:
        coverage = coverage_from_frames(scene, log.camera_frames())
    fig, ax = plt.subplots(figsize=(8, 8 * plan.height_m / max(plan.width_m, 1e-9)))
    base = np.ones(plan.cells.shape + (3,))
    base[plan.cells == CELL_WALL] = (0.15, 0.15, 0.15)
    base[plan.cells == CELL_OBSTACLE] = (0.55, 0.55, 0.55)
    seen = coverage.times_seen
    if seen.max() > 0:
        shade = np.clip(seen / max(seen.max(), 1), 0, 1)
        green = np.zeros_like(base)
        green[..., 1] = 0.85
        green[..., 0] = 0.35
        green[..., 2] = 0.35
        mask = (seen > 0) & (plan.cells == 0)
        base[mask] = (1 - 0.65 * shade[mask, None]) * base[mask] + 0.65 * shade[
            mask, None
        ] * green[mask]
    ax.imshow(base, origin="lower", extent=(0, plan.width_m, 0, plan.height_m))
    xs = [r.position_m[0] for r in log.records]
    ys = [r.position_m[1] for r in log.records]
    ax.plot(xs, ys, color="tab:blue", linewidth=1.0, label="track")
    for it in scene.evidence:
        ax.plot(*it.position_m, marker="x", color="tab:red", markersize=6)
        ax.annotate(it.kind.name, it.position_m, fontsize=6, alpha=0.7)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(f"{log.planner} seed {log.seed} coverage")
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)


def save_annotated_stains(
    raster: StainRaster,
    predictions: list[StainPrediction],
    out_path: str,
    show_truth: bool = True,
) -> None:
    """Sheet with contours colored by predicted class and truth rectangles."""
    fig, ax = plt.subplots(
        figsize=(8, 8 * raster.height_px / max(raster.width_px, 1))
    )
    ax.imshow(raster.pixels)
    for pred in predictions:
        color = _CLASS_COLORS[pred.stain_class]
        if pred.contour is not None and pred.contour.boundary:
            ys = [p[0] for p in pred.contour.boundary]
            xs = [p[1] for p in pred.contour.boundary]
            ax.plot(xs + xs[:1], ys + ys[:1], color=color, linewidth=1.2)
        cx, cy = pred.fit.centroid_px
        ax.plot(cx, cy, marker="+", color=color, markersize=5)
    if show_truth:
        for truth in raster.truths:
            a, b = truth.semi_axes_px
            c, s = abs(math.cos(truth.orientation_rad)), abs(math.sin(truth.orientation_rad))
            hx = a * c + b * s
            hy = a * s + b * c
            cx, cy = truth.center_px
            ax.add_patch(
                Rectangle(
                    (cx - hx, cy - hy), 2 * hx, 2 * hy,
                    fill=False, edgecolor="black", linewidth=0.8, linestyle="--",
                )
            )
    handles = [
        plt.Line2D([0], [0], color=_CLASS_COLORS[c], label=c) for c in STAIN_CLASSES[:3]
    ]
    ax.legend(handles=handles, loc="upper right", fontsize=7)
    ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)


def save_path_figure(scene: Scene, waypoints: list, out_path: str) -> None:
    """Planned waypoint sequence over the floor plan."""
    plan = scene.floor_plan
    fig, ax = plt.subplots(figsize=(8, 8 * plan.height_m / max(plan.width_m, 1e-9)))
    base = np.ones(plan.cells.shape + (3,))
    base[plan.cells == CELL_WALL] = (0.15, 0.15, 0.15)
    base[plan.cells == CELL_OBSTACLE] = (0.55, 0.55, 0.55)
    ax.imshow(base, origin="lower", extent=(0, plan.width_m, 0, plan.height_m))
    xs = [wp.x for wp in waypoints]
    ys = [wp.y for wp in waypoints]
    ax.plot(xs, ys, "-o", color="tab:blue", markersize=2.5, linewidth=1.0)
    if xs:
        ax.plot(xs[0], ys[0], marker="^", color="tab:green", markersize=9)
        ax.plot(xs[-1], ys[-1], marker="s", color="tab:red", markersize=7)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
