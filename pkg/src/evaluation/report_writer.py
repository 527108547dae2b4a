"""
Report Writer for the YOdar Fusion Pipeline
===========================================
Author: Perception Fusion Team

Turns evaluation results into files: one CSV table per analysis, SVG figures for the
distance breakdown, the spatial heatmaps and the radar loss curve, and a Markdown
summary.

SVG output is byte-stable across runs: the Agg backend is used, the SVG id salt is
fixed and no creation date is embedded.

Dependencies: matplotlib, numpy
"""

# Standard library imports
import io
import logging
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

# Third-party imports
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# Local imports
from ..radar_network.radar_trainer import EpochRecord  # noqa: E402
from ..storage.artifact_store import ReportTable, save_artifact, write_text_atomic  # noqa: E402
from .detection_metrics import DistanceBin, DetectorSummary, EvalReport  # noqa: E402

logger = logging.getLogger(__name__)

matplotlib.rcParams["svg.hashsalt"] = "yodar-report"
matplotlib.rcParams["svg.fonttype"] = "path"

DETECTOR_COLORS = {"radar": "#1f77b4", "camera": "#ff7f0e", "fused": "#2ca02c"}
ACCURACY_NOTE = "accuracy = TP / (TP + FP + FN)"
RADAR_NOTE = "radar-only boxes span their slice bundle's columns at full image height"

SUMMARY_COLUMNS = ["detector", "mean_ap", "accuracy", "tp", "fp", "fn", "runs"]


# ========== TABLES ==========

def summary_table(summaries: Sequence[DetectorSummary]) -> ReportTable:
    """
    One row per detector with the columns of ``SUMMARY_COLUMNS``.

    Args:
        summaries (Sequence[DetectorSummary]): Rows in report order
    """
    return ReportTable(
        columns=SUMMARY_COLUMNS,
        rows=[[s.detector, s.mean_ap, s.accuracy, s.tp, s.fp, s.fn, s.runs] for s in summaries],
    )


def summaries_from_table(table: ReportTable) -> List[DetectorSummary]:
    """Inverse of ``summary_table``."""
    return [DetectorSummary(**dict(zip(table.columns, row))) for row in table.rows]


def distance_table(bins: Mapping[str, Sequence[DistanceBin]]) -> ReportTable:
    """
    Long-format distance table: one row per (detector, distance bin).

    Args:
        bins (Mapping[str, Sequence[DistanceBin]]): Bin tables keyed by detector name
    """
    rows = [
        [name, b.lo_m, b.hi_m, b.gt_count, b.tp_matched, b.tp_perbox]
        for name, per_bin in bins.items()
        for b in per_bin
    ]
    return ReportTable(columns=["detector", "lo_m", "hi_m", "gt_count", "tp_matched", "tp_perbox"], rows=rows)


def matrix_table(cells: Sequence[Sequence[Optional[float]]], bin_width_m: float, column_bin_px: int) -> ReportTable:
    """Heatmap as a table: one row per distance bin, one column per image column bin."""
    n_columns = len(cells[0]) if cells else 0
    columns = ["lo_m", "hi_m"] + [f"px_{c * column_bin_px}_{(c + 1) * column_bin_px}" for c in range(n_columns)]
    rows = [[i * bin_width_m, (i + 1) * bin_width_m, *row] for i, row in enumerate(cells)]
    return ReportTable(columns=columns, rows=rows)


# ========== FIGURES ==========

def _save_svg(fig: "plt.Figure", path: Path) -> Path:
    buffer = io.StringIO()
    fig.savefig(buffer, format="svg", metadata={"Date": None})
    plt.close(fig)
    return write_text_atomic(path, buffer.getvalue())


def plot_distance_recall(bins: Mapping[str, Sequence[DistanceBin]], path: Path) -> Path:
    """Grouped bars: ground-truth count and detected count per distance bin and detector."""
    fig, ax = plt.subplots(figsize=(9, 4.5))
    names = list(bins)
    reference = next(iter(bins.values()), [])
    x = np.arange(len(reference))
    width = 0.8 / (len(names) + 1)
    ax.bar(x, [b.gt_count for b in reference], width, label="ground truth", color="#7f7f7f")
    for k, name in enumerate(names, start=1):
        ax.bar(
            x + k * width,
            [b.tp_matched for b in bins[name]],
            width,
            label=name,
            color=DETECTOR_COLORS.get(name),
        )
    ax.set_xticks(x + width * len(names) / 2.0)
    ax.set_xticklabels([f"{b.lo_m:g}-{b.hi_m:g}" for b in reference], rotation=45)
    ax.set_xlabel("distance [m]")
    ax.set_ylabel("vehicles")
    ax.legend()
    fig.tight_layout()
    return _save_svg(fig, path)


def plot_heatmap(
    cells: Sequence[Sequence[Optional[float]]],
    title: str,
    path: Path,
    bin_width_m: float,
    column_bin_px: int,
    diverging: bool = False,
) -> Path:
    """Cell matrix with distance on the vertical axis, nearest bin at the bottom; blank cells stay white."""
    matrix = np.array([[np.nan if v is None else v for v in row] for row in cells], dtype=np.float64)
    fig, ax = plt.subplots(figsize=(10, 5))
    if diverging:
        limit = max(1.0, float(np.nanmax(np.abs(matrix)))) if matrix.size else 1.0
        image = ax.imshow(matrix, origin="lower", aspect="auto", cmap="coolwarm", vmin=-limit, vmax=limit)
    else:
        image = ax.imshow(matrix, origin="lower", aspect="auto", cmap="viridis")
    n_rows, n_columns = matrix.shape if matrix.ndim == 2 else (0, 0)
    ax.set_xticks(np.arange(n_columns))
    ax.set_xticklabels([str(c * column_bin_px) for c in range(n_columns)], rotation=90)
    ax.set_yticks(np.arange(n_rows))
    ax.set_yticklabels([f"{i * bin_width_m:g}" for i in range(n_rows)])
    ax.set_xlabel("image column [px]")
    ax.set_ylabel("distance [m]")
    ax.set_title(title)
    fig.colorbar(image, ax=ax)
    fig.tight_layout()
    return _save_svg(fig, path)


def plot_loss_curve(records: Sequence[EpochRecord], path: Path) -> Path:
    """
    Training and, when recorded, validation loss per epoch as an SVG line chart.

    Args:
        records (Sequence[EpochRecord]): Radar training history
        path (Path): Target SVG file

    Returns:
        Path: The written file
    """
    fig, ax = plt.subplots(figsize=(7, 4))
    epochs = [r.epoch for r in records]
    ax.plot(epochs, [r.train_loss for r in records], label="train")
    validation = [(r.epoch, r.val_loss) for r in records if r.val_loss is not None]
    if validation:
        ax.plot([e for e, _ in validation], [v for _, v in validation], label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    return _save_svg(fig, path)


# ========== MARKDOWN ==========

def summary_markdown(summaries: Sequence[DetectorSummary], notes: Sequence[str] = ()) -> str:
    lines = [
        "# Detector summary",
        "",
        "| detector | mAP | accuracy | TP | FP | FN | runs |",
        "|---|---|---|---|---|---|---|",
    ]
    for s in summaries:
        lines.append(
            f"| {s.detector} | {100 * s.mean_ap:.2f}% | {100 * s.accuracy:.2f}% | "
            f"{s.tp:g} | {s.fp:g} | {s.fn:g} | {s.runs} |"
        )
    lines += ["", f"Note: {ACCURACY_NOTE}.", f"Note: {RADAR_NOTE}."]
    lines += [f"{note}" for note in notes]
    return "\n".join(lines) + "\n"


def summary_lines(report: EvalReport) -> List[str]:
    """One printable line per detector plus the recall gain line."""
    lines = [
        f"{s.detector:>6}: mAP {100 * s.mean_ap:6.2f}%  accuracy {100 * s.accuracy:6.2f}%  "
        f"TP {s.tp:g}  FP {s.fp:g}  FN {s.fn:g}"
        for s in report.summaries
    ]
    lines.append(report.recall_gain.describe())
    return lines


# ========== EVALUATION OUTPUT ==========

def write_eval_report(
    report: EvalReport, out_dir: Path, bin_width_m: float, column_bin_px: int, digest: Optional[str] = None
) -> List[Path]:
    """Write every table and figure of one evaluation into ``out_dir``; returns the files."""
    out_dir = Path(out_dir)
    written: List[Path] = []
    tables: Dict[str, ReportTable] = {
        "summary.csv": summary_table(report.summaries),
        "distance_bins.csv": distance_table(report.distance_bins),
        "heatmap_gt.csv": matrix_table(report.heatmaps.gt_counts, bin_width_m, column_bin_px),
        "heatmap_difference.csv": matrix_table(report.heatmaps.difference, bin_width_m, column_bin_px),
        "fp_at_matched_tp.csv": ReportTable(
            columns=["detector", "status", "threshold", "tp", "fp"],
            rows=[[r.detector, r.status, r.threshold, r.tp, r.fp] for r in report.threshold_table],
        ),
        "radar_1d.csv": ReportTable(
            columns=["tp", "fp", "fn"], rows=[[report.radar_1d.tp, report.radar_1d.fp, report.radar_1d.fn]]
        ),
    }
    for name, cells in report.heatmaps.recall.items():
        tables[f"heatmap_recall_{name}.csv"] = matrix_table(cells, bin_width_m, column_bin_px)
    for file_name, table in tables.items():
        written.append(save_artifact("report_table", table, out_dir / file_name, digest))

    written.append(plot_distance_recall(report.distance_bins, out_dir / "distance_recall.svg"))
    written.append(
        plot_heatmap(report.heatmaps.gt_counts, "ground-truth vehicles", out_dir / "heatmap_gt.svg", bin_width_m, column_bin_px)
    )
    for name, cells in report.heatmaps.recall.items():
        written.append(
            plot_heatmap(cells, f"{name} recall", out_dir / f"heatmap_recall_{name}.svg", bin_width_m, column_bin_px)
        )
    written.append(
        plot_heatmap(
            report.heatmaps.difference,
            "fused minus camera-only detections",
            out_dir / "heatmap_difference.svg",
            bin_width_m,
            column_bin_px,
            diverging=True,
        )
    )
    notes = [
        "",
        f"Recall gain: {report.recall_gain.describe()}.",
        f"Radar slice bundles (1D): TP {report.radar_1d.tp}, FP {report.radar_1d.fp}, FN {report.radar_1d.fn}.",
    ]
    written.append(write_text_atomic(out_dir / "summary.md", summary_markdown(report.summaries, notes)))
    logger.info(f"Wrote {len(written)} report files to {out_dir}")
    return written


def index_markdown(run_dir: Path, files: Sequence[Path]) -> str:
    """Markdown list of every artifact in a run directory, sorted by relative path."""
    run_dir = Path(run_dir)
    entries = sorted(str(Path(f).relative_to(run_dir).as_posix()) for f in files)
    lines = [f"# Run artifacts: {run_dir.name}", ""]
    lines += [f"- [{entry}]({entry})" for entry in entries]
    return "\n".join(lines) + "\n"
