"""Classification metrics (confusion matrix, per-class precision/recall/F1,
overall accuracy, Cohen's kappa) and palette-based map rendering."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError

# 16 visually distinct colors for classes 1..16; label 0 renders black.
DEFAULT_PALETTE: dict[int, tuple[int, int, int]] = {
    1: (230, 25, 75),
    2: (60, 180, 75),
    3: (255, 225, 25),
    4: (0, 130, 200),
    5: (245, 130, 48),
    6: (145, 30, 180),
    7: (70, 240, 240),
    8: (240, 50, 230),
    9: (210, 245, 60),
    10: (250, 190, 212),
    11: (0, 128, 128),
    12: (220, 190, 255),
    13: (170, 110, 40),
    14: (255, 250, 200),
    15: (128, 0, 0),
    16: (170, 255, 195),
}


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[t-1][p-1] = pixels of true class t predicted as class p."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise DataError("confusion matrix must be square")
        if counts.min() < 0:
            raise DataError("confusion counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int
    degenerate: bool


@dataclass(frozen=True)
class EvaluationReport:
    per_class: tuple[ClassMetrics, ...]
    overall_accuracy: float  # percentage
    kappa: float
    confusion: ConfusionMatrix
    method: str = ""

    def __post_init__(self) -> None:
        for m in self.per_class:
            for v in (m.precision, m.recall, m.f1):
                if not 0.0 <= v <= 1.0:
                    raise DataError("per-class metrics must lie in [0, 1]")
        if not 0.0 <= self.overall_accuracy <= 100.0:
            raise DataError("overall accuracy must lie in [0, 100]")
        if not -1.0 - 1e-12 <= self.kappa <= 1.0 + 1e-12:
            raise DataError("kappa must lie in [-1, 1]")


def confusion(
    true_labels: np.ndarray, predicted_labels: np.ndarray, n_classes: int | None = None
) -> ConfusionMatrix:
    """Tally a confusion matrix from 1-based label vectors."""
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted_labels, dtype=np.int64)
    if t.shape != p.shape or t.ndim != 1:
        raise DataError(f"label vectors must be 1-D and equal length, got {t.shape} vs {p.shape}")
    if t.size == 0:
        raise DataError("cannot evaluate zero pixels")
    if n_classes is None:
        n_classes = int(max(t.max(), p.max()))
    for name, v in (("true", t), ("predicted", p)):
        if v.min() < 1 or v.max() > n_classes:
            raise DataError(f"{name} labels must lie in 1..{n_classes}")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (t - 1, p - 1), 1)
    return ConfusionMatrix(counts=counts)


def report(cm: ConfusionMatrix, method: str = "") -> EvaluationReport:
    """Derive the full metric set from a confusion matrix.

    Any 0/0 metric (class absent from both truth and prediction) is reported
    as 0 with the degenerate flag set. Overall accuracy is a percentage;
    kappa is (p_o - p_e) / (1 - p_e) against the marginal chance agreement.
    """
    counts = cm.counts
    total = cm.total
    if total == 0:
        raise DataError("confusion matrix is empty")
    tp = np.diag(counts).astype(np.float64)
    row = counts.sum(axis=1).astype(np.float64)  # true support
    col = counts.sum(axis=0).astype(np.float64)  # predicted support

    per_class = []
    for c in range(cm.n_classes):
        degenerate = False
        if col[c] > 0:
            precision = tp[c] / col[c]
        else:
            precision, degenerate = 0.0, True
        if row[c] > 0:
            recall = tp[c] / row[c]
        else:
            recall, degenerate = 0.0, True
        if precision + recall > 0:
            f1 = 2.0 * precision * recall / (precision + recall)
        else:
            f1 = 0.0
        per_class.append(
            ClassMetrics(
                precision=precision,
                recall=recall,
                f1=f1,
                support=int(row[c]),
                degenerate=degenerate,
            )
        )

    p_o = float(tp.sum()) / total
    p_e = float(row @ col) / (total * total)
    if p_e >= 1.0:
        # all mass in a single diagonal cell; agreement is trivially perfect
        kappa = 1.0
    else:
        kappa = (p_o - p_e) / (1.0 - p_e)
    return EvaluationReport(
        per_class=tuple(per_class),
        overall_accuracy=100.0 * p_o,
        kappa=kappa,
        confusion=cm,
        method=method,
    )


def report_to_dict(rep: EvaluationReport) -> dict:
    return {
        "method": rep.method,
        "n_classes": rep.confusion.n_classes,
        "total": rep.confusion.total,
        "per_class": [
            {
                "class": i + 1,
                "precision": m.precision,
                "recall": m.recall,
                "f1": m.f1,
                "support": m.support,
                "degenerate": m.degenerate,
            }
            for i, m in enumerate(rep.per_class)
        ],
        "overall_accuracy": rep.overall_accuracy,
        "kappa": rep.kappa,
        "confusion": rep.confusion.counts.tolist(),
    }


def report_to_json(rep: EvaluationReport) -> str:
    """Deterministic JSON rendering (sorted keys, full float precision)."""
    return json.dumps(report_to_dict(rep), indent=2, sort_keys=True) + "\n"


def report_table(reports: dict[str, EvaluationReport]) -> str:
    """Aligned text table: per-class PRECISION/RECALL/F1 for each method,
    then OA (2 decimals, percent) and KAPPA (2 decimals) rows."""
    if not reports:
        raise DataError("no reports to tabulate")
    methods = list(reports)
    n_classes = max(r.confusion.n_classes for r in reports.values())
    lines = []
    header1 = ["CLASS"]
    header2 = [""]
    for m in methods:
        header1 += [m.upper(), "", ""]
        header2 += ["PRECISION", "RECALL", "F1"]
    rows = [header1, header2]
    for c in range(n_classes):
        row = [str(c + 1)]
        for m in methods:
            rep = reports[m]
            if c < len(rep.per_class):
                cm = rep.per_class[c]
                row += [f"{cm.precision:.2f}", f"{cm.recall:.2f}", f"{cm.f1:.2f}"]
            else:
                row += ["-", "-", "-"]
        rows.append(row)
    oa_row = ["OA"]
    kappa_row = ["KAPPA"]
    for m in methods:
        oa_row += [f"{reports[m].overall_accuracy:.2f}", "", ""]
        kappa_row += [f"{reports[m].kappa:.2f}", "", ""]
    rows.append(oa_row)
    rows.append(kappa_row)

    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    for r in rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"


def scatter_to_raster(
    shape: tuple[int, int], coords: np.ndarray, labels: np.ndarray
) -> np.ndarray:
    """Place per-pixel labels back into an image-shaped u16 raster.

    Positions not covered by ``coords`` stay 0 (background/unevaluated).
    """
    coords = np.asarray(coords)
    labels = np.asarray(labels)
    raster = np.zeros(shape, dtype=np.uint16)
    raster[coords[:, 0], coords[:, 1]] = labels.astype(np.uint16)
    return raster


def render_map(
    raster: np.ndarray,
    path: Path | str,
    palette: dict[int, tuple[int, int, int]] | None = None,
) -> None:
    """Write a lossless PNG of a label raster, one image pixel per cell.

    Label 0 is black; every other label present must have a palette entry.
    Output bytes are deterministic for fixed input and palette.
    """
    raster = np.asarray(raster)
    if raster.ndim != 2:
        raise DataError("label raster must be 2-D")
    palette = DEFAULT_PALETTE if palette is None else palette
    present = [int(v) for v in np.unique(raster) if v != 0]
    missing = [v for v in present if v not in palette]
    if missing:
        raise DataError(f"no palette entry for label(s) {missing}")
    lut = np.zeros((max([0] + present) + 1, 3), dtype=np.uint8)
    for label in present:
        lut[label] = palette[label]
    rgb = lut[raster]
    Image.fromarray(rgb, mode="RGB").save(Path(path), format="PNG")
