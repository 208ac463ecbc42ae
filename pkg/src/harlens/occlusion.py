"""Occlusion attribution: zero one sensor column at model input, measure
per-activity retention of the correct classification, and derive each
activity's significant columns.

Occlusion is applied to the standardized window (zero at model input, i.e.
the channel mean in raw units), since that is what the network consumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset, ActivityLabel, ACTIVITY_NAMES, NUM_CHANNELS
from .models import TrainedModel, predict_batch

NUM_CLASSES = 6


@dataclass(frozen=True)
class OcclusionReport:
    """retention[a, c]: fraction of test windows truly of activity a still
    classified as a after zeroing column c. sample_counts: per-activity
    test window counts (the retention denominators)."""

    sample_counts: np.ndarray  # (6,)
    retention: np.ndarray      # (6, 9)
    model_id: str = ""

    def __post_init__(self):
        if np.any(self.sample_counts <= 0):
            raise ValueError("every activity needs at least one sample")
        if np.any((self.retention < 0) | (self.retention > 1)):
            raise ValueError("retention entries must lie in [0, 1]")


@dataclass(frozen=True)
class SignificantColumns:
    """Per-activity columns whose occlusion degrades recognition below the
    threshold, lowest retention first."""

    columns: dict[ActivityLabel, tuple[int, ...]]
    threshold: float


def occlude_column(window: np.ndarray, column: int) -> np.ndarray:
    """Copy of the window with the named column zeroed; the input is never
    mutated and all other entries are bit-identical."""
    if not 0 <= column < window.shape[-1]:
        raise ValueError(f"column {column} outside 0..{window.shape[-1] - 1}")
    out = window.copy()
    out[..., column] = 0.0
    return out


def occlusion_report(model: TrainedModel, test_set: LabeledDataset,
                     batch_size: int = 256, model_id: str = "") -> OcclusionReport:
    """Retention matrix over all 9 columns for a model trained on the full
    column set. test_set must already be standardized with train stats."""
    if model.config.input_channels != NUM_CHANNELS:
        raise ValueError("occlusion_report requires a full 9-column model")
    counts = test_set.class_counts()
    if np.any(counts == 0):
        missing = [ACTIVITY_NAMES[i] for i in np.nonzero(counts == 0)[0]]
        raise ValueError(f"test set has no windows for: {missing}")
    retention = np.zeros((NUM_CLASSES, NUM_CHANNELS))
    labels = test_set.labels
    for col in range(NUM_CHANNELS):
        occluded = occlude_column(test_set.windows, col)
        retained = np.zeros(NUM_CLASSES, dtype=np.int64)
        for start in range(0, len(test_set), batch_size):
            sl = slice(start, start + batch_size)
            preds, _ = predict_batch(model, occluded[sl])
            hit = preds == labels[sl]
            np.add.at(retained, labels[sl][hit], 1)
        retention[:, col] = retained / counts
    return OcclusionReport(sample_counts=counts, retention=retention,
                           model_id=model_id)


def derive_significant_columns(report: OcclusionReport, threshold: float,
                               max_columns: int) -> SignificantColumns:
    """Per activity: columns with retention < threshold, ordered lowest
    retention first (ties by column index), truncated to max_columns."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold {threshold} outside (0, 1]")
    if not 1 <= max_columns <= NUM_CHANNELS:
        raise ValueError(f"max_columns {max_columns} outside 1..{NUM_CHANNELS}")
    columns = {}
    for a in range(NUM_CLASSES):
        row = report.retention[a]
        hits = [(row[c], c) for c in range(NUM_CHANNELS) if row[c] < threshold]
        hits.sort()
        columns[ActivityLabel(a)] = tuple(c for _, c in hits[:max_columns])
    return SignificantColumns(columns=columns, threshold=threshold)


# Published per-activity significant columns (the manual analysis the
# fusion subsets were drawn from). Kept as constants, never recomputed.
PUBLISHED_SIGNIFICANT_COLUMNS = {
    ActivityLabel.WALKING: (3, 4),
    ActivityLabel.UPSTAIRS: (0, 7),
    ActivityLabel.DOWNSTAIRS: (0, 6),
    ActivityLabel.SITTING: (6,),
    ActivityLabel.STANDING: (3, 6),
    ActivityLabel.LYING: (7, 8),
}

# Published occlusion retention table, column-major: retention[activity,
# column] as fractions, activities in canonical order.
PUBLISHED_RETENTION = np.array([
    # col0  col1  col2  col3  col4  col5  col6  col7  col8
    [0.99, 0.98, 0.99, 0.19, 0.54, 0.60, 0.94, 0.96, 0.99],  # Walking
    [0.28, 0.98, 0.96, 0.84, 0.96, 0.97, 0.97, 0.46, 0.96],  # Upstairs
    [0.04, 1.00, 1.00, 0.76, 0.89, 0.94, 0.95, 1.00, 0.96],  # Downstairs
    [0.99, 0.96, 0.95, 1.00, 0.83, 0.97, 0.09, 0.90, 0.96],  # Sitting
    [0.99, 1.00, 1.00, 0.39, 1.00, 0.99, 0.52, 0.86, 0.98],  # Standing
    [1.00, 1.00, 1.00, 0.99, 1.00, 1.00, 1.00, 0.89, 0.92],  # Lying
])

# The published sample-count row accompanying that table. Disagrees with
# the known per-class test totals; logged for comparison only.
PUBLISHED_RETENTION_SAMPLE_COUNTS = np.array([477, 435, 364, 411, 475, 535])


def report_csv(report: OcclusionReport) -> str:
    """Retention percentages, activities as columns (published layout)."""
    lines = ["," + ",".join(ACTIVITY_NAMES)]
    lines.append("Sample number," + ",".join(str(int(c)) for c in report.sample_counts))
    for col in range(NUM_CHANNELS):
        cells = ",".join(f"{report.retention[a, col] * 100:.0f}%"
                         for a in range(NUM_CLASSES))
        lines.append(f"Column {col},{cells}")
    return "\n".join(lines) + "\n"


def format_significant(sig: SignificantColumns) -> str:
    lines = [f"significant columns (retention < {sig.threshold:.2f})"]
    for label in ActivityLabel:
        cols = sig.columns[label]
        body = ", ".join(str(c) for c in cols) if cols else "(none)"
        lines.append(f"  {label.display_name:<12} {body}")
    return "\n".join(lines)
