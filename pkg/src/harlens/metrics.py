"""Accuracy, macro-F1, confusion matrices, and comparison against the
published reference numbers.

Confusion matrix convention here: rows = true activity, columns = predicted
activity, both in canonical label order (Walking, Upstairs, Downstairs,
Sitting, Standing, Lying).
"""

from __future__ import annotations

import numpy as np

from .data import ActivityLabel, ACTIVITY_NAMES

NUM_CLASSES = 6


class MetricsError(Exception):
    pass


def _as_indices(labels) -> np.ndarray:
    return np.asarray([l.value if isinstance(l, ActivityLabel) else int(l)
                       for l in labels], dtype=np.int64)


def confusion_matrix(predictions, truths) -> np.ndarray:
    """6x6 integer matrix, counts[true][pred]."""
    preds = _as_indices(predictions)
    trues = _as_indices(truths)
    if len(preds) != len(trues):
        raise MetricsError(f"length mismatch: {len(preds)} vs {len(trues)}")
    cm = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    np.add.at(cm, (trues, preds), 1)
    return cm


def accuracy(cm: np.ndarray) -> float:
    total = cm.sum()
    if total == 0:
        raise MetricsError("empty confusion matrix")
    return float(np.trace(cm) / total)


def macro_f1(cm: np.ndarray) -> float:
    """Unweighted mean of per-class F1 = 2PR/(P+R). A class that never
    occurs (neither true nor predicted) is excluded; a present class with
    P+R = 0 contributes F1 = 0."""
    if cm.sum() == 0:
        raise MetricsError("empty confusion matrix")
    f1s = []
    for k in range(cm.shape[0]):
        tp = cm[k, k]
        fn = cm[k].sum() - tp
        fp = cm[:, k].sum() - tp
        if tp + fn + fp == 0:
            continue
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom > 0 else 0.0)
    return float(np.mean(f1s))


# Published comparison numbers (Table 6): (accuracy, f1) per model family.
# Report-only constants; never oracles for freshly trained code.
REFERENCE_RESULTS = {
    "cnn": (0.919, 0.92),
    "lstm": (0.892, 0.89),
    "cnn-lstm": (0.951, 0.95),
    "fusion": (0.961, 0.96),
    "baseline-svm": (0.89, None),
    "baseline-fixedpoint": (0.893, None),
    "baseline-deep": (0.962, None),
}

# Published confusion matrices (rows = true, columns = predicted).
REFERENCE_CONFUSION_CNN_LSTM = np.array([
    [493,   3,   0,   0,   0,   0],
    [  3, 466,   2,   0,   0,   0],
    [  3,  18, 398,   0,   1,   0],
    [  0,   1,   0, 421,  69,   0],
    [  0,   0,   0,  42, 490,   0],
    [  0,   0,   0,   0,   1, 536],
])

REFERENCE_CONFUSION_FUSION = np.array([
    [487,   6,   3,   0,   0,   0],
    [  1, 468,   2,   0,   0,   0],
    [  0,  13, 407,   0,   0,   0],
    [  0,   2,   0, 431,  58,   0],
    [  0,   0,   0,  29, 503,   0],
    [  0,   0,   0,   0,   0, 537],
])


def compare_report(results: dict[str, tuple[float, float | None]],
                   tolerance: float = 0.015) -> str:
    """Aligned-text table of measured (accuracy, F1) pairs next to the
    reference constants, with deltas; |delta| > tolerance is flagged."""
    if not results:
        raise MetricsError("need at least one result")
    lines = [f"{'model':<22}{'acc':>8}{'ref':>8}{'delta':>9}   "
             f"{'f1':>6}{'ref':>8}{'delta':>9}"]
    for name, (acc, f1) in results.items():
        if not name:
            raise MetricsError("result name must be non-empty")
        ref = REFERENCE_RESULTS.get(name)
        if ref is None:
            lines.append(f"{name:<22}{acc:>8.3f}{'-':>8}{'-':>9}   "
                         f"{_fmt(f1):>6}{'-':>8}{'-':>9}")
            continue
        ref_acc, ref_f1 = ref
        d_acc = acc - ref_acc
        flag_a = " !" if abs(d_acc) > tolerance else ""
        if f1 is not None and ref_f1 is not None:
            d_f1 = f1 - ref_f1
            flag_f = " !" if abs(d_f1) > tolerance else ""
            f1_part = f"{f1:>6.3f}{ref_f1:>8.3f}{d_f1:>+8.3f}{flag_f}"
        else:
            f1_part = f"{_fmt(f1):>6}{_fmt(ref_f1):>8}{'-':>9}"
        lines.append(f"{name:<22}{acc:>8.3f}{ref_acc:>8.3f}{d_acc:>+8.3f}{flag_a}   "
                     f"{f1_part}")
    return "\n".join(lines)


def _fmt(v) -> str:
    return "-" if v is None else f"{v:.3f}"


def format_confusion(cm: np.ndarray) -> str:
    """Both orientations with explicit headers, activity names in canonical
    order."""
    out = []
    for title, matrix in (("rows=true, columns=predicted", cm),
                          ("rows=predicted, columns=true", cm.T)):
        out.append(title)
        header = f"{'':<12}" + "".join(f"{n:>12}" for n in ACTIVITY_NAMES)
        out.append(header)
        for name, row in zip(ACTIVITY_NAMES, matrix):
            out.append(f"{name:<12}" + "".join(f"{v:>12d}" for v in row))
        out.append("")
    return "\n".join(out)


def confusion_csv(cm: np.ndarray) -> str:
    lines = ["true\\pred," + ",".join(ACTIVITY_NAMES)]
    for name, row in zip(ACTIVITY_NAMES, cm):
        lines.append(name + "," + ",".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"
