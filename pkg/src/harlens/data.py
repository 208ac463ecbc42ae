"""Dataset handling: UCI HAR inertial-signal ingestion, synthetic corpora,
per-channel standardization, and column slicing.

Windows are 128 time steps x 9 sensor channels. Channel layout (fixed):
columns 0-2 body acceleration x/y/z [g], 3-5 gyroscope x/y/z [rad/s],
6-8 total acceleration x/y/z [g, includes gravity].
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd

WINDOW_LEN = 128
NUM_CHANNELS = 9

# Canonical file order: body_acc, gyro, total_acc (x, y, z within each group).
CHANNEL_FILE_STEMS = [
    "body_acc_x", "body_acc_y", "body_acc_z",
    "body_gyro_x", "body_gyro_y", "body_gyro_z",
    "total_acc_x", "total_acc_y", "total_acc_z",
]

CHANNEL_NAMES = [
    "BodyAccX", "BodyAccY", "BodyAccZ",
    "GyroX", "GyroY", "GyroZ",
    "TotalAccX", "TotalAccY", "TotalAccZ",
]


class DatasetError(Exception):
    """Raised for malformed or missing dataset inputs."""


class ActivityLabel(Enum):
    """The six activity classes, in their canonical (raw label 1..6) order."""

    WALKING = 0
    UPSTAIRS = 1
    DOWNSTAIRS = 2
    SITTING = 3
    STANDING = 4
    LYING = 5

    @property
    def display_name(self) -> str:
        return _DISPLAY_NAMES[self]

    @classmethod
    def from_raw(cls, raw: int) -> "ActivityLabel":
        """Map raw file label 1..6 to an ActivityLabel."""
        if not 1 <= raw <= 6:
            raise DatasetError(f"raw label {raw} outside 1..6")
        return cls(raw - 1)

    def to_raw(self) -> int:
        return self.value + 1


_DISPLAY_NAMES = {
    ActivityLabel.WALKING: "Walking",
    ActivityLabel.UPSTAIRS: "Upstairs",
    ActivityLabel.DOWNSTAIRS: "Downstairs",
    ActivityLabel.SITTING: "Sitting",
    ActivityLabel.STANDING: "Standing",
    ActivityLabel.LYING: "Lying",
}

ACTIVITY_NAMES = [label.display_name for label in ActivityLabel]


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel mean/stddev used for z-score standardization."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if self.mean.shape != self.std.shape:
            raise ValueError("mean/std shape mismatch")
        if np.any(self.std <= 0):
            raise ValueError("stddev entries must be strictly positive")


@dataclass(frozen=True)
class LabeledDataset:
    """Parallel windows/labels for one split.

    windows: float64 array (N, 128, C); labels: int array (N,) of class
    indices 0..5; split: 'train' | 'test' | 'synthetic'.
    """

    windows: np.ndarray
    labels: np.ndarray
    split: str
    stats: ChannelStats | None = None

    def __post_init__(self):
        if len(self.windows) != len(self.labels) or len(self.windows) == 0:
            raise DatasetError("windows and labels must have equal nonzero length")
        self.windows.flags.writeable = False
        self.labels.flags.writeable = False

    def __len__(self) -> int:
        return len(self.windows)

    @property
    def num_channels(self) -> int:
        return self.windows.shape[2]

    def class_counts(self) -> np.ndarray:
        """Per-class window counts in canonical label order."""
        return np.bincount(self.labels, minlength=6)


def validate_window(window: np.ndarray) -> None:
    if window.ndim != 2 or window.shape[0] != WINDOW_LEN:
        raise DatasetError(f"window shape {window.shape}, expected ({WINDOW_LEN}, C)")
    if not np.all(np.isfinite(window)):
        raise DatasetError("window contains non-finite values")


def _read_signal_file(path: Path) -> np.ndarray:
    if not path.is_file():
        raise DatasetError(f"missing file: {path}")
    try:
        frame = pd.read_csv(path, header=None, sep=r"\s+", dtype=np.float64)
    except Exception:
        _locate_bad_row(path)
        raise DatasetError(f"{path}: unparseable numeric data")
    values = frame.to_numpy()
    if values.shape[1] != WINDOW_LEN or np.isnan(values).any():
        _locate_bad_row(path)
    return values


def _locate_bad_row(path: Path) -> None:
    """Slow path: find the first malformed row for a precise error message."""
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if len(fields) != WINDOW_LEN:
                raise DatasetError(
                    f"{path}:{lineno}: expected {WINDOW_LEN} values, got {len(fields)}")
            try:
                [float(f) for f in fields]
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: non-numeric value")
    raise DatasetError(f"{path}: malformed data")


def _read_labels(path: Path) -> np.ndarray:
    if not path.is_file():
        raise DatasetError(f"missing file: {path}")
    raw = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                value = int(line)
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: non-integer label {line!r}")
            if not 1 <= value <= 6:
                raise DatasetError(f"{path}:{lineno}: label {value} outside 1..6")
            raw.append(value)
    return np.asarray(raw, dtype=np.int64) - 1


def load_uci_har(root_path: str | os.PathLike, split: str) -> LabeledDataset:
    """Load one split ('train' or 'test') of the UCI HAR distribution.

    Expects root/<split>/Inertial Signals/<signal>_<split>.txt (nine files,
    128 floats per row) and root/<split>/y_<split>.txt (one label 1-6 per
    row).
    """
    split = split.lower()
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    root = Path(root_path)
    signals_dir = root / split / "Inertial Signals"
    channels = []
    for stem in CHANNEL_FILE_STEMS:
        values = _read_signal_file(signals_dir / f"{stem}_{split}.txt")
        channels.append(values)
    rows = {c.shape[0] for c in channels}
    if len(rows) != 1:
        raise DatasetError(f"{signals_dir}: signal files disagree on window count {sorted(rows)}")
    windows = np.stack(channels, axis=2)  # (N, 128, 9)
    labels = _read_labels(root / split / f"y_{split}.txt")
    if len(labels) != len(windows):
        raise DatasetError(
            f"{root}/{split}: {len(windows)} windows but {len(labels)} labels")
    return LabeledDataset(windows=windows, labels=labels, split=split)


def synthesize(class_count: int, windows_per_class: int, seed: int) -> LabeledDataset:
    """Deterministic desk-scale dataset: one sinusoid signature per class
    plus seeded Gaussian noise. Same arguments -> bit-identical output.
    """
    if not 2 <= class_count <= 6:
        raise ValueError(f"class_count {class_count} outside 2..6")
    if windows_per_class < 1:
        raise ValueError("windows_per_class must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    t = np.arange(WINDOW_LEN) / WINDOW_LEN
    windows = np.empty((class_count * windows_per_class, WINDOW_LEN, NUM_CHANNELS))
    labels = np.empty(class_count * windows_per_class, dtype=np.int64)
    idx = 0
    for k in range(class_count):
        freq = k + 1.0
        for _ in range(windows_per_class):
            phase = rng.uniform(0, 2 * np.pi)
            for c in range(NUM_CHANNELS):
                amp = 1.0 + 0.5 * ((3 * k + c) % 4)
                windows[idx, :, c] = amp * np.sin(
                    2 * np.pi * freq * (1 + 0.25 * c) * t + phase + c)
            windows[idx] += 0.1 * rng.standard_normal((WINDOW_LEN, NUM_CHANNELS))
            labels[idx] = k
            idx += 1
    return LabeledDataset(windows=windows, labels=labels, split="synthetic")


STD_CLAMP = 1e-8


def standardize(dataset: LabeledDataset,
                stats: ChannelStats | None = None) -> tuple[LabeledDataset, ChannelStats]:
    """Z-score per channel. With stats=None, moments are fit on the given
    dataset (train path); otherwise the provided stats are applied frozen
    (test path). Degenerate stddev (<1e-8) clamps to 1.
    """
    if stats is None:
        flat = dataset.windows.reshape(-1, dataset.num_channels)
        mean = flat.mean(axis=0)
        std = flat.std(axis=0)
        std = np.where(std < STD_CLAMP, 1.0, std)
        stats = ChannelStats(mean=mean, std=std)
    out = (dataset.windows - stats.mean) / stats.std
    result = LabeledDataset(windows=out, labels=dataset.labels.copy(),
                            split=dataset.split, stats=stats)
    return result, stats


def select_columns(window: np.ndarray, columns) -> np.ndarray:
    """Slice the named channel columns (strictly increasing, each 0..8)."""
    cols = list(columns)
    if not cols:
        raise ValueError("column set must be non-empty")
    if any(not 0 <= c < NUM_CHANNELS for c in cols):
        raise ValueError(f"column index outside 0..{NUM_CHANNELS - 1}: {cols}")
    if any(b <= a for a, b in zip(cols, cols[1:])):
        raise ValueError(f"columns must be strictly increasing: {cols}")
    return window[..., cols]


def select_columns_dataset(dataset: LabeledDataset, columns) -> LabeledDataset:
    windows = select_columns(dataset.windows, columns)
    return LabeledDataset(windows=windows, labels=dataset.labels.copy(),
                          split=dataset.split, stats=dataset.stats)


def export_uci_layout(dataset: LabeledDataset, root_path: str | os.PathLike,
                      split: str) -> None:
    """Write a dataset in the UCI HAR text layout (for loader round-trips)."""
    root = Path(root_path)
    signals_dir = root / split / "Inertial Signals"
    signals_dir.mkdir(parents=True, exist_ok=True)
    for c, stem in enumerate(CHANNEL_FILE_STEMS):
        np.savetxt(signals_dir / f"{stem}_{split}.txt",
                   dataset.windows[:, :, c], fmt="%.7e")
    np.savetxt(root / split / f"y_{split}.txt", dataset.labels + 1, fmt="%d")
