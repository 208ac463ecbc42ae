"""Per-layer feature-map capture and heatmap rendering.

Rendered images follow the feature-graph axis convention: rows are time
steps (top to bottom), columns are sensor columns. Intensity is min-max
normalized per image; a constant map renders uniform mid-gray.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .data import LabeledDataset, ActivityLabel
from .models import TrainedModel
from . import nn

AGGREGATIONS = ("meanabs", "maxabs", "perfiltergrid")
DEFAULT_SCALE = 8


@dataclass(frozen=True)
class FeatureMap:
    """Activations captured after one conv block's pooling stage:
    (T', columns, filters)."""

    layer_index: int
    activations: np.ndarray
    source_window_id: int = -1
    source_label: ActivityLabel | None = None


def feature_maps(model: TrainedModel, window: np.ndarray, layer_index: int,
                 window_id: int = -1,
                 label: ActivityLabel | None = None) -> FeatureMap:
    """Run one (T, C) window through the frozen model and capture the
    activations right after block layer_index's max pooling. Capture never
    perturbs the prediction (inference mode, pure forward)."""
    if not 1 <= layer_index <= model.config.conv_depth:
        raise ValueError(
            f"layer index {layer_index} outside 1..{model.config.conv_depth}")
    tag = f"pool{layer_index}"
    _, captured = model.network.forward(window[None, ..., None],
                                        training=False, capture={tag})
    return FeatureMap(layer_index=layer_index, activations=captured[tag][0],
                      source_window_id=window_id, source_label=label)


def sample_windows_per_activity(dataset: LabeledDataset, n: int,
                                seed: int) -> dict[ActivityLabel, list[int]]:
    """Seeded uniform sampling of n window ids per activity, without
    replacement, classes visited in canonical order."""
    rng = nn.make_rng([seed, 3])
    out = {}
    for label in ActivityLabel:
        ids = np.nonzero(dataset.labels == label.value)[0]
        if len(ids) < n:
            raise ValueError(
                f"{label.display_name}: only {len(ids)} windows, need {n}")
        picked = rng.choice(ids, size=n, replace=False)
        out[label] = [int(i) for i in picked]
    return out


def aggregate(feature_map: FeatureMap, aggregation: str) -> np.ndarray:
    """Collapse the filter axis to a 2D panel (or panel grid)."""
    acts = feature_map.activations
    agg = aggregation.lower()
    if agg == "meanabs":
        return np.abs(acts).mean(axis=2)
    if agg == "maxabs":
        return np.abs(acts).max(axis=2)
    if agg == "perfiltergrid":
        t, w, f = acts.shape
        grid_cols = int(np.ceil(np.sqrt(f)))
        grid_rows = -(-f // grid_cols)
        tiled = np.zeros((grid_rows * t, grid_cols * w))
        for k in range(f):
            r, c = divmod(k, grid_cols)
            tiled[r * t:(r + 1) * t, c * w:(c + 1) * w] = np.abs(acts[:, :, k])
        return tiled
    raise ValueError(f"unknown aggregation {aggregation!r}; use one of {AGGREGATIONS}")


def to_grayscale(panel: np.ndarray, scale: int = DEFAULT_SCALE) -> np.ndarray:
    """Min-max normalize to uint8 and upscale with nearest-neighbor pixels.
    A constant panel maps to mid-gray (0.5)."""
    lo, hi = panel.min(), panel.max()
    if hi - lo < 1e-300:
        norm = np.full_like(panel, 0.5, dtype=np.float64)
    else:
        norm = (panel - lo) / (hi - lo)
    img = np.round(norm * 255).astype(np.uint8)
    if scale > 1:
        img = np.kron(img, np.ones((scale, scale), dtype=np.uint8))
    return img


def render_heatmap(feature_map: FeatureMap, aggregation: str = "meanabs",
                   scale: int = DEFAULT_SCALE) -> np.ndarray:
    """Grayscale uint8 image of the aggregated feature map."""
    if feature_map.activations.size == 0:
        raise ValueError("empty feature map")
    return to_grayscale(aggregate(feature_map, aggregation), scale=scale)


def write_pgm(image: np.ndarray, path) -> None:
    """Binary (P5) portable graymap."""
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(image.astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    fields = blob.split(maxsplit=4)
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    return np.frombuffer(fields[4][:w * h], dtype=np.uint8).reshape(h, w)


def write_png(image: np.ndarray, path) -> None:
    Image.fromarray(image, mode="L").save(path)


def write_panel_csv(panel: np.ndarray, path) -> None:
    """Raw aggregated matrix (rows = time, columns = sensor columns)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"col{c}" for c in range(panel.shape[1])])
        for row in panel:
            writer.writerow([f"{v:.12g}" for v in row])


def heatmap_filename(activity: ActivityLabel, window_id: int, layer: int,
                     aggregation: str, ext: str) -> str:
    return (f"{activity.display_name.lower()}_w{window_id}"
            f"_layer{layer}_{aggregation.lower()}.{ext}")


def export_feature_maps(model: TrainedModel, dataset: LabeledDataset,
                        layers, per_class: int, seed: int, out_dir,
                        aggregation: str = "meanabs",
                        scale: int = DEFAULT_SCALE,
                        formats: tuple[str, ...] = ("pgm", "png", "csv")) -> list[Path]:
    """Render heatmaps per (sampled window, layer); returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sampled = sample_windows_per_activity(dataset, per_class, seed)
    written = []
    for label, ids in sampled.items():
        for wid in ids:
            for layer in layers:
                fmap = feature_maps(model, dataset.windows[wid], layer,
                                    window_id=wid, label=label)
                panel = aggregate(fmap, aggregation)
                image = to_grayscale(panel, scale=scale)
                stem = heatmap_filename(label, wid, layer, aggregation, "")[:-1]
                if "pgm" in formats:
                    path = out_dir / f"{stem}.pgm"
                    write_pgm(image, path)
                    written.append(path)
                if "png" in formats:
                    path = out_dir / f"{stem}.png"
                    write_png(image, path)
                    written.append(path)
                if "csv" in formats:
                    path = out_dir / f"{stem}.csv"
                    write_panel_csv(panel, path)
                    written.append(path)
    return written
