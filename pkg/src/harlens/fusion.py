"""Three-model column-subset voting ensemble.

Model-M sees all 9 columns, Model-m1 columns {3,4,5,6,7,8}, Model-m2
columns {3,4,6,7}; all three are CNN-LSTM networks with the same layer
stack (parameter shapes adapt to the input width). Voting: majority label
if any two models agree, otherwise Model-M's answer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import LabeledDataset, ActivityLabel, select_columns, select_columns_dataset
from .models import (NetworkConfig, TrainedModel, train_model, predict,
                     predict_batch, save_model, load_model)

SUBSET_M = tuple(range(9))
SUBSET_M1 = (3, 4, 5, 6, 7, 8)
SUBSET_M2 = (3, 4, 6, 7)

MANIFEST_NAME = "ensemble.json"
MODEL_FILES = ("model_M.harm", "model_m1.harm", "model_m2.harm")


@dataclass
class FusionEnsemble:
    model_M: TrainedModel
    model_m1: TrainedModel
    model_m2: TrainedModel
    master_seed: int

    def __post_init__(self):
        if self.model_M.column_subset != SUBSET_M:
            raise ValueError("Model-M must cover all 9 columns")
        for model in self.models:
            if len(model.column_subset) != model.config.input_channels:
                raise ValueError(
                    f"subset {model.column_subset} inconsistent with "
                    f"{model.config.input_channels} input channels")

    @property
    def models(self):
        return (self.model_M, self.model_m1, self.model_m2)

    @property
    def subsets(self):
        return tuple(m.column_subset for m in self.models)


def derive_seed(master_seed: int, index: int) -> int:
    """Per-model seed from the master seed, decorrelated across models."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(index,))
    return int(ss.generate_state(1, np.uint64)[0])


def train_fusion(train_set: LabeledDataset, config: NetworkConfig,
                 subsets: tuple = (SUBSET_M, SUBSET_M1, SUBSET_M2)) -> FusionEnsemble:
    """Train the three CNN-LSTM models on their column slices. train_set is
    the full 9-column standardized split; each model gets its own seed
    derived from config.seed."""
    if train_set.num_channels != 9:
        raise ValueError("train_fusion needs the full 9-column dataset")
    models = []
    for index, subset in enumerate(subsets):
        cfg = replace(config, arch="cnn-lstm",
                      lstm_hidden=config.lstm_hidden or 64,
                      input_channels=len(subset),
                      seed=derive_seed(config.seed, index))
        sliced = (train_set if len(subset) == 9
                  else select_columns_dataset(train_set, subset))
        models.append(train_model(sliced, cfg, column_subset=tuple(subset)))
    return FusionEnsemble(*models, master_seed=config.seed)


def vote(result_M: ActivityLabel, result_m1: ActivityLabel,
         result_m2: ActivityLabel) -> ActivityLabel:
    """Majority label if any two of the three agree; otherwise Model-M's."""
    if result_m1 == result_m2:
        return result_m1
    # m1 != m2: any remaining majority necessarily includes M.
    return result_M


def predict_fusion(ensemble: FusionEnsemble, window: np.ndarray) -> ActivityLabel:
    """Classify one full 9-column window with the voting rule."""
    if window.ndim != 2 or window.shape[1] != 9:
        raise ValueError(f"expected a (T, 9) window, got {window.shape}")
    results = [predict(model, select_columns(window, subset))[0]
               for model, subset in zip(ensemble.models, ensemble.subsets)]
    return vote(*results)


def predict_fusion_batch(ensemble: FusionEnsemble, windows: np.ndarray,
                         batch_size: int = 256) -> np.ndarray:
    """Vectorized predict_fusion over (N, T, 9) windows -> class indices."""
    per_model = []
    for model, subset in zip(ensemble.models, ensemble.subsets):
        sliced = select_columns(windows, subset)
        preds = np.empty(len(windows), dtype=np.int64)
        for start in range(0, len(windows), batch_size):
            sl = slice(start, start + batch_size)
            preds[sl], _ = predict_batch(model, sliced[sl])
        per_model.append(preds)
    p_m, p_m1, p_m2 = per_model
    return np.where(p_m1 == p_m2, p_m1, p_m)


def evaluate_fusion(ensemble: FusionEnsemble, test_set: LabeledDataset) -> dict:
    from .metrics import confusion_matrix, accuracy, macro_f1
    preds = predict_fusion_batch(ensemble, test_set.windows)
    cm = confusion_matrix(preds, test_set.labels)
    return {"accuracy": accuracy(cm), "macro_f1": macro_f1(cm), "confusion": cm}


def save_ensemble(ensemble: FusionEnsemble, directory) -> None:
    """Three model files plus a manifest (subsets, master seed, version)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for model, filename in zip(ensemble.models, MODEL_FILES):
        save_model(model, directory / filename)
    manifest = {
        "format_version": 1,
        "master_seed": ensemble.master_seed,
        "models": [{"file": f, "column_subset": list(s)}
                   for f, s in zip(MODEL_FILES, ensemble.subsets)],
    }
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n")


def load_ensemble(directory) -> FusionEnsemble:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST_NAME).read_text())
    if manifest.get("format_version") != 1:
        raise ValueError(f"unsupported ensemble manifest version in {directory}")
    models = [load_model(directory / entry["file"]) for entry in manifest["models"]]
    return FusionEnsemble(*models, master_seed=manifest["master_seed"])
