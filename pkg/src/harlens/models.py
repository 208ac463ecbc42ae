"""Network construction, training, prediction, and model persistence.

Canonical hyperparameters (NetworkConfig defaults): 128x9 input, 50 filters
per conv layer, 5x1 kernels, 3x1 max pooling, dropout 0.5, learning rate
0.01, batch size 32, 50 epochs.
"""

from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from . import nn
from .data import LabeledDataset, ActivityLabel

NUM_CLASSES = 6

MAGIC = b"HARM"
FORMAT_VERSION = 1


class ModelError(Exception):
    pass


class TrainingDiverged(ModelError):
    """A parameter became non-finite during training."""


@dataclass(frozen=True)
class NetworkConfig:
    input_time: int = 128
    input_channels: int = 9
    conv_depth: int = 3
    filters: int = 50
    kernel_time: int = 5
    pool_size: int = 3
    dropout_prob: float = 0.5
    learning_rate: float = 0.01
    epochs: int = 50
    batch_size: int = 32
    lstm_hidden: int | None = None
    arch: str = "cnn"  # 'cnn' | 'cnn-lstm'
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.conv_depth <= 5:
            raise ValueError(f"conv_depth {self.conv_depth} outside 1..5")
        if self.arch not in ("cnn", "cnn-lstm"):
            raise ValueError(f"unknown arch {self.arch!r}")
        if self.arch == "cnn-lstm" and self.lstm_hidden is None:
            raise ValueError("cnn-lstm requires lstm_hidden")


def pooled_time_trace(input_time: int, depth: int, pool_size: int = 3) -> list[int]:
    """Time-axis length after each conv block (same-padded conv + pool)."""
    trace = []
    t = input_time
    for _ in range(depth):
        if t >= pool_size:
            t = -(-t // pool_size)
        trace.append(t)
    return trace


def _conv_blocks(config: NetworkConfig, init_rng) -> list[nn.Layer]:
    layers: list[nn.Layer] = []
    in_maps = 1
    for d in range(config.conv_depth):
        conv = nn.Conv2D(in_maps, config.filters, kernel_time=config.kernel_time,
                         padding="same", rng=init_rng)
        pool = nn.MaxPool(config.pool_size)
        pool.tag = f"pool{d + 1}"
        drop = nn.Dropout(config.dropout_prob,
                          rng=nn.make_rng([config.seed, 1, d]))
        layers += [conv, nn.ReLU(), pool, nn.BatchNorm(config.filters), drop]
        in_maps = config.filters
    return layers


def build_cnn(config: NetworkConfig) -> nn.Network:
    """conv_depth x [Conv2D -> ReLU -> MaxPool -> BatchNorm -> Dropout],
    then Flatten -> Dense(6) -> Softmax."""
    init_rng = nn.make_rng([config.seed, 0])
    layers = _conv_blocks(config, init_rng)
    t_final = pooled_time_trace(config.input_time, config.conv_depth,
                                config.pool_size)[-1]
    flat_dim = t_final * config.input_channels * config.filters
    layers += [nn.Flatten(), nn.Dense(flat_dim, NUM_CLASSES, rng=init_rng),
               nn.Softmax()]
    return nn.Network(layers)


def build_cnn_lstm(config: NetworkConfig) -> nn.Network:
    """Conv blocks, then per-time-step features into a single LSTM; the
    final hidden state feeds Dense(6) -> Softmax."""
    if config.lstm_hidden is None:
        raise ValueError("cnn-lstm requires lstm_hidden")
    init_rng = nn.make_rng([config.seed, 0])
    layers = _conv_blocks(config, init_rng)
    step_dim = config.input_channels * config.filters
    layers += [
        nn.TimeFlatten(),
        nn.LSTM(step_dim, config.lstm_hidden, rng=init_rng),
        nn.Dense(config.lstm_hidden, NUM_CLASSES, rng=init_rng),
        nn.Softmax(),
    ]
    return nn.Network(layers)


def build_network(config: NetworkConfig) -> nn.Network:
    if config.arch == "cnn-lstm":
        return build_cnn_lstm(config)
    return build_cnn(config)


@dataclass
class TrainedModel:
    config: NetworkConfig
    network: nn.Network
    column_subset: tuple[int, ...]
    history: list[dict] = field(default_factory=list)


def one_hot(labels: np.ndarray, num_classes: int = NUM_CLASSES) -> np.ndarray:
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def train(network: nn.Network, train_set: LabeledDataset, config: NetworkConfig,
          column_subset: tuple[int, ...] | None = None) -> TrainedModel:
    """Mini-batch SGD for config.epochs epochs with a per-epoch seeded
    shuffle. Records per-epoch mean loss and train accuracy (accumulated
    over the training-mode batch passes)."""
    if len(train_set) == 0:
        raise ModelError("empty training set")
    if train_set.num_channels != config.input_channels:
        raise ModelError(
            f"dataset has {train_set.num_channels} channels, config expects "
            f"{config.input_channels}")
    if column_subset is None:
        column_subset = tuple(range(config.input_channels))
    x_all = train_set.windows[..., None]
    y_all = one_hot(train_set.labels)
    n = len(train_set)
    history = []
    for epoch in range(config.epochs):
        order = nn.make_rng([config.seed, 2, epoch]).permutation(n)
        losses = []
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = x_all[idx], y_all[idx]
            probs = network.forward(xb, training=True)
            losses.append(nn.cross_entropy(probs, yb) * len(idx))
            correct += int((probs.argmax(axis=1) == yb.argmax(axis=1)).sum())
            grad = nn.softmax_cross_entropy_grad(probs, yb)
            for layer in reversed(network.layers[:-1]):
                grad = layer.backward(grad)
            nn.sgd_step(network, config.learning_rate)
        if not network.all_finite():
            raise TrainingDiverged(f"non-finite parameter after epoch {epoch}")
        history.append({"epoch": epoch, "loss": sum(losses) / n,
                        "accuracy": correct / n})
    return TrainedModel(config=config, network=network,
                        column_subset=tuple(column_subset), history=history)


def train_model(train_set: LabeledDataset, config: NetworkConfig,
                column_subset: tuple[int, ...] | None = None) -> TrainedModel:
    """Build + train in one step."""
    return train(build_network(config), train_set, config, column_subset)


def predict_batch(model: TrainedModel, windows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inference on (N, T, C) windows -> (argmax class indices, (N, 6) probs).
    Ties break to the lowest class index."""
    if windows.ndim != 3 or windows.shape[2] != model.config.input_channels:
        raise ModelError(
            f"expected windows (N, T, {model.config.input_channels}), got {windows.shape}")
    probs = model.network.forward(windows[..., None], training=False)
    return probs.argmax(axis=1), probs


def predict(model: TrainedModel, window: np.ndarray) -> tuple[ActivityLabel, np.ndarray]:
    """Classify one (T, C) window."""
    if window.ndim != 2:
        raise ModelError(f"expected a (T, C) window, got shape {window.shape}")
    labels, probs = predict_batch(model, window[None])
    return ActivityLabel(int(labels[0])), probs[0]


def evaluate(model: TrainedModel, test_set: LabeledDataset,
             batch_size: int = 256) -> dict:
    """Test-set accuracy, macro-F1, and confusion matrix."""
    from .metrics import confusion_matrix, accuracy, macro_f1
    preds = np.empty(len(test_set), dtype=np.int64)
    for start in range(0, len(test_set), batch_size):
        sl = slice(start, start + batch_size)
        preds[sl], _ = predict_batch(model, test_set.windows[sl])
    cm = confusion_matrix(preds, test_set.labels)
    return {"accuracy": accuracy(cm), "macro_f1": macro_f1(cm), "confusion": cm}


def run_depth_sweep(train_set: LabeledDataset, test_set: LabeledDataset,
                    depths, config: NetworkConfig) -> list[dict]:
    """Train one CNN per depth (same seed) and report test metrics."""
    rows = []
    for depth in depths:
        cfg = replace(config, conv_depth=depth, arch="cnn")
        model = train_model(train_set, cfg)
        result = evaluate(model, test_set)
        rows.append({"depth": depth, "accuracy": result["accuracy"],
                     "macro_f1": result["macro_f1"]})
    return rows


# --- persistence -----------------------------------------------------------
#
# Container layout: MAGIC, u32 format version, u32 header length, JSON
# header (config + column subset + history), u32 tensor count, per tensor
# (u16 name length, name, u8 ndim, u32 dims..., float64 payload), then a
# trailing u32 crc32 of everything before it.

def _serialize(model: TrainedModel) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    header = json.dumps({
        "config": asdict(model.config),
        "column_subset": list(model.column_subset),
        "history": model.history,
    }).encode()
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    tensors = model.network.param_dict()
    buf.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        value = np.ascontiguousarray(tensors[name], dtype=np.float64)
        encoded = name.encode()
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<B", value.ndim))
        for dim in value.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(value.tobytes())
    payload = buf.getvalue()
    return payload + struct.pack("<I", zlib.crc32(payload))


def save_model(model: TrainedModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_serialize(model))


def model_bytes(model: TrainedModel) -> bytes:
    return _serialize(model)


def load_model(path) -> TrainedModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise ModelError(f"{path}: not a model file (bad magic)")
    payload, crc_stored = blob[:-4], struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(payload) != crc_stored:
        raise ModelError(f"{path}: checksum failure (corrupt or truncated)")
    off = 4
    version, = struct.unpack_from("<I", payload, off)
    off += 4
    if version != FORMAT_VERSION:
        raise ModelError(f"{path}: unsupported format version {version}")
    header_len, = struct.unpack_from("<I", payload, off)
    off += 4
    header = json.loads(payload[off:off + header_len].decode())
    off += header_len
    config = NetworkConfig(**header["config"])
    count, = struct.unpack_from("<I", payload, off)
    off += 4
    tensors = {}
    for _ in range(count):
        name_len, = struct.unpack_from("<H", payload, off)
        off += 2
        name = payload[off:off + name_len].decode()
        off += name_len
        ndim, = struct.unpack_from("<B", payload, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", payload, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(
            payload, dtype="<f8", count=size, offset=off).reshape(shape).copy()
        off += 8 * size
    network = build_network(config)
    network.load_param_dict(tensors)
    return TrainedModel(config=config, network=network,
                        column_subset=tuple(header["column_subset"]),
                        history=header["history"])
