import numpy as np
import pytest

import harlens as hl
from harlens import models


# --- independent oracles -----------------------------------------------


def conv2d_oracle(x, w, b, padding="same"):
    """Six-nested-loop direct convolution: kernel spans k time steps and a
    single column, summing over input feature maps."""
    n, t, cols, cin = x.shape
    k, _, cout = w.shape
    if padding == "same":
        before = (k - 1) // 2
        xpad = np.zeros((n, t + k - 1, cols, cin))
        xpad[:, before:before + t] = x
        t_out = t
    else:
        xpad = x
        t_out = t - k + 1
    out = np.zeros((n, t_out, cols, cout))
    for ni in range(n):
        for ti in range(t_out):
            for ci in range(cols):
                for oi in range(cout):
                    acc = 0.0
                    for ki in range(k):
                        for ii in range(cin):
                            acc += w[ki, ii, oi] * xpad[ni, ti + ki, ci, ii]
                    out[ni, ti, ci, oi] = acc + b[oi]
    return out


def maxpool_oracle(x, size=3):
    """Window max along time, stride = size, trailing partial window pooled
    as-is; identity when T < size."""
    n, t, cols, f = x.shape
    if t < size:
        return x.copy()
    t_out = -(-t // size)
    out = np.empty((n, t_out, cols, f))
    for ti in range(t_out):
        out[:, ti] = x[:, ti * size:min((ti + 1) * size, t)].max(axis=1)
    return out


def softmax_oracle(x):
    e = np.exp(x)
    return e / e.sum(axis=-1, keepdims=True)


def fd_param_grads(layer, x, upstream, h=1e-5, training=True):
    """Central finite-difference gradients for every parameter of `layer`
    under the scalar loss sum(forward(x) * upstream)."""
    grads = {}
    for key, p in layer.params.items():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = p[i]
            p[i] = orig + h
            fp = np.sum(layer.forward(x, training=training) * upstream)
            p[i] = orig - h
            fm = np.sum(layer.forward(x, training=training) * upstream)
            p[i] = orig
            g[i] = (fp - fm) / (2 * h)
        grads[key] = g
    return grads


def fd_input_grad(layer, x, upstream, h=1e-5, training=True):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        xp = x.copy()
        xp[i] += h
        fp = np.sum(layer.forward(xp, training=training) * upstream)
        xm = x.copy()
        xm[i] -= h
        fm = np.sum(layer.forward(xm, training=training) * upstream)
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)


LAYER_KINDS = ("conv2d", "maxpool", "relu", "dropout", "batchnorm", "dense",
               "lstm", "softmax")


def _random_layer_and_input(kind, rng):
    from harlens import nn

    seed = int(rng.integers(0, 2**31))
    if kind == "conv2d":
        cin, cout = int(rng.integers(1, 3)), int(rng.integers(1, 4))
        layer = nn.Conv2D(cin, cout, padding=rng.choice(["same", "valid"]),
                          rng=nn.make_rng(seed))
        x = rng.standard_normal((2, int(rng.integers(6, 10)),
                                 int(rng.integers(2, 4)), cin))
    elif kind == "maxpool":
        layer = nn.MaxPool()
        x = rng.standard_normal((2, int(rng.integers(2, 9)), 2, 2))
    elif kind == "relu":
        layer = nn.ReLU()
        x = rng.standard_normal((3, 4, 2, 2))
        x[np.abs(x) < 0.05] += 0.2  # stay clear of the kink
    elif kind == "dropout":
        layer = nn.Dropout(float(rng.uniform(0.1, 0.7)))
        x = rng.standard_normal((3, 5))
    elif kind == "batchnorm":
        f = int(rng.integers(1, 4))
        layer = nn.BatchNorm(f)
        x = rng.standard_normal((4, 3, 2, f)) * 2 + 1
    elif kind == "dense":
        din, dout = int(rng.integers(2, 6)), int(rng.integers(2, 5))
        layer = nn.Dense(din, dout, rng=nn.make_rng(seed))
        x = rng.standard_normal((3, din))
    elif kind == "lstm":
        din, h = int(rng.integers(2, 4)), int(rng.integers(2, 5))
        layer = nn.LSTM(din, h, rng=nn.make_rng(seed))
        x = rng.standard_normal((2, int(rng.integers(1, 5)), din))
    elif kind == "softmax":
        layer = nn.Softmax()
        x = rng.standard_normal((3, int(rng.integers(2, 7))))
    else:
        raise ValueError(kind)
    return layer, x


def gradient_check_layer(kind, config_index, base_seed=1000, h=1e-5):
    """Analytic vs central finite-difference gradients for one random layer
    configuration; returns the worst relative error over input and all
    parameters."""
    from harlens import nn

    rng = np.random.default_rng(base_seed + 97 * config_index)
    layer, x = _random_layer_and_input(kind, rng)
    if kind == "dropout":
        # freeze the mask so repeated forwards are the same function
        def pre():
            layer.rng = nn.make_rng(12345)
        pre()
    else:
        pre = None
    out = layer.forward(x, training=True)
    upstream = np.random.default_rng(base_seed + config_index).standard_normal(out.shape)
    if pre:
        pre()
    layer.forward(x, training=True)
    analytic_dx = layer.backward(upstream)
    analytic_params = {k: v.copy() for k, v in layer.grads.items()}

    def wrapped_forward(x_in, training=True):
        if pre:
            pre()
        return type(layer).forward(layer, x_in, training=training)

    shim = layer
    orig_forward = layer.forward
    layer.forward = wrapped_forward
    try:
        worst = rel_err(analytic_dx, fd_input_grad(shim, x, upstream, h=h))
        fd = fd_param_grads(shim, x, upstream, h=h)
        for k in analytic_params:
            worst = max(worst, rel_err(analytic_params[k], fd[k]))
    finally:
        layer.forward = orig_forward
    return worst


# --- shared data/models --------------------------------------------------


@pytest.fixture(scope="session")
def synth_splits():
    train = hl.synthesize(6, 10, 42)
    test = hl.synthesize(6, 10, 43)
    train_std, stats = hl.standardize(train)
    test_std, _ = hl.standardize(test, stats)
    return train_std, test_std


@pytest.fixture(scope="session")
def small_cnn(synth_splits):
    """Depth-3 CNN trained just enough to be meaningfully non-random."""
    train_std, _ = synth_splits
    cfg = models.NetworkConfig(epochs=8, seed=11)
    return models.train_model(train_std, cfg)


@pytest.fixture(scope="session")
def small_cnn_lstm(synth_splits):
    train_std, _ = synth_splits
    cfg = models.NetworkConfig(epochs=6, arch="cnn-lstm", lstm_hidden=16, seed=12)
    return models.train_model(train_std, cfg)
