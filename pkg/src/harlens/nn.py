"""Minimal layer engine with exact reverse-mode gradients.

Everything is float64. Activations flow as numpy arrays with a leading
batch axis:

    conv stack tensors:  (N, T, W, F)   time x column x feature map
    dense tensors:       (N, D)
    LSTM inputs:         (N, T, F)

Each layer caches what its backward pass needs during forward; backward
must follow a forward on the same input. Randomness (init, dropout) comes
from numpy PCG64 generators, which produce an identical stream for an
identical seed on every platform.
"""

from __future__ import annotations

import numpy as np

CONV_KERNEL_TIME = 5
POOL_SIZE = 3


def make_rng(seed) -> np.random.Generator:
    """Seeded portable generator. `seed` may be an int or a sequence of
    ints (numpy SeedSequence entropy)."""
    return np.random.Generator(np.random.PCG64(seed))


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """Base layer: forward caches, backward consumes the cache."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def zero_grads(self):
        for k in self.params:
            self.grads[k] = np.zeros_like(self.params[k])


class Conv2D(Layer):
    """2D convolution with a (kernel_time x 1) kernel, stride 1.

    The kernel spans kernel_time steps along the time axis and a single
    sensor column, summing over all input feature maps; the column axis is
    preserved. Padding 'same' (zero) keeps T unchanged; 'valid' shrinks it
    to T - kernel_time + 1.
    """

    def __init__(self, in_maps: int, out_maps: int, kernel_time: int = CONV_KERNEL_TIME,
                 padding: str = "same", rng: np.random.Generator | None = None):
        super().__init__()
        if padding not in ("same", "valid"):
            raise ValueError(f"unknown padding {padding!r}")
        self.in_maps = in_maps
        self.out_maps = out_maps
        self.kernel_time = kernel_time
        self.padding = padding
        rng = rng or make_rng(0)
        fan_in = kernel_time * in_maps
        fan_out = kernel_time * out_maps
        self.params["w"] = glorot_uniform(rng, (kernel_time, in_maps, out_maps),
                                          fan_in, fan_out)
        self.params["b"] = np.zeros(out_maps)
        self._xpad = None

    def _pad(self, x):
        if self.padding == "valid":
            return x
        k = self.kernel_time
        before = (k - 1) // 2
        after = k - 1 - before
        return np.pad(x, ((0, 0), (before, after), (0, 0), (0, 0)))

    def forward(self, x, training=False):
        if x.ndim != 4 or x.shape[3] != self.in_maps:
            raise ValueError(
                f"expected input (N, T, W, {self.in_maps}), got {x.shape}")
        w, b = self.params["w"], self.params["b"]
        xpad = self._pad(x)
        t_out = xpad.shape[1] - self.kernel_time + 1
        if t_out < 1:
            raise ValueError(f"time axis {x.shape[1]} too short for valid conv")
        out = np.zeros(x.shape[:1] + (t_out,) + x.shape[2:3] + (self.out_maps,))
        for k in range(self.kernel_time):
            out += xpad[:, k:k + t_out] @ w[k]
        out += b
        self._xpad = xpad
        self._t_out = t_out
        return out

    def backward(self, grad):
        if self._xpad is None:
            raise RuntimeError("backward before forward")
        w = self.params["w"]
        xpad, t_out = self._xpad, self._t_out
        dw = np.empty_like(w)
        dxpad = np.zeros_like(xpad)
        for k in range(self.kernel_time):
            x_slice = xpad[:, k:k + t_out]
            dw[k] = np.einsum("ntwi,ntwo->io", x_slice, grad)
            dxpad[:, k:k + t_out] += grad @ w[k].T
        self.grads["w"] = dw
        self.grads["b"] = grad.sum(axis=(0, 1, 2))
        if self.padding == "same":
            before = (self.kernel_time - 1) // 2
            return dxpad[:, before:before + t_out]
        return dxpad


class MaxPool(Layer):
    """Max pooling along time: window 3, stride 3, trailing partial window
    pooled as-is. Identity when T < 3. Columns and feature maps untouched."""

    def __init__(self, size: int = POOL_SIZE):
        super().__init__()
        self.size = size
        self._cache = None

    def forward(self, x, training=False):
        n, t, w, f = x.shape
        if t < self.size:
            self._cache = ("identity", x.shape)
            return x
        t_out = -(-t // self.size)
        t_pad = t_out * self.size
        xpad = np.full((n, t_pad, w, f), -np.inf)
        xpad[:, :t] = x
        windows = xpad.reshape(n, t_out, self.size, w, f)
        arg = windows.argmax(axis=2)
        out = np.take_along_axis(windows, arg[:, :, None], axis=2)[:, :, 0]
        self._cache = ("pool", x.shape, arg)
        return out

    def backward(self, grad):
        if self._cache is None:
            raise RuntimeError("backward before forward")
        if self._cache[0] == "identity":
            return grad
        _, (n, t, w, f), arg = self._cache
        t_out = grad.shape[1]
        dxpad = np.zeros((n, t_out, self.size, w, f))
        np.put_along_axis(dxpad, arg[:, :, None], grad[:, :, None], axis=2)
        return dxpad.reshape(n, t_out * self.size, w, f)[:, :t]


class ReLU(Layer):
    def __init__(self):
        super().__init__()
        self._mask = None

    def forward(self, x, training=False):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad):
        if self._mask is None:
            raise RuntimeError("backward before forward")
        return grad * self._mask


class Dropout(Layer):
    """Inverted dropout: kept units scale by 1/(1-p) at train time so the
    inference path is an exact no-op."""

    def __init__(self, prob: float, rng: np.random.Generator | None = None):
        super().__init__()
        if not 0.0 <= prob < 1.0:
            raise ValueError(f"dropout prob {prob} outside [0, 1)")
        self.prob = prob
        self.rng = rng or make_rng(0)
        self._mask = None

    def forward(self, x, training=False):
        if not training or self.prob == 0.0:
            self._mask = None
            return x
        self._mask = self.rng.random(x.shape) >= self.prob
        return x * self._mask / (1.0 - self.prob)

    def backward(self, grad):
        if self._mask is None:
            return grad
        return grad * self._mask / (1.0 - self.prob)


class BatchNorm(Layer):
    """Per-feature-map normalization over the batch/time/column axes, then
    learned scale and shift. Running stats (momentum 0.9) serve inference."""

    EPS = 1e-5
    MOMENTUM = 0.9

    def __init__(self, num_maps: int):
        super().__init__()
        self.num_maps = num_maps
        self.params["gamma"] = np.ones(num_maps)
        self.params["beta"] = np.zeros(num_maps)
        self.running_mean = np.zeros(num_maps)
        self.running_var = np.ones(num_maps)
        self._cache = None

    def forward(self, x, training=False):
        if x.shape[-1] != self.num_maps:
            raise ValueError(f"expected {self.num_maps} feature maps, got {x.shape}")
        axes = tuple(range(x.ndim - 1))
        gamma, beta = self.params["gamma"], self.params["beta"]
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.running_mean = self.MOMENTUM * self.running_mean + (1 - self.MOMENTUM) * mean
            self.running_var = self.MOMENTUM * self.running_var + (1 - self.MOMENTUM) * var
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.EPS)
        xhat = (x - mean) * inv_std
        self._cache = (xhat, inv_std, axes, training)
        return gamma * xhat + beta

    def backward(self, grad):
        if self._cache is None:
            raise RuntimeError("backward before forward")
        xhat, inv_std, axes, training = self._cache
        gamma = self.params["gamma"]
        self.grads["gamma"] = (grad * xhat).sum(axis=axes)
        self.grads["beta"] = grad.sum(axis=axes)
        dxhat = grad * gamma
        if not training:
            return dxhat * inv_std
        m = xhat.size // xhat.shape[-1]
        return (inv_std / m) * (m * dxhat
                                - dxhat.sum(axis=axes)
                                - xhat * (dxhat * xhat).sum(axis=axes))


class Flatten(Layer):
    def __init__(self):
        super().__init__()
        self._shape = None

    def forward(self, x, training=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class TimeFlatten(Layer):
    """(N, T, W, F) -> (N, T, W*F): per-time-step features for the LSTM."""

    def __init__(self):
        super().__init__()
        self._shape = None

    def forward(self, x, training=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], x.shape[1], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Dense(Layer):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        rng = rng or make_rng(0)
        self.params["w"] = glorot_uniform(rng, (in_dim, out_dim), in_dim, out_dim)
        self.params["b"] = np.zeros(out_dim)
        self._x = None

    def forward(self, x, training=False):
        if x.shape[1] != self.in_dim:
            raise ValueError(f"expected input (N, {self.in_dim}), got {x.shape}")
        self._x = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, grad):
        if self._x is None:
            raise RuntimeError("backward before forward")
        self.grads["w"] = self._x.T @ grad
        self.grads["b"] = grad.sum(axis=0)
        return grad @ self.params["w"].T


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class LSTM(Layer):
    """Single-layer LSTM over (N, T, F); returns the final hidden state
    (N, H). Gate order in the stacked weight matrices: input, forget,
    candidate, output."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator | None = None):
        super().__init__()
        self.in_dim = in_dim
        self.hidden = hidden
        rng = rng or make_rng(0)
        self.params["wx"] = glorot_uniform(rng, (in_dim, 4 * hidden), in_dim, hidden)
        self.params["wh"] = glorot_uniform(rng, (hidden, 4 * hidden), hidden, hidden)
        self.params["b"] = np.zeros(4 * hidden)
        self._cache = None

    def forward(self, x, training=False):
        if x.ndim != 3 or x.shape[2] != self.in_dim:
            raise ValueError(f"expected input (N, T, {self.in_dim}), got {x.shape}")
        n, t, _ = x.shape
        h = self.hidden
        wx, wh, b = self.params["wx"], self.params["wh"], self.params["b"]
        h_t = np.zeros((n, h))
        c_t = np.zeros((n, h))
        steps = []
        for step in range(t):
            z = x[:, step] @ wx + h_t @ wh + b
            i = _sigmoid(z[:, :h])
            f = _sigmoid(z[:, h:2 * h])
            g = np.tanh(z[:, 2 * h:3 * h])
            o = _sigmoid(z[:, 3 * h:])
            c_prev, h_prev = c_t, h_t
            c_t = f * c_prev + i * g
            h_t = o * np.tanh(c_t)
            steps.append((i, f, g, o, c_prev, h_prev, c_t))
        self._cache = (x, steps)
        return h_t

    def backward(self, grad):
        if self._cache is None:
            raise RuntimeError("backward before forward")
        x, steps = self._cache
        n, t, _ = x.shape
        h = self.hidden
        wx, wh = self.params["wx"], self.params["wh"]
        dwx = np.zeros_like(wx)
        dwh = np.zeros_like(wh)
        db = np.zeros(4 * h)
        dx = np.zeros_like(x)
        dh = grad
        dc = np.zeros((n, h))
        for step in range(t - 1, -1, -1):
            i, f, g, o, c_prev, h_prev, c_t = steps[step]
            tanh_c = np.tanh(c_t)
            do = dh * tanh_c
            dct = dc + dh * o * (1.0 - tanh_c ** 2)
            di = dct * g
            df = dct * c_prev
            dg = dct * i
            dz = np.concatenate([
                di * i * (1 - i),
                df * f * (1 - f),
                dg * (1 - g ** 2),
                do * o * (1 - o),
            ], axis=1)
            dwx += x[:, step].T @ dz
            dwh += h_prev.T @ dz
            db += dz.sum(axis=0)
            dx[:, step] = dz @ wx.T
            dh = dz @ wh.T
            dc = dct * f
        self.grads["wx"] = dwx
        self.grads["wh"] = dwh
        self.grads["b"] = db
        return dx


class Softmax(Layer):
    """Row-wise softmax with max-subtraction for stability."""

    def __init__(self):
        super().__init__()
        self._out = None

    def forward(self, x, training=False):
        shifted = x - x.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=-1, keepdims=True)
        # keep entries strictly inside (0, 1): exp underflow can round an
        # entry to exactly 0 (and its complement to exactly 1)
        out = np.clip(out, 5e-324, np.nextafter(1.0, 0.0))
        self._out = out
        return out

    def backward(self, grad):
        if self._out is None:
            raise RuntimeError("backward before forward")
        p = self._out
        return p * (grad - (grad * p).sum(axis=-1, keepdims=True))


PROB_CLAMP = 1e-12


def cross_entropy(probs: np.ndarray, targets: np.ndarray) -> float:
    """Categorical cross-entropy: -(1/N) sum_n sum_k y ln a, with a clamped
    to [1e-12, 1] before the log. targets must be one-hot rows."""
    probs = np.atleast_2d(probs)
    targets = np.atleast_2d(targets)
    if probs.shape != targets.shape:
        raise ValueError(f"shape mismatch {probs.shape} vs {targets.shape}")
    is_onehot = (np.all((targets == 0) | (targets == 1))
                 and np.all(targets.sum(axis=1) == 1))
    if not is_onehot:
        raise ValueError("targets must be one-hot")
    clamped = np.clip(probs, PROB_CLAMP, 1.0)
    return float(-(targets * np.log(clamped)).sum() / probs.shape[0])


def softmax_cross_entropy_grad(probs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Gradient of the batch-mean cross-entropy with respect to the
    pre-softmax logits: (a - y) / N."""
    return (probs - targets) / probs.shape[0]


class Network:
    """An ordered layer stack. Layers may carry a `tag` attribute so
    intermediate activations can be captured by name."""

    def __init__(self, layers: list[Layer]):
        self.layers = layers

    def forward(self, x, training=False, capture: set[str] | None = None):
        captured = {}
        for layer in self.layers:
            x = layer.forward(x, training=training)
            tag = getattr(layer, "tag", None)
            if capture and tag in capture:
                captured[tag] = x
        if capture is not None:
            return x, captured
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def named_params(self):
        for li, layer in enumerate(self.layers):
            for name, value in layer.params.items():
                yield f"layer{li}/{name}", layer, name, value

    def param_dict(self) -> dict[str, np.ndarray]:
        state = {name: value for name, _, _, value in self.named_params()}
        for li, layer in enumerate(self.layers):
            if isinstance(layer, BatchNorm):
                state[f"layer{li}/running_mean"] = layer.running_mean
                state[f"layer{li}/running_var"] = layer.running_var
        return state

    def load_param_dict(self, state: dict[str, np.ndarray]):
        for name, layer, key, value in self.named_params():
            if name not in state:
                raise KeyError(f"missing parameter {name}")
            if state[name].shape != value.shape:
                raise ValueError(f"shape mismatch for {name}")
            layer.params[key] = state[name].astype(np.float64)
        for li, layer in enumerate(self.layers):
            if isinstance(layer, BatchNorm):
                layer.running_mean = state[f"layer{li}/running_mean"].astype(np.float64)
                layer.running_var = state[f"layer{li}/running_var"].astype(np.float64)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.param_dict().values())


def sgd_step(network: Network, learning_rate: float):
    """Plain SGD: p <- p - lr * g, no momentum."""
    if learning_rate <= 0:
        raise ValueError("learning rate must be positive")
    for _, layer, key, value in network.named_params():
        grad = layer.grads.get(key)
        if grad is None:
            continue
        if grad.shape != value.shape:
            raise ValueError(f"gradient shape mismatch for {key}")
        layer.params[key] = value - learning_rate * grad
