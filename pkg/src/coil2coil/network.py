"""Residual convolutional denoiser with explicit forward/backward passes.

Architecture: conv -> leaky ReLU, then (conv -> batch norm -> leaky ReLU)
repeated depth-2 times, then a final conv, with a skip connection adding
the network input to the final conv output.  Single image channel in and
out; all arithmetic in float64 so gradients can be checked against central
finite differences.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NetworkConfig",
    "NetworkParams",
    "AdamState",
    "init_network",
    "forward",
    "backward",
    "adam_step",
    "lr_schedule",
    "gradient_check",
]


@dataclass(frozen=True)
class NetworkConfig:
    depth: int = 6
    features: int = 16
    kernel_size: int = 3
    leaky_slope: float = 0.1
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError("depth must be >= 2")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel size must be odd and >= 1")
        if not (0.0 < self.leaky_slope < 1.0):
            raise ValueError("leaky slope must be in (0, 1)")
        if self.features < 1:
            raise ValueError("features must be >= 1")

    @classmethod
    def full_scale(cls):
        """18 layers, 64 features, 5x5 kernels (GPU-scale preset)."""
        return cls(depth=18, features=64, kernel_size=5)


@dataclass
class NetworkParams:
    config: NetworkConfig
    weights: list  # per conv layer, (C_out, C_in, k, k)
    biases: list  # per conv layer, (C_out,)
    bn_scale: list  # per middle layer, (features,)
    bn_shift: list
    bn_mean: list  # running statistics
    bn_var: list

    def copy(self):
        return copy.deepcopy(self)

    def flat(self):
        """Trainable parameter arrays as (name, array) pairs, in a fixed order."""
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"conv{i}.weight", w))
            out.append((f"conv{i}.bias", b))
        for i, (g, s) in enumerate(zip(self.bn_scale, self.bn_shift)):
            out.append((f"bn{i}.scale", g))
            out.append((f"bn{i}.shift", s))
        return out


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params):
        zeros = {name: np.zeros_like(a) for name, a in params.flat()}
        return cls(m=zeros, v={k: v.copy() for k, v in zeros.items()})


def _layer_channels(config):
    """(C_in, C_out) per conv layer."""
    f = config.features
    chans = [(1, f)]
    chans += [(f, f)] * (config.depth - 2)
    chans.append((f, 1))
    return chans


def init_network(config, rng):
    """Xavier-uniform kernels (bound sqrt(6/(fan_in+fan_out))), zero biases,
    batch-norm scale 1 / shift 0, running stats (0, 1)."""
    k = config.kernel_size
    weights, biases = [], []
    for c_in, c_out in _layer_channels(config):
        fan_in = c_in * k * k
        fan_out = c_out * k * k
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(c_out, c_in, k, k)))
        biases.append(np.zeros(c_out))
    f = config.features
    n_bn = config.depth - 2
    return NetworkParams(
        config=config,
        weights=weights,
        biases=biases,
        bn_scale=[np.ones(f) for _ in range(n_bn)],
        bn_shift=[np.zeros(f) for _ in range(n_bn)],
        bn_mean=[np.zeros(f) for _ in range(n_bn)],
        bn_var=[np.ones(f) for _ in range(n_bn)],
    )


def _im2col(x, k):
    """(N, C, H, W) -> (N, C, k, k, H, W) patch tensor with zero padding."""
    n, c, h, w = x.shape
    p = (k - 1) // 2
    xp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=x.dtype)
    xp[:, :, p : p + h, p : p + w] = x
    cols = np.empty((n, c, k, k, h, w), dtype=x.dtype)
    for di in range(k):
        for dj in range(k):
            cols[:, :, di, dj] = xp[:, :, di : di + h, dj : dj + w]
    return cols


def _conv_forward(x, w, b):
    cols = _im2col(x, w.shape[-1])
    y = np.einsum("ncklhw,fckl->nfhw", cols, w, optimize=True)
    y += b[None, :, None, None]
    return y, cols


def _conv_backward(dy, cols, w, x_shape):
    dw = np.einsum("nfhw,ncklhw->fckl", dy, cols, optimize=True)
    db = dy.sum(axis=(0, 2, 3))
    dcols = np.einsum("nfhw,fckl->ncklhw", dy, w, optimize=True)
    n, c, h, w_ = x_shape
    k = w.shape[-1]
    p = (k - 1) // 2
    dxp = np.zeros((n, c, h + 2 * p, w_ + 2 * p))
    for di in range(k):
        for dj in range(k):
            dxp[:, :, di : di + h, dj : dj + w_] += dcols[:, :, di, dj]
    dx = dxp[:, :, p : p + h, p : p + w_]
    return dx, dw, db


def _leaky_forward(x, slope):
    return np.where(x >= 0, x, slope * x)


def _leaky_backward(dy, x, slope):
    return dy * np.where(x >= 0, 1.0, slope)


def _bn_forward_train(x, scale, shift, eps):
    mean = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3))  # biased
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = scale[None, :, None, None] * xhat + shift[None, :, None, None]
    return y, (xhat, inv_std, scale), mean, var


def _bn_forward_eval(x, scale, shift, run_mean, run_var, eps):
    inv_std = 1.0 / np.sqrt(run_var + eps)
    xhat = (x - run_mean[None, :, None, None]) * inv_std[None, :, None, None]
    return scale[None, :, None, None] * xhat + shift[None, :, None, None]


def _bn_backward(dy, cache):
    xhat, inv_std, scale = cache
    n_eff = dy.shape[0] * dy.shape[2] * dy.shape[3]
    dshift = dy.sum(axis=(0, 2, 3))
    dscale = (dy * xhat).sum(axis=(0, 2, 3))
    dxhat = dy * scale[None, :, None, None]
    dx = (
        dxhat
        - dxhat.mean(axis=(0, 2, 3))[None, :, None, None]
        - xhat * (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None] / n_eff
    ) * inv_std[None, :, None, None]
    return dx, dscale, dshift


def forward(params, batch, train=False):
    """Run the network on a batch of real images (N, H, W).

    Returns (outputs, cache).  Train mode normalizes with batch statistics
    and updates the running statistics in place; eval mode uses running
    statistics and leaves params untouched.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim == 2:
        batch = batch[None]
    if batch.ndim != 3 or batch.shape[0] < 1:
        raise ValueError(f"batch must be (N, H, W), got {batch.shape}")
    cfg = params.config
    x = batch[:, None]  # (N, 1, H, W)
    skip = x
    cache = {"input_shape": batch.shape, "conv": [], "leaky": [], "bn": []}

    # first layer: conv + leaky
    y, cols = _conv_forward(x, params.weights[0], params.biases[0])
    cache["conv"].append((cols, x.shape))
    cache["leaky"].append(y)
    x = _leaky_forward(y, cfg.leaky_slope)

    mom = cfg.bn_momentum
    for i in range(cfg.depth - 2):
        y, cols = _conv_forward(x, params.weights[i + 1], params.biases[i + 1])
        cache["conv"].append((cols, x.shape))
        if train:
            y, bn_cache, mean, var = _bn_forward_train(
                y, params.bn_scale[i], params.bn_shift[i], cfg.bn_eps
            )
            cache["bn"].append(bn_cache)
            params.bn_mean[i] = mom * params.bn_mean[i] + (1 - mom) * mean
            params.bn_var[i] = mom * params.bn_var[i] + (1 - mom) * var
        else:
            y = _bn_forward_eval(
                y,
                params.bn_scale[i],
                params.bn_shift[i],
                params.bn_mean[i],
                params.bn_var[i],
                cfg.bn_eps,
            )
        cache["leaky"].append(y)
        x = _leaky_forward(y, cfg.leaky_slope)

    y, cols = _conv_forward(x, params.weights[-1], params.biases[-1])
    cache["conv"].append((cols, x.shape))
    out = y + skip
    cache["train"] = train
    return out[:, 0], cache


def backward(params, cache, output_grads):
    """Gradients of a scalar loss w.r.t. every trainable parameter.

    output_grads is dLoss/dOutput with shape (N, H, W); the cache must come
    from a train-mode forward on the same batch.
    """
    if not cache.get("train"):
        raise ValueError("backward needs a cache from a train-mode forward")
    cfg = params.config
    dy = np.asarray(output_grads, dtype=np.float64)
    if dy.shape != cache["input_shape"]:
        raise ValueError("output gradient shape does not match cached batch")
    dy = dy[:, None]

    grads = {}
    n_conv = len(params.weights)

    # final conv
    cols, x_shape = cache["conv"][-1]
    dx, dw, db = _conv_backward(dy, cols, params.weights[-1], x_shape)
    grads[f"conv{n_conv - 1}.weight"] = dw
    grads[f"conv{n_conv - 1}.bias"] = db

    for i in range(cfg.depth - 2 - 1, -1, -1):
        dx = _leaky_backward(dx, cache["leaky"][i + 1], cfg.leaky_slope)
        dx, dscale, dshift = _bn_backward(dx, cache["bn"][i])
        grads[f"bn{i}.scale"] = dscale
        grads[f"bn{i}.shift"] = dshift
        cols, x_shape = cache["conv"][i + 1]
        dx, dw, db = _conv_backward(dx, cols, params.weights[i + 1], x_shape)
        grads[f"conv{i + 1}.weight"] = dw
        grads[f"conv{i + 1}.bias"] = db

    dx = _leaky_backward(dx, cache["leaky"][0], cfg.leaky_slope)
    cols, x_shape = cache["conv"][0]
    _, dw, db = _conv_backward(dx, cols, params.weights[0], x_shape)
    grads["conv0.weight"] = dw
    grads["conv0.bias"] = db
    return grads


def adam_step(params, grads, state, lr):
    """Bias-corrected Adam update, in place on params; returns (params, state)."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, arr in params.flat():
        g = grads[name]
        if g.shape != arr.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = state.m[name] / (1 - b1**t)
        v_hat = state.v[name] / (1 - b2**t)
        arr -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


def lr_schedule(epoch, base_lr=1e-4, decay=0.87):
    """Exponentially decayed learning rate: base_lr * decay^epoch."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return base_lr * decay**epoch


def gradient_check(config=None, rng=None, h=1e-5, batch_shape=(2, 8, 8)):
    """Compare backward() against central finite differences.

    Uses a masked quadratic loss on random data and perturbs every
    parameter entry of a small network.  Returns the worst relative error.
    """
    if config is None:
        config = NetworkConfig(depth=3, features=2, kernel_size=3)
    if rng is None:
        rng = np.random.default_rng(0)
    params = init_network(config, rng)
    # non-trivial BN shift/scale so their gradients are exercised
    for i in range(len(params.bn_scale)):
        params.bn_scale[i] = 1.0 + 0.1 * rng.standard_normal(params.bn_scale[i].shape)
        params.bn_shift[i] = 0.1 * rng.standard_normal(params.bn_shift[i].shape)
    batch = rng.standard_normal(batch_shape)
    target = rng.standard_normal(batch_shape)
    weight = rng.uniform(0.5, 1.5, size=batch_shape)

    def loss_of(p):
        out, _ = forward(p.copy(), batch, train=True)
        return 0.5 * np.sum(weight * (out - target) ** 2)

    out, cache = forward(params.copy(), batch, train=True)
    grads = backward(params, cache, weight * (out - target))

    worst = 0.0
    for name, arr in params.flat():
        g = grads[name]
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            lp = loss_of(params)
            arr[idx] = orig - h
            lm = loss_of(params)
            arr[idx] = orig
            num = (lp - lm) / (2 * h)
            denom = max(abs(num), abs(g[idx]), 1e-8)
            worst = max(worst, abs(num - g[idx]) / denom)
    return worst
