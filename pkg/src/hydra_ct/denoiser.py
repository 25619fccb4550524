"""Contractive convolutional denoiser and the equilibrium-layer pieces.

The network is a plain chain of 3x3 "same" convolutions with leaky-rectifier
(slope 0.2) activations between them. Per-layer spectral normalization keeps
the product of layer norms within a Lipschitz budget < 1, so the denoiser is a
certified-by-construction contraction. Forward and reverse passes are written
directly in numpy (im2col style) so the training path has no framework
dependency.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError
from .radon import RadonOperator
from .tensorio import load_tensor, save_tensor

LEAKY_SLOPE = 0.2  # 1-Lipschitz nonlinearity


def _conv2d(x, w):
    # x: (cin, H, W), w: (cout, cin, 3, 3) -> (cout, H, W), zero "same" padding
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # (cin, H, W, 3, 3)
    return np.tensordot(w, win, axes=([1, 2, 3], [0, 3, 4]))


def _conv2d_transpose(gy, w):
    # adjoint of _conv2d in its input argument
    wt = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)  # (cin, cout, 3, 3)
    return _conv2d(gy, wt)


def _conv2d_weight_grad(x, gy):
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # (cin, H, W, 3, 3)
    return np.tensordot(gy, win, axes=([1, 2], [1, 2]))  # (cout, cin, 3, 3)


def _leaky(x):
    return np.where(x >= 0, x, LEAKY_SLOPE * x)


def _leaky_grad(x):
    return np.where(x >= 0, 1.0, LEAKY_SLOPE)


class DenoiserNet:
    """Chain of 3x3 convolutions with a product spectral-norm budget."""

    def __init__(self, widths=(1, 32, 32, 32, 1), lipschitz_budget=0.9,
                 spectral_size=32, seed=0, init_normalize_iters=30):
        if widths[0] != widths[-1]:
            raise ConfigError("input and output channel counts must match the image")
        if not 0.0 < lipschitz_budget < 1.0:
            raise ConfigError("lipschitz_budget must lie in (0, 1)")
        self.widths = tuple(int(w) for w in widths)
        self.lipschitz_budget = float(lipschitz_budget)
        self.spectral_size = int(spectral_size)
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        self._u = []
        for cin, cout in zip(self.widths[:-1], self.widths[1:]):
            bound = np.sqrt(1.0 / (cin * 9))
            self.weights.append(rng.uniform(-bound, bound, (cout, cin, 3, 3)))
            self.biases.append(np.zeros(cout))
            u = rng.standard_normal((cin, self.spectral_size, self.spectral_size))
            self._u.append(u / np.linalg.norm(u))
        if init_normalize_iters:
            normalize_spectral(self, power_iters=init_normalize_iters)

    @property
    def n_layers(self):
        return len(self.weights)

    def params(self):
        """Flat list [W0, b0, W1, b1, ...]; arrays are the live parameters."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def set_params(self, params):
        for i in range(self.n_layers):
            self.weights[i] = np.asarray(params[2 * i], dtype=np.float64)
            self.biases[i] = np.asarray(params[2 * i + 1], dtype=np.float64)

    def save(self, directory, extra=None):
        os.makedirs(directory, exist_ok=True)
        index = {"widths": list(self.widths), "budget": self.lipschitz_budget,
                 "spectral_size": self.spectral_size, **(extra or {})}
        for i in range(self.n_layers):
            save_tensor(os.path.join(directory, f"w{i}.t"), self.weights[i], np.float64)
            save_tensor(os.path.join(directory, f"b{i}.t"), self.biases[i], np.float64)
            save_tensor(os.path.join(directory, f"u{i}.t"), self._u[i], np.float64)
        with open(os.path.join(directory, "index.json"), "w") as f:
            json.dump(index, f, indent=1, sort_keys=True)

    @classmethod
    def load(cls, directory):
        with open(os.path.join(directory, "index.json")) as f:
            index = json.load(f)
        net = cls.__new__(cls)
        net.widths = tuple(index["widths"])
        net.lipschitz_budget = index["budget"]
        net.spectral_size = index["spectral_size"]
        net.weights, net.biases, net._u = [], [], []
        for i in range(len(net.widths) - 1):
            net.weights.append(load_tensor(os.path.join(directory, f"w{i}.t")))
            net.biases.append(load_tensor(os.path.join(directory, f"b{i}.t")))
            net._u.append(load_tensor(os.path.join(directory, f"u{i}.t")))
        return net, index


def _forward_cached(net: DenoiserNet, v):
    x = v[None, :, :]
    pre = []   # conv outputs before activation, per layer
    acts = [x]  # layer inputs
    for i in range(net.n_layers):
        z = _conv2d(x, net.weights[i]) + net.biases[i][:, None, None]
        pre.append(z)
        x = _leaky(z) if i < net.n_layers - 1 else z
        acts.append(x)
    return x[0], (pre, acts)


def denoiser_forward(net: DenoiserNet, v):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 2:
        raise DimensionError("denoiser input must be a 2-D image")
    out, _ = _forward_cached(net, v)
    return out


def denoiser_vjp(net: DenoiserNet, v, cotangent, cache=None):
    """Reverse-mode derivative of denoiser_forward.

    Returns (param_grads, grad_v) with param_grads matching net.params()."""
    v = np.asarray(v, dtype=np.float64)
    cotangent = np.asarray(cotangent, dtype=np.float64)
    if cotangent.shape != v.shape:
        raise DimensionError("cotangent shape must match the input image")
    if cache is None:
        _, cache = _forward_cached(net, v)
    pre, acts = cache
    g = cotangent[None, :, :]
    grads = [None] * (2 * net.n_layers)
    for i in reversed(range(net.n_layers)):
        if i < net.n_layers - 1:
            g = g * _leaky_grad(pre[i])
        grads[2 * i] = _conv2d_weight_grad(acts[i], g)
        grads[2 * i + 1] = g.sum(axis=(1, 2))
        g = _conv2d_transpose(g, net.weights[i])
    return grads, g[0]


def layer_spectral_norm(net: DenoiserNet, layer, iters=1, update_state=True):
    """Power-iteration estimate of one conv layer's operator norm (linear part,
    zero padding, acting at the net's spectral_size)."""
    w = net.weights[layer]
    u = net._u[layer]
    sigma = 0.0
    for _ in range(iters):
        u = u / np.linalg.norm(u)
        fu = _conv2d(u, w)
        sigma = float(np.linalg.norm(fu))
        u = _conv2d_transpose(fu, w)
    if update_state:
        net._u[layer] = u / max(np.linalg.norm(u), 1e-30)
    return sigma


def normalize_spectral(net: DenoiserNet, power_iters=1):
    """Clamp each layer's spectral norm to budget^(1/n_layers).

    Layers already below the per-layer target are left untouched (never
    inflated), so the product of the estimates stays <= the budget."""
    target = net.lipschitz_budget ** (1.0 / net.n_layers)
    for i in range(net.n_layers):
        sigma = layer_spectral_norm(net, i, iters=power_iters)
        if sigma > target:
            net.weights[i] *= target / sigma
    return net


def empirical_lipschitz(net: DenoiserNet, size, n_pairs=100, seed=0, radius=1.0):
    """Max output/input distance ratio over random pairs (certification aid)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_pairs):
        a = rng.random((size, size))
        b = a + radius * rng.standard_normal((size, size))
        num = np.linalg.norm(denoiser_forward(net, a) - denoiser_forward(net, b))
        den = np.linalg.norm(a - b)
        worst = max(worst, num / den)
    return worst


def omega_project(x):
    """Projection onto the cube [0, 1]^n (elementwise clamp)."""
    return np.clip(x, 0.0, 1.0)


OMEGAS = ("clamp", "identity")


@dataclass
class LayerConfig:
    op: RadonOperator
    lambda_mix: float = 0.4
    omega: str = "clamp"
    step: float | None = None  # None -> 0.9 / norm_sq

    def __post_init__(self):
        if not 0.0 < self.lambda_mix < 1.0:
            raise ConfigError("lambda_mix must lie strictly inside (0, 1)")
        if self.omega not in OMEGAS:
            raise ConfigError(f"omega must be one of {OMEGAS}")
        if self.op.norm_sq is None:
            raise ConfigError("operator norm_sq unset; run estimate_operator_norm")
        if self.step is None:
            self.step = 0.9 / self.op.norm_sq
        if not 0.0 < self.step < 1.0 / self.op.norm_sq:
            raise ConfigError("step must lie in (0, 1/norm_sq)")


def gradient_map(cfg: LayerConfig, x, y):
    """x - 2s A^T(Ax - y): the nonexpansive data-consistency half of the layer."""
    return x - 2.0 * cfg.step * cfg.op.adjoint(cfg.op.forward(x) - y)


def layer_apply(net: DenoiserNet, cfg: LayerConfig, x, y):
    """One application of the equilibrium layer: Omega(lambda*D(v) + (1-lambda)*v)
    with v the gradient-map output."""
    v = gradient_map(cfg, x, y)
    z = cfg.lambda_mix * denoiser_forward(net, v) + (1.0 - cfg.lambda_mix) * v
    return omega_project(z) if cfg.omega == "clamp" else z
