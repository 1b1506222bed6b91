"""Fully-connected network: parameter layout, seeded init, forward pass, derivatives.

Inputs are column-major: an ``n0 x N`` matrix holds one sample per column.
Outputs of ``forward`` are ``k x N``. Anything indexed by (sample, component)
is flattened sample-major, component-minor, so entry ``j*k + c`` is component
``c`` of sample ``j``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import erf

from .linalg import DimensionError

ACTIVATIONS = ("tanh", "erf", "relu")

_KIND_WEIGHT = 0
_KIND_BIAS = 1


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple[int, ...]
    activation: str = "tanh"
    sigma_w: float | tuple[float, ...] = 1.0
    sigma_b: float = 0.1

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ValueError("need at least input and output widths (L >= 1)")
        if min(widths) < 1:
            raise ValueError(f"all widths must be >= 1, got {widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if isinstance(self.sigma_w, (list, tuple)):
            sw = tuple(float(s) for s in self.sigma_w)
            if len(sw) != self.depth:
                raise ValueError(f"sigma_w list needs {self.depth} entries, got {len(sw)}")
            object.__setattr__(self, "sigma_w", sw)

    @property
    def depth(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def n_in(self) -> int:
        return self.layer_widths[0]

    @property
    def n_out(self) -> int:
        return self.layer_widths[-1]

    @property
    def ntk_width(self) -> int:
        """Minimum hidden width; undefined for a single affine layer."""
        if self.depth < 2:
            raise ValueError("ntk width is only defined for L >= 2")
        return min(self.layer_widths[1:-1])

    @property
    def width_n(self) -> int:
        """Kernel / learning-rate normalizer: ntk_width, or 1 for an affine model."""
        return self.ntk_width if self.depth >= 2 else 1

    def layer_sigma_w(self, l: int) -> float:
        if isinstance(self.sigma_w, tuple):
            return self.sigma_w[l]
        return float(self.sigma_w)

    @property
    def shapes(self) -> list[tuple[int, int]]:
        w = self.layer_widths
        return [(w[l + 1], w[l]) for l in range(self.depth)]

    @property
    def num_params(self) -> int:
        return sum(o * i + o for o, i in self.shapes)

    def offsets(self) -> list[tuple[int, int, int]]:
        """(weight start, bias start, layer end) per layer in the flat vector."""
        out, pos = [], 0
        for o, i in self.shapes:
            out.append((pos, pos + o * i, pos + o * i + o))
            pos += o * i + o
        return out


def unflatten(spec: MlpSpec, theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (spec.num_params,):
        raise DimensionError(f"parameter vector has shape {theta.shape}, expected ({spec.num_params},)")
    layers = []
    for (o, i), (ws, bs, end) in zip(spec.shapes, spec.offsets()):
        layers.append((theta[ws:bs].reshape(o, i), theta[bs:end]))
    return layers


def flatten(layers: Sequence[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in layers])


def init_params(spec: MlpSpec, seed: int) -> np.ndarray:
    """Gaussian init, W_l ~ N(0, sigma_w^2 / fan_in), b_l ~ N(0, sigma_b^2).

    Each (layer, kind) block draws from its own stream keyed by the seed, so a
    block does not depend on the shapes or order of the others.
    """
    parts = []
    for l, (o, i) in enumerate(spec.shapes):
        wrng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(l, _KIND_WEIGHT)))
        brng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(l, _KIND_BIAS)))
        w = wrng.standard_normal((o, i)) * (spec.layer_sigma_w(l) / np.sqrt(i))
        b = brng.standard_normal(o) * spec.sigma_b
        parts.append((w, b))
    return flatten(parts)


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "erf":
        return erf(z)
    return np.maximum(z, 0.0)


def _dact(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - np.tanh(z) ** 2
    if name == "erf":
        return (2.0 / np.sqrt(np.pi)) * np.exp(-z * z)
    return (z > 0.0).astype(np.float64)  # relu'(0) = 0


def _check_inputs(spec: MlpSpec, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != spec.n_in or x.shape[1] < 1:
        raise DimensionError(f"inputs must be {spec.n_in} x N with N >= 1, got shape {x.shape}")
    norms = np.sqrt(np.sum(x * x, axis=0))
    if np.any(norms > 1.0 + 1e-9):
        warnings.warn(f"input column norm {norms.max():.6g} exceeds 1", stacklevel=3)
    return x


def _trace(spec: MlpSpec, layers, x: np.ndarray):
    """Pre-activations z_1..z_L and activations h_0..h_{L-1}."""
    hs, zs = [x], []
    h = x
    for l, (w, b) in enumerate(layers):
        z = w @ h + b[:, None]
        zs.append(z)
        if l < spec.depth - 1:
            h = _act(spec.activation, z)
            hs.append(h)
    return hs, zs


def forward(spec: MlpSpec, params: np.ndarray, inputs) -> np.ndarray:
    x = _check_inputs(spec, inputs)
    _, zs = _trace(spec, unflatten(spec, params), x)
    return zs[-1]


def outputs_vec(spec: MlpSpec, params: np.ndarray, inputs) -> np.ndarray:
    """forward() flattened sample-major (the vec(.) ordering)."""
    return forward(spec, params, inputs).T.reshape(-1)


def layer_signals(spec: MlpSpec, params: np.ndarray, inputs):
    """Per-layer backprop signals for every (sample, output component).

    Returns ``(hs, deltas)`` where ``hs[l]`` is the ``n_l x N`` input to layer
    ``l+1`` and ``deltas[l]`` is ``n_{l+1} x (N*k)``: column ``j*k + c`` holds
    d f_c(x_j) / d z_{l+1}(x_j). The parameter Jacobian column for that pair
    is then vec(delta h^T) for the weights and delta for the bias.
    """
    x = _check_inputs(spec, inputs)
    layers = unflatten(spec, params)
    hs, zs = _trace(spec, layers, x)
    n, k = x.shape[1], spec.n_out
    d = np.zeros((k, n, k))
    d[np.arange(k), :, np.arange(k)] = 1.0
    deltas = [d.reshape(k, n * k)]
    for l in range(spec.depth - 1, 0, -1):
        w = layers[l][0]
        back = w.T @ deltas[0]
        dz = np.repeat(_dact(spec.activation, zs[l - 1]), k, axis=1)
        deltas.insert(0, back * dz)
    return hs, deltas


def jacobian(spec: MlpSpec, params: np.ndarray, inputs) -> np.ndarray:
    """Explicit parameter Jacobian, shape (num_params, k*N)."""
    hs, deltas = layer_signals(spec, params, inputs)
    k = spec.n_out
    n = hs[0].shape[1]
    cols = n * k
    jac = np.empty((spec.num_params, cols))
    for l, (ws, bs, end) in enumerate(spec.offsets()):
        d = deltas[l]
        h = np.repeat(hs[l], k, axis=1)
        o, i = spec.shapes[l]
        jac[ws:bs] = (d[:, None, :] * h[None, :, :]).reshape(o * i, cols)
        jac[bs:end] = d
    return jac


def vjp(spec: MlpSpec, params: np.ndarray, inputs, cotangent: np.ndarray) -> np.ndarray:
    """J @ v for v indexed like outputs_vec, by reverse accumulation."""
    x = _check_inputs(spec, inputs)
    layers = unflatten(spec, params)
    hs, zs = _trace(spec, layers, x)
    n, k = x.shape[1], spec.n_out
    v = np.asarray(cotangent, dtype=np.float64)
    if v.shape != (n * k,):
        raise DimensionError(f"cotangent has shape {v.shape}, expected ({n * k},)")
    g = v.reshape(n, k).T
    grads = [None] * spec.depth
    for l in range(spec.depth - 1, -1, -1):
        grads[l] = (g @ hs[l].T, g.sum(axis=1))
        if l > 0:
            g = (layers[l][0].T @ g) * _dact(spec.activation, zs[l - 1])
    return flatten(grads)


def jvp(spec: MlpSpec, params: np.ndarray, inputs, tangent: np.ndarray) -> np.ndarray:
    """J^T @ u for a parameter-space direction u, by forward accumulation."""
    x = _check_inputs(spec, inputs)
    layers = unflatten(spec, params)
    dlayers = unflatten(spec, tangent)
    h, dh = x, np.zeros_like(x)
    for l, ((w, b), (dw, db)) in enumerate(zip(layers, dlayers)):
        z = w @ h + b[:, None]
        dz = dw @ h + w @ dh + db[:, None]
        if l < spec.depth - 1:
            h = _act(spec.activation, z)
            dh = _dact(spec.activation, z) * dz
    return dz.T.reshape(-1)
