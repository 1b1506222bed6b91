"""Empirical neural tangent kernels, their drift, and estimates of the theory constants.

Kernels are assembled layer by layer: the Jacobian column of (sample j,
component c) restricted to layer l is vec(delta h^T) plus delta for the
bias, so inner products factor as (delta . delta')(h . h' + 1). This gives
(1/n) J^T J exactly without ever holding the num_params x kN Jacobian.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import model
from .data import LabeledSet, Partition
from .linalg import eigh_sym, norm
from .model import MlpSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Kernel:
    mat: np.ndarray
    row_index: np.ndarray  # (rows, 2): sample, component
    col_index: np.ndarray
    width_n: int


@dataclass(frozen=True)
class ConstantsReport:
    lambda_m: float
    C: float
    C1: float
    R0: float
    n: int
    vacuous: bool = False
    notes: dict = field(default_factory=dict)


def _index(num_samples: int, k: int, start: int = 0) -> np.ndarray:
    s = np.repeat(np.arange(start, start + num_samples), k)
    c = np.tile(np.arange(k), num_samples)
    return np.stack([s, c], axis=1)


def _expand(h: np.ndarray, k: int) -> np.ndarray:
    return np.repeat(h, k, axis=1) if k > 1 else h


def _gram(sig_a, sig_b, k: int) -> np.ndarray:
    hs_a, ds_a = sig_a
    hs_b, ds_b = sig_b
    out = 0.0
    for ha, da, hb, db in zip(hs_a, ds_a, hs_b, ds_b):
        out = out + (da.T @ db) * (_expand(ha, k).T @ _expand(hb, k) + 1.0)
    return out


def _diff_gram(sig_a, sig_b, k: int) -> np.ndarray:
    """D^T D for D = J_a - J_b, expanded so no large terms cancel."""
    hs_a, ds_a = sig_a
    hs_b, ds_b = sig_b
    out = 0.0
    for ha, da, hb, db in zip(hs_a, ds_a, hs_b, ds_b):
        ha, hb = _expand(ha, k), _expand(hb, k)
        dd, dh = da - db, ha - hb
        out = out + (dd.T @ dd) * (ha.T @ ha + 1.0)
        cross = (dd.T @ db) * (ha.T @ dh)
        out = out + cross + cross.T + (db.T @ db) * (dh.T @ dh)
    return out


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def empirical_ntk(spec: MlpSpec, params, inputs, method: str = "factored") -> Kernel:
    """(1/n) J^T J at ``params`` over the columns of ``inputs``.

    ``method="explicit"`` forms the Jacobian with :func:`model.jacobian`;
    only sensible for small networks.
    """
    n = spec.width_n
    k = spec.n_out
    if method == "explicit":
        jac = model.jacobian(spec, params, inputs)
        mat = _symmetrize(jac.T @ jac) / n
    elif method == "factored":
        sig = model.layer_signals(spec, params, inputs)
        mat = _symmetrize(_gram(sig, sig, k)) / n
    else:
        raise ValueError(f"unknown method {method!r}")
    idx = _index(np.asarray(inputs).shape[1], k)
    return Kernel(mat, idx, idx, n)


def cross_ntk(spec: MlpSpec, params, test_inputs, train_inputs) -> np.ndarray:
    """(1/n) J(test)^T J(train), shape (k*N_test, k*N_train)."""
    sa = model.layer_signals(spec, params, test_inputs)
    sb = model.layer_signals(spec, params, train_inputs)
    return _gram(sa, sb, spec.n_out) / spec.width_n


def local_ntk(spec: MlpSpec, theta_i, global_set: LabeledSet, partition: Partition, i: int) -> Kernel:
    """(1/n) J(theta_i over X)^T J_i(theta_i over X_i) P_i, zero outside client i's columns."""
    k = spec.n_out
    blk = partition.block(i, k)
    hs, ds = model.layer_signals(spec, theta_i, global_set.inputs)
    o = int(partition.offsets[i])
    size = int(partition.sizes[i])
    sig_i = ([h[:, o:o + size] for h in hs], [d[:, blk] for d in ds])
    mat = np.zeros((k * global_set.size, k * global_set.size))
    mat[:, blk] = _gram((hs, ds), sig_i, k) / spec.width_n
    idx = _index(global_set.size, k)
    return Kernel(mat, idx, idx, spec.width_n)


def kernel_distance(current: Kernel, initial: Kernel) -> float:
    return norm(current.mat - initial.mat)


def ntk_drift(current: Kernel, initial: Kernel) -> float:
    """Relative Frobenius drift ||Theta_t - Theta_0|| / ||Theta_0||."""
    return kernel_distance(current, initial) / max(norm(initial.mat), 1e-300)


def reference_ntk(spec: MlpSpec, inputs, seed: int, ref_width: int = 4096) -> Kernel:
    """Initial NTK of the same architecture with every hidden layer at ``ref_width``.

    Stand-in for the infinite-width kernel.
    """
    w = spec.layer_widths
    ref = MlpSpec((w[0],) + (ref_width,) * (len(w) - 2) + (w[-1],), spec.activation, spec.sigma_w, spec.sigma_b)
    return empirical_ntk(ref, model.init_params(ref, seed), inputs)


def _ball_point(rng, center: np.ndarray, radius: float) -> np.ndarray:
    d = rng.standard_normal(center.shape)
    d /= np.linalg.norm(d)
    # uniform in the ball: radius * U^(1/dim)
    r = radius * rng.random() ** (1.0 / center.size)
    return center + r * d


def estimate_constants(spec: MlpSpec, theta0, data: LabeledSet, radius_scale: float = 1.0,
                       trials: int = 8, seed: int = 0, eps: float = 1e-4) -> ConstantsReport:
    """Empirical lambda_m, C, C1, R0 around the initialization.

    C is the largest of ||J||_F / sqrt(n) (at theta0 and at every sampled
    point) and the sampled Lipschitz ratios ||J - J'||_F / (sqrt(n) ||theta - theta'||)
    inside the ball of radius radius_scale / sqrt(n). C1 is the largest
    directional Jacobian difference quotient ||J(theta0 + eps u) - J(theta0)||_op / (eps sqrt(n));
    it is a lower bound on the Hessian operator norm.
    """
    if trials < 2:
        raise ValueError("trials must be >= 2")
    theta0 = np.asarray(theta0, dtype=np.float64)
    n = spec.width_n
    k = spec.n_out
    x = data.inputs
    sqrt_n = np.sqrt(n)

    r0 = norm(model.outputs_vec(spec, theta0, x) - data.targets_vec(), "l2")
    sig0 = model.layer_signals(spec, theta0, x)
    theta_k = _symmetrize(_gram(sig0, sig0, k)) / n
    lam_m = eigh_sym(theta_k).lambda_min

    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
    radius = radius_scale / sqrt_n
    c_norm = np.sqrt(max(np.trace(theta_k), 0.0) * n) / sqrt_n
    c_lip = 0.0
    for _ in range(trials):
        a = _ball_point(rng, theta0, radius)
        b = _ball_point(rng, theta0, radius)
        sa = model.layer_signals(spec, a, x)
        sb = model.layer_signals(spec, b, x)
        for s in (sa, sb):
            c_norm = max(c_norm, np.sqrt(max(np.trace(_gram(s, s, k)), 0.0)) / sqrt_n)
        dist = np.linalg.norm(a - b)
        if dist > 0:
            dj = np.sqrt(max(np.trace(_diff_gram(sa, sb, k)), 0.0))
            c_lip = max(c_lip, dj / (sqrt_n * dist))

    c1 = 0.0
    for _ in range(trials):
        u = rng.standard_normal(theta0.shape)
        u /= np.linalg.norm(u)
        su = model.layer_signals(spec, theta0 + eps * u, x)
        dg = _symmetrize(_diff_gram(su, sig0, k))
        op = np.sqrt(max(eigh_sym(dg).lambda_max, 0.0))
        c1 = max(c1, op / (eps * sqrt_n))

    vacuous = not lam_m > 0
    if vacuous:
        log.warning("lambda_m = %.3e <= 0: the kernel is singular, bounds are vacuous", lam_m)
    notes = {
        "R0": "||g(theta0)||_2, exact",
        "lambda_m": "smallest eigenvalue of Theta0 (cyclic Jacobi)",
        "C": f"max of Jacobian norm and Lipschitz ratio over {trials} pairs in B(theta0, {radius_scale}/sqrt(n)), seed {seed}",
        "C1": f"max directional difference quotient over {trials} unit directions, eps={eps}; lower bound",
        "C_norm_part": float(c_norm),
        "C_lipschitz_part": float(c_lip),
    }
    return ConstantsReport(float(lam_m), float(max(c_norm, c_lip)), float(c1), float(r0), n, vacuous, notes)
