"""Linearized dynamics around the initialization.

The linear model is f(theta0) + J0^T (theta - theta0). J0 is never formed
for wide networks: J0^T u is a forward-mode product and J0 v a reverse-mode
one, both evaluated at theta0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import model, ntk
from .data import LabeledSet
from .linalg import DEFAULT_FLOOR, EigDecomp, eigh_sym, expm, norm, spectral_apply
from .model import MlpSpec
from .ntk import ConstantsReport, Kernel


@dataclass
class LinState:
    spec: MlpSpec
    train: LabeledSet
    theta0: np.ndarray
    floor: float = DEFAULT_FLOOR
    f0: np.ndarray = field(init=False)
    g0: np.ndarray = field(init=False)
    Theta0: Kernel = field(init=False)
    eig0: EigDecomp = field(init=False)

    def __post_init__(self):
        self.theta0 = np.array(self.theta0, dtype=np.float64)
        self.theta0.flags.writeable = False
        self.f0 = model.outputs_vec(self.spec, self.theta0, self.train.inputs)
        self.g0 = self.f0 - self.train.targets_vec()
        self.Theta0 = ntk.empirical_ntk(self.spec, self.theta0, self.train.inputs)
        self.eig0 = eigh_sym(self.Theta0.mat)

    @cached_property
    def J0(self) -> np.ndarray:
        """Explicit Jacobian at theta0; only for small networks."""
        return model.jacobian(self.spec, self.theta0, self.train.inputs)

    @property
    def n(self) -> int:
        return self.spec.width_n


def make_lin_state(spec: MlpSpec, theta0, train: LabeledSet, floor: float = DEFAULT_FLOOR) -> LinState:
    return LinState(spec, train, theta0, floor)


def lin_forward(state: LinState, theta, inputs=None) -> np.ndarray:
    """f(x, theta0) + J(x, theta0)^T (theta - theta0); training inputs by default."""
    d = np.asarray(theta, dtype=np.float64) - state.theta0
    if inputs is None:
        return state.f0 + model.jvp(state.spec, state.theta0, state.train.inputs, d)
    f0 = model.outputs_vec(state.spec, state.theta0, inputs)
    return f0 + model.jvp(state.spec, state.theta0, inputs, d)


def _flow_coeffs(state: LinState, s: float) -> np.ndarray:
    """(Theta0)^-1 (I - exp(-s Theta0)) g0 on the floored spectrum."""

    def phi(lam):
        lam = np.asarray(lam, dtype=np.float64)
        safe = np.where(lam != 0.0, lam, 1.0)
        return np.where(lam != 0.0, -np.expm1(-s * lam) / safe, s)

    return spectral_apply(state.eig0, phi, state.floor) @ state.g0


def _params_after(state: LinState, iterations: int, eta0: float) -> np.ndarray:
    s = eta0 * iterations / state.train.size
    coef = _flow_coeffs(state, s)
    return state.theta0 - model.vjp(state.spec, state.theta0, state.train.inputs, coef) / state.n


def _predict_after(state: LinState, test_inputs, iterations: int, eta0: float) -> np.ndarray:
    s = eta0 * iterations / state.train.size
    coef = _flow_coeffs(state, s)
    kx = ntk.cross_ntk(state.spec, state.theta0, test_inputs, state.train.inputs)
    return model.outputs_vec(state.spec, state.theta0, test_inputs) - kx @ coef


def closed_form_params(state: LinState, t: int, eta0: float, tau: int) -> np.ndarray:
    """Global parameters of infinite-width FedAvg after t rounds of tau local steps."""
    return _params_after(state, t * tau, eta0)


def closed_form_predict(state: LinState, test_inputs, t: int, eta0: float, tau: int) -> np.ndarray:
    return _predict_after(state, test_inputs, t * tau, eta0)


def centralized_closed_form(state: LinState, t_prime: int, eta0: float):
    """Centralized GD after t' iterations: (parameters, predictor for new inputs)."""
    params = _params_after(state, t_prime, eta0)

    def predict(test_inputs):
        return _predict_after(state, test_inputs, t_prime, eta0)

    return params, predict


def iterate_linear_gd(state: LinState, eta0: float, iterations: int, substeps: int = 100) -> np.ndarray:
    """Discrete GD on the linear model, ``substeps`` sub-steps per iteration.

    Iterates in output space: theta - theta0 = -(1/n) J0 c, so each step is
    c <- c + h (g0 - Theta0 c) with h = eta0 / (substeps |D|).
    """
    h = eta0 / (substeps * state.train.size)
    kmat = state.Theta0.mat
    c = np.zeros_like(state.g0)
    for _ in range(iterations * substeps):
        c = c + h * (state.g0 - kmat @ c)
    return state.theta0 - model.vjp(state.spec, state.theta0, state.train.inputs, c) / state.n


def _as_mat(k) -> np.ndarray:
    return k.mat if isinstance(k, Kernel) else np.asarray(k, dtype=np.float64)


def lin_fedavg_round(g_lin, local_kernels, p, eta0: float, tau: int, shard_sizes) -> np.ndarray:
    """One linear FedAvg round: sum_i p_i exp(-(eta0 tau / |D_i|) Theta_i0) g_lin."""
    g = np.asarray(g_lin, dtype=np.float64)
    if eta0 * tau == 0.0:
        return g.copy()  # every factor is I; skip the rounding of sum_i p_i
    out = np.zeros_like(g)
    for pi, kern, size in zip(p, local_kernels, shard_sizes):
        out = out + pi * (expm(-(eta0 * tau / size) * _as_mat(kern)) @ g)
    return out


def lemma4_gap(local_kernels, p, eta0tau: float, shard_sizes) -> float:
    """|| sum_i p_i e^{-a Theta_i/|D_i|} - e^{-a sum_i p_i Theta_i/|D_i|} ||_F, a = eta0 * tau."""
    if eta0tau == 0.0:
        return 0.0
    mats = [_as_mat(k) for k in local_kernels]
    mix = np.zeros_like(mats[0])
    avg = np.zeros_like(mats[0])
    for pi, m, size in zip(p, mats, shard_sizes):
        mix = mix + pi * expm(-(eta0tau / size) * m)
        avg = avg + (pi / size) * m
    return norm(mix - expm(-eta0tau * avg))


def lemma3_check(a) -> tuple[float, float]:
    """(||exp(-A) - I + A||, rho^2/2 e^rho) with spectral norms; the first never exceeds the second."""
    a = np.asarray(a, dtype=np.float64)
    omega = expm(-a) - np.eye(a.shape[0]) + a
    rho = norm(a, "spectral")
    return norm(omega, "spectral"), 0.5 * rho * rho * math.exp(rho)


@dataclass(frozen=True)
class BoundReport:
    q: float
    zeta: float
    predicted_err: list[float]
    vacuous: bool
    violations: list[int] = field(default_factory=list)


def contraction_factor(lambda_m: float, C: float, eta0: float, tau: int, D_size: int) -> float:
    a = eta0 * tau
    return 1.0 - a * lambda_m / (3.0 * D_size) + 0.5 * a * a * C**4 * math.exp(a * C * C)


def bound_report(constants: ConstantsReport, eta0: float, tau: int, D_size: int, n: int, T: int,
                 q: float | None = None, measured=None) -> BoundReport:
    """Divergence bound zeta, contraction q, and the predicted error curve for rounds 0..T.

    ``q`` overrides the computed contraction factor. When ``measured``
    errors are given, rounds where they exceed the prediction are listed
    in ``violations``; nothing is raised.
    """
    C, C1, R0 = constants.C, constants.C1, constants.R0
    if not all(map(math.isfinite, (C, C1, R0, constants.lambda_m))):
        raise ValueError("constants must be finite")
    if q is None:
        q = contraction_factor(constants.lambda_m, C, eta0, tau, D_size)
    vacuous = q >= 1.0 or constants.lambda_m <= 0.0
    if vacuous:
        return BoundReport(q, math.inf, [math.inf] * (T + 1), True, [])
    a = eta0 * tau
    zeta = 2.0 * a * C * R0 / (math.sqrt(n) * (1.0 - q))
    pred = [q**t * R0 + 2.0 * a * C * C1 * R0 * zeta * (1.0 - q**t) / (1.0 - q) ** 2 for t in range(T + 1)]
    viol = []
    if measured is not None:
        viol = [t for t, (m, b) in enumerate(zip(measured, pred)) if m > b]
    return BoundReport(q, zeta, pred, False, viol)
