import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedwidth import data, fed, lin, model, ntk
from fedwidth.fed import FedConfig
from fedwidth.linalg import expm
from fedwidth.model import MlpSpec
from fedwidth.ntk import ConstantsReport

from conftest import unit_columns


@pytest.fixture(scope="module")
def state():
    ds = data.gen_synthetic(4, 6, 0.8, seed=3)
    spec = MlpSpec((4, 48, 48, 1), "tanh", 1.5, 0.1)
    return lin.make_lin_state(spec, model.init_params(spec, 0), ds)


def test_state_invariants(state):
    e = state.eig0
    assert np.linalg.norm(e.reconstruct() - state.Theta0.mat) <= 1e-8 * np.linalg.norm(state.Theta0.mat)
    np.testing.assert_allclose(state.J0.T @ state.J0 / state.n, state.Theta0.mat, atol=1e-12, rtol=0)
    assert not state.theta0.flags.writeable


def test_lin_forward_examples(state, rng):
    assert np.array_equal(lin.lin_forward(state, state.theta0), state.f0)
    x = unit_columns(rng, 4, 3)
    assert np.array_equal(lin.lin_forward(state, state.theta0, x), model.outputs_vec(state.spec, state.theta0, x))
    d = rng.standard_normal(state.theta0.size) * 1e-3
    np.testing.assert_allclose(lin.lin_forward(state, state.theta0 + d), state.f0 + state.J0.T @ d, atol=1e-13)


def test_lin_forward_affine_is_exact(rng):
    ds = data.gen_synthetic(3, 4, 1.0, seed=0)
    spec = MlpSpec((3, 2))
    st_ = lin.make_lin_state(spec, model.init_params(spec, 0), data.LabeledSet(ds.inputs, np.vstack([ds.labels] * 2)))
    for _ in range(3):
        th = rng.standard_normal(spec.num_params)
        np.testing.assert_allclose(lin.lin_forward(st_, th), model.outputs_vec(spec, th, ds.inputs), atol=1e-14)


def test_lin_gap_shrinks_with_width():
    ds = data.gen_synthetic(10, 20, 1.0, seed=0)
    train, part = data.reorder_global(ds, data.partition_exclusive(ds.classes, 4))
    gaps = {}
    for w in (16, 512):
        tr = fed.run_fedavg(MlpSpec((10, w, w, 1), "tanh", 1.5, 0.1), train, part, None,
                            FedConfig(tau=5, rounds=10, metrics={"lin_gap"}))
        gaps[w] = tr.rows[-1]["lin_gap"]
    assert gaps[512] < gaps[16]


def test_closed_form_examples(state):
    assert np.array_equal(lin.closed_form_params(state, 0, 1.0, 5), state.theta0)
    far = lin.closed_form_params(state, 10**6, 1.0, 5)
    g = lin.lin_forward(state, far) - state.train.targets_vec()
    assert np.linalg.norm(g) <= 1e-6 * np.linalg.norm(state.g0)
    x = state.train.inputs
    np.testing.assert_array_equal(lin.closed_form_predict(state, x, 0, 1.0, 5), state.f0)
    pred = lin.closed_form_predict(state, x, 10**6, 1.0, 5)
    assert np.linalg.norm(pred - state.train.targets_vec()) <= 1e-6 * np.linalg.norm(state.g0)


@pytest.mark.parametrize("t", [1, 10, 50])
def test_closed_form_matches_iterated_linear_gd(state, t):
    eta0, tau = 0.02, 5
    cf = lin.closed_form_params(state, t, eta0, tau)
    gd = lin.iterate_linear_gd(state, eta0, t * tau, substeps=100)
    assert np.linalg.norm(cf - gd) / np.linalg.norm(gd - state.theta0) <= 1e-3


def test_iterated_linear_gd_matches_parameter_space_loop(state):
    # the oracle in coefficient space equals plain GD on the linear model in parameter space
    eta0, iters, sub = 0.1, 3, 5
    h = eta0 / state.n / sub / state.train.size
    th = state.theta0.copy()
    for _ in range(iters * sub):
        th = th - h * state.J0 @ (state.J0.T @ (th - state.theta0) + state.g0)
    np.testing.assert_allclose(lin.iterate_linear_gd(state, eta0, iters, sub), th, atol=1e-13, rtol=0)


@pytest.mark.parametrize("t", [0, 3, 40])
def test_predict_paths_agree(state, rng, t):
    x = unit_columns(rng, 4, 5)
    via_kernel = lin.closed_form_predict(state, x, t, 1.0, 5)
    via_params = lin.lin_forward(state, lin.closed_form_params(state, t, 1.0, 5), x)
    assert np.linalg.norm(via_kernel - via_params) <= 1e-9 * np.linalg.norm(via_params)


def test_centralized_closed_form(state, rng):
    x = unit_columns(rng, 4, 3)
    for t, tau in ((0, 5), (7, 5), (3, 2)):
        params, predict = lin.centralized_closed_form(state, t * tau, 1.0)
        assert np.array_equal(params, lin.closed_form_params(state, t, 1.0, tau))
        assert np.array_equal(predict(x), lin.closed_form_predict(state, x, t, 1.0, tau))
    assert np.array_equal(lin.centralized_closed_form(state, 0, 1.0)[0], state.theta0)


def test_centralized_closed_form_vs_wide_simulation():
    ds = data.gen_synthetic(10, 10, 1.0, seed=0)
    spec = MlpSpec((10, 1024, 1024, 1), "tanh", 1.5, 0.1)
    st_ = lin.make_lin_state(spec, model.init_params(spec, 0), ds)
    sim = fed.run_centralized(spec, ds, None, 50, 1.0, tau=50, metrics=(), keep_params=True).checkpoints[-1]
    cf, _ = lin.centralized_closed_form(st_, 50, 1.0)
    assert np.linalg.norm(sim - cf) / np.linalg.norm(sim - st_.theta0) <= 5e-2


def _local_kernels(M=4, width=32, seed=0):
    ds = data.gen_synthetic(4, 6, 0.8, seed=seed)
    train, part = data.reorder_global(ds, data.partition_dirichlet(ds.classes, M, 0.5, seed))
    spec = MlpSpec((4, width, width, 1), "tanh", 1.5, 0.1)
    theta = model.init_params(spec, seed)
    ks = [ntk.local_ntk(spec, theta, train, part, i) for i in range(M)]
    return ks, part, ntk.empirical_ntk(spec, theta, train.inputs)


def test_lin_fedavg_round_examples(rng):
    ks, part, full = _local_kernels()
    g = rng.standard_normal(full.mat.shape[0])
    assert np.array_equal(lin.lin_fedavg_round(g, ks, part.weights, 0.0, 5, part.sizes), g)
    one = lin.lin_fedavg_round(g, [full], [1.0], 0.5, 4, [g.size])
    np.testing.assert_allclose(one, expm(-(2.0 / g.size) * full.mat) @ g, atol=1e-15)


def test_lin_fedavg_round_gap_is_second_order(rng):
    ks, part, full = _local_kernels()
    g = rng.standard_normal(full.mat.shape[0])
    big = full.mat.shape[0]

    def gap(a):
        fedg = lin.lin_fedavg_round(g, ks, part.weights, a, 1, part.sizes)
        return np.linalg.norm(fedg - expm(-(a / big) * full.mat) @ g)

    ratio = gap(0.2) / gap(0.1)
    assert 3.0 <= ratio <= 5.0


def test_lemma4_gap_examples():
    ks, part, full = _local_kernels()
    assert lin.lemma4_gap(ks, part.weights, 0.0, part.sizes) == 0.0
    same = [full] * 3
    assert lin.lemma4_gap(same, [0.2, 0.3, 0.5], 0.7, [8, 8, 8]) <= 1e-12
    r = lin.lemma4_gap(ks, part.weights, 0.4, part.sizes) / lin.lemma4_gap(ks, part.weights, 0.2, part.sizes)
    assert 3.0 <= r <= 5.0


def test_lemma3_examples():
    assert lin.lemma3_check(np.zeros((3, 3))) == (0.0, 0.0)
    om, bound = lin.lemma3_check(np.array([[1.0]]))
    assert om == pytest.approx(math.exp(-1), abs=1e-12)
    assert bound == pytest.approx(0.5 * math.e, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.floats(0.0, 2.0), st.integers(0, 2**32 - 1))
def test_lemma3_inequality_property(n, rho, seed):
    a = np.random.default_rng(seed).standard_normal((n, n))
    a = (a + a.T) / 2
    s = np.linalg.norm(a, 2)
    if s > 0:
        a *= rho / s
    om, bound = lin.lemma3_check(a)
    assert om <= bound * (1 + 1e-12) + 1e-15


def _report(lam=1.0, C=2.0, C1=1.0, R0=10.0):
    return ConstantsReport(lam, C, C1, R0, 10000)


def test_bound_report_examples():
    rep = lin.bound_report(_report(), 1.0, 5, 100, 10000, 10, q=0.9)
    assert rep.zeta == pytest.approx(20.0, rel=1e-14)
    assert rep.predicted_err[0] == 10.0
    assert not rep.vacuous
    q = lin.contraction_factor(1.0, 2.0, 1e-300, 5, 100)
    assert q == 1.0
    vac = lin.bound_report(_report(), 1e-300, 5, 100, 10000, 3)
    assert vac.vacuous and math.isinf(vac.zeta) and all(math.isinf(v) for v in vac.predicted_err)
    assert lin.bound_report(_report(lam=0.0), 1.0, 5, 100, 100, 2, q=0.5).vacuous
    with pytest.raises(ValueError):
        lin.bound_report(_report(C=math.nan), 1.0, 5, 100, 100, 2)


def test_bound_report_formula_oracle():
    lam, C, C1, R0, n, D = 3.0, 0.05, 0.2, 4.0, 400, 50
    eta0, tau = 0.5, 2
    a = eta0 * tau
    q = 1 - a * lam / (3 * D) + a * a * C**4 / 2 * math.exp(a * C * C)
    rep = lin.bound_report(ConstantsReport(lam, C, C1, R0, n), eta0, tau, D, n, 30)
    assert rep.q == pytest.approx(q, rel=1e-15)
    zeta = 2 * a * C * R0 / (math.sqrt(n) * (1 - q))
    assert rep.zeta == pytest.approx(zeta, rel=1e-12)
    t = 7
    want = q**t * R0 + 2 * a * C * C1 * R0 * zeta * (1 - q**t) / (1 - q) ** 2
    assert rep.predicted_err[t] == pytest.approx(want, rel=1e-12)


def test_bound_report_diagnostic_on_measured_run():
    ds = data.gen_synthetic(10, 10, 1.0, seed=0)
    train, part = data.reorder_global(ds, data.partition_exclusive(ds.classes, 2))
    spec = MlpSpec((10, 256, 256, 1), "tanh", 1.5, 0.1)
    theta0 = model.init_params(spec, 0)
    consts = ntk.estimate_constants(spec, theta0, train, trials=2)
    tr = fed.run_fedavg(spec, train, part, None, FedConfig(tau=5, rounds=10, metrics=()))
    rep = lin.bound_report(consts, 1.0, 5, train.size, spec.width_n, 10, measured=tr.column("global_err"))
    assert len(rep.predicted_err) == 11
    assert all(0 <= t <= 10 for t in rep.violations)
    if not rep.vacuous:
        assert rep.predicted_err[0] == pytest.approx(tr.rows[0]["global_err"])
