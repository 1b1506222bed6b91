"""Acceptance criteria 1-12. Each test prints one PASS/FAIL line and asserts it."""
import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from fedwidth import cli, data, fed, lin, model, ntk
from fedwidth.config import config_from_dict
from fedwidth.fed import FedConfig
from fedwidth.linalg import expm
from fedwidth.metrics import fit_slope, terminal
from fedwidth.model import MlpSpec

from conftest import ACCEPTANCE_LINES, MNIST_IMAGES, MNIST_LABELS, unit_columns

WIDTHS = [64, 256, 1024]


def report(k: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {k}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def strictly_decreasing(vals) -> bool:
    return all(b < a for a, b in zip(vals, vals[1:]))


@pytest.fixture(scope="module")
def synthetic_sweep(tmp_path_factory):
    """Non-IID synthetic sweep: n0=10, 50/class, exclusive, M=10, tau=5, eta0=1, T=40, seed 0."""
    cfg = config_from_dict({
        "dataset": "synthetic", "n0": 10, "train_per_class": 50, "test_per_class": 10,
        "partition": "exclusive", "M": 10, "tau": 5, "eta0": 1.0, "rounds": 40, "seed": 0,
        "metrics": {"ntk_drift": True, "lin_gap": True, "fed_cen_gap": False},
    })
    out = tmp_path_factory.mktemp("sweep")
    start = time.perf_counter()
    with threadpool_limits(1):
        summary = cli.cmd_sweep_width(cfg, WIDTHS, out, workers=1)
    return summary, time.perf_counter() - start


def test_criterion_01_divergence_scaling(synthetic_sweep):
    summary, seconds = synthetic_sweep
    fit = summary.fits["divergence"]
    vals = summary.values["divergence"]
    ok = -0.8 <= fit["slope"] <= -0.2 and fit["r2"] >= 0.9 and seconds < 300
    report(1, ok, f"divergence {['%.4g' % v for v in vals]} slope {fit['slope']:.3f} r2 {fit['r2']:.3f} "
                  f"sweep {seconds:.0f}s (single thread, includes the criterion 2-3 metrics)")


def test_criterion_02_linearization_gap(synthetic_sweep):
    summary, _ = synthetic_sweep
    vals = summary.values["lin_gap"]
    slope = summary.fits["lin_gap"]["slope"]
    ok = strictly_decreasing(vals) and -0.8 <= slope <= -0.2
    report(2, ok, f"sup lin_gap {['%.4g' % v for v in vals]} slope {slope:.3f} (target [-0.8, -0.2])")


def test_criterion_03_ntk_drift(synthetic_sweep):
    summary, _ = synthetic_sweep
    vals = summary.values["ntk_drift"]
    ratio = vals[-1] / vals[0]
    ok = strictly_decreasing(vals) and ratio < 0.1
    report(3, ok, f"relative NTK drift {['%.4g' % v for v in vals]} ratio 1024/64 {ratio:.4f}")


def _mnist_binary(train_per_class=50, test_per_class=10, seed=0):
    ds = data.load_idx(MNIST_IMAGES, MNIST_LABELS)
    return data.make_mini_binary(ds, 0, 1, train_per_class, test_per_class, seed)


def test_criterion_04_fed_vs_centralized():
    """Mini-MNIST (digits 0 vs 1), exclusive M=10, tau=5, eta0=0.1, T=40, matched t' = t*tau."""
    tr, te = _mnist_binary()
    train, part = data.reorder_global(tr, data.partition_exclusive(tr.classes, 10))
    cfg = FedConfig(tau=5, rounds=40, eta0=0.1, seed=0, metrics={"fed_cen_gap"}, M=10)
    gaps, worst = [], None
    for w in WIDTHS:
        spec = MlpSpec((784, w, w, 1), "tanh", 1.5, 0.1)
        f = fed.run_fedavg(spec, train, part, te, cfg)
        gaps.append(terminal(f.column("fed_cen_gap")))
        if w == WIDTHS[-1]:
            c = fed.run_centralized(spec, train, te, cfg.rounds * cfg.tau, cfg.eta0, seed=0, tau=cfg.tau, metrics=())
            worst = max(abs(a[k] - b[k]) / abs(b[k]) for a, b in zip(f.rows, c.rows) for k in ("train_loss", "test_loss"))
    ok = strictly_decreasing(gaps) and worst < 0.05
    report(4, ok, f"terminal test-output gap {['%.4g' % g for g in gaps]}; width-1024 max relative loss "
                  f"difference {worst:.2e} (< 5%)")


def test_criterion_05_closed_form():
    start = time.perf_counter()
    ds = data.gen_synthetic(10, 10, 1.0, seed=0)
    spec = MlpSpec((10, 256, 256, 1), "tanh", 1.5, 0.1)
    state = lin.make_lin_state(spec, model.init_params(spec, 0), ds)
    eta0, tau = 0.02, 5
    worst_params = 0.0
    for t in (1, 10, 25, 50):
        cf = lin.closed_form_params(state, t, eta0, tau)
        gd = lin.iterate_linear_gd(state, eta0, t * tau, substeps=100)
        worst_params = max(worst_params, np.linalg.norm(cf - gd) / np.linalg.norm(gd - state.theta0))
    x = unit_columns(np.random.default_rng(0), 10, 8)
    worst_path = 0.0
    for t in (0, 10, 50):
        a = lin.closed_form_predict(state, x, t, eta0, tau)
        b = lin.lin_forward(state, lin.closed_form_params(state, t, eta0, tau), x)
        worst_path = max(worst_path, np.linalg.norm(a - b) / np.linalg.norm(b))
    seconds = time.perf_counter() - start
    ok = worst_params <= 1e-3 and worst_path <= 1e-9 and seconds < 60
    report(5, ok, f"closed form vs 100x linear GD {worst_params:.2e} (<= 1e-3), predict paths {worst_path:.2e} "
                  f"(<= 1e-9), {seconds:.1f}s")


def test_criterion_06_lemma4_order():
    ratios = []
    eta0tau = 0.5
    for seed in range(10):
        ds = data.gen_synthetic(10, 10, 1.0, seed=seed)
        train, part = data.reorder_global(ds, data.partition_dirichlet(ds.classes, 4, 0.5, seed))
        spec = MlpSpec((10, 128, 128, 1), "tanh", 1.5, 0.1)
        theta = model.init_params(spec, seed)
        ks = [ntk.local_ntk(spec, theta, train, part, i) for i in range(part.num_clients)]
        full = lin.lemma4_gap(ks, part.weights, eta0tau, part.sizes)
        half = lin.lemma4_gap(ks, part.weights, eta0tau / 2, part.sizes)
        ratios.append(full / half)
    mean = float(np.mean(ratios))
    report(6, 3.0 <= mean <= 5.0, f"mean gap ratio {mean:.3f} over 10 seeds (range {min(ratios):.3f}-{max(ratios):.3f})")


def test_criterion_07_lemma3():
    rng = np.random.default_rng(7)
    violations, worst = 0, 0.0
    for _ in range(100):
        n = int(rng.integers(1, 9))
        a = rng.standard_normal((n, n))
        a = (a + a.T) / 2
        a *= rng.uniform(0.0, 5.0) / np.linalg.norm(a, 2)
        om, bound = lin.lemma3_check(a)
        violations += om > bound
        worst = max(worst, om / bound)
    report(7, violations == 0, f"{violations} violations in 100 matrices, max omega/bound {worst:.3f}")


def test_criterion_08_jacobian_fd():
    rng = np.random.default_rng(8)
    worst = 0.0
    for act in ("tanh", "erf"):
        for widths in ((3, 8, 8, 1), (10, 64, 64, 1)):
            spec = MlpSpec(widths, act, 1.5, 0.1)
            theta = model.init_params(spec, 1)
            x = unit_columns(rng, widths[0], 4)
            j = model.jacobian(spec, theta, x)
            eps = 1e-4
            fd = np.empty_like(j)
            for i in range(theta.size):
                e = np.zeros_like(theta)
                e[i] = eps
                fd[i] = (model.outputs_vec(spec, theta + e, x) - model.outputs_vec(spec, theta - e, x)) / (2 * eps)
            worst = max(worst, float(np.max(np.abs(fd - j))))
    report(8, worst <= 1e-6, f"max |FD - analytic| {worst:.2e} over tanh/erf up to [10,64,64,1]")


def test_criterion_09_expm():
    rng = np.random.default_rng(9)
    worst_taylor, worst_inv = 0.0, 0.0
    for _ in range(50):
        n = int(rng.integers(1, 9))
        a = rng.standard_normal((n, n))
        a *= rng.uniform(0.0, 2.0) / np.linalg.norm(a)
        ref, term = np.eye(n), np.eye(n)
        for k in range(1, 100):
            term = term @ a / k
            ref = ref + term
        worst_taylor = max(worst_taylor, float(np.max(np.abs(expm(a) - ref))))
        worst_inv = max(worst_inv, float(np.max(np.abs(expm(a) @ expm(-a) - np.eye(n)))) / n)
    ok = worst_taylor <= 1e-10 and worst_inv <= 1e-8
    report(9, ok, f"expm vs 100-term Taylor {worst_taylor:.2e}, inverse defect / dim {worst_inv:.2e}")


def test_criterion_10_degenerate_identities():
    ds = data.gen_synthetic(6, 8, 0.9, seed=1)
    test = data.gen_synthetic(6, 3, 0.9, seed=2)
    spec = MlpSpec((6, 32, 32, 1), "tanh", 1.5, 0.1)
    one = data.Partition((np.arange(ds.size),))
    m = ("ntk_drift", "lin_gap")
    f = fed.run_fedavg(spec, ds, one, test, FedConfig(tau=1, rounds=15, metrics=m))
    c = fed.run_centralized(spec, ds, test, 15, 1.0, metrics=m)
    bitwise = all(rf[k] == v for rf, rc in zip(f.rows, c.rows) for k, v in rc.items() if v is not None)
    bitwise = bitwise and len(f) == len(c)

    reps = 4
    same = data.LabeledSet(np.tile(ds.inputs, reps), np.tile(ds.labels, reps))
    spart = data.Partition(tuple(np.arange(i * ds.size, (i + 1) * ds.size) for i in range(reps)))
    div = max(fed.run_fedavg(spec, same, spart, None, FedConfig(tau=5, rounds=10, metrics=())).column("divergence")[1:])

    train, part = data.reorder_global(ds, data.partition_dirichlet(ds.classes, 4, 0.5, seed=0))
    tr = fed.run_fedavg(spec, train, part, None, FedConfig(tau=5, rounds=10, metrics=()), keep_params=True)
    worst = 0.0
    for theta in tr.checkpoints:
        full = ntk.empirical_ntk(spec, theta, train.inputs).mat
        total = sum(ntk.local_ntk(spec, theta, train, part, i).mat for i in range(part.num_clients))
        worst = max(worst, np.linalg.norm(total - full) / np.linalg.norm(full))
    ok = bitwise and div <= 1e-12 and worst <= 1e-10
    report(10, ok, f"M=1,tau=1 bitwise {bitwise}; identical-shard divergence {div:.1e}; "
                   f"sum of local NTKs rel err {worst:.1e}")


def test_criterion_11_determinism(tmp_path):
    c = tmp_path / "c.json"
    c.write_text('{"width": 64, "rounds": 10, "partition": "dirichlet", "alpha": 0.1, "seed": 11}')
    codes = [cli.main(["run", "--config", str(c), "--out", str(tmp_path / d)]) for d in ("a", "b")]
    same = (tmp_path / "a/trace.csv").read_bytes() == (tmp_path / "b/trace.csv").read_bytes()
    report(11, codes == [0, 0] and same, f"byte-identical trace.csv across two runs: {same}")


def test_criterion_12_mnist_iid_gap():
    """Widths 8k for k in {1, 16, 512}; IID vs class-exclusive, M=10, tau=5, eta0=1, T=40."""
    tr, te = _mnist_binary()
    setups = {
        "iid": data.reorder_global(tr, data.partition_iid(tr.size, 10, seed=0)),
        "non-iid": data.reorder_global(tr, data.partition_exclusive(tr.classes, 10)),
    }
    cfg = FedConfig(tau=5, rounds=40, eta0=1.0, seed=0, metrics=(), M=10)
    gaps = []
    for w in (8, 128, 4096):
        spec = MlpSpec((784, w, w, 1), "tanh", 1.5, 0.1)
        loss = {k: terminal(fed.run_fedavg(spec, train, part, te, cfg).column("test_loss"))
                for k, (train, part) in setups.items()}
        gaps.append(abs(loss["non-iid"] - loss["iid"]))
    report(12, strictly_decreasing(gaps), f"terminal test-loss gap non-IID vs IID {['%.4g' % g for g in gaps]}")
