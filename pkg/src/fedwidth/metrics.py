"""Per-round measurements and width-sweep scaling fits."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model, ntk
from .data import LabeledSet, Partition
from .model import MlpSpec

TRACE_COLUMNS = (
    "round", "global_err", "train_loss", "test_loss", "divergence",
    "param_drift", "ntk_drift", "lin_gap", "fed_cen_gap",
)
OPTIONAL_METRICS = ("ntk_drift", "lin_gap", "fed_cen_gap")


@dataclass
class RunContext:
    """Everything capture_round reads. Values fixed at init are computed once."""
    spec: MlpSpec
    train: LabeledSet
    partition: Partition | None
    test: LabeledSet | None
    theta0: np.ndarray
    metrics: frozenset = frozenset()
    theta: np.ndarray = None
    client_thetas: list | None = None
    theta_cen: np.ndarray | None = None
    f0_train: np.ndarray = field(init=False)
    ntk0: ntk.Kernel | None = field(init=False, default=None)

    def __post_init__(self):
        unknown = set(self.metrics) - set(OPTIONAL_METRICS)
        if unknown:
            raise ValueError(f"unknown metrics {sorted(unknown)}")
        self.theta0 = np.array(self.theta0, dtype=np.float64)
        self.theta0.flags.writeable = False
        if self.theta is None:
            self.theta = self.theta0
        self.f0_train = model.outputs_vec(self.spec, self.theta0, self.train.inputs)
        if "ntk_drift" in self.metrics:
            self.ntk0 = ntk.empirical_ntk(self.spec, self.theta0, self.train.inputs)

    @property
    def gap_set(self) -> LabeledSet:
        return self.test if self.test is not None else self.train


def capture_round(ctx: RunContext, t: int) -> dict:
    """One trace row for the state held in ``ctx``. Absent metrics are None."""
    spec, theta = ctx.spec, ctx.theta
    row = dict.fromkeys(TRACE_COLUMNS)
    row["round"] = t
    f = model.outputs_vec(spec, theta, ctx.train.inputs)
    g = f - ctx.train.targets_vec()
    err = float(np.sqrt(g @ g))
    row["global_err"] = err
    row["train_loss"] = err * err / (2 * ctx.train.size)
    if ctx.test is not None:
        gt = model.outputs_vec(spec, theta, ctx.test.inputs) - ctx.test.targets_vec()
        row["test_loss"] = float(gt @ gt) / (2 * ctx.test.size)
    if ctx.client_thetas is not None:
        row["divergence"] = model_divergence(ctx.client_thetas, theta, ctx.partition.weights)
    d = theta - ctx.theta0
    row["param_drift"] = float(np.sqrt(d @ d))
    if "ntk_drift" in ctx.metrics:
        row["ntk_drift"] = ntk.ntk_drift(ntk.empirical_ntk(spec, theta, ctx.train.inputs), ctx.ntk0)
    if "lin_gap" in ctx.metrics:
        flin = ctx.f0_train + model.jvp(spec, ctx.theta0, ctx.train.inputs, d)
        row["lin_gap"] = float(np.linalg.norm(flin - f))
    if "fed_cen_gap" in ctx.metrics and ctx.theta_cen is not None:
        x = ctx.gap_set.inputs
        diff = model.outputs_vec(spec, ctx.theta_cen, x) - model.outputs_vec(spec, theta, x)
        row["fed_cen_gap"] = float(np.linalg.norm(diff))
    return row


def model_divergence(params_list, aggregated, p) -> float:
    """sum_i p_i ||theta_i - theta_agg||_2, accumulated in client order."""
    total = 0.0
    for pi, th in zip(p, params_list):
        d = th - aggregated
        total += float(pi) * float(np.sqrt(d @ d))
    return total


def fit_slope(xs, ys) -> tuple[float, float, float]:
    """OLS of log(y) on log(x). Returns (slope, intercept, r2)."""
    x = np.log(np.asarray(xs, dtype=np.float64))
    y = np.log(np.asarray(ys, dtype=np.float64))
    if len(x) < 3:
        raise ValueError("need at least 3 points for a slope")
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    ss_res = float(np.sum((y - (intercept + slope * x)) ** 2))
    ss_tot = float(np.sum((y - ym) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return slope, intercept, r2


def terminal(values, window: int = 5) -> float | None:
    """Median of the last ``window`` present values."""
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    return float(np.median(vals[-window:]))


def supremum(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(max(vals)) if vals else None


def final(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(vals[-1]) if vals else None


# how each sweep metric is reduced over the rounds of one run
SWEEP_REDUCERS = {
    "divergence": terminal,
    "lin_gap": supremum,
    "ntk_drift": final,
    "fed_cen_gap": terminal,
}


@dataclass
class SweepSummary:
    widths: list[int]
    values: dict[str, list[float | None]]
    fits: dict[str, dict]

    def to_json(self) -> dict:
        return {"widths": self.widths, "values": self.values, "fits": self.fits}


def summarize_sweep(widths, traces) -> SweepSummary:
    """Reduce each run per SWEEP_REDUCERS and fit log-log slopes where >= 3 positive points exist."""
    order = np.argsort(widths, kind="stable")
    widths = [int(widths[i]) for i in order]
    traces = [traces[i] for i in order]
    values, fits = {}, {}
    for name, reduce in SWEEP_REDUCERS.items():
        vals = [reduce(tr.column(name)) for tr in traces]
        values[name] = vals
        pts = [(w, v) for w, v in zip(widths, vals) if v is not None and v > 0]
        if len(pts) >= 3:
            slope, intercept, r2 = fit_slope(*zip(*pts))
            fits[name] = {"slope": slope, "intercept": intercept, "r2": r2, "n_points": len(pts)}
    return SweepSummary(widths, values, fits)
