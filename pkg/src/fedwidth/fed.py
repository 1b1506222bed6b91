"""FedAvg with full-batch local GD, and the matched centralized GD baseline."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import model
from .data import LabeledSet, Partition, split_clients
from .metrics import OPTIONAL_METRICS, TRACE_COLUMNS, RunContext, capture_round, model_divergence
from .model import MlpSpec

__all__ = [
    "DivergenceError", "FedConfig", "TrainTrace", "residual", "local_gd", "aggregate",
    "model_divergence", "run_fedavg", "run_centralized",
]


class DivergenceError(RuntimeError):
    def __init__(self, round_index: int, detail: str = ""):
        self.round_index = round_index
        super().__init__(f"non-finite residual in round {round_index}{': ' + detail if detail else ''}")


@dataclass(frozen=True)
class FedConfig:
    tau: int = 5
    rounds: int = 40
    eta0: float = 1.0
    flow_substeps: int = 1
    seed: int = 0
    metrics: frozenset = frozenset(OPTIONAL_METRICS)
    M: int | None = None  # checked against the partition when given

    def __post_init__(self):
        object.__setattr__(self, "metrics", frozenset(self.metrics))
        if self.tau < 1:
            raise ValueError("tau must be >= 1")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if not self.eta0 >= 0:
            raise ValueError("eta0 must be >= 0")
        if self.flow_substeps < 1:
            raise ValueError("flow_substeps must be >= 1")
        if self.M is not None and self.M < 1:
            raise ValueError("M must be >= 1")

    def step_size(self, spec: MlpSpec) -> float:
        """(eta0 / n) / flow_substeps."""
        return self.eta0 / spec.width_n / self.flow_substeps

    @property
    def steps_per_round(self) -> int:
        return self.tau * self.flow_substeps


@dataclass
class TrainTrace:
    rows: list[dict] = field(default_factory=list)
    checkpoints: list[np.ndarray] | None = None  # theta per row, when requested

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]

    def __len__(self) -> int:
        return len(self.rows)


def residual(spec: MlpSpec, params, ds: LabeledSet) -> np.ndarray:
    """f(X) - vec(Y), sample-major."""
    return model.outputs_vec(spec, params, ds.inputs) - ds.targets_vec()


def _gd(spec: MlpSpec, theta: np.ndarray, ds: LabeledSet, lr: float, steps: int, round_index: int) -> np.ndarray:
    scale = lr / ds.size
    for _ in range(steps):
        g = residual(spec, theta, ds)
        if not np.all(np.isfinite(g)):
            raise DivergenceError(round_index)
        theta = theta - scale * model.vjp(spec, theta, ds.inputs, g)
    return theta


def local_gd(spec: MlpSpec, start, shard: LabeledSet, cfg: FedConfig, round_index: int = 0) -> np.ndarray:
    """tau * flow_substeps full-batch steps theta <- theta - (eta_eff/|D_i|) J_i g_i."""
    if shard.size < 1:
        raise ValueError("empty shard")
    start = np.asarray(start, dtype=np.float64)
    return _gd(spec, start, shard, cfg.step_size(spec), cfg.steps_per_round, round_index)


def aggregate(params_list, weights) -> np.ndarray:
    """sum_i p_i theta_i, accumulated in ascending client index."""
    p = np.asarray(weights, dtype=np.float64)
    if len(params_list) != len(p) or not params_list:
        raise ValueError("need one weight per client")
    if abs(p.sum() - 1.0) > 1e-12:
        raise ValueError(f"weights sum to {p.sum()!r}, not 1")
    shape = np.shape(params_list[0])
    acc = p[0] * np.asarray(params_list[0], dtype=np.float64)
    for pi, th in zip(p[1:], params_list[1:]):
        if np.shape(th) != shape:
            raise ValueError("parameter vectors differ in length")
        acc = acc + pi * th
    return acc


def run_fedavg(spec: MlpSpec, train: LabeledSet, partition: Partition, test: LabeledSet | None,
               cfg: FedConfig, workers: int = 1, keep_params: bool = False) -> TrainTrace:
    """T rounds of FedAvg from one shared initialization.

    ``train`` must already be in canonical client-block order. Client updates
    run on up to ``workers`` threads; the result does not depend on it. With
    ``fed_cen_gap`` enabled a centralized GD model is stepped in lockstep
    (tau * flow_substeps steps per round) and compared on the test inputs.
    """
    if not partition.is_contiguous():
        raise ValueError("train set must be in canonical order (see data.reorder_global)")
    if partition.total != train.size:
        raise ValueError("partition does not match the train set")
    if cfg.M is not None and cfg.M != partition.num_clients:
        raise ValueError(f"config says M={cfg.M}, partition has {partition.num_clients} clients")
    theta0 = model.init_params(spec, cfg.seed)
    shards = split_clients(train, partition)
    p = partition.weights
    ctx = RunContext(spec, train, partition, test, theta0, cfg.metrics)
    if "fed_cen_gap" in cfg.metrics:
        ctx.theta_cen = ctx.theta0
    trace = TrainTrace(checkpoints=[] if keep_params else None)
    _record(trace, ctx, 0)

    lr, steps = cfg.step_size(spec), cfg.steps_per_round
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for t in range(1, cfg.rounds + 1):
            start = ctx.theta

            def client(shard, start=start, t=t):
                return _gd(spec, start, shard, lr, steps, t)

            locals_ = list(pool.map(client, shards)) if pool else [client(s) for s in shards]
            ctx.client_thetas = locals_
            ctx.theta = aggregate(locals_, p)
            if ctx.theta_cen is not None:
                ctx.theta_cen = _gd(spec, ctx.theta_cen, train, lr, steps, t)
            _record(trace, ctx, t)
    finally:
        if pool:
            pool.shutdown()
    return trace


def _record(trace: TrainTrace, ctx: RunContext, t: int) -> None:
    row = capture_round(ctx, t)
    for key in TRACE_COLUMNS[1:]:
        v = row[key]
        if v is not None and not np.isfinite(v):
            raise DivergenceError(t, f"{key} is not finite")
    trace.rows.append(row)
    if trace.checkpoints is not None:
        trace.checkpoints.append(ctx.theta.copy())


def run_centralized(spec: MlpSpec, train: LabeledSet, test: LabeledSet | None, total_iters: int,
                    eta0: float, flow_substeps: int = 1, seed: int = 0, tau: int = 1,
                    metrics=("ntk_drift", "lin_gap"), keep_params: bool = False) -> TrainTrace:
    """Full-batch GD on the whole set with the FedAvg init and step size.

    One row every ``tau`` iterations, so row t lines up with FedAvg round t
    (t' = t * tau). A trailing partial block gets its own row.
    """
    if total_iters < 0:
        raise ValueError("total_iters must be >= 0")
    metrics = frozenset(metrics) - {"fed_cen_gap"}
    cfg = FedConfig(tau=tau, rounds=0, eta0=eta0, flow_substeps=flow_substeps, seed=seed, metrics=metrics)
    theta0 = model.init_params(spec, seed)
    ctx = RunContext(spec, train, None, test, theta0, metrics)
    trace = TrainTrace(checkpoints=[] if keep_params else None)
    _record(trace, ctx, 0)
    lr = cfg.step_size(spec)
    done, t = 0, 0
    while done < total_iters:
        block = min(tau, total_iters - done)
        t += 1
        ctx.theta = _gd(spec, ctx.theta, train, lr, block * flow_substeps, t)
        done += block
        _record(trace, ctx, t)
    return trace
