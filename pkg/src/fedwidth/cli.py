"""Command-line entry point: run, sweep-width, lincheck, centralized.

Exit codes: 0 ok, 1 config error, 2 numerical divergence, 3 I/O error.
FEDWIDTH_THREADS caps parallelism (0 or unset = all cores).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import data, lin, model, ntk, svg
from .config import ConfigError, ExperimentConfig, config_from_dict, parse_config
from .data import DataFormatError, LabeledSet, Partition
from .fed import DivergenceError, FedConfig, TrainTrace, run_centralized, run_fedavg
from .metrics import SWEEP_REDUCERS, TRACE_COLUMNS, summarize_sweep

log = logging.getLogger("fedwidth")

LINCHECK_COLUMNS = (
    "round", "lin_gap_train", "lin_gap_test", "closed_vs_fed", "closed_vs_lingd",
    "linfed_vs_closed", "lemma4_gap",
)


def thread_budget() -> int:
    raw = os.environ.get("FEDWIDTH_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"FEDWIDTH_THREADS must be an integer, got {raw!r}")
    if n < 0:
        raise ConfigError("FEDWIDTH_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


def _blas_limit(threads: int):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return nullcontext()
    return threadpool_limits(limits=threads)


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_csv(path: Path, header, rows) -> None:
    lines = [",".join(header)]
    lines += [",".join(fmt(r[h]) for h in header) for r in rows]
    path.write_text("\n".join(lines) + "\n")


def read_csv(path: Path) -> list[dict]:
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    out = []
    for line in lines[1:]:
        vals = line.split(",")
        out.append({h: (None if v == "" else float(v)) for h, v in zip(header, vals)})
    return out


def load_datasets(cfg: ExperimentConfig) -> tuple[LabeledSet, LabeledSet | None]:
    if cfg.dataset == "synthetic":
        per = cfg.train_per_class + cfg.test_per_class
        full = data.gen_synthetic(cfg.n0, per, cfg.separation, cfg.data_seed, cfg.noise)
        tr = np.r_[0:cfg.train_per_class, per:per + cfg.train_per_class]
        te = np.r_[cfg.train_per_class:per, per + cfg.train_per_class:2 * per]
        train = full.subset(tr)
        test = full.subset(te) if len(te) else None
        return train, test
    full = data.load_idx(cfg.images, cfg.labels)
    train, test = data.make_mini_binary(full, cfg.class_a, cfg.class_b, cfg.train_per_class,
                                        cfg.test_per_class, cfg.data_seed)
    return train, (test if test.size else None)


def make_partition(cfg: ExperimentConfig, train: LabeledSet) -> Partition:
    if cfg.partition == "exclusive":
        return data.partition_exclusive(train.classes, cfg.M)
    if cfg.partition == "dirichlet":
        return data.partition_dirichlet(train.classes, cfg.M, cfg.alpha, cfg.data_seed)
    return data.partition_iid(train.size, cfg.M, cfg.data_seed)


def prepare(cfg: ExperimentConfig):
    train, test = load_datasets(cfg)
    train, part = data.reorder_global(train, make_partition(cfg, train))
    return cfg.spec(train.n0, train.k), train, part, test


def fed_config(cfg: ExperimentConfig) -> FedConfig:
    return FedConfig(tau=cfg.tau, rounds=cfg.rounds, eta0=cfg.eta0, flow_substeps=cfg.flow_substeps,
                     seed=cfg.seed, metrics=cfg.enabled_metrics(), M=cfg.M)


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> TrainTrace:
    spec, train, part, test = prepare(cfg)
    return run_fedavg(spec, train, part, test, fed_config(cfg), workers=workers)


def _write_trace(trace: TrainTrace, out: Path) -> None:
    write_csv(out / "trace.csv", TRACE_COLUMNS, trace.rows)
    series = {}
    for name in TRACE_COLUMNS[1:]:
        col = trace.column(name)
        if any(v is not None for v in col):
            series[name] = [(r["round"], r[name]) for r in trace.rows]
    (out / "trace.svg").write_text(svg.line_chart(series, "round", "value (log scale)"))


def _write_resolved(cfg: ExperimentConfig, out: Path) -> None:
    (out / "config-resolved.json").write_text(json.dumps(cfg.to_json(), indent=2, sort_keys=True) + "\n")


def cmd_run(cfg: ExperimentConfig, out: Path, workers: int = 1) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    _write_resolved(cfg, out)
    trace = run_experiment(cfg, workers)
    _write_trace(trace, out)
    return out


def _sweep_one(args):
    cfg_json, width, out = args
    cfg = config_from_dict(cfg_json).with_width(width)
    sub = Path(out) / f"width-{width}"
    cmd_run(cfg, sub)
    return read_trace(sub / "trace.csv")


def read_trace(path: Path) -> TrainTrace:
    rows = read_csv(path)
    for r in rows:
        r["round"] = int(r["round"])
    return TrainTrace(rows)


def cmd_sweep_width(cfg: ExperimentConfig, widths, out: Path, workers: int = 1):
    """One run per width (ascending, same seed); terminal metrics, log-log slopes, chart."""
    widths = sorted(set(int(w) for w in widths))
    out.mkdir(parents=True, exist_ok=True)
    _write_resolved(cfg, out)
    jobs = [(cfg.to_json(), w, str(out)) for w in widths]
    if workers > 1 and len(widths) > 1:
        with ProcessPoolExecutor(min(workers, len(widths))) as pool:
            traces = list(pool.map(_sweep_one, jobs))
    else:
        traces = [_sweep_one(j) for j in jobs]
    summary = summarize_sweep(widths, traces)
    header = ("width",) + tuple(SWEEP_REDUCERS)
    rows = [{"width": w, **{m: summary.values[m][i] for m in SWEEP_REDUCERS}} for i, w in enumerate(widths)]
    write_csv(out / "sweep.csv", header, rows)
    payload = summary.to_json()
    payload["reducers"] = {m: f.__name__ for m, f in SWEEP_REDUCERS.items()}
    (out / "sweep-summary.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    series = {m: list(zip(widths, summary.values[m])) for m in SWEEP_REDUCERS}
    fits = {m: (f["slope"], f["intercept"]) for m, f in summary.fits.items()}
    (out / "sweep.svg").write_text(svg.loglog_chart(series, fits, "width n", "terminal metric"))
    return summary


def lincheck_rows(cfg: ExperimentConfig, rounds, substeps: int = 100) -> list[dict]:
    """Linearization and closed-form diagnostics at the requested rounds."""
    rounds = sorted(set(int(t) for t in rounds))
    spec, train, part, test = prepare(cfg)
    fcfg = fed_config(cfg)
    fcfg = FedConfig(tau=fcfg.tau, rounds=max(rounds, default=0), eta0=fcfg.eta0,
                     flow_substeps=fcfg.flow_substeps, seed=fcfg.seed, metrics=(), M=fcfg.M)
    trace = run_fedavg(spec, train, part, test, fcfg, keep_params=True)
    theta0 = trace.checkpoints[0]
    state = lin.make_lin_state(spec, theta0, train)
    eval_x = (test if test is not None else train).inputs
    kernels = [ntk.local_ntk(spec, theta0, train, part, i) for i in range(part.num_clients)]
    gap4 = lin.lemma4_gap(kernels, part.weights, cfg.eta0 * cfg.tau, part.sizes)

    g_fed = state.g0.copy()
    done = 0
    rows = []
    for t in rounds:
        theta = trace.checkpoints[t]
        row = {"round": t}
        f_train = model.outputs_vec(spec, theta, train.inputs)
        row["lin_gap_train"] = float(np.linalg.norm(lin.lin_forward(state, theta) - f_train))
        if test is not None:
            f_test = model.outputs_vec(spec, theta, test.inputs)
            row["lin_gap_test"] = float(np.linalg.norm(lin.lin_forward(state, theta, test.inputs) - f_test))
        else:
            row["lin_gap_test"] = None
        pred = lin.closed_form_predict(state, eval_x, t, cfg.eta0, cfg.tau)
        row["closed_vs_fed"] = float(np.linalg.norm(pred - model.outputs_vec(spec, theta, eval_x)))
        cf = lin.closed_form_params(state, t, cfg.eta0, cfg.tau)
        gd = lin.iterate_linear_gd(state, cfg.eta0, t * cfg.tau, substeps)
        moved = np.linalg.norm(gd - theta0)
        row["closed_vs_lingd"] = float(np.linalg.norm(cf - gd) / moved) if moved > 0 else 0.0
        while done < t:
            g_fed = lin.lin_fedavg_round(g_fed, kernels, part.weights, cfg.eta0, cfg.tau, part.sizes)
            done += 1
        s = cfg.eta0 * t * cfg.tau / train.size
        g_closed = lin.spectral_apply(state.eig0, lambda lam: np.exp(-s * lam)) @ state.g0
        row["linfed_vs_closed"] = float(np.linalg.norm(g_fed - g_closed))
        row["lemma4_gap"] = gap4
        rows.append(row)
    return rows


def cmd_lincheck(cfg: ExperimentConfig, rounds, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    _write_resolved(cfg, out)
    write_csv(out / "lincheck.csv", LINCHECK_COLUMNS, lincheck_rows(cfg, rounds))
    return out


def cmd_centralized(cfg: ExperimentConfig, iters: int, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    _write_resolved(cfg, out)
    spec, train, _, test = prepare(cfg)
    metrics = cfg.enabled_metrics() - {"fed_cen_gap"}
    trace = run_centralized(spec, train, test, iters, cfg.eta0, cfg.flow_substeps, cfg.seed, cfg.tau, metrics)
    _write_trace(trace, out)
    return out


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fedwidth", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="one FedAvg run: trace.csv, trace.svg, config-resolved.json")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p = sub.add_parser("sweep-width", help="runs across hidden widths plus log-log slope fits")
    p.add_argument("--config", required=True)
    p.add_argument("--widths", type=_int_list, required=True)
    p.add_argument("--out")
    p = sub.add_parser("lincheck", help="linearization and closed-form diagnostics")
    p.add_argument("--config", required=True)
    p.add_argument("--rounds", type=_int_list, required=True)
    p.add_argument("--out")
    p = sub.add_parser("centralized", help="centralized GD baseline with the FedAvg init")
    p.add_argument("--config", required=True)
    p.add_argument("--iters", type=int, required=True)
    p.add_argument("--out")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = thread_budget()
        cfg = parse_config(args.config)
        out = Path(args.out or cfg.out_dir)
        with _blas_limit(threads), np.errstate(over="ignore", invalid="ignore"):
            if args.command == "run":
                cmd_run(cfg, out, workers=threads)
            elif args.command == "sweep-width":
                cmd_sweep_width(cfg, args.widths, out, workers=threads)
            elif args.command == "lincheck":
                cmd_lincheck(cfg, args.rounds, out)
            else:
                if args.iters < 0:
                    raise ConfigError("--iters must be >= 0")
                cmd_centralized(cfg, args.iters, out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except DivergenceError as e:
        print(f"numerical divergence: {e}", file=sys.stderr)
        return 2
    except (OSError, DataFormatError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
