"""Experiment configuration: a strict JSON schema with documented defaults.

Defaults: M=10 clients, tau=5 local steps, alpha=0.1, eta0=1, sigma_W=1.5,
sigma_b=0.1 and a 3-layer FNN.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .metrics import OPTIONAL_METRICS
from .model import ACTIVATIONS, MlpSpec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "synthetic"  # synthetic | mnist-mini
    n0: int = 10  # synthetic input dim
    separation: float = 1.0
    noise: float | None = None
    data_seed: int = 0
    images: str | None = None  # mnist-mini IDX paths
    labels: str | None = None
    class_a: int = 0
    class_b: int = 1
    train_per_class: int = 50
    test_per_class: int = 10
    partition: str = "exclusive"  # dirichlet | exclusive | iid
    alpha: float = 0.1
    M: int = 10
    depth: int = 3
    width: int = 256
    hidden_widths: list[int] | None = None
    activation: str = "tanh"
    sigma_w: float | list[float] = 1.5
    sigma_b: float = 0.1
    eta0: float = 1.0
    tau: int = 5
    rounds: int = 40
    flow_substeps: int = 1
    seed: int = 0
    metrics: dict = field(default_factory=lambda: {m: True for m in OPTIONAL_METRICS})
    out_dir: str = "out"

    def spec(self, n_in: int, n_out: int = 1) -> MlpSpec:
        hidden = list(self.hidden_widths) if self.hidden_widths is not None else [self.width] * (self.depth - 1)
        sw = tuple(self.sigma_w) if isinstance(self.sigma_w, list) else self.sigma_w
        return MlpSpec((n_in, *hidden, n_out), self.activation, sw, self.sigma_b)

    def enabled_metrics(self) -> frozenset:
        return frozenset(k for k, v in self.metrics.items() if v)

    def with_width(self, width: int) -> "ExperimentConfig":
        return dataclasses.replace(self, width=int(width), hidden_widths=None)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_INT = (int,)
_NUM = (int, float)
_TYPES = {
    "dataset": (str,), "n0": _INT, "separation": _NUM, "noise": _NUM + (type(None),),
    "data_seed": _INT, "images": (str, type(None)), "labels": (str, type(None)),
    "class_a": _INT, "class_b": _INT, "train_per_class": _INT, "test_per_class": _INT,
    "partition": (str,), "alpha": _NUM, "M": _INT, "depth": _INT, "width": _INT,
    "hidden_widths": (list, type(None)), "activation": (str,), "sigma_w": _NUM + (list,),
    "sigma_b": _NUM, "eta0": _NUM, "tau": _INT, "rounds": _INT, "flow_substeps": _INT,
    "seed": _INT, "metrics": (dict,), "out_dir": (str,),
}


def _type_name(types) -> str:
    names = {int: "integer", float: "number", str: "string", list: "list", dict: "object", type(None): "null"}
    return " or ".join(dict.fromkeys(names[t] for t in types))


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r}; allowed keys: {', '.join(sorted(_FIELDS))}")
    for key, val in raw.items():
        types = _TYPES[key]
        if isinstance(val, bool) or not isinstance(val, types):
            raise ConfigError(f"{key} must be {_type_name(types)}, got {json.dumps(val)}")
    cfg = dataclasses.replace(ExperimentConfig(), **raw)
    metrics = {m: True for m in OPTIONAL_METRICS}
    for k, v in cfg.metrics.items():
        if k not in OPTIONAL_METRICS:
            raise ConfigError(f"unknown metric {k!r} in metrics; allowed: {', '.join(OPTIONAL_METRICS)}")
        if not isinstance(v, bool):
            raise ConfigError(f"metrics.{k} must be true or false")
        metrics[k] = v
    cfg = dataclasses.replace(cfg, metrics=metrics)
    _validate(cfg)
    return cfg


def _check(ok: bool, msg: str) -> None:
    if not ok:
        raise ConfigError(msg)


def _validate(c: ExperimentConfig) -> None:
    _check(c.dataset in ("synthetic", "mnist-mini"), "dataset must be 'synthetic' or 'mnist-mini'")
    _check(c.partition in ("dirichlet", "exclusive", "iid"), "partition must be 'dirichlet', 'exclusive' or 'iid'")
    _check(c.alpha > 0, "alpha must be > 0")
    _check(c.M >= 1, "M must be >= 1")
    _check(c.partition != "exclusive" or c.M % 2 == 0, "M must be even for the exclusive partition")
    _check(c.depth >= 1, "depth must be >= 1")
    _check(c.width >= 1, "width must be >= 1")
    if c.hidden_widths is not None:
        _check(all(isinstance(w, int) and not isinstance(w, bool) and w >= 1 for w in c.hidden_widths),
               "hidden_widths must be a list of integers >= 1")
        _check(len(c.hidden_widths) == c.depth - 1, "hidden_widths must have depth - 1 entries")
    _check(c.activation in ACTIVATIONS, f"activation must be one of {', '.join(ACTIVATIONS)}")
    if isinstance(c.sigma_w, list):
        _check(len(c.sigma_w) == c.depth and all(isinstance(s, (int, float)) for s in c.sigma_w),
               "sigma_w list must have one number per layer (depth entries)")
        _check(all(s >= 0 for s in c.sigma_w), "sigma_w must be >= 0")
    else:
        _check(c.sigma_w >= 0, "sigma_w must be >= 0")
    _check(c.sigma_b >= 0, "sigma_b must be >= 0")
    _check(c.eta0 > 0, "eta0 must be > 0")
    _check(c.tau >= 1, "tau must be >= 1")
    _check(c.rounds >= 0, "rounds must be >= 0")
    _check(c.flow_substeps >= 1, "flow_substeps must be >= 1")
    _check(c.n0 >= 1, "n0 must be >= 1")
    _check(0 < c.separation <= 1, "separation must be in (0, 1]")
    _check(c.noise is None or c.noise >= 0, "noise must be >= 0")
    _check(c.train_per_class >= 1, "train_per_class must be >= 1")
    _check(c.test_per_class >= 0, "test_per_class must be >= 0")
    if c.dataset == "mnist-mini":
        _check(c.images is not None and c.labels is not None, "mnist-mini needs images and labels paths")
        _check(c.class_a != c.class_b, "class_a and class_b must differ")


def parse_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from e
    return config_from_dict(raw)
