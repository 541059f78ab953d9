"""Training configuration, JSON (de)serialization and the experiment presets."""

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from derlab.losses import LossConfig, LossKind
from derlab.network import ACTIVATIONS, Architecture

FULL_BATCH = 0


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class GridSpec:
    lo: float
    hi: float
    n: int

    def points(self):
        if self.n == 1:
            return np.array([float(self.lo)])
        step = (self.hi - self.lo) / (self.n - 1)
        # integer-multiple construction keeps symmetric grids exactly symmetric
        return np.array([round(self.lo + k * step, 12) for k in range(self.n)])

    def to_dict(self):
        return {"lo": self.lo, "hi": self.hi, "n": self.n}


@dataclass(frozen=True)
class DataSpec:
    generator: str = "cubic"
    n: int = 1000
    params: dict = field(default_factory=dict)

    def to_dict(self):
        return {"generator": self.generator, "n": self.n, "params": dict(self.params)}


@dataclass(frozen=True)
class OptimizerSpec:
    name: str = "adam"
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    momentum: float = 0.9
    decay: float = 1.0

    def to_dict(self):
        return dict(self.__dict__)


@dataclass(frozen=True)
class TrainConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    arch: Architecture = field(default_factory=lambda: Architecture(hidden=((64, "relu"), (64, "relu"))))
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    epochs: int = 500
    batch_size: int = 100
    seeds: tuple = (0,)
    data: DataSpec = field(default_factory=DataSpec)
    trace_grid: GridSpec = GridSpec(-7.0, 7.0, 141)
    eval_grid: GridSpec = GridSpec(-7.0, 7.0, 141)
    trace_every: int = 1
    name: str = "custom"

    def validate(self):
        problems = []
        if self.epochs < 0:
            problems.append("epochs must be >= 0")
        if self.batch_size < 0:
            problems.append("batch_size must be >= 0 (0 = full batch)")
        if not self.seeds:
            problems.append("at least one seed is required")
        if self.trace_every < 1:
            problems.append("trace_every must be >= 1")
        if self.trace_grid.n < 1:
            problems.append("trace_grid must contain at least one point")
        if self.eval_grid.n < 0:
            problems.append("eval_grid.n must be >= 0")
        if self.optimizer.name not in ("adam", "momentum"):
            problems.append(f"unknown optimizer {self.optimizer.name!r}")
        if self.optimizer.learning_rate <= 0:
            problems.append("learning_rate must be positive")
        if self.data.generator not in ("cubic", "pulse"):
            problems.append(f"unknown generator {self.data.generator!r}")
        if self.data.n < 1:
            problems.append("data.n must be >= 1")
        return problems

    def to_dict(self):
        return {
            "name": self.name,
            "loss": self.loss.to_dict(),
            "arch": self.arch.to_dict(),
            "optimizer": self.optimizer.to_dict(),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seeds": list(self.seeds),
            "data": self.data.to_dict(),
            "trace_grid": self.trace_grid.to_dict(),
            "eval_grid": self.eval_grid.to_dict(),
            "trace_every": self.trace_every,
            "loss_reduction": "mean",
        }

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def config_from_dict(d, base=None):
    """Build a TrainConfig from a (possibly partial) dict, collecting every problem."""
    cfg = base or TrainConfig()
    problems = []
    known = set(TrainConfig.__dataclass_fields__) | {"preset", "loss_reduction"}
    for key in d:
        if key not in known:
            problems.append(f"unknown config key {key!r}")
    updates = {}

    def sub(key, builder):
        if key in d:
            try:
                updates[key] = builder(d[key])
            except (TypeError, ValueError, KeyError) as exc:
                problems.append(f"{key}: {exc}")

    def merge(current, cls):
        return lambda v: cls(**{**current.__dict__, **v})

    sub("loss", lambda v: LossConfig.from_dict({**cfg.loss.to_dict(), **v}))
    sub("arch", lambda v: Architecture.from_dict({**cfg.arch.to_dict(), **v}))
    sub("optimizer", merge(cfg.optimizer, OptimizerSpec))
    sub("data", merge(cfg.data, DataSpec))
    sub("trace_grid", merge(cfg.trace_grid, GridSpec))
    sub("eval_grid", merge(cfg.eval_grid, GridSpec))
    for key, cast in (("epochs", int), ("batch_size", int), ("trace_every", int), ("name", str)):
        sub(key, cast)
    sub("seeds", lambda v: tuple(int(s) for s in v))
    if problems:
        raise ConfigError(problems)
    cfg = replace(cfg, **updates)
    problems = cfg.validate()
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path):
    d = json.loads(Path(path).read_text())
    base = PRESETS[d["preset"]] if "preset" in d else None
    return config_from_dict(d, base)


def parse_hidden(text):
    """``"64:relu,64:relu"`` -> ((64, "relu"), (64, "relu"))."""
    layers = []
    for chunk in text.split(","):
        width, _, act = chunk.partition(":")
        act = act or "relu"
        if act not in ACTIVATIONS:
            raise ValueError(f"unknown activation {act!r}")
        layers.append((int(width), act))
    return tuple(layers)


_CUBIC = dict(
    data=DataSpec("cubic", 1000, {"x_lo": -4.0, "x_hi": 4.0, "noise_std": 3.0}),
    trace_grid=GridSpec(-7.0, 7.0, 141),
    eval_grid=GridSpec(-7.0, 7.0, 141),
    epochs=500,
)
_PULSE = dict(
    data=DataSpec("pulse", 1000, {"x_lo": 0.0, "x_hi": 1.0}),
    trace_grid=GridSpec(0.0, 1.0, 101),
    eval_grid=GridSpec(0.0, 1.0, 101),
    epochs=600,
)
_MOMENTUM = OptimizerSpec(name="momentum", learning_rate=1e-3, momentum=0.9)

PRESETS = {
    "cubic-der": TrainConfig(
        name="cubic-der", loss=LossConfig(LossKind.DER_ORIGINAL, 0.01), optimizer=OptimizerSpec(learning_rate=5e-4), **_CUBIC
    ),
    "cubic-der-normalized": TrainConfig(
        name="cubic-der-normalized",
        loss=LossConfig(LossKind.DER_NORMALIZED, 0.01, p=2),
        optimizer=OptimizerSpec(learning_rate=5e-4),
        **_CUBIC,
    ),
    "cubic-gaussian": TrainConfig(
        name="cubic-gaussian", loss=LossConfig(LossKind.GAUSSIAN_ALT, 2.0), optimizer=OptimizerSpec(learning_rate=5e-3), **_CUBIC
    ),
    "pulse-der": TrainConfig(
        name="pulse-der", loss=LossConfig(LossKind.DER_ORIGINAL, 0.01), optimizer=OptimizerSpec(learning_rate=1e-3), **_PULSE
    ),
    "pulse-der-normalized": TrainConfig(
        name="pulse-der-normalized",
        loss=LossConfig(LossKind.DER_NORMALIZED, 0.01, p=2),
        optimizer=OptimizerSpec(learning_rate=1e-3),
        **_PULSE,
    ),
    "pulse-gaussian": TrainConfig(
        name="pulse-gaussian", loss=LossConfig(LossKind.GAUSSIAN_ALT, 0.01), optimizer=OptimizerSpec(learning_rate=1e-3), **_PULSE
    ),
    "naive-momentum": TrainConfig(
        name="naive-momentum",
        loss=LossConfig(LossKind.NAIVE_GAUSSIAN, 0.01),
        optimizer=_MOMENTUM,
        **{**_CUBIC, "trace_grid": GridSpec(-4.0, 4.0, 81), "eval_grid": GridSpec(-4.0, 4.0, 81)},
    ),
    "der-momentum": TrainConfig(
        name="der-momentum",
        loss=LossConfig(LossKind.DER_ORIGINAL, 0.01),
        optimizer=_MOMENTUM,
        **{**_CUBIC, "trace_grid": GridSpec(-4.0, 4.0, 81), "eval_grid": GridSpec(-4.0, 4.0, 81)},
    ),
}

