"""Synthetic regression datasets and their CSV + JSON-sidecar file format.

CSV columns are ``x,y[,true_mean,true_std]`` written with ``repr(float)``
(shortest round-trip decimal). Metadata lives next to the CSV in
``<name>.meta.json`` with keys ``generator``, ``seed``, ``n``, ``params``.
"""

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from derlab.rng import SplitMix64

PULSE_HALF_WIDTH = 0.0025
PULSE_CENTER = 0.5
PULSE_VAR_LEFT = 1e-4
PULSE_VAR_RIGHT = 1e-2


class DatasetFormatError(ValueError):
    pass


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    true_mean: np.ndarray = None
    true_std: np.ndarray = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.x.shape != self.y.shape or self.x.ndim != 1:
            raise ValueError("x and y must be 1-d arrays of equal length")
        for name in ("true_mean", "true_std"):
            col = getattr(self, name)
            if col is not None:
                col = np.asarray(col, dtype=np.float64)
                if col.shape != self.x.shape:
                    raise ValueError(f"{name} must align with x")
                setattr(self, name, col)
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("dataset values must be finite")

    def __len__(self):
        return len(self.x)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return np.array_equal(a, b)

        return (
            same(self.x, other.x)
            and same(self.y, other.y)
            and same(self.true_mean, other.true_mean)
            and same(self.true_std, other.true_std)
            and self.metadata == other.metadata
        )


def cubic_mean(x):
    return np.asarray(x, dtype=np.float64) ** 3


def pulse_mean(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.abs(x - PULSE_CENTER) < PULSE_HALF_WIDTH, 1.0, 0.0)


def pulse_std(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sqrt(np.where(x < PULSE_CENTER, PULSE_VAR_LEFT, PULSE_VAR_RIGHT))


def gen_cubic(n=1000, seed=0, x_lo=-4.0, x_hi=4.0, noise_std=3.0):
    """``y = x**3 + N(0, noise_std**2)`` with x uniform on [x_lo, x_hi]."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not x_lo < x_hi:
        raise ValueError("need x_lo < x_hi")
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    rng = SplitMix64(seed)
    x = rng.uniform(n, x_lo, x_hi)
    eps = rng.normal(n)
    mean = cubic_mean(x)
    meta = {
        "generator": "cubic",
        "seed": int(seed),
        "n": int(n),
        "params": {"x_lo": float(x_lo), "x_hi": float(x_hi), "noise_std": float(noise_std)},
    }
    return Dataset(x, mean + noise_std * eps, mean, np.full(n, float(noise_std)), meta)


def gen_binary_pulse(n=1000, seed=0, x_lo=0.0, x_hi=1.0):
    """Unit pulse of half-width 0.0025 at x = 0.5; noise variance 1e-4 left of 0.5, 1e-2 right."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not x_lo < x_hi:
        raise ValueError("need x_lo < x_hi")
    rng = SplitMix64(seed)
    x = rng.uniform(n, x_lo, x_hi)
    eps = rng.normal(n)
    mean = pulse_mean(x)
    std = pulse_std(x)
    meta = {
        "generator": "pulse",
        "seed": int(seed),
        "n": int(n),
        "params": {"x_lo": float(x_lo), "x_hi": float(x_hi)},
    }
    return Dataset(x, mean + std * eps, mean, std, meta)


GENERATORS = {"cubic": gen_cubic, "pulse": gen_binary_pulse}


def generate(name, n, seed, **params):
    try:
        gen = GENERATORS[name]
    except KeyError:
        raise ValueError(f"unknown generator {name!r}; choose from {sorted(GENERATORS)}") from None
    return gen(n=n, seed=seed, **params)


def regenerate(metadata):
    return generate(metadata["generator"], metadata["n"], metadata["seed"], **metadata.get("params", {}))


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def save_dataset(dataset, path):
    path = Path(path)
    cols = [("x", dataset.x), ("y", dataset.y)]
    if dataset.true_mean is not None and dataset.true_std is not None:
        cols += [("true_mean", dataset.true_mean), ("true_std", dataset.true_std)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([name for name, _ in cols])
        for row in zip(*(c for _, c in cols)):
            writer.writerow([repr(float(v)) for v in row])
    with open(sidecar_path(path), "w") as fh:
        json.dump(dataset.metadata, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_dataset(path):
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header not in (["x", "y"], ["x", "y", "true_mean", "true_std"]):
        raise DatasetFormatError(f"{path}:1: unexpected header {header}")
    if len(rows) == 1:
        raise DatasetFormatError(f"{path}: no data rows")
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DatasetFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            parsed = [float(v) for v in row]
        except ValueError:
            raise DatasetFormatError(f"{path}:{lineno}: non-numeric field in {row}") from None
        if not all(math.isfinite(v) for v in parsed):
            raise DatasetFormatError(f"{path}:{lineno}: non-finite value")
        values.append(parsed)
    arr = np.array(values, dtype=np.float64)
    meta = {}
    side = sidecar_path(path)
    if side.exists():
        try:
            meta = json.loads(side.read_text())
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"{side}:{exc.lineno}: {exc.msg}") from None
    extra = (arr[:, 2], arr[:, 3]) if arr.shape[1] == 4 else (None, None)
    return Dataset(arr[:, 0], arr[:, 1], *extra, metadata=meta)
