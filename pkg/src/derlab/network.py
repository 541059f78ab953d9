"""Shallow fully connected network and the evidential / Gaussian output heads."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from derlab import autodiff as ad
from derlab.rng import SplitMix64

ACTIVATIONS = {"tanh": ad.tanh, "relu": ad.relu}
CHECKPOINT_MAGIC = "# derlab-checkpoint v1"


@dataclass(frozen=True)
class Architecture:
    input_dim: int = 1
    hidden: tuple = ((64, "tanh"), (64, "tanh"))
    output_dim: int = 4

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple((int(w), str(a)) for w, a in self.hidden))
        if self.output_dim != 4:
            raise ValueError("output_dim must be 4")
        if self.input_dim != 1:
            raise ValueError("only scalar inputs are supported")
        for width, act in self.hidden:
            if width < 1:
                raise ValueError("hidden widths must be >= 1")
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")

    @property
    def layer_shapes(self):
        dims = [self.input_dim] + [w for w, _ in self.hidden] + [self.output_dim]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def n_params(self):
        return sum(i * o + o for i, o in self.layer_shapes)

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "hidden": [[w, a] for w, a in self.hidden],
            "output_dim": self.output_dim,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d.get("input_dim", 1), tuple(tuple(h) for h in d["hidden"]), d.get("output_dim", 4))


@dataclass
class Parameters:
    """Weights ``W`` of shape (fan_in, fan_out) and biases ``b`` per layer."""

    arch: Architecture
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def flatten(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.arch.n_params,):
            raise ValueError(f"expected {self.arch.n_params} values, got {flat.shape}")
        weights, biases, k = [], [], 0
        for fan_in, fan_out in self.arch.layer_shapes:
            weights.append(flat[k : k + fan_in * fan_out].reshape(fan_in, fan_out).copy())
            k += fan_in * fan_out
            biases.append(flat[k : k + fan_out].copy())
            k += fan_out
        return Parameters(self.arch, weights, biases)

    def attach(self, tape):
        """Register every array as a leaf, in flatten order."""
        return [tape.variable(a) for a in self.arrays()]

    def __eq__(self, other):
        if not isinstance(other, Parameters):
            return NotImplemented
        return self.arch == other.arch and np.array_equal(self.flatten(), other.flatten())


def init(arch, seed):
    """Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)); zero biases."""
    rng = SplitMix64(seed)
    weights, biases = [], []
    for fan_in, fan_out in arch.layer_shapes:
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(fan_in * fan_out, -a, a).reshape(fan_in, fan_out))
        biases.append(np.zeros(fan_out))
    return Parameters(arch, weights, biases)


def _as_batch(x):
    return np.atleast_1d(np.asarray(x, dtype=np.float64)).reshape(-1, 1)


def forward(params, x, tape, leaves=None):
    """Raw head outputs ``(theta1, .., theta4)`` as nodes of shape (n,)."""
    if leaves is None:
        leaves = params.attach(tape)
    h = tape.constant(_as_batch(x))
    n_layers = len(params.weights)
    for k in range(n_layers):
        h = (h @ leaves[2 * k]) + leaves[2 * k + 1]
        if k < n_layers - 1:
            h = ACTIVATIONS[params.arch.hidden[k][1]](h)
    return tuple(h[j] for j in range(4))


def predict(params, x):
    """Tape-free forward pass; returns theta with shape (n, 4)."""
    h = _as_batch(x)
    n_layers = len(params.weights)
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if k < n_layers - 1:
            act = params.arch.hidden[k][1]
            h = np.tanh(h) if act == "tanh" else np.maximum(h, 0.0)
    if not np.all(np.isfinite(h)):
        raise ad.EvaluationError("non-finite network output")
    return h


# ---------------------------------------------------------------------------
# heads


@dataclass
class NIGParams:
    gamma: object
    nu: object
    alpha: object
    beta: object


@dataclass
class GaussianParams:
    gamma: object
    nu: object
    beta: object

    @property
    def sigma_sq(self):
        return self.beta / self.nu


def _columns(theta):
    if isinstance(theta, np.ndarray) and theta.ndim >= 1 and theta.shape[-1] == 4:
        return tuple(theta[..., j] for j in range(4))
    if len(theta) != 4:
        raise ValueError("theta must have four components")
    return tuple(theta)


def evidential_head(theta):
    t1, t2, t3, t4 = _columns(theta)
    return NIGParams(gamma=t1, nu=ad.softplus(t2), alpha=ad.softplus(t3) + 1.0, beta=ad.softplus(t4))


def gaussian_head(theta):
    t1, t2, _, t4 = _columns(theta)
    return GaussianParams(gamma=t1, nu=ad.softplus(t2), beta=ad.softplus(t4))


# ---------------------------------------------------------------------------
# checkpoints: magic line, JSON architecture line, count line, one float.hex per line


def save_checkpoint(params, path):
    flat = params.flatten()
    lines = [CHECKPOINT_MAGIC, json.dumps(params.arch.to_dict(), sort_keys=True), str(flat.size)]
    lines += [float(v).hex() for v in flat]
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path):
    lines = Path(path).read_text().splitlines()
    if len(lines) < 3 or lines[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a derlab checkpoint")
    arch = Architecture.from_dict(json.loads(lines[1]))
    count = int(lines[2])
    if count != arch.n_params or len(lines) != 3 + count:
        raise ValueError(f"{path}: parameter count does not match architecture")
    flat = np.array([float.fromhex(v) for v in lines[3:]])
    return Parameters(arch, [], []).with_flat(flat)
