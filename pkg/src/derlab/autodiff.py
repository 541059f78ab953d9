"""Reverse-mode automatic differentiation on an append-only tape.

Nodes hold float64 scalars or numpy arrays. Elementwise operations follow
numpy broadcasting and their adjoints are summed back to the operand shape,
so the same loss code differentiates a single sample or a whole batch.

    tape = Tape()
    x = tape.variable(3.0)
    y = tape.variable(4.0)
    grad = backward(x * y)        # grad.partials == [4.0, 3.0]

The module-level functions (:func:`log`, :func:`softplus`, ...) accept either
:class:`Var` nodes or plain floats/arrays; on plain inputs they evaluate with
numpy and record nothing.
"""

from dataclasses import dataclass

import numpy as np

from derlab import special


class EvaluationError(ArithmeticError):
    """A node produced a non-finite value or an operand left its domain."""


# ---------------------------------------------------------------------------
# primitive rules: forward(vals, attr) -> value; backward(g, vals, out, attr) -> grads


def _sigmoid(v):
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _softplus(v):
    # max(v, 0) + log1p(exp(-|v|)) == v + log1p(exp(-v)) for large v, no overflow
    return np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))


def _check_positive(v, what):
    if np.any(np.asarray(v) <= 0.0):
        raise EvaluationError(f"{what} of a non-positive operand")


def _fwd_div(vals, attr):
    if np.any(np.asarray(vals[1]) == 0.0):
        raise EvaluationError("division by zero")
    return vals[0] / vals[1]


def _fwd_log(vals, attr):
    _check_positive(vals[0], "log")
    return np.log(vals[0])


def _fwd_sqrt(vals, attr):
    if np.any(np.asarray(vals[0]) < 0.0):
        raise EvaluationError("sqrt of a negative operand")
    return np.sqrt(vals[0])


def _bwd_sqrt(g, vals, out, attr):
    _check_positive(out, "sqrt derivative")
    return (g * 0.5 / out,)


def _fwd_lgamma(vals, attr):
    _check_positive(vals[0], "lgamma")
    return special.lgamma(vals[0])


def _fwd_pow(vals, attr):
    base = vals[0]
    if not float(attr).is_integer() and np.any(np.asarray(base) < 0.0):
        raise EvaluationError("non-integer power of a negative operand")
    return np.power(base, attr)


def _bwd_pow(g, vals, out, attr):
    if attr == 0.0:
        return (g * 0.0,)
    return (g * attr * np.power(vals[0], attr - 1.0),)


def _fwd_column(vals, attr):
    return vals[0][..., attr]


def _bwd_column(g, vals, out, attr):
    full = np.zeros_like(vals[0])
    full[..., attr] = g
    return (full,)


def _bwd_sum(g, vals, out, attr):
    return (np.broadcast_to(g, np.shape(vals[0])).astype(np.float64),)


def _bwd_mean(g, vals, out, attr):
    n = np.size(vals[0])
    return (np.broadcast_to(g / n, np.shape(vals[0])).astype(np.float64),)


_RULES = {
    "add": (lambda v, a: v[0] + v[1], lambda g, v, o, a: (g, g)),
    "sub": (lambda v, a: v[0] - v[1], lambda g, v, o, a: (g, -g)),
    "mul": (lambda v, a: v[0] * v[1], lambda g, v, o, a: (g * v[1], g * v[0])),
    "div": (_fwd_div, lambda g, v, o, a: (g / v[1], -g * v[0] / (v[1] * v[1]))),
    "neg": (lambda v, a: -v[0], lambda g, v, o, a: (-g,)),
    "log": (_fwd_log, lambda g, v, o, a: (g / v[0],)),
    "exp": (lambda v, a: np.exp(v[0]), lambda g, v, o, a: (g * o,)),
    "pow": (_fwd_pow, _bwd_pow),
    # subgradient of |x| at 0 is 0
    "abs": (lambda v, a: np.abs(v[0]), lambda g, v, o, a: (g * np.sign(v[0]),)),
    "sqrt": (_fwd_sqrt, _bwd_sqrt),
    "softplus": (lambda v, a: _softplus(v[0]), lambda g, v, o, a: (g * _sigmoid(v[0]),)),
    "tanh": (lambda v, a: np.tanh(v[0]), lambda g, v, o, a: (g * (1.0 - o * o),)),
    # subgradient of relu at 0 is 0
    "relu": (lambda v, a: np.maximum(v[0], 0.0), lambda g, v, o, a: (g * (v[0] > 0.0),)),
    "lgamma": (_fwd_lgamma, lambda g, v, o, a: (g * special.digamma(v[0]),)),
    "matmul": (lambda v, a: v[0] @ v[1], lambda g, v, o, a: (g @ v[1].T, v[0].T @ g)),
    "sum": (lambda v, a: np.sum(v[0]), _bwd_sum),
    "mean": (lambda v, a: np.mean(v[0]), _bwd_mean),
    "column": (_fwd_column, _bwd_column),
    "stop_gradient": (lambda v, a: v[0], lambda g, v, o, a: (None,)),
}


def _unbroadcast(g, shape):
    """Sum an adjoint down to the operand shape it was broadcast from."""
    g = np.asarray(g, dtype=np.float64)
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------


class Tape:
    """Append-only expression graph. Operands always precede the nodes using them.

    A tape has a single owner; do not share one across threads while it is
    being extended.
    """

    def __init__(self):
        self.ops = []
        self.args = []
        self.attrs = []
        self.values = []
        self.leaves = []

    def __len__(self):
        return len(self.ops)

    def _push(self, op, args, attr, value):
        index = len(self.ops)
        if not np.all(np.isfinite(value)):
            raise EvaluationError(f"node {index} ({op}) produced a non-finite value")
        self.ops.append(op)
        self.args.append(args)
        self.attrs.append(attr)
        self.values.append(value)
        return Var(self, index)

    def variable(self, value):
        """Register a differentiable leaf."""
        value = _as_value(value)
        var = self._push("leaf", (), None, value)
        self.leaves.append(var.index)
        return var

    def constant(self, value):
        return self._push("const", (), None, _as_value(value))

    def apply(self, op, *operands, attr=None):
        forward = _RULES[op][0]
        nodes = [self._lift(x) for x in operands]
        vals = [self.values[n.index] for n in nodes]
        try:
            with np.errstate(all="ignore"):
                value = forward(vals, attr)
        except EvaluationError as exc:
            raise EvaluationError(f"node {len(self.ops)} ({op}): {exc}") from None
        return self._push(op, tuple(n.index for n in nodes), attr, value)

    def _lift(self, x):
        if isinstance(x, Var):
            if x.tape is not self:
                raise ValueError("operand belongs to a different tape")
            return x
        return self.constant(x)

    def evaluate(self, leaf_values):
        """Recompute every node with new leaf values, keeping the graph.

        ``leaf_values`` is aligned with the order leaves were registered.
        """
        if len(leaf_values) != len(self.leaves):
            raise ValueError(f"expected {len(self.leaves)} leaf values, got {len(leaf_values)}")
        fresh = dict(zip(self.leaves, (_as_value(v) for v in leaf_values)))
        for i, op in enumerate(self.ops):
            if op == "leaf":
                value = fresh[i]
            elif op == "const":
                continue
            else:
                vals = [self.values[j] for j in self.args[i]]
                try:
                    with np.errstate(all="ignore"):
                        value = _RULES[op][0](vals, self.attrs[i])
                except EvaluationError as exc:
                    raise EvaluationError(f"node {i} ({op}): {exc}") from None
                if not np.all(np.isfinite(value)):
                    raise EvaluationError(f"node {i} ({op}) produced a non-finite value")
            self.values[i] = value


def _as_value(v):
    if isinstance(v, np.ndarray):
        return v.astype(np.float64, copy=True)
    return float(v)


class Var:
    """Handle to a node on a :class:`Tape`."""

    __slots__ = ("tape", "index")
    __array_ufunc__ = None  # ndarray <op> Var defers to the reflected Var method

    def __init__(self, tape, index):
        self.tape = tape
        self.index = index

    @property
    def value(self):
        return self.tape.values[self.index]

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Var(#{self.index} {self.tape.ops[self.index]}, value={self.value!r})"

    def __add__(self, other):
        return self.tape.apply("add", self, other)

    def __radd__(self, other):
        return self.tape.apply("add", other, self)

    def __sub__(self, other):
        return self.tape.apply("sub", self, other)

    def __rsub__(self, other):
        return self.tape.apply("sub", other, self)

    def __mul__(self, other):
        return self.tape.apply("mul", self, other)

    def __rmul__(self, other):
        return self.tape.apply("mul", other, self)

    def __truediv__(self, other):
        return self.tape.apply("div", self, other)

    def __rtruediv__(self, other):
        return self.tape.apply("div", other, self)

    def __neg__(self):
        return self.tape.apply("neg", self)

    def __pow__(self, exponent):
        if isinstance(exponent, Var):
            raise TypeError("only constant real exponents are supported")
        return self.tape.apply("pow", self, attr=float(exponent))

    def __matmul__(self, other):
        return self.tape.apply("matmul", self, other)

    def __rmatmul__(self, other):
        return self.tape.apply("matmul", other, self)

    def __abs__(self):
        return self.tape.apply("abs", self)

    def __getitem__(self, key):
        if not isinstance(key, (int, np.integer)):
            raise TypeError("Var supports integer column selection only")
        return self.tape.apply("column", self, attr=int(key))


# ---------------------------------------------------------------------------
# dispatching elementary functions


def _unary(op, fallback):
    def fn(x):
        if isinstance(x, Var):
            return x.tape.apply(op, x)
        with np.errstate(all="ignore"):
            return fallback(x)

    fn.__name__ = op
    return fn


log = _unary("log", np.log)
exp = _unary("exp", np.exp)
sqrt = _unary("sqrt", np.sqrt)
tanh = _unary("tanh", np.tanh)
softplus = _unary("softplus", lambda x: _softplus(np.asarray(x, dtype=np.float64))[()])
relu = _unary("relu", lambda x: np.maximum(x, 0.0))
lgamma = _unary("lgamma", special.lgamma)
total = _unary("sum", np.sum)
mean = _unary("mean", np.mean)
stop_gradient = _unary("stop_gradient", lambda x: x)


def absolute(x):
    return abs(x)


def power(x, exponent):
    return x**exponent


def value_of(x):
    """Forward value of a node, or ``x`` itself for plain numbers."""
    return x.value if isinstance(x, Var) else x


# ---------------------------------------------------------------------------


@dataclass
class Gradient:
    """d(output)/d(leaf) for every leaf, in registration order."""

    partials: list

    def __len__(self):
        return len(self.partials)

    def flat(self):
        return np.concatenate([np.ravel(p) for p in self.partials])


def backward(output):
    """Reverse sweep from a scalar ``output`` node."""
    if not isinstance(output, Var):
        raise TypeError("backward needs a Var")
    if np.size(output.value) != 1:
        raise ValueError(f"output must be scalar, got shape {output.shape}")
    tape = output.tape
    adj = [None] * (output.index + 1)
    adj[output.index] = np.ones_like(output.value, dtype=np.float64)
    for i in range(output.index, -1, -1):
        g = adj[i]
        op = tape.ops[i]
        if g is None or op in ("leaf", "const"):
            continue
        args = tape.args[i]
        vals = [tape.values[j] for j in args]
        with np.errstate(all="ignore"):
            grads = _RULES[op][1](g, vals, tape.values[i], tape.attrs[i])
        for j, gj in zip(args, grads):
            if gj is None:
                continue
            gj = _unbroadcast(gj, np.shape(tape.values[j]))
            adj[j] = gj if adj[j] is None else adj[j] + gj
    partials = []
    for leaf in tape.leaves:
        g = adj[leaf] if leaf < len(adj) else None
        if g is None:
            g = np.zeros_like(tape.values[leaf], dtype=np.float64)
        partials.append(g if np.ndim(g) else float(g))
    return Gradient(partials)


def finite_difference_check(fn, leaf_values, step=1e-5):
    """Max relative error between reverse-mode and central-difference gradients.

    ``fn(tape, *leaves)`` builds a scalar node. The error per coordinate is
    ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    leaf_values = [np.array(v, dtype=np.float64) for v in leaf_values]

    def evaluate(vals):
        tape = Tape()
        leaves = [tape.variable(v if v.ndim else float(v)) for v in vals]
        return tape, fn(tape, *leaves)

    _, out = evaluate(leaf_values)
    grad = backward(out)
    worst = 0.0
    for k, base in enumerate(leaf_values):
        analytic = np.asarray(grad.partials[k], dtype=np.float64)
        for idx in np.ndindex(base.shape):
            vals_hi = [v.copy() for v in leaf_values]
            vals_lo = [v.copy() for v in leaf_values]
            vals_hi[k][idx] += step
            vals_lo[k][idx] -= step
            hi = float(evaluate(vals_hi)[1].value)
            lo = float(evaluate(vals_lo)[1].value)
            numeric = (hi - lo) / (2.0 * step)
            a = float(analytic[idx])
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
