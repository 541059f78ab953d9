"""Training loop, per-epoch traces, multi-seed orchestration and grid evaluation.

Seeds are used three ways per run: the network is initialized from ``seed``;
the dataset (when generated here) uses ``derive_seed(seed, DATA_STREAM)`` and
mini-batch shuffling uses ``derive_seed(seed, SHUFFLE_STREAM)``. Each run owns
its tape, parameters, optimizer state and RNG streams, so results do not
depend on how runs are scheduled.
"""

import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from derlab import autodiff as ad
from derlab import data as data_mod
from derlab import losses, network, optim
from derlab import uncertainty as unc
from derlab.rng import SplitMix64, derive_seed

log = logging.getLogger(__name__)

DATA_STREAM = 1
SHUFFLE_STREAM = 2
TEST_STREAM = 3

TRACE_FIELDS = (
    "gamma",
    "nu",
    "alpha",
    "beta",
    "residual",
    "w_st",
    "sqrt_beta_over_alpha",
    "sqrt_nu_over_1p_nu",
    "u_al",
    "u_ep",
    "u_al_p",
    "u_ep_p",
)

TRUE_MEAN = {"cubic": data_mod.cubic_mean, "pulse": data_mod.pulse_mean}


class TrainingDiverged(RuntimeError):
    def __init__(self, seed, epoch, sample, params, detail):
        self.seed = seed
        self.epoch = epoch
        self.sample = sample
        self.params = params
        super().__init__(f"seed {seed}: non-finite loss at epoch {epoch}, sample {sample}: {detail}")


@dataclass
class EpochTrace:
    """Head outputs and every derived proxy on the trace grid after ``epoch`` epochs.

    For Gaussian heads alpha, sqrt(beta/alpha) and the SOTA proxies are NaN,
    w_st holds sigma = sqrt(beta/nu), and u_al_p / u_ep_p are sigma and 1/sqrt(nu).
    """

    epoch: int
    x: np.ndarray
    values: dict

    def __getitem__(self, name):
        return self.values[name]


@dataclass
class GridEvaluation:
    x: np.ndarray
    head: str
    params: object
    estimates: dict


@dataclass
class RunResult:
    seed: int
    params: network.Parameters
    traces: list
    final: GridEvaluation
    losses: list
    wall_clock: float
    config: dict

    def trace_array(self, name):
        """(n_captures, n_grid) array of one traced quantity."""
        return np.stack([t[name] for t in self.traces])

    @property
    def trace_epochs(self):
        return [t.epoch for t in self.traces]


@dataclass
class AggregateTrace:
    epochs: list
    x: np.ndarray
    mean: dict
    std: dict
    n_runs: int


@dataclass
class MultiSeedResult:
    runs: list
    failures: list = field(default_factory=list)
    aggregate: AggregateTrace = None


# ---------------------------------------------------------------------------


def _sota_with_limit(m):
    """SOTA estimate; where 1 + softplus(theta3) rounded to exactly 1, u_al and u_ep take their limit +inf."""
    alpha = np.asarray(m.alpha, dtype=np.float64)
    if np.all(alpha > 1.0):
        return unc.sota_uncertainties(m)
    safe = network.NIGParams(m.gamma, m.nu, np.where(alpha > 1.0, alpha, 2.0), m.beta)
    est = unc.sota_uncertainties(safe)
    inf = np.where(alpha > 1.0, 1.0, np.inf)
    return unc.UncertaintyEstimate(est.prediction, est.aleatoric * inf, est.epistemic * inf, est.convention)


def evaluate_grid(params, head, xs):
    """Head parameters and all uncertainty estimates at ``xs`` (tape-free)."""
    xs = np.asarray(xs, dtype=np.float64).ravel()
    if xs.size == 0:
        return GridEvaluation(xs, head, None, {})
    theta = network.predict(params, xs)
    if head == "nig":
        m = network.evidential_head(theta)
        est = {
            unc.Convention.SOTA: _sota_with_limit(m),
            unc.Convention.PROPOSED: unc.proposed_uncertainties(m),
        }
    else:
        m = network.gaussian_head(theta)
        est = {unc.Convention.GAUSSIAN: unc.gaussian_uncertainties(m)}
    return GridEvaluation(xs, head, m, est)


def trace_values(params, head, xs, true_mean):
    ev = evaluate_grid(params, head, xs)
    m = ev.params
    nan = np.full(xs.shape, np.nan)
    gamma = np.asarray(m.gamma, dtype=np.float64)
    nu = np.asarray(m.nu, dtype=np.float64)
    beta = np.asarray(m.beta, dtype=np.float64)
    vals = {
        "gamma": gamma,
        "nu": nu,
        "beta": beta,
        "residual": gamma - true_mean(xs),
        "sqrt_nu_over_1p_nu": np.sqrt(nu / (1.0 + nu)),
    }
    if head == "nig":
        alpha = np.asarray(m.alpha, dtype=np.float64)
        sota = ev.estimates[unc.Convention.SOTA]
        prop = ev.estimates[unc.Convention.PROPOSED]
        vals.update(
            alpha=alpha,
            w_st=prop.aleatoric,
            sqrt_beta_over_alpha=np.sqrt(beta / alpha),
            u_al=sota.aleatoric,
            u_ep=sota.epistemic,
            u_al_p=prop.aleatoric,
            u_ep_p=prop.epistemic,
        )
    else:
        g = ev.estimates[unc.Convention.GAUSSIAN]
        vals.update(
            alpha=nan,
            w_st=g.aleatoric,
            sqrt_beta_over_alpha=nan,
            u_al=nan,
            u_ep=nan,
            u_al_p=g.aleatoric,
            u_ep_p=g.epistemic,
        )
    return {k: vals[k] for k in TRACE_FIELDS}


def _make_optimizer(spec):
    if spec.name == "adam":
        state = optim.AdamState(spec.learning_rate, spec.beta1, spec.beta2, spec.epsilon, spec.decay)
        return state, optim.adam_step
    if spec.name == "momentum":
        return optim.MomentumState(spec.learning_rate, spec.momentum), optim.momentum_step
    raise ValueError(f"unknown optimizer {spec.name!r}")


def _batches(n, batch_size, rng):
    if batch_size == 0 or batch_size >= n:
        return [np.arange(n)]
    order = np.argsort(rng.uniform(n), kind="stable")
    return [order[k : k + batch_size] for k in range(0, n, batch_size)]


def _locate_bad_sample(params, xb, yb, idx, cfg):
    with np.errstate(all="ignore"):
        try:
            per = losses.sample_loss(network.predict(params, xb), yb, cfg)
        except (ad.EvaluationError, ValueError):
            return int(idx[0])
    bad = np.flatnonzero(~np.isfinite(per))
    return int(idx[bad[0]]) if bad.size else int(idx[0])


def train_run(cfg, dataset, seed):
    """Train one network on ``dataset``; traces every ``cfg.trace_every`` epochs plus the last."""
    t0 = time.perf_counter()
    head = cfg.loss.head
    true_mean = TRUE_MEAN.get(dataset.metadata.get("generator"), lambda x: np.zeros_like(x))
    grid = cfg.trace_grid.points()
    params = network.init(cfg.arch, seed)
    flat = params.flatten()
    state, step = _make_optimizer(cfg.optimizer)
    shuffle = SplitMix64(derive_seed(seed, SHUFFLE_STREAM))
    x, y = dataset.x, dataset.y

    traces = [EpochTrace(0, grid, trace_values(params, head, grid, true_mean))]
    epoch_losses = []
    for epoch in range(1, cfg.epochs + 1):
        total, count = 0.0, 0
        for idx in _batches(len(x), cfg.batch_size, shuffle):
            current = params.with_flat(flat)
            tape = ad.Tape()
            try:
                theta = network.forward(current, x[idx], tape)
                loss = losses.batch_loss(theta, y[idx], cfg.loss)
            except ad.EvaluationError as exc:
                sample = _locate_bad_sample(current, x[idx], y[idx], idx, cfg.loss)
                raise TrainingDiverged(seed, epoch, sample, flat.copy(), str(exc)) from None
            grad = ad.backward(loss).flat()
            if not np.all(np.isfinite(grad)):
                raise TrainingDiverged(seed, epoch, int(idx[0]), flat.copy(), "non-finite gradient")
            flat, state = step(state, flat, grad)
            total += float(loss.value) * len(idx)
            count += len(idx)
        epoch_losses.append(total / count)
        if epoch % cfg.trace_every == 0 or epoch == cfg.epochs:
            params = params.with_flat(flat)
            traces.append(EpochTrace(epoch, grid, trace_values(params, head, grid, true_mean)))
    params = params.with_flat(flat)
    final = evaluate_grid(params, head, cfg.eval_grid.points())
    return RunResult(
        seed=seed,
        params=params,
        traces=traces,
        final=final,
        losses=epoch_losses,
        wall_clock=time.perf_counter() - t0,
        config=cfg.to_dict(),
    )


def dataset_for_seed(cfg, seed):
    return data_mod.generate(cfg.data.generator, cfg.data.n, derive_seed(seed, DATA_STREAM), **cfg.data.params)


def _run_one(args):
    cfg, seed, data_generator = args
    dataset = (data_generator or (lambda s: dataset_for_seed(cfg, s)))(seed)
    try:
        return train_run(cfg, dataset, seed)
    except TrainingDiverged as exc:
        return exc


def aggregate(runs):
    """Mean and population std across runs per (capture, grid point)."""
    if not runs:
        raise ValueError("nothing to aggregate")
    epochs = runs[0].trace_epochs
    for r in runs[1:]:
        if r.trace_epochs != epochs:
            raise ValueError("runs captured traces at different epochs")
    mean, std = {}, {}
    for name in TRACE_FIELDS:
        stack = np.stack([r.trace_array(name) for r in runs])
        mean[name] = stack.mean(axis=0)
        std[name] = stack.std(axis=0)
    return AggregateTrace(epochs, runs[0].traces[0].x, mean, std, len(runs))


def multi_seed(cfg, data_generator=None, jobs=1):
    """Train one run per seed in ``cfg.seeds``; failed runs are excluded and reported."""
    if not cfg.seeds:
        raise ValueError("at least one seed is required")
    work = [(cfg, s, data_generator) for s in cfg.seeds]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_one, work))
    else:
        outcomes = [_run_one(w) for w in work]
    runs = [o for o in outcomes if isinstance(o, RunResult)]
    failures = [(o.seed, str(o)) for o in outcomes if isinstance(o, TrainingDiverged)]
    for seed, msg in failures:
        log.warning("excluded run: %s", msg)
    return MultiSeedResult(runs, failures, aggregate(runs) if runs else None)


# ---------------------------------------------------------------------------


@dataclass
class NuTrajectory:
    epochs: list
    x: np.ndarray
    nu: np.ndarray  # (n_captures, n_grid)

    @property
    def min_nu(self):
        return float(self.nu.min())

    @property
    def final_nu(self):
        return self.nu[-1]


def naive_extension_demo(dataset, lam, cfg, seed=0, kind=losses.LossKind.NAIVE_GAUSSIAN):
    """nu on the trace grid after every epoch for ``-log N + lam*|y - gamma|*nu``.

    Pass ``kind=DER_ORIGINAL`` with the same ``cfg`` for the contrast run.
    """
    loss = losses.LossConfig(kind, lam, cfg.loss.p, cfg.loss.phi, cfg.loss.detach_width)
    run_cfg = replace(cfg, loss=loss, trace_every=1)
    result = train_run(run_cfg, dataset, seed)
    return NuTrajectory(result.trace_epochs, result.traces[0].x, result.trace_array("nu"))


# ---------------------------------------------------------------------------
# CSV export


def fmt(v):
    return repr(float(v))


def write_trace_csv(path, runs):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("seed", "epoch", "x") + TRACE_FIELDS)
        for r in runs:
            for t in r.traces:
                for j, xv in enumerate(t.x):
                    w.writerow([r.seed, t.epoch, fmt(xv)] + [fmt(t[name][j]) for name in TRACE_FIELDS])


def write_aggregate_csv(path, agg):
    header = ["epoch", "x"]
    for name in TRACE_FIELDS:
        header += [f"{name}_mean", f"{name}_std"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, epoch in enumerate(agg.epochs):
            for j, xv in enumerate(agg.x):
                row = [epoch, fmt(xv)]
                for name in TRACE_FIELDS:
                    row += [fmt(agg.mean[name][i, j]), fmt(agg.std[name][i, j])]
                w.writerow(row)
