"""Post-hoc metrics: calibration curves, cutoff curves, entropy summaries, pulse asymmetry."""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from derlab.uncertainty import entropy

DEFAULT_LEVELS = tuple(round(0.05 * k, 2) for k in range(1, 20))
DEFAULT_REMOVED = tuple(round(0.05 * k, 2) for k in range(0, 20))
QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


@dataclass
class CalibrationCurve:
    expected_cl: np.ndarray
    observed_cl: np.ndarray

    @property
    def max_abs_error(self):
        return float(np.max(np.abs(self.observed_cl - self.expected_cl)))


@dataclass
class CutoffCurve:
    confidence_level_removed: np.ndarray
    error_on_retained: np.ndarray
    metric: str = "absolute"


@dataclass
class EntropySummary:
    n: int
    mean: float
    std: float
    quantiles: dict


def calibration_curve(mus, sigmas, ys, levels=DEFAULT_LEVELS):
    """Observed fraction of ``y <= mu + sigma * Phi^-1(q)`` for each expected level ``q``."""
    mus, sigmas, ys = (np.asarray(a, dtype=np.float64).ravel() for a in (mus, sigmas, ys))
    levels = np.asarray(levels, dtype=np.float64)
    if ys.size == 0:
        raise ValueError("calibration needs at least one prediction")
    if not (mus.size == sigmas.size == ys.size):
        raise ValueError("mus, sigmas and ys must have equal length")
    if np.any(sigmas <= 0):
        raise ValueError("sigmas must be positive")
    if np.any((levels <= 0) | (levels >= 1)):
        raise ValueError("levels must lie in (0, 1)")
    # y <= mu + sigma z  <=>  (y - mu) / sigma <= z, which keeps monotonicity in q exact
    z = np.sort((ys - mus) / sigmas)
    observed = np.searchsorted(z, ndtri(levels), side="right") / ys.size
    return CalibrationCurve(levels, observed)


def cutoff_curve(errors, uncertainties, removed=DEFAULT_REMOVED, x=None, metric="absolute"):
    """Mean error on the points left after dropping the most uncertain fraction ``removed``.

    Points are ordered by (uncertainty, x) with a stable sort; at least one point is kept.
    """
    errors = np.asarray(errors, dtype=np.float64).ravel()
    unc = np.asarray(uncertainties, dtype=np.float64).ravel()
    if errors.size == 0:
        raise ValueError("cutoff curve needs at least one point")
    if errors.shape != unc.shape:
        raise ValueError("errors and uncertainties must have equal length")
    removed = np.asarray(removed, dtype=np.float64)
    if np.any((removed < 0) | (removed >= 1)):
        raise ValueError("removed fractions must lie in [0, 1)")
    if metric == "absolute":
        per_point = np.abs(errors)
    elif metric == "squared":
        per_point = errors * errors
    else:
        raise ValueError(f"unknown metric {metric!r}")
    x = np.arange(errors.size, dtype=np.float64) if x is None else np.asarray(x, dtype=np.float64).ravel()
    order = np.lexsort((x, unc))
    # cumulative sums in ascending-uncertainty order give every retained-prefix mean
    csum = np.cumsum(per_point[order])
    n = errors.size
    keep = np.maximum(1, np.round((1.0 - removed) * n).astype(int))
    retained = np.array([csum[k - 1] / k for k in keep])
    retained[keep == n] = per_point.mean()
    return CutoffCurve(removed, retained, metric)


def pulse_asymmetry(xs, u_ep, center=0.5, window=0.2):
    """Mean of ``u_ep`` on (center, center + window] over its mean on [center - window, center).

    The grid must be symmetric about ``center``; the center point itself is excluded.
    """
    xs = np.asarray(xs, dtype=np.float64).ravel()
    u_ep = np.asarray(u_ep, dtype=np.float64).ravel()
    d = np.round(xs - center, 9)
    right = (d > 0) & (d <= window + 1e-12)
    left = (d < 0) & (d >= -window - 1e-12)
    if not right.any() or not left.any():
        raise ValueError("both sides of the window must contain grid points")
    if not np.array_equal(np.sort(d[right]), np.sort(-d[left])):
        raise ValueError("grid is not symmetric about the center within the window")
    return float(u_ep[right].mean() / u_ep[left].mean())


def entropy_summary(cohorts):
    """Per-cohort distribution of ``log(2 pi sigma^2) / 2``."""
    if not cohorts:
        raise ValueError("need at least one cohort")
    out = {}
    for name, sigmas in cohorts.items():
        sigmas = np.asarray(sigmas, dtype=np.float64).ravel()
        if sigmas.size == 0:
            raise ValueError(f"cohort {name!r} is empty")
        h = entropy(sigmas)
        out[name] = EntropySummary(
            n=int(h.size),
            mean=float(h.mean()),
            std=float(h.std()),
            quantiles={q: float(v) for q, v in zip(QUANTILES, np.quantile(h, QUANTILES))},
        )
    return out


# ---------------------------------------------------------------------------
# CSV writers


def _fmt(v):
    return repr(float(v))


def write_calibration_csv(path, curves):
    """``curves`` maps a label to a CalibrationCurve."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("proxy", "expected_cl", "observed_cl"))
        for label, c in curves.items():
            for e, o in zip(c.expected_cl, c.observed_cl):
                w.writerow((label, _fmt(e), _fmt(o)))


def write_cutoff_csv(path, curves):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("proxy", "metric", "confidence_level_removed", "error_on_retained"))
        for label, c in curves.items():
            for r, e in zip(c.confidence_level_removed, c.error_on_retained):
                w.writerow((label, c.metric, _fmt(r), _fmt(e)))


def write_entropy_csv(path, summaries):
    """``summaries`` maps proxy label -> {cohort -> EntropySummary}."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("proxy", "cohort", "n", "mean", "std") + tuple(f"q{int(q * 100):02d}" for q in QUANTILES))
        for label, per_cohort in summaries.items():
            for cohort, s in per_cohort.items():
                w.writerow(
                    (label, cohort, s.n, _fmt(s.mean), _fmt(s.std)) + tuple(_fmt(s.quantiles[q]) for q in QUANTILES)
                )
