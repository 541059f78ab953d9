"""Uncertainty proxies extracted from head outputs.

Three conventions are kept apart by a tag on every estimate:

* ``SOTA``:     u_al = sqrt(beta / (alpha - 1)),  u_ep = u_al / sqrt(nu)
* ``PROPOSED``: u_al = w_St = sqrt(beta (1 + nu) / (alpha nu)),  u_ep = 1 / sqrt(nu)
* ``GAUSSIAN``: u_al = sigma = sqrt(beta / nu),  u_ep = 1 / sqrt(nu)

``entropy`` is ``log(2 pi sigma**2) / 2``. It is the Gaussian differential
entropy minus the constant 1/2, which cancels in cohort comparisons.
"""

import enum
from dataclasses import dataclass

import numpy as np


class Convention(str, enum.Enum):
    SOTA = "sota"
    PROPOSED = "proposed"
    GAUSSIAN = "gaussian"


class InvalidParameterError(ValueError):
    pass


@dataclass(frozen=True)
class UncertaintyEstimate:
    prediction: np.ndarray
    aleatoric: np.ndarray
    epistemic: np.ndarray
    convention: Convention


def _arr(v):
    return np.asarray(v, dtype=np.float64)


def w_st(m):
    """Width of the Student-t marginal."""
    return np.sqrt(_arr(m.beta) * (1.0 + _arr(m.nu)) / (_arr(m.alpha) * _arr(m.nu)))


def sota_uncertainties(m):
    alpha = _arr(m.alpha)
    if np.any(alpha <= 1.0):
        raise InvalidParameterError("SOTA aleatoric uncertainty requires alpha > 1")
    u_al = np.sqrt(_arr(m.beta) / (alpha - 1.0))
    return UncertaintyEstimate(_arr(m.gamma), u_al, u_al / np.sqrt(_arr(m.nu)), Convention.SOTA)


def proposed_uncertainties(m):
    return UncertaintyEstimate(_arr(m.gamma), w_st(m), 1.0 / np.sqrt(_arr(m.nu)), Convention.PROPOSED)


def gaussian_uncertainties(g):
    nu = _arr(g.nu)
    return UncertaintyEstimate(
        _arr(g.gamma), np.sqrt(_arr(g.beta) / nu), 1.0 / np.sqrt(nu), Convention.GAUSSIAN
    )


def entropy(sigma):
    sigma = _arr(sigma)
    if np.any(sigma <= 0.0):
        raise ValueError("sigma must be positive")
    return 0.5 * np.log(2.0 * np.pi * sigma * sigma)
