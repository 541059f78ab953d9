"""Per-sample losses for evidential and Gaussian heads.

All functions accept plain floats/arrays or autodiff nodes and return the same
kind. Batch losses are the mean over samples.

The marginal likelihood of the normal-inverse-gamma prior is a Student-t with
``2*alpha`` degrees of freedom, location ``gamma`` and squared width
``w2 = beta * (1 + nu) / (nu * alpha)``. Writing ``d = 2*alpha`` and
``r = y - gamma`` its negative log density is::

    -log St = lgamma(alpha) - lgamma(alpha + 1/2)
              + 1/2 * log(pi * d * w2)
              + (alpha + 1/2) * log(1 + r**2 / (d * w2))
"""

import enum
import math
from dataclasses import dataclass

from derlab import autodiff as ad
from derlab.network import NIGParams, evidential_head, gaussian_head


class LossKind(str, enum.Enum):
    DER_ORIGINAL = "der_original"
    DER_NORMALIZED = "der_normalized"
    GAUSSIAN_ALT = "gaussian_alt"
    # negative example: Gaussian NLL plus lambda*|y - gamma|*nu
    NAIVE_GAUSSIAN = "naive_gaussian"


class PhiConvention(str, enum.Enum):
    TWO_NU_PLUS_ALPHA = "two_nu_plus_alpha"
    NU_PLUS_TWO_ALPHA = "nu_plus_two_alpha"


@dataclass(frozen=True)
class LossConfig:
    kind: LossKind = LossKind.DER_ORIGINAL
    lam: float = 0.01
    p: int = 2
    phi: PhiConvention = PhiConvention.TWO_NU_PLUS_ALPHA
    detach_width: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind(self.kind))
        object.__setattr__(self, "phi", PhiConvention(self.phi))
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.p not in (1, 2):
            raise ValueError("p must be 1 or 2")

    @property
    def head(self):
        return "nig" if self.kind in (LossKind.DER_ORIGINAL, LossKind.DER_NORMALIZED) else "gaussian"

    def to_dict(self):
        return {
            "kind": self.kind.value,
            "lam": self.lam,
            "p": self.p,
            "phi": self.phi.value,
            "detach_width": self.detach_width,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def width_sq(m):
    return m.beta * (1.0 + m.nu) / (m.nu * m.alpha)


def student_t_nll(y, loc, w2, alpha):
    d_w2 = 2.0 * alpha * w2
    r = y - loc
    return (
        ad.lgamma(alpha)
        - ad.lgamma(alpha + 0.5)
        + 0.5 * ad.log(math.pi * d_w2)
        + (alpha + 0.5) * ad.log(1.0 + r * r / d_w2)
    )


def nig_nll(m, y):
    """``-log St_{2 alpha}(y | gamma, beta (1 + nu) / (nu alpha))``."""
    return student_t_nll(y, m.gamma, width_sq(m), m.alpha)


def gaussian_nll(y, mu, var):
    r = y - mu
    return 0.5 * ad.log(2.0 * math.pi * var) + r * r / (2.0 * var)


def total_evidence(m, convention=PhiConvention.TWO_NU_PLUS_ALPHA):
    if PhiConvention(convention) is PhiConvention.TWO_NU_PLUS_ALPHA:
        return 2.0 * m.nu + m.alpha
    return m.nu + 2.0 * m.alpha


def der_regularizer(m, y, cfg):
    """``lambda * |y - gamma| * Phi``."""
    return cfg.lam * abs(y - m.gamma) * total_evidence(m, cfg.phi)


def normalized_regularizer(m, y, cfg):
    """``lambda * |(y - gamma) / w_St|**p * Phi``; gradients flow through w_St unless detached."""
    w2 = width_sq(m)
    if cfg.detach_width:
        w2 = ad.stop_gradient(w2)
    r = y - m.gamma
    if cfg.p == 2:
        scaled = r * r / w2
    else:
        scaled = abs(r) / ad.sqrt(w2)
    return cfg.lam * scaled * total_evidence(m, cfg.phi)


def der_loss(m, y, cfg):
    if cfg.kind is LossKind.DER_ORIGINAL:
        reg = der_regularizer(m, y, cfg)
    elif cfg.kind is LossKind.DER_NORMALIZED:
        reg = normalized_regularizer(m, y, cfg)
    else:
        raise ValueError(f"der_loss does not handle {cfg.kind}")
    return nig_nll(m, y) + reg


def gaussian_alt_loss(g, y, lam):
    """``log sigma2 + (1 + lambda nu) (y - gamma)**2 / sigma2`` with ``sigma2 = beta / nu``."""
    var = g.sigma_sq
    r = y - g.gamma
    return ad.log(var) + (1.0 + lam * g.nu) * (r * r) / var


def naive_extension_loss(g, y, lam):
    """Gaussian NLL with an evidence regularizer on nu alone; collapses nu (kept as a counterexample)."""
    return gaussian_nll(y, g.gamma, g.sigma_sq) + lam * abs(y - g.gamma) * g.nu


def degeneracy_path_nll(gamma, alpha, c, nu, y):
    """NIG NLL along ``beta = c * nu / (1 + nu)``, where it is independent of nu."""
    if c <= 0 or alpha <= 1:
        raise ValueError("need c > 0 and alpha > 1")
    beta = c * nu / (1.0 + nu)
    return nig_nll(NIGParams(gamma, nu, alpha, beta), y)


def head_params(theta, cfg):
    return evidential_head(theta) if cfg.head == "nig" else gaussian_head(theta)


def sample_loss(theta, y, cfg):
    """Per-sample loss for raw head outputs ``theta``; new loss kinds plug in here."""
    params = head_params(theta, cfg)
    if cfg.kind in (LossKind.DER_ORIGINAL, LossKind.DER_NORMALIZED):
        return der_loss(params, y, cfg)
    if cfg.kind is LossKind.GAUSSIAN_ALT:
        return gaussian_alt_loss(params, y, cfg.lam)
    if cfg.kind is LossKind.NAIVE_GAUSSIAN:
        return naive_extension_loss(params, y, cfg.lam)
    raise ValueError(f"unknown loss kind {cfg.kind}")


def batch_loss(theta, y, cfg):
    return ad.mean(sample_loss(theta, y, cfg))
