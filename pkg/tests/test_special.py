import math

import numpy as np
import pytest
import scipy.special as sp

from derlab.special import digamma, lgamma


def test_lgamma_matches_reference_on_working_range():
    xs = np.linspace(0.5, 100.0, 2001)
    err = np.abs(lgamma(xs) - np.array([math.lgamma(v) for v in xs]))
    assert err.max() < 1e-10


def test_lgamma_small_arguments_use_reflection():
    for x in (0.01, 0.1, 0.3, 0.49):
        assert lgamma(x) == pytest.approx(math.lgamma(x), abs=1e-10)


def test_lgamma_known_values():
    assert lgamma(1.0) == pytest.approx(0.0, abs=1e-14)
    assert lgamma(2.0) == pytest.approx(0.0, abs=1e-14)
    assert lgamma(0.5) == pytest.approx(0.5 * math.log(math.pi), abs=1e-14)


def test_digamma_matches_reference():
    xs = np.linspace(0.5, 100.0, 2001)
    assert np.max(np.abs(digamma(xs) - sp.digamma(xs))) < 1e-10
    assert digamma(1.0) == pytest.approx(-np.euler_gamma, abs=1e-12)


def test_scalar_in_scalar_out():
    assert isinstance(lgamma(3.0), float)
    assert isinstance(digamma(3.0), float)


@pytest.mark.parametrize("bad", [0.0, -1.0, -0.5])
def test_lgamma_rejects_non_positive(bad):
    with pytest.raises(ValueError):
        lgamma(bad)
