import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import ndtri

from derlab import analysis as A
from derlab import svg


def _cohort(n, seed, sigma_scale=1.0):
    rng = np.random.default_rng(seed)
    mus = rng.uniform(-5, 5, n)
    sigmas = rng.uniform(0.1, 3.0, n)
    ys = rng.normal(mus, sigmas)
    return mus, sigmas * sigma_scale, ys


def test_calibrated_cohort_matches_diagonal():
    curve = A.calibration_curve(*_cohort(100_000, 1))
    assert curve.max_abs_error < 0.02
    assert np.all((curve.observed_cl >= 0) & (curve.observed_cl <= 1))


def test_median_level_is_half():
    mus, sigmas, ys = _cohort(200_000, 2)
    curve = A.calibration_curve(mus, sigmas * 7.0, ys, levels=[0.5])
    assert curve.observed_cl[0] == pytest.approx(0.5, abs=0.005)


def test_overconfident_sigmas_fall_below_diagonal():
    curve = A.calibration_curve(*_cohort(50_000, 3, sigma_scale=0.5))
    upper = curve.expected_cl > 0.5
    assert np.all(curve.observed_cl[upper] < curve.expected_cl[upper])


@settings(max_examples=50)
@given(st.integers(1, 200), st.integers(0, 10_000))
def test_calibration_monotone_in_level(n, seed):
    curve = A.calibration_curve(*_cohort(n, seed))
    assert np.all(np.diff(curve.observed_cl) >= 0)


def test_calibration_input_errors():
    with pytest.raises(ValueError):
        A.calibration_curve([], [], [])
    with pytest.raises(ValueError):
        A.calibration_curve([0.0], [0.0], [1.0])
    with pytest.raises(ValueError):
        A.calibration_curve([0.0], [1.0], [1.0], levels=[1.0])
    with pytest.raises(ValueError):
        A.calibration_curve([0.0, 1.0], [1.0], [1.0])


def test_inverse_normal_cdf_against_quadrature():
    pdf = lambda t: np.exp(-0.5 * t * t) / np.sqrt(2 * np.pi)  # noqa: E731
    for q in np.linspace(0.01, 0.99, 99):
        z = ndtri(q)
        # the half-line mass is exactly 1/2, so only [0, z] needs quadrature
        mass = 0.5 + integrate.quad(pdf, 0.0, z, epsabs=1e-13, epsrel=1e-13)[0]
        assert abs(mass - q) < 1e-9


def test_cutoff_constant_uncertainty_is_flat():
    curve = A.cutoff_curve(np.full(50, 2.5), np.ones(50))
    assert np.all(curve.error_on_retained == 2.5)


def test_cutoff_removed_zero_is_exact_global_mean():
    rng = np.random.default_rng(1)
    errors, unc = rng.normal(size=777), rng.uniform(size=777)
    for metric, per in (("absolute", np.abs(errors)), ("squared", errors**2)):
        curve = A.cutoff_curve(errors, unc, metric=metric)
        assert curve.error_on_retained[0] == per.mean()
        assert curve.metric == metric


def test_cutoff_with_oracle_uncertainty_decreases_as_more_is_removed():
    errors = np.random.default_rng(2).normal(size=5000)
    curve = A.cutoff_curve(errors, np.abs(errors))
    # retained fraction shrinks as removed grows, so error on retained must not increase
    assert np.all(np.diff(curve.error_on_retained) <= 0)


def test_cutoff_random_uncertainty_is_flat_within_three_standard_errors():
    rng = np.random.default_rng(3)
    n = 10_000
    errors, unc = rng.normal(size=n), rng.uniform(size=n)
    curve = A.cutoff_curve(errors, unc)
    sd = np.abs(errors).std()
    mean = np.abs(errors).mean()
    for removed, err in zip(curve.confidence_level_removed, curve.error_on_retained):
        kept = max(1, round((1 - removed) * n))
        # finite-population correction for sampling without replacement
        se = sd / np.sqrt(kept) * np.sqrt((n - kept) / (n - 1))
        assert abs(err - mean) <= 3 * se + 1e-15


def test_cutoff_ties_broken_by_x():
    errors = np.array([1.0, 5.0, 3.0])
    curve_a = A.cutoff_curve(errors, np.zeros(3), removed=[0.5], x=[0.0, 1.0, 2.0])
    curve_b = A.cutoff_curve(errors, np.zeros(3), removed=[0.5], x=[2.0, 1.0, 0.0])
    assert curve_a.error_on_retained[0] == 3.0
    assert curve_b.error_on_retained[0] == 4.0


def test_cutoff_input_errors():
    with pytest.raises(ValueError):
        A.cutoff_curve([], [])
    with pytest.raises(ValueError):
        A.cutoff_curve([1.0], [1.0], removed=[1.0])
    with pytest.raises(ValueError):
        A.cutoff_curve([1.0], [1.0], metric="huber")


def test_pulse_asymmetry_examples():
    xs = np.round(np.linspace(0, 1, 101), 12)
    sym = 1.0 + (xs - 0.5) ** 2
    assert A.pulse_asymmetry(xs, sym) == pytest.approx(1.0, abs=1e-15)
    doubled = np.where(xs > 0.5, 2 * sym, sym)
    assert A.pulse_asymmetry(xs, doubled) == pytest.approx(2.0, abs=1e-14)


@given(st.floats(1e-6, 1e6))
def test_pulse_asymmetry_scale_invariant(k):
    xs = np.round(np.linspace(0, 1, 101), 12)
    u = 1.0 + np.sin(7 * xs) ** 2
    assert A.pulse_asymmetry(xs, k * u) == pytest.approx(A.pulse_asymmetry(xs, u), rel=1e-12)


def test_pulse_asymmetry_errors():
    with pytest.raises(ValueError):
        A.pulse_asymmetry([0.0, 0.1, 0.2], [1.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        A.pulse_asymmetry([0.4, 0.5, 0.65], [1.0, 1.0, 1.0])


def test_entropy_summary_examples():
    s = A.entropy_summary({"a": np.ones(10)})["a"]
    assert s.mean == pytest.approx(0.918939, abs=1e-6)
    assert s.std == pytest.approx(0.0, abs=1e-15) and s.n == 10
    sig = np.random.default_rng(0).uniform(0.5, 2.0, 100)
    out = A.entropy_summary({"A": sig, "B": 2 * sig})
    assert out["B"].mean - out["A"].mean == pytest.approx(np.log(2.0), abs=1e-13)
    with pytest.raises(ValueError):
        A.entropy_summary({"empty": []})
    with pytest.raises(ValueError):
        A.entropy_summary({})


def test_csv_writers(tmp_path):
    curve = A.calibration_curve(*_cohort(100, 0))
    A.write_calibration_csv(tmp_path / "c.csv", {"p": curve})
    cut = A.cutoff_curve(np.arange(10.0), np.arange(10.0))
    A.write_cutoff_csv(tmp_path / "k.csv", {"p": cut})
    A.write_entropy_csv(tmp_path / "e.csv", {"p": A.entropy_summary({"ID": np.ones(3)})})
    assert (tmp_path / "c.csv").read_text().startswith("proxy,expected_cl,observed_cl\n")
    assert len((tmp_path / "k.csv").read_text().splitlines()) == 21
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == "proxy,cohort,n,mean,std,q05,q25,q50,q75,q95"


def test_svg_renders_all_element_kinds(tmp_path):
    p = svg.Panel("t", "x", "y", logy=True)
    p.line([1, 2, 3], [1, 10, 100], "l").band([1, 2, 3], [0.5, 5, 50], [2, 20, 200]).scatter([1, 3], [1, 100])
    p.hline(10, "ref").line([1, 2], [np.nan, -1.0])
    text = svg.render([p, svg.Panel("empty")], tmp_path / "f.svg")
    assert text.startswith("<svg") and "polyline" in text and "polygon" in text and "circle" in text
    assert (tmp_path / "f.svg").read_text() == text
