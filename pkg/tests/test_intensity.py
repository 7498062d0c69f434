import csv
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special, stats

from twinbeam.errors import DomainError, NumericalOverflowError
from twinbeam.intensity import (
    CancellationWarning,
    IntensityGrid,
    antinormal_closed_form,
    grid_scan,
    laguerre_eval,
    laguerre_log_table,
    negativity_report,
    quasi_distribution,
)
from twinbeam.pnd import (
    JointPND,
    Marginal,
    make_gaussian_pairs,
    make_poisson_pairs,
    marginals,
    product_distribution,
)

VACUUM = JointPND(np.ones((1, 1)))
# trapezoid rule for the vacuum on [0, 10]^2 with 200 points per axis:
# (h coth(h) ... ) evaluated to 40 digits; discretization error is 1.7e-3
VACUUM_TRAPZ_200 = 1.00168387997754


def _random_joint(seed, shape=(5, 5)):
    return JointPND.from_array(np.random.default_rng(seed).random(shape))


def _single_arm(m: Marginal, s, w):
    """One-arm quasi-distribution from scipy's Laguerre polynomials."""
    r = (s + 1) / (s - 1)
    x = 4 * w / (1 - s * s)
    series = sum(p * r**n * special.eval_laguerre(n, x) for n, p in enumerate(m.probs))
    return 2 / (1 - s) * math.exp(-2 * w / (1 - s)) * series


def _simpson2d(grid):
    inner = integrate.simpson(grid.values, x=grid.w_i_axis, axis=1)
    return integrate.simpson(inner, x=grid.w_s_axis)


# -- Laguerre polynomials -------------------------------------------------------

def test_laguerre_small_cases():
    assert laguerre_eval(0, 3.7) == 1.0
    assert laguerre_eval(1, 2.0) == -1.0
    assert laguerre_eval(1, 0.25) == 0.75
    for n in (5, 20, 80):
        assert laguerre_eval(n, 0.0) == pytest.approx(1.0, abs=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 80), st.floats(0.0, 60.0))
def test_laguerre_matches_scipy(n, x):
    ref = special.eval_laguerre(n, x)
    # values near a root are limited by the absolute accuracy of the recurrence
    scale = max(1.0, float(np.max(np.abs([special.eval_laguerre(k, x) for k in range(n + 1)]))))
    assert laguerre_eval(n, x) == pytest.approx(ref, rel=1e-9, abs=1e-11 * scale)


def test_laguerre_large_order_argument():
    assert laguerre_eval(100, 1000.0) == pytest.approx(special.eval_laguerre(100, 1000.0), rel=1e-12)
    signs, logs = laguerre_log_table(600, np.array([5000.0]))
    assert np.all(np.isfinite(logs))
    # log L_600(5000) from 60-digit mpmath: positive, 1785.06511757022995
    assert signs[-1, 0] == 1.0
    assert logs[-1, 0] == pytest.approx(1785.0651175702299503, rel=1e-13)


def test_laguerre_rejects_bad_order():
    with pytest.raises(DomainError):
        laguerre_eval(-1, 1.0)


# -- vacuum ---------------------------------------------------------------------

@pytest.mark.parametrize("s", [-0.9, -0.5, 0.0, 0.5])
@pytest.mark.parametrize("w", [(0.0, 0.0), (0.3, 1.7), (4.0, 2.0)])
def test_vacuum_closed_form(s, w):
    expect = 4 / (1 - s) ** 2 * math.exp(-2 * (w[0] + w[1]) / (1 - s))
    assert quasi_distribution(VACUUM, s, *w) == pytest.approx(expect, rel=1e-14)


def test_vacuum_origin():
    assert quasi_distribution(VACUUM, 0.0, 0.0, 0.0) == 4.0
    assert quasi_distribution(VACUUM, -1.0, 0.0, 0.0) == 1.0
    assert antinormal_closed_form(VACUUM, 1.5, 0.5) == pytest.approx(math.exp(-2.0), rel=1e-15)


def test_vacuum_grid_positive_decaying():
    g = grid_scan(VACUUM, 0.0, 3.0, 31)
    assert np.all(g.values > 0)
    assert np.all(np.diff(g.values, axis=0) < 0) and np.all(np.diff(g.values, axis=1) < 0)
    rep = negativity_report(g)
    assert rep.min_value >= 0 and rep.negative_fraction == 0


def test_vacuum_trapezoid_example():
    g = grid_scan(VACUUM, 0.0, 10.0, 200)
    trapz = integrate.trapezoid(integrate.trapezoid(g.values, g.w_i_axis, axis=1), g.w_s_axis)
    assert trapz == pytest.approx(VACUUM_TRAPZ_200, rel=1e-12)
    assert _simpson2d(g) == pytest.approx(1.0, abs=1e-3)


# -- normalization, positivity, limits --------------------------------------------

TEST_DISTRIBUTIONS = {
    "vacuum": VACUUM,
    "poisson_pairs": make_poisson_pairs(2.0),
    "gaussian_pairs": make_gaussian_pairs(1.0, 1e-14),
    "random": _random_joint(5, (4, 3)),
}


@pytest.mark.parametrize("name", sorted(TEST_DISTRIBUTIONS))
@pytest.mark.parametrize("s", [-1.0, -0.5, 0.0])
def test_normalization(name, s):
    rho = TEST_DISTRIBUTIONS[name]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CancellationWarning)
        g = grid_scan(rho, s, 60.0, 801)
    # beyond W = 60 every kernel is below e^-30, so the tail term is negligible
    assert _simpson2d(g) + rho.tail_mass == pytest.approx(1.0, abs=1e-3)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 40), st.floats(0, 40))
def test_antinormal_nonnegative(seed, w_s, w_i):
    assert antinormal_closed_form(_random_joint(seed, (7, 4)), w_s, w_i) >= 0


@pytest.mark.parametrize("name", sorted(TEST_DISTRIBUTIONS))
def test_antinormal_grid_never_negative(name):
    rep = negativity_report(grid_scan(TEST_DISTRIBUTIONS[name], -1.0, 20.0, 41))
    assert rep.negative_fraction == 0.0 and rep.min_value >= 0


def test_antinormal_matches_poisson_mixture():
    rho = _random_joint(9, (4, 6))
    w_s, w_i = 2.5, 0.7
    ref = sum(rho.probs[a, b] * stats.poisson.pmf(a, w_s) * stats.poisson.pmf(b, w_i)
              for a in range(4) for b in range(6))
    assert antinormal_closed_form(rho, w_s, w_i) == pytest.approx(ref, rel=1e-13)


@pytest.mark.parametrize("rho", [make_poisson_pairs(5.0), _random_joint(6, (6, 6))])
def test_limit_to_antinormal(rho):
    axis = np.linspace(0.0, 15.0, 16)
    series = grid_scan(rho, -1.0 + 1e-6, 15.0, 16).values
    closed = np.array([[antinormal_closed_form(rho, a, b) for b in axis] for a in axis])
    np.testing.assert_allclose(series, closed, rtol=1e-4)


def test_marginal_consistency_antinormal():
    rho = _random_joint(10, (5, 7))
    m_s, _ = marginals(rho)
    for w_s in (0.0, 0.8, 3.0, 7.5):
        val, _ = integrate.quad(lambda w: antinormal_closed_form(rho, w_s, w), 0, np.inf,
                                epsabs=1e-13, epsrel=1e-12)
        ref = sum(p * stats.poisson.pmf(n, w_s) for n, p in enumerate(m_s.probs))
        assert val == pytest.approx(ref, abs=1e-6)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([-1.0, -0.5, 0.0, 0.4]),
       st.floats(0, 20), st.floats(0, 20))
def test_symmetric_rho_symmetric_p(seed, s, a, b):
    raw = np.random.default_rng(seed).random((6, 6))
    rho = JointPND.from_array(raw + raw.T)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CancellationWarning)
        assert quasi_distribution(rho, s, a, b) == quasi_distribution(rho, s, b, a)


def test_symmetric_grid_exact():
    raw = np.random.default_rng(11).random((8, 8))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CancellationWarning)
        g = grid_scan(JointPND.from_array(raw + raw.T), 0.0, 20.0, 41)
    np.testing.assert_array_equal(g.values, g.values.T)


@pytest.mark.parametrize("s", [-0.5, 0.0, 0.3])
def test_product_factorization(s):
    m_s = Marginal(stats.poisson.pmf(np.arange(12), 1.5) / stats.poisson.cdf(11, 1.5), "signal")
    m_i = Marginal(np.array([0.2, 0.5, 0.3]), "idler")
    rho = product_distribution(m_s, m_i)
    for w_s in (0.0, 0.4, 1.3, 3.0):
        for w_i in (0.0, 0.6, 2.2):
            ref = _single_arm(m_s, s, w_s) * _single_arm(m_i, s, w_i)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", CancellationWarning)
                got = quasi_distribution(rho, s, w_s, w_i)
            assert got == pytest.approx(ref, rel=1e-9, abs=1e-12)


# -- negativity -------------------------------------------------------------------

def test_poisson_pairs_negative_at_symmetric_ordering():
    rho = make_poisson_pairs(20.0)
    with pytest.warns(CancellationWarning):
        g = grid_scan(rho, 0.0, 50.0, 201)
    rep = negativity_report(g)
    assert rep.negative_fraction > 0 and rep.min_value < 0
    assert g.cancellation_points > 0
    i, j = np.unravel_index(np.argmax(g.values), g.values.shape)
    assert abs(g.w_s_axis[i] - g.w_i_axis[j]) <= 0.2 * 50.0


def test_negativity_report_location():
    values = np.array([[1.0, -2.0], [0.5, 0.0]])
    rep = negativity_report(IntensityGrid(np.array([0.0, 1.0]), np.array([0.0, 2.0]), values, 0.0))
    assert rep.min_value == -2.0 and rep.min_location == (0.0, 2.0)
    assert rep.negative_fraction == 0.25


def test_default_w_max():
    g = grid_scan(make_poisson_pairs(2.0), 0.0, points_per_axis=3)
    assert g.w_s_axis[-1] == pytest.approx(10.0)
    assert grid_scan(VACUUM, 0.0, points_per_axis=3).w_s_axis[-1] == 5.0


# -- domain, errors, export ---------------------------------------------------------

@pytest.mark.parametrize("s", [1.0, 1.5, -1.01])
def test_ordering_domain(s):
    with pytest.raises(DomainError):
        quasi_distribution(VACUUM, s, 0.0, 0.0)
    with pytest.raises(DomainError):
        grid_scan(VACUUM, s, 1.0, 3)


def test_normal_ordering_message():
    with pytest.raises(DomainError, match="normal ordering"):
        quasi_distribution(VACUUM, 1.0, 0.0, 0.0)


def test_grid_arguments():
    with pytest.raises(DomainError):
        grid_scan(VACUUM, 0.0, -1.0, 5)
    with pytest.raises(DomainError):
        grid_scan(VACUUM, 0.0, 1.0, 1)
    with pytest.raises(DomainError):
        quasi_distribution(VACUUM, 0.0, -0.1, 0.0)


def test_overflow_reports_term():
    probs = np.zeros((101, 101))
    probs[0, 0] = probs[100, 100] = 0.5
    with pytest.raises(NumericalOverflowError, match=r"\(100, 100\)"):
        quasi_distribution(JointPND(probs), 0.999, 0.0, 0.0)


def test_cancellation_warning_point():
    with pytest.warns(CancellationWarning):
        quasi_distribution(make_poisson_pairs(20.0), 0.0, 20.0, 0.25)


def test_grid_validation():
    with pytest.raises(DomainError):
        IntensityGrid(np.array([1.0, 0.0]), np.array([0.0]), np.zeros((2, 1)), 0.0)
    with pytest.raises(DomainError):
        IntensityGrid(np.array([0.0]), np.array([0.0]), np.array([[np.nan]]), 0.0)


def test_csv_layout(tmp_path):
    g = grid_scan(VACUUM, 0.0, 2.0, 5)
    path = tmp_path / "grid.csv"
    g.to_csv(path)
    rows = list(csv.reader(path.open()))
    assert len(rows) == 6
    np.testing.assert_array_equal([float(v) for v in rows[0][1:]], g.w_i_axis)
    np.testing.assert_array_equal([float(r[0]) for r in rows[1:]], g.w_s_axis)
    np.testing.assert_array_equal([[float(v) for v in r[1:]] for r in rows[1:]], g.values)


def test_grid_dict_roundtrip():
    g = grid_scan(make_poisson_pairs(1.0), -0.5, 4.0, 9)
    back = IntensityGrid.from_dict(g.to_dict())
    np.testing.assert_array_equal(back.values, g.values)
    assert back.s == g.s
