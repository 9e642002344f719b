import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from asl.errors import DegeneratePairError, ModelOverflowError, ValidationError
from asl.models import (GaussianFamily, LaplaceFamily, format_model_assignment,
                        kl_divergence, laplace_llr_lmgf, llr_moments, lmgf,
                        log_likelihood_ratio, parse_model_assignment)


def pair(delta, family=LaplaceFamily):
    """One agent, hypothesis 0 at location 0 and hypothesis 1 at ``delta``."""
    return family([[0.0, delta]])


def laplace_mgf_oracle(t, d):
    # mixed law of x = |xi - d| - |xi| for xi ~ Laplace(0, 1), d > 0:
    # mass 1/2 at +d, mass e^{-d}/2 at -d, density on (-d, d) from xi in (0, d)
    cont, _ = integrate.quad(lambda xi: math.exp(t * (d - 2 * xi)) * 0.5 * math.exp(-xi), 0, d,
                             epsabs=1e-14, epsrel=1e-13)
    return 0.5 * math.exp(t * d) + 0.5 * math.exp(-d) * math.exp(-t * d) + cont


def test_llr_identical_models():
    m = LaplaceFamily([[0.3, 0.3]])
    xi = np.linspace(-3, 3, 13)
    np.testing.assert_array_equal(log_likelihood_ratio(m, 0, xi, 1, 0), 0)


def test_llr_hand_value():
    assert log_likelihood_ratio(pair(0.2), 0, 1.0, 1, 0) == pytest.approx(-0.2, abs=1e-15)


def test_llr_saturates_left_of_both_locations():
    assert log_likelihood_ratio(pair(0.2), 0, -5.0, 1, 0) == pytest.approx(0.2, abs=1e-15)


def test_degenerate_pair_rejected():
    with pytest.raises(DegeneratePairError):
        kl_divergence(pair(0.2), 0, 0, 0)
    with pytest.raises(DegeneratePairError):
        lmgf(pair(0.2), 0, 0.5, 1, 1)


def test_kl_zero_for_equal_locations():
    assert LaplaceFamily([[0.4, 0.4]]).kl(0, 0, 1) == 0


@pytest.mark.parametrize("d", [0.2, -0.7, 1.0, 3.0])
def test_kl_against_quadrature(d):
    m = pair(d)
    f = lambda xi: (abs(xi - d) - abs(xi)) * 0.5 * math.exp(-abs(xi))
    pts = sorted({0.0, d})
    ref = sum(integrate.quad(f, a, b, epsabs=1e-14, epsrel=1e-13)[0]
              for a, b in zip([-math.inf, *pts], [*pts, math.inf]))
    assert m.kl(0, 0, 1) == pytest.approx(ref, abs=1e-8)


def test_kl_against_monte_carlo():
    m = pair(1.0)
    xi = m.sample(0, 0, np.random.default_rng(3), size=10 ** 6)
    x = log_likelihood_ratio(m, 0, xi, 1, 0)
    assert abs(x.mean() - m.kl(0, 0, 1)) < 3 * x.std() / 1000


@pytest.mark.parametrize("t", [0.7, -0.5, -1.3, 2.0, -0.4999999])
def test_lmgf_against_mixed_density(t):
    assert lmgf(pair(0.2), 0, t, 0, 1) == pytest.approx(math.log(laplace_mgf_oracle(t, 0.2)),
                                                        abs=1e-8)


@pytest.mark.parametrize("d", [0.1, 0.2, 1.0, 4.0])
def test_lmgf_fixed_points(d):
    m = pair(d)
    assert abs(m.lmgf(0, 0.0, 0, 1)) < 1e-12
    assert abs(m.lmgf(0, -1.0, 0, 1)) < 1e-12


def test_lmgf_series_branch_continuity():
    # the sinh(D s)/s guard at s = t + 1/2 -> 0
    t = np.array([-0.5 - 1e-3, -0.5 - 1e-6, -0.5, -0.5 + 1e-6, -0.5 + 1e-3])
    v = laplace_llr_lmgf(t, 0.2)
    ref = [math.log(laplace_mgf_oracle(x, 0.2)) for x in t]
    np.testing.assert_allclose(v, ref, atol=1e-12)


@pytest.mark.parametrize("family,d", [(LaplaceFamily, 0.2), (LaplaceFamily, 1.0),
                                      (GaussianFamily, 0.5)])
def test_lmgf_derivative_is_kl_and_convex(family, d):
    m = pair(d, family)
    h = 1e-5
    deriv = (m.lmgf(0, h, 0, 1) - m.lmgf(0, -h, 0, 1)) / (2 * h)
    assert deriv == pytest.approx(m.kl(0, 0, 1), abs=1e-6)
    grid = np.linspace(-4, 3, 141)
    vals = np.array([m.lmgf(0, t, 0, 1) for t in grid])
    assert np.all(vals[1:-1] <= 0.5 * (vals[:-2] + vals[2:]) + 1e-10)


def test_rho_against_second_difference():
    m = pair(0.2)
    _, _, rho = llr_moments(m, 0, 0, 1, 1)
    h = 1e-3
    second = (m.lmgf(0, h, 0, 1) - 2 * m.lmgf(0, 0.0, 0, 1) + m.lmgf(0, -h, 0, 1)) / h ** 2
    assert rho == pytest.approx(second, abs=1e-6)


def test_rho_zero_and_symmetric():
    m = LaplaceFamily([[0.0, 0.0, 0.3, -0.5]])
    assert llr_moments(m, 0, 0, 1, 1)[2] == 0
    r1 = llr_moments(m, 0, 0, 2, 3)[2]
    r2 = llr_moments(m, 0, 0, 3, 2)[2]
    assert r1 == pytest.approx(r2, abs=1e-14)


def test_rho_cross_against_monte_carlo():
    m = LaplaceFamily([[0.0, 0.3, -0.5]])
    xi = m.sample(0, 0, np.random.default_rng(9), size=10 ** 6)
    x = m.llr(xi[:, None], 0)[:, 0, 1:]
    emp = np.cov(x.T)[0, 1]
    se = np.std((x[:, 0] - x[:, 0].mean()) * (x[:, 1] - x[:, 1].mean())) / 1000
    assert abs(llr_moments(m, 0, 0, 1, 2)[2] - emp) < 4 * se


def test_gaussian_closed_forms_against_quadrature():
    d = 0.8
    m = pair(d, GaussianFamily)
    dens = lambda xi: math.exp(-xi * xi / 2) / math.sqrt(2 * math.pi)
    x = lambda xi: ((xi - d) ** 2 - xi ** 2) / 2
    kl = integrate.quad(lambda s: x(s) * dens(s), -math.inf, math.inf)[0]
    assert m.kl(0, 0, 1) == pytest.approx(kl, abs=1e-10)
    for t in (-1.7, -0.3, 0.9):
        ref = math.log(integrate.quad(lambda s: math.exp(t * x(s)) * dens(s), -40, 40,
                                      epsabs=1e-14)[0])
        assert m.lmgf(0, t, 0, 1) == pytest.approx(ref, abs=1e-9)
    assert llr_moments(m, 0, 0, 1, 1)[2] == pytest.approx(d * d, abs=1e-8)


def test_gaussian_overflow_reported():
    with pytest.raises(ModelOverflowError):
        pair(1e200, GaussianFamily).lmgf(0, 1e200, 0, 1)


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3).filter(lambda v: abs(v) > 1e-6), st.integers(0, 2 ** 32 - 1))
def test_sampled_llr_within_support(d, seed):
    m = pair(d)
    xi = m.sample(0, 0, np.random.default_rng(seed), size=200)
    x = log_likelihood_ratio(m, 0, xi, 1, 0)
    assert np.all(np.abs(x) <= abs(d) + 1e-12)
    assert m.kl(0, 0, 1) > 0


def test_block_sampling_matches_stepwise(ref10):
    model = ref10[2]
    a = model.sample_network(1, np.random.default_rng(5), steps=7)
    g = np.random.default_rng(5)
    b = np.stack([model.sample_network(1, g) for _ in range(7)])
    np.testing.assert_array_equal(a, b)


def test_assignment_round_trip_and_errors(ref10):
    model = ref10[2]
    assert parse_model_assignment(format_model_assignment(model)) == model
    assert parse_model_assignment("family gaussian\n1-2 1 0\n1-2 2 1\n").family == "gaussian"
    for bad in ["", "1 1 0\n1 1 1\n1 2 0\n", "1-2 1 0\n1 2 1\n", "0 1 0\n1 2 0\n",
                "1 1 x\n1 2 0\n", "family weibull\n1 1 0\n1 2 1\n", "1 1\n", "2-1 1 0\n"]:
        with pytest.raises(ValidationError):
            parse_model_assignment(bad)


def test_model_is_read_only():
    m = pair(0.2)
    with pytest.raises(ValueError):
        m.params[0, 0] = 1.0
