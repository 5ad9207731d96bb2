import numpy as np
import pytest
from scipy import stats

from vineselect._special import norm_cdf, norm_ppf, t_cdf, t_logpdf, t_ppf


def test_norm_ppf_matches_scipy():
    p = np.concatenate([np.linspace(1e-12, 1 - 1e-12, 5001), 10.0 ** -np.arange(1, 15)])
    np.testing.assert_allclose(norm_ppf(p), stats.norm.ppf(p), rtol=1e-13, atol=1e-13)


def test_norm_cdf_matches_scipy():
    x = np.linspace(-37, 8, 4001)
    np.testing.assert_allclose(norm_cdf(x), stats.norm.cdf(x), rtol=1e-12, atol=0)


@pytest.mark.parametrize("nu", [1.0, 1.3, 2.0, 2.5, 3.0, 5.7, 12.0, 30.0, 80.0])
def test_t_functions_match_scipy(nu):
    x = np.concatenate([np.linspace(-50, 50, 2001), [-1e4, 1e4]])
    np.testing.assert_allclose(t_cdf(x, nu), stats.t.cdf(x, nu), rtol=1e-11, atol=1e-300)
    np.testing.assert_allclose(t_logpdf(x, nu), stats.t.logpdf(x, nu), rtol=1e-11, atol=1e-12)
    p = np.concatenate([np.linspace(1e-10, 1 - 1e-10, 2001), 10.0 ** -np.arange(1, 11)])
    np.testing.assert_allclose(t_ppf(p, nu), stats.t.ppf(p, nu), rtol=1e-10, atol=1e-12)


def test_t_quantile_roundtrip():
    rng = np.random.default_rng(5)
    for nu in rng.uniform(1.0, 40.0, 20):
        p = rng.random(500)
        np.testing.assert_allclose(t_cdf(t_ppf(p, nu), nu), p, rtol=1e-12, atol=1e-15)
