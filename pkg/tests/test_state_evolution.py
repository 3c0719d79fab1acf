import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.stats import norm

from scgt.denoise import bernoulli_posterior_mean
from scgt.design import build_base_matrix, trivial_base_matrix
from scgt.state_evolution import (
    cov_se_predict_metrics,
    entropy,
    iterate_cov_se,
    iterate_scalar_se,
    iterate_yedla_se,
    mmse_bernoulli,
    reference_test_limit,
    se_predict_metrics,
)


def _mmse_quad(s, pi):
    """Direct adaptive integration of E[(beta - f)^2] over both hypotheses."""
    chi = np.sqrt(s)

    def integrand(g, b):
        f = bernoulli_posterior_mean(s * b + chi * g, s, pi)
        return (b - f) ** 2 * norm.pdf(g)

    return (pi * quad(integrand, -40, 40, args=(1,), points=[0], epsabs=1e-16, epsrel=1e-13, limit=400)[0]
            + (1 - pi) * quad(integrand, -40, 40, args=(0,), points=[0], epsabs=1e-16, epsrel=1e-13,
                              limit=400)[0])


class TestMmse:
    def test_zero_snr(self):
        np.testing.assert_allclose(mmse_bernoulli(0.0, 0.3), 0.21, rtol=1e-14)

    def test_infinite_snr(self):
        assert mmse_bernoulli(1e4, 0.3) < 1e-300 or mmse_bernoulli(1e4, 0.3) < 1e-100
        assert mmse_bernoulli(np.inf, 0.3) == 0.0

    @pytest.mark.parametrize("s", [1e-3, 0.3, 1.0, 2.5, 10.0, 50.0])
    @pytest.mark.parametrize("pi", [0.05, 0.3, 0.5])
    def test_matches_adaptive_quadrature(self, s, pi):
        np.testing.assert_allclose(mmse_bernoulli(s, pi), _mmse_quad(s, pi), rtol=1e-9, atol=1e-15)

    def test_monte_carlo(self):
        rng = np.random.default_rng(2024)
        N, pi = 10 ** 7, 0.3
        b = (rng.random(N) < pi).astype(float)
        s = b + rng.standard_normal(N)
        err = (b - bernoulli_posterior_mean(s, 1.0, pi)) ** 2
        se = err.std() / np.sqrt(N)
        assert abs(mmse_bernoulli(1.0, pi) - err.mean()) < 3 * se

    @settings(max_examples=50, deadline=None)
    @given(a=st.floats(0, 30), b=st.floats(0, 30), pi=st.floats(0.02, 0.98))
    def test_decreasing_and_bounded(self, a, b, pi):
        lo, hi = sorted((a, b))
        m_lo, m_hi = mmse_bernoulli(lo, pi), mmse_bernoulli(hi, pi)
        assert 0.0 <= m_hi <= m_lo + 1e-15 <= pi * (1 - pi) + 2e-15


class TestScalarSe:
    def test_iid_above_threshold(self):
        tr = iterate_scalar_se(None, 0.5, 0.3)
        assert tr.converged and tr.psi[-1, 0] < 1e-8

    def test_overdetermined(self):
        tr = iterate_scalar_se(build_base_matrix(6, 40), 5.0, 0.3)
        assert np.all(tr.psi[-1] < 1e-10)

    def test_delta_in(self):
        tr = iterate_scalar_se(build_base_matrix(6, 40), 0.38, 0.3, k_max=3)
        assert tr.delta_in == 0.38 * 40 / 45

    def test_initialisation(self):
        tr = iterate_scalar_se(build_base_matrix(3, 10), 0.4, 0.3, k_max=5)
        np.testing.assert_array_equal(tr.psi[0], 0.21)
        np.testing.assert_array_equal(tr.chi2[0], 0.0)

    @pytest.mark.parametrize("delta,sigma2", [(0.3, 0.0), (0.38, 0.0), (0.5, 1e-3), (0.2, 0.01)])
    def test_yedla_form_agrees(self, delta, sigma2):
        base = build_base_matrix(6, 40)
        tr = iterate_scalar_se(base, delta, 0.3, sigma2, k_max=400)
        xs = iterate_yedla_se(base, delta, 0.3, sigma2, k_max=400)
        k = min(len(xs), tr.psi.shape[0])
        implied = tr.psi[:k] @ base.W_tilde.T
        np.testing.assert_allclose(xs[:k], implied, rtol=0, atol=1e-10)

    def test_iid_monotone(self):
        xs = iterate_yedla_se(None, 0.4, 0.3, 1e-4)
        assert np.all(np.diff(xs[:, 0]) <= 1e-15)

    @settings(max_examples=20, deadline=None)
    @given(delta=st.floats(0.1, 1.0), sigma2=st.floats(0, 0.1), pi=st.floats(0.05, 0.5))
    def test_ranges(self, delta, sigma2, pi):
        tr = iterate_scalar_se(build_base_matrix(2, 5), delta, pi, sigma2, k_max=200)
        assert np.all(tr.psi >= 0) and np.all(tr.psi <= pi * (1 - pi) + 1e-15)
        assert np.all(tr.phi >= sigma2)

    def test_sc_beats_iid(self):
        sc = iterate_scalar_se(build_base_matrix(6, 40), 0.38, 0.3)
        iid = iterate_scalar_se(None, 0.38, 0.3)
        assert sc.psi[-1].max() < 1e-12 < iid.psi[-1, 0]


class TestPredictions:
    def test_extreme_thresholds(self):
        met = se_predict_metrics([0.5, 2.0], 0.3, zeta=[0.0, 1.0])
        assert met["fpr"][0.0] == 1.0 and met["fnr"][0.0] == 0.0
        assert met["fpr"][1.0] == 0.0 and met["fnr"][1.0] == 1.0

    def test_fpr_fnr_monte_carlo(self):
        rng = np.random.default_rng(5)
        chi2, pi, N = 1.7, 0.3, 10 ** 6
        met = se_predict_metrics([chi2], pi, zeta=[0.2, 0.5, 0.8])
        g = rng.standard_normal(N)
        for z in (0.2, 0.5, 0.8):
            fpr = np.mean(bernoulli_posterior_mean(np.sqrt(chi2) * g, chi2, pi) > z)
            fnr = np.mean(bernoulli_posterior_mean(chi2 + np.sqrt(chi2) * g, chi2, pi) <= z)
            np.testing.assert_allclose(met["fpr"][z], fpr, atol=4 * np.sqrt(fpr * (1 - fpr) / N))
            np.testing.assert_allclose(met["fnr"][z], fnr, atol=4 * np.sqrt(fnr * (1 - fnr) / N))

    def test_correlation_identity(self):
        # E[f beta] = pi - mmse for the Bayes denoiser, checked by quadrature
        chi2, pi = 0.9, 0.3
        chi = np.sqrt(chi2)
        cross = pi * quad(lambda g: bernoulli_posterior_mean(chi2 + chi * g, chi2, pi) * norm.pdf(g), -40, 40)[0]
        np.testing.assert_allclose(cross, pi - mmse_bernoulli(chi2, pi), rtol=1e-9)
        met = se_predict_metrics([chi2], pi)
        np.testing.assert_allclose(met["correlation"], cross / pi, rtol=1e-9)

    def test_sc_perfect_recovery_prediction(self):
        tr = iterate_scalar_se(build_base_matrix(6, 40), 0.38, 0.3)
        met = se_predict_metrics(tr.chi2[-1], 0.3, zeta=np.arange(1, 10) / 10)
        assert max(met["fpr"].values()) < 1e-12
        assert max(met["fnr"].values()) < 1e-12
        assert met["correlation"] == pytest.approx(1.0, abs=1e-12)

    def test_reference_test_limit(self):
        np.testing.assert_allclose(reference_test_limit(0.3, 20000), 2 * entropy([0.3, 0.7]) / np.log(20000))
        np.testing.assert_allclose(reference_test_limit(0.3, 20000), 0.1234, atol=5e-5)
        np.testing.assert_allclose(reference_test_limit(np.full(3, 1 / 3), 20000), np.log(3) / np.log(20000))
        np.testing.assert_allclose(reference_test_limit(0.5, 1000), 2 * np.log(2) / np.log(1000))


class TestCovSe:
    def test_initial_covariance(self):
        tr = iterate_cov_se(build_base_matrix(2, 3), 0.5, np.full(3, 1 / 3), k_max=1)
        np.testing.assert_allclose(tr.psi[0, 0], np.eye(3) / 3 - 1 / 9, atol=1e-15)

    def test_gauss_hermite_agrees_with_qmc(self):
        base = build_base_matrix(2, 3)
        pi = np.array([0.2, 0.3, 0.5])
        gh = iterate_cov_se(base, 0.3, pi, 0.05 * np.eye(3), k_max=8)
        qm = iterate_cov_se(base, 0.3, pi, 0.05 * np.eye(3), k_max=8, method="qmc", n_samples=2 ** 16)
        np.testing.assert_allclose(gh.psi[-1], qm.psi[-1], atol=2e-3)

    def test_two_categories_match_scalar(self):
        # one-hot embedding of QGT: the error covariance is psi * [[1, -1], [-1, 1]]
        base = build_base_matrix(2, 3)
        pi = 0.3
        sc = iterate_scalar_se(base, 0.6, pi, 0.02, k_max=6, tol=0)
        cv = iterate_cov_se(base, 0.6, [pi, 1 - pi], 0.04 * np.eye(2), k_max=6, tol=0, n_nodes=81)
        np.testing.assert_allclose(cv.psi[:, :, 0, 0], sc.psi[:7], rtol=0, atol=1e-9)
        np.testing.assert_allclose(cv.psi[:, :, 0, 1], -sc.psi[:7], rtol=0, atol=1e-9)

    def test_predicted_correlation_noiseless_start(self):
        tr = iterate_cov_se(build_base_matrix(2, 3), 0.5, np.full(3, 1 / 3), k_max=1)
        met = cov_se_predict_metrics(tr, k=0)
        np.testing.assert_allclose(met["correlation"], 1 / 3)
