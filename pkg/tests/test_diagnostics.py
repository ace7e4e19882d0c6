import math
from fractions import Fraction

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asysqn.data import Dataset
from asysqn.diagnostics import (Lemma2Bounds, ProblemConstants, StepSizeError, corollary_check,
                                datapass_per_epoch, default_snapshot_period, delay_bound,
                                estimate_mu_l, lemma2_bounds, step_size_bounds, theory_report,
                                theta_rate)
from asysqn.model import LossModel, full_gradient, full_loss

from conftest import rng

LS = LossModel.from_name("ls")
UNIT = Lemma2Bounds(0.0, 0.0, 0.0)  # mu1 = mu2 = 1


class TestEstimates:
    def test_single_row(self, square):
        assert estimate_mu_l(LS, square) == pytest.approx((2.0, 2.0))

    def test_identity_rows(self):
        # (2/n) Z^T Z with Z = I_2, n = 2
        assert estimate_mu_l(LS, Dataset(np.eye(2), np.zeros(2))) == pytest.approx((1.0, 1.0))

    def test_logistic_formula(self):
        ds = Dataset(np.array([[1.0, 0.0], [0.6, 0.8]]), np.array([1.0, -1.0]))
        mu, l = estimate_mu_l(LossModel.from_name("logistic", 1e-3), ds)
        assert (mu, l) == pytest.approx((0.002, 0.252))

    def test_hinge_unavailable(self, square):
        with pytest.raises(ValueError):
            estimate_mu_l(LossModel.from_name("hinge"), square)

    def test_sparse_path_matches_dense(self):
        import scipy.sparse as sp
        g = rng(2)
        z = g.standard_normal((60, 5))
        dense = estimate_mu_l(LS, Dataset(z, np.zeros(60)))
        sparse = estimate_mu_l(LS, Dataset(sp.csr_matrix(z), np.zeros(60)))
        assert sparse == pytest.approx(dense, rel=1e-10)


class TestLemma2:
    def test_small_case(self):
        b = lemma2_bounds(ProblemConstants(mu=2, l=2, d=1, M=1))
        assert b.mu1 == pytest.approx(0.25, rel=1e-14)
        assert b.mu2 == pytest.approx(1.0, rel=1e-14)
        assert b.kappa_h == pytest.approx(4.0, rel=1e-14)

    @pytest.mark.parametrize("l", [0.01, 1.0, 37.0, 1e6])
    def test_kappa_h_independent_of_scale(self, l):
        assert lemma2_bounds(ProblemConstants(mu=l, l=l, d=1, M=1)).kappa_h == pytest.approx(4.0)

    @settings(max_examples=100, deadline=None)
    @given(mu=st.floats(1e-6, 1.0), ratio=st.floats(1.0, 1e6), d=st.integers(1, 500),
           M=st.integers(1, 50))
    def test_log_identity(self, mu, ratio, d, M):
        c = ProblemConstants(mu=mu, l=mu * ratio, d=d, M=M)
        b = lemma2_bounds(c)
        q = d + M
        assert abs(b.log_kappa_h - q * math.log(q * c.kappa_b)) <= 1e-10 * max(1, b.log_kappa_h)

    def test_large_dimension_stays_finite(self):
        c = ProblemConstants(mu=1e-3, l=10.0, d=9990, M=10, m=1000, tau=8, eta=1e-3)
        assert all(math.isfinite(v) for v in lemma2_bounds(c))
        assert all(math.isfinite(v) for v in (step_size_bounds(c).log_eta_root,
                                              step_size_bounds(c).log_eta_delay))
        with pytest.raises(StepSizeError):
            theta_rate(c)
        # the admissible step lies far below the smallest double
        assert delay_bound(c) == 0.0
        assert step_size_bounds(c).log_eta_delay < math.log(5e-324)

    def test_bad_constants(self):
        with pytest.raises(ValueError):
            ProblemConstants(mu=2, l=1, d=1, M=1)
        with pytest.raises(ValueError):
            ProblemConstants(mu=1, l=1, d=0, M=1)


def theta_oracle(mu, l, d, M, m, tau, eta):
    """Arbitrary-precision plug-in of the contraction factor."""
    mp.mp.dps = 50
    mu, l, eta = mp.mpf(mu), mp.mpf(l), mp.mpf(eta)
    q = d + M
    mu1 = 1 / (q * l)
    mu2 = (q * l) ** (q - 1) / mu ** q
    C = 4 * m * l**2 * eta**2 * mu2**2 * (l * eta * mu1 * tau + 1) / (1 - 2 * l**2 * eta**2 * mu2**2 * tau**2)
    theta = (1 + C) / (1 + m * eta * mu * mu1 - C)
    return C, theta


class TestTheta:
    def test_worked_case_against_oracle(self):
        c = ProblemConstants(mu=2, l=2, d=1, M=1, m=100, tau=10, eta=1 / 400)
        C, theta = theta_rate(c)
        oC, otheta = theta_oracle(2, 2, 1, 1, 100, 10, 1 / 400)
        assert C == pytest.approx(float(oC), rel=1e-12)
        assert theta == pytest.approx(float(otheta), rel=1e-12)
        assert 0 < theta < 1

    @settings(max_examples=60, deadline=None)
    @given(mu=st.floats(0.1, 2.0), ratio=st.floats(1.0, 3.0), m=st.integers(1, 1000),
           tau=st.integers(0, 20), log_eta=st.floats(-12, -2))
    def test_matches_oracle(self, mu, ratio, m, tau, log_eta):
        eta = 10 ** log_eta
        c = ProblemConstants(mu=mu, l=mu * ratio, d=1, M=1, m=m, tau=tau, eta=eta)
        try:
            C, theta = theta_rate(c)
        except StepSizeError:
            assert 2 * (c.l * eta * lemma2_bounds(c).mu2 * tau) ** 2 >= 1 - 1e-9
            return
        oC, otheta = theta_oracle(mu, mu * ratio, 1, 1, m, tau, eta)
        assert C == pytest.approx(float(oC), rel=1e-9)
        assert theta == pytest.approx(float(otheta), rel=1e-9)

    def test_no_delay_formula(self):
        c = ProblemConstants(mu=2, l=2, d=1, M=1, m=50, tau=0, eta=0.003)
        mu1, mu2 = 0.25, 1.0
        C = 4 * 50 * 4 * 0.003**2 * mu2**2
        assert theta_rate(c).C == pytest.approx(C, rel=1e-12)
        assert theta_rate(c).theta == pytest.approx((1 + C) / (1 + 50 * 0.003 * 2 * mu1 - C),
                                                    rel=1e-12)

    def test_theta_tends_to_one_as_eta_vanishes(self):
        etas = [2.0 ** -k for k in range(8, 60)]
        thetas = [theta_rate(ProblemConstants(mu=2, l=2, d=1, M=1, m=100, tau=10, eta=e)).theta
                  for e in etas]
        assert all(a <= b for a, b in zip(thetas, thetas[1:]))
        assert thetas[-1] == pytest.approx(1.0, abs=1e-12)
        zero = theta_rate(ProblemConstants(mu=2, l=2, d=1, M=1, m=100, tau=10, eta=0.0))
        assert (zero.C, zero.theta) == (0.0, 1.0)

    def test_monotone_in_m_and_tau(self):
        base = dict(mu=2, l=2, d=1, M=1, eta=1e-3)
        by_m = [theta_rate(ProblemConstants(m=m, tau=5, **base)).theta for m in (10, 50, 100, 500)]
        assert all(a >= b for a, b in zip(by_m, by_m[1:]))
        by_tau = [theta_rate(ProblemConstants(m=200, tau=t, **base)).theta for t in (0, 1, 5, 20)]
        assert all(a <= b for a, b in zip(by_tau, by_tau[1:]))

    def test_delay_bound_violation(self):
        c = ProblemConstants(mu=2, l=2, d=1, M=1, m=100, tau=10, eta=1.0)
        assert c.eta > delay_bound(c)
        with pytest.raises(StepSizeError, match="delay bound"):
            theta_rate(c)


class TestCorollary:
    def test_threshold_example(self):
        check = corollary_check(1.0, 4.0, 37)
        assert check.threshold == 36.0
        assert check.threshold_ok
        assert not corollary_check(1.0, 4.0, 36).threshold_ok

    def test_rate_in_unit_interval_above_threshold(self):
        for kb in range(1, 11):
            for kh in range(1, 11):
                c = corollary_check(kb, kh, 2 * (8 * kb * kh + 4 * kb))
                assert c.threshold_ok and 0 < c.rate_bound < 1

    def test_large_m_limit(self):
        c = corollary_check(1.0, 4.0, 1e12)
        assert c.rate_bound == pytest.approx(c.limit, rel=1e-9)
        assert c.limit == pytest.approx(4 / 4.5)
        assert corollary_check(1.0, 4.0, math.inf).rate_bound == c.limit


class TestStepSizes:
    def test_unit_constants_root(self):
        c = ProblemConstants(mu=1, l=1, d=1, M=1, m=100, tau=1)
        sb = step_size_bounds(c, bounds=UNIT)
        assert sb.eta_quadratic_root == pytest.approx((-8 + math.sqrt(104)) / 20, abs=1e-12)
        assert sb.eta_quadratic_root == pytest.approx(0.1099, abs=1e-4)
        assert sb.eta_quadratic_root < 1 / math.sqrt(2) == pytest.approx(sb.eta_delay_bound)
        assert sb.eta_default == pytest.approx(0.005)

    def test_no_delay_root_is_linear(self):
        sb = step_size_bounds(ProblemConstants(mu=1, l=1, d=1, M=1, tau=0), bounds=UNIT)
        assert sb.eta_quadratic_root == pytest.approx(1 / 8)
        assert sb.eta_delay_bound == math.inf

    @settings(max_examples=60, deadline=None)
    @given(mu=st.floats(1e-3, 1.0), ratio=st.floats(1, 100), d=st.integers(1, 50),
           tau=st.integers(1, 50))
    def test_root_solves_quadratic(self, mu, ratio, d, tau):
        c = ProblemConstants(mu=mu, l=mu * ratio, d=d, M=5, tau=tau)
        sb = step_size_bounds(c)
        b = lemma2_bounds(c)
        mp.mp.dps = 60
        l, mu1, mu2, e = mp.mpf(c.l), mp.e ** b.log_mu1, mp.e ** b.log_mu2, mp.e ** sb.log_eta_root
        a = 2 * l**2 * mu1 * mu2**2 * tau * (4 * l + mu * tau)
        q = a * e**2 + 8 * l**2 * mu2**2 * e - mu * mu1
        assert abs(q / (mu * mu1)) < 1e-9
        assert sb.log_eta_root < sb.log_eta_delay


class TestDatapass:
    def test_asysqn(self):
        assert datapass_per_epoch("asysqn", 10, 100, 25, 8, 2000) == Fraction(41, 20)

    def test_svrg(self):
        assert datapass_per_epoch("svrg", 10, 100, 25, 8, 2000) == 2

    def test_default_m(self):
        assert default_snapshot_period(10_000, 5, 50, 8) == 5
        assert default_snapshot_period(10, 5, 50, 8) == 1


def test_gradient_dominance_on_quadratics():
    g = rng(11)
    for _ in range(5):
        d = int(g.integers(1, 6))
        z = g.standard_normal((30, d))
        ds = Dataset(z, g.standard_normal(30))
        mu, _ = estimate_mu_l(LS, ds)
        x_star = np.linalg.lstsq(z, ds.labels, rcond=None)[0]
        f_star = full_loss(LS, ds, x_star)
        X = x_star + g.standard_normal((10_000, d)) * 10 ** g.uniform(-3, 1, size=(10_000, 1))
        R = X @ z.T - ds.labels
        f = np.mean(R**2, axis=1)
        G = 2 * R @ z / 30
        assert np.all(np.sum(G**2, axis=1) >= 2 * mu * (f - f_star) * (1 - 1e-9) - 1e-13)
        np.testing.assert_allclose(G[0], full_gradient(LS, ds, X[0]), rtol=1e-10)


def test_subsample_hessians_average_to_full_extremes():
    g = rng(12)
    z = g.standard_normal((40, 3))
    ds = Dataset(z, np.zeros(40))
    mu, l = estimate_mu_l(LS, ds)
    parts = [2 * np.outer(r, r) for r in z]
    ev = np.linalg.eigvalsh(np.mean(parts, axis=0))
    assert ev[0] == pytest.approx(mu, rel=1e-10) and ev[-1] == pytest.approx(l, rel=1e-10)


class TestReport:
    def test_square(self, square):
        text = theory_report(LS, square, M=1, m=100, tau=1)
        assert "mu = 2\n" in text and "l = 2\n" in text and "kappa(B) = 1\n" in text
        assert "m threshold = 36\n" in text
        assert "log kappa(H) = 1.386294361" in text

    def test_violation_flagged(self, square):
        assert "VIOLATION" in theory_report(LS, square, M=1, m=100, tau=10, eta=1.0)
        assert "VIOLATION" not in theory_report(LS, square, M=1, m=100, tau=10, eta=1e-3)

    def test_hinge_refused(self, square):
        with pytest.raises(ValueError, match="nonsmooth"):
            theory_report(LossModel.from_name("hinge"), square, M=1, m=1, tau=1)
