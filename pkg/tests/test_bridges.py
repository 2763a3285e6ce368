import numpy as np
import numpy.testing as npt
import pytest

from proxmsm import bridges as br
from proxmsm.core import ConvergenceError
from proxmsm.solvers import SolverConfig

# Population bridge coefficients derived by hand from the linear-Gaussian design.
B1_TRUE = np.array([-1.65, 1.14, 1.0, 0.0, 1.0, -0.25, 0.05])
B0_TRUE = np.array([-1.657333, 1.0, 1.0, 1.586667, -0.560667])
T0_TRUE = np.array([0.925, 0.45, -1.0, 0.2])


@pytest.fixture(scope="module")
def large_fits(sim_large):
    return br.fit_h(sim_large), br.fit_q(sim_large)


class TestClosedForm:
    def test_h1(self, large_fits):
        npt.assert_allclose(large_fits[0].b1, B1_TRUE, atol=0.03)

    def test_h0(self, large_fits):
        npt.assert_allclose(large_fits[0].b0, B0_TRUE, atol=0.03)

    def test_q0(self, large_fits):
        npt.assert_allclose(large_fits[1].t0, T0_TRUE, atol=0.03)


class TestOutcomeBridges:
    def test_h1_matches_direct_iv_solve(self, sim4000):
        x = br.h1_features(sim4000)
        z = br.h1_instruments(sim4000)
        direct = np.linalg.solve(z.T @ x, z.T @ sim4000.y)
        npt.assert_allclose(br.fit_h(sim4000).b1, direct, rtol=1e-9, atol=1e-12)

    def test_moments_vanish(self, sim4000):
        fit = br.fit_h(sim4000)
        assert fit.norm1 <= 1e-10
        assert fit.norm0 <= 1e-10
        npt.assert_allclose(br.h1_moment(fit.b1, sim4000).mean(axis=0), 0, atol=1e-10)

    def test_h0_shares_a1_coefficient(self, sim4000):
        # h1 is linear in a1 and W(1) enters only through its mean, so h0 inherits the a1 slope.
        fit = br.fit_h(sim4000)
        assert fit.b0[2] == pytest.approx(fit.b1[2], abs=1e-10)

    def test_regime_evaluation(self, sim4000):
        fit = br.fit_h(sim4000)
        feats = br.h1_features(sim4000, a0=1, a1=0)
        npt.assert_allclose(fit.h1((1, 0)), feats @ fit.b1)


class TestTreatmentBridges:
    def test_converged_from_zero(self, sim4000):
        fit = br.fit_q(sim4000, SolverConfig(restarts=0))
        assert fit.converged
        assert max(fit.norm0, fit.norm1) <= 1e-10

    def test_weights_exceed_one(self, sim4000):
        fit = br.fit_q(sim4000)
        assert np.all(fit.q0() > 1)
        assert np.all(fit.q1() > fit.q0())

    def test_balance_identities(self, sim4000):
        # Intercept and treatment slots of the moments give exact in-sample balance.
        fit = br.fit_q(sim4000)
        q0, q1 = fit.q0(), fit.q1()
        for a in (0, 1):
            assert np.mean((sim4000.a0 == a) * q0) == pytest.approx(1.0, abs=1e-9)
            assert np.mean((sim4000.a1 == a) * q1) == pytest.approx(np.mean(q0), abs=1e-9)

    def test_analytic_jacobian_matches_central(self, sim4000):
        exact = br.fit_q(sim4000)
        fd = br.fit_q(sim4000, SolverConfig(jacobian="central"))
        npt.assert_allclose(fd.t0, exact.t0, atol=1e-7)
        npt.assert_allclose(fd.t1, exact.t1, atol=1e-7)

    def test_single_arm_rejected(self, sim4000):
        data = sim4000.replace(a0=np.ones(sim4000.n, dtype=np.int8))
        with pytest.raises(ConvergenceError, match="both treatment arms"):
            br.fit_q(data)

    def test_nonstrict_returns_flag(self, sim4000):
        fit = br.fit_q(sim4000, SolverConfig(max_iterations=1, restarts=0), strict=False)
        assert not fit.converged
        with pytest.raises(ConvergenceError):
            br.fit_q(sim4000, SolverConfig(max_iterations=1, restarts=0))
