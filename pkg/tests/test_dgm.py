import numpy as np
import numpy.testing as npt
import pytest

from proxmsm.core import InputError, MsmmSpec, TreatmentSupport
from proxmsm.dgm import (DgmParams, apply_misspec, counterfactual_mean, path_traced_mean, simulate,
                         true_beta)

# Hand-derived E[Y_(a0,a1)] = -1.949 + a0 + a1 under the default coefficients.
CLOSED_FORM_MEANS = {(0, 0): -1.949, (0, 1): -0.949, (1, 0): -0.949, (1, 1): 0.051}


class TestTruth:
    @pytest.mark.parametrize("regime", sorted(CLOSED_FORM_MEANS))
    def test_path_traced_matches_hand_derivation(self, regime):
        assert path_traced_mean(None, regime) == pytest.approx(CLOSED_FORM_MEANS[regime], abs=1e-12)

    def test_cumulative_truth(self):
        npt.assert_allclose(true_beta(), [-1.949, 1.0], atol=1e-12)

    def test_saturated_truth(self):
        beta = true_beta(spec=MsmmSpec.saturated(TreatmentSupport.full()))
        npt.assert_allclose(beta, [-1.949, 1.0, 1.0, 0.0], atol=1e-12)

    def test_monte_carlo_agrees_with_path_tracing(self):
        mc = true_beta(method="mc", n=400_000, seed=1)
        npt.assert_allclose(mc, true_beta(), atol=0.01)

    def test_counterfactual_uses_common_random_numbers(self):
        # Y_(1,1) - Y_(0,0) is deterministic given shared noise: 1.14 + 1 + 0.5*0.7 - 0.7*0.7
        diff = counterfactual_mean(None, (1, 1), 1000, 4) - counterfactual_mean(None, (0, 0), 1000, 4)
        assert diff == pytest.approx(1.14 + 1.0 + 0.5 * 0.7 - 0.7 * 0.7, abs=1e-12)

    def test_unknown_method(self):
        with pytest.raises(InputError):
            true_beta(method="exact")


class TestSimulate:
    def test_deterministic(self):
        assert simulate(n=100, seed=3).equals(simulate(n=100, seed=3))
        assert not simulate(n=100, seed=3).equals(simulate(n=100, seed=4))

    def test_latent_hidden(self):
        data, latent = simulate(n=100, seed=1, return_latent=True)
        assert set(latent) == {"u0", "u1"}
        assert "u0" not in data.columns()

    def test_treatment_rates(self):
        data = simulate(n=50_000, seed=2)
        assert 0.2 < data.a0.mean() < 0.8
        assert 0.2 < data.a1.mean() < 0.8

    def test_zero_n_rejected(self):
        with pytest.raises(InputError):
            simulate(n=0)


class TestParams:
    def test_json_round_trip(self):
        p = DgmParams(y_a1=2.5)
        assert DgmParams.from_json(p.to_json()) == p

    def test_unknown_key(self):
        with pytest.raises(InputError, match="unknown DGM parameters"):
            DgmParams.from_dict({"gamma": 1.0})

    def test_nonpositive_sd(self):
        with pytest.raises(InputError):
            DgmParams(y_sd=0.0)

    def test_severed_removes_confounding(self):
        p = DgmParams().severed()
        assert p.a0_u0 == p.a1_u == p.y_u0 == p.y_u1 == 0.0


class TestMisspec:
    def test_views(self):
        data = simulate(n=200, seed=0)
        h, q = apply_misspec("BOTH", data)
        npt.assert_allclose(h.w0, np.sqrt(np.abs(data.w0)) + 1)
        npt.assert_allclose(q.z1, np.abs(data.z1))
        npt.assert_array_equal(h.z0, data.z0)
        npt.assert_array_equal(q.w0, data.w0)

    def test_none_is_identity(self):
        data = simulate(n=20, seed=0)
        h, q = apply_misspec("none", data)
        assert h is data and q is data

    def test_unknown(self):
        with pytest.raises(InputError):
            apply_misspec("BW", simulate(n=10))
