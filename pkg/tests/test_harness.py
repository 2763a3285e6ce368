import numpy as np
import numpy.testing as npt
import pytest

from proxmsm import bridges as br
from proxmsm.core import InputError
from proxmsm.dgm import simulate
from proxmsm.estimators import estimate_pdr
from proxmsm.harness import (TABLE_ORDER, VARIANTS, Outcome, Scenario, ScenarioResult, SuiteTable,
                             run_scenario, run_suite)

N, B = 1500, 4


@pytest.fixture(scope="module")
def suite():
    return run_suite(TABLE_ORDER, n=N, B=B, seed=10)


class TestScenario:
    def test_defaults(self):
        s = Scenario("PDR-BW")
        assert (s.n, s.B, s.seed) == (4000, 200, 0)
        npt.assert_allclose(s.truth, [-1.949, 1.0])

    def test_validation(self):
        with pytest.raises(InputError):
            Scenario("PDR-XY")
        with pytest.raises(InputError):
            Scenario("POR", B=0)

    def test_variant_table(self):
        assert len(TABLE_ORDER) == 9
        assert VARIANTS["PDR-BW"] == ("PDR", "BOTH")


class TestRunSuite:
    def test_single_replicate_equals_direct_call(self):
        res = run_scenario(Scenario("PDR", n=N, B=1, seed=21))
        data = simulate(n=N, seed=21)
        rep = estimate_pdr(data, br.fit_h(data), br.fit_q(data), Scenario("PDR").spec)
        npt.assert_allclose(res.beta[0], rep.beta_hat, rtol=1e-12)
        npt.assert_allclose(res.se[0], rep.se, rtol=1e-12)

    def test_outcomes_accounted(self, suite):
        for res in suite.values():
            assert res.n_used + res.n_nonconverged + res.n_failed == B
            assert [o.index for o in res.outcomes] == list(range(B))

    def test_shared_datasets(self, suite):
        # Replicate r of every variant uses seed + r: POR alone reproduces it.
        alone = run_suite(("POR",), n=N, B=B, seed=10)["POR"]
        npt.assert_array_equal(alone.beta, suite["POR"].beta)

    def test_parallel_matches_serial(self, suite):
        par = run_suite(("POR", "PDR"), n=N, B=B, seed=10, workers=2)
        for nm in ("POR", "PDR"):
            npt.assert_array_equal(par[nm].beta, suite[nm].beta)
            npt.assert_array_equal(par[nm].se, suite[nm].se)


class TestAggregates:
    def _result(self, betas, ses, statuses=None):
        statuses = statuses or ["ok"] * len(betas)
        outs = tuple(Outcome(i, st, np.array(b) if st == "ok" else None, np.array(s) if st == "ok" else None)
                     for i, (b, s, st) in enumerate(zip(betas, ses, statuses)))
        return ScenarioResult(Scenario("POR", n=10, B=len(outs), truth=np.array([0.0, 1.0])), outs)

    def test_formulas(self):
        res = self._result([[0, 0.9], [0, 1.3], [0, 1.1]], [[1, 0.1]] * 3)
        npt.assert_allclose(res.bias[1], 0.1)
        npt.assert_allclose(res.see[1], np.std([0.9, 1.3, 1.1], ddof=1))
        npt.assert_allclose(res.sd[1], 0.1)
        npt.assert_allclose(res.cp[1], 2 / 3)

    def test_exclusions(self):
        res = self._result([[0, 1.0], [0, 5.0]], [[1, 0.1]] * 2, ["ok", "nonconverged"])
        assert (res.n_used, res.n_nonconverged) == (1, 1)
        assert np.isnan(res.see[1])
        npt.assert_allclose(res.bias[1], 0.0)

    def test_na_rendering(self):
        res = self._result([[0, 1.0]], [[1, 0.1]])
        table = SuiteTable({"POR": res})
        assert "NA" in table.text()
        assert table.csv().splitlines()[1].split(",")[2] == "NA"
        assert "| POR | 0.0 | NA |" in table.markdown()

    def test_unknown_format(self):
        with pytest.raises(InputError):
            SuiteTable({}).render("xml")
