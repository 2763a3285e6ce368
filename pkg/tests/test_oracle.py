import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings, strategies as st

from proxmsm.core import NotIdentifiedError
from proxmsm.oracle import (AXES, REGIMES, DiscreteWorld, completeness_rank, random_world,
                            solve_bridges_exact, sra_reference, sra_world, verify_identification)


class TestWorld:
    def test_joint_sums_to_one(self):
        world = random_world(0)
        assert world.joint().sum() == pytest.approx(1.0, abs=1e-12)
        for r in REGIMES:
            assert world.joint(r).sum() == pytest.approx(1.0, abs=1e-12)

    def test_intervention_fixes_treatments(self):
        p = random_world(1).joint((1, 0))
        assert p.take([0], axis=AXES.index("a0")).sum() == 0
        assert p.take([1], axis=AXES.index("a1")).sum() == 0

    def test_json_round_trip(self):
        world = random_world(2, d_x=2, z_effect=0.3)
        again = DiscreteWorld.from_json(world.to_json())
        npt.assert_array_equal(again.joint(), world.joint())
        npt.assert_array_equal(again.y_mean, world.y_mean)
        assert again.violations == world.violations

    def test_forbidden_parent_rejected(self):
        world = random_world(3)
        bad = dict(world.factors)
        # Let Y depend on Z(0) without declaring the violation.
        bad_y = world.y_mean + np.arange(2.0).reshape([2 if a == "z0" else 1 for a in AXES])
        with pytest.raises(ValueError):
            DiscreteWorld(world.dims, bad, bad_y)


class TestIdentification:
    @pytest.mark.parametrize("seed", range(5))
    def test_random_complete_world(self, seed):
        world = random_world(seed, d_x=1 + seed % 2)
        assert completeness_rank(world).complete
        rep = verify_identification(world)
        assert rep.max_discrepancy < 1e-10

    def test_larger_proxies_than_confounder(self):
        rep = verify_identification(random_world(7, d_z=3, d_w=3))
        assert rep.max_discrepancy < 1e-10

    @pytest.mark.parametrize("seed", range(3))
    def test_proxy_violation_detected(self, seed):
        rep = verify_identification(random_world(seed, z_effect=0.5))
        assert rep.max_discrepancy > 1e-4

    def test_incomplete_world_raises(self):
        world = random_world(0, d_u=3, d_z=2, d_w=2)
        report = completeness_rank(world)
        assert not report.complete and report.failures()
        with pytest.raises(NotIdentifiedError, match="not complete"):
            solve_bridges_exact(world)

    def test_null_effect(self):
        world = random_world(4, null_effect=True)
        rep = verify_identification(world)
        ey = float(np.sum(world.joint() * world.y_mean))
        npt.assert_allclose(rep.truth, ey, atol=1e-12)
        npt.assert_allclose(rep.gformula, ey, atol=1e-10)


class TestSraReduction:
    @pytest.mark.parametrize("seed", range(3))
    def test_bridges_match_classical_quantities(self, seed):
        world = sra_world(seed)
        bridges = solve_bridges_exact(world)
        h0, q1 = sra_reference(world)
        npt.assert_allclose(bridges.h0, h0, atol=1e-10)
        mask = q1 > 0
        npt.assert_allclose(bridges.q1[mask], q1[mask], rtol=1e-9)
        assert verify_identification(world, bridges).max_discrepancy < 1e-10


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.floats(-5, 5, allow_nan=False).filter(lambda v: abs(v) > 1e-3))
def test_identification_linear_in_outcome(seed, c):
    world = random_world(seed)
    base = verify_identification(world)
    scaled = verify_identification(world.scaled(c))
    npt.assert_allclose(scaled.gformula, c * base.gformula, rtol=1e-8, atol=1e-10)
    npt.assert_allclose(scaled.ipw, c * base.ipw, rtol=1e-8, atol=1e-10)
