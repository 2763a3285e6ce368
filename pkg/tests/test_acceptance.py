"""Acceptance criteria, one PASS/FAIL line each.

Every check runs at the stated tolerance and asserts its outcome; criteria that
the implementation cannot meet fail here rather than being relaxed.
"""

import time

import numpy as np
import pytest

from proxmsm import bridges as br
from proxmsm.cli import main
from proxmsm.dgm import simulate
from proxmsm.estimators import estimate
from proxmsm.harness import TABLE_ORDER, run_suite
from proxmsm.oracle import (random_world, solve_bridges_exact, sra_reference, sra_world,
                            verify_identification)
from proxmsm.solvers import SolverConfig

pytestmark = pytest.mark.slow

SEED = 0
BIAS_WINDOWS = {
    "POR": (-0.006, 0.006), "PIPW": (-0.006, 0.006), "PDR": (-0.006, 0.006),
    "PDR-WOR": (-0.006, 0.006), "PDR-WIPW": (-0.006, 0.006),
    "POR-WOR": (-0.080, -0.052), "PIPW-WIPW": (0.005, 0.030),
    "PDR-BW": (-0.045, -0.005), "DR-SRA": (-0.410, -0.380),
}


@pytest.fixture(scope="module")
def table_suite():
    start = time.perf_counter()
    results = run_suite(TABLE_ORDER, n=4000, B=200, seed=SEED)
    return results, time.perf_counter() - start


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} - {detail}")


def test_criterion_1_table_reproduction(table_suite, capsys):
    results, elapsed = table_suite
    problems, cells = [], []
    for name, (lo, hi) in BIAS_WINDOWS.items():
        bias = results[name].bias[1]
        cells.append(f"{name} {bias:+.4f}")
        if not lo <= bias <= hi:
            problems.append(f"{name} bias {bias:+.4f} outside ({lo}, {hi})")
    for name in ("POR", "PIPW", "PDR"):
        cp = results[name].cp[1]
        if not 0.90 <= cp <= 0.99:
            problems.append(f"{name} coverage {cp:.3f} outside [0.90, 0.99]")
    cp_sra = results["DR-SRA"].cp[1]
    if not cp_sra < 0.05:
        problems.append(f"DR-SRA coverage {cp_sra:.3f} not below 0.05")
    if elapsed > 600:
        problems.append(f"runtime {elapsed:.0f}s over 600s")
    ok = not problems
    report(capsys, 1, ok, "; ".join(problems) if problems else f"all windows met ({elapsed:.0f}s)")
    with capsys.disabled():
        print("  biases: " + ", ".join(cells))
    assert ok, problems


def test_criterion_2_root_n_scaling(table_suite, capsys):
    see_4000 = table_suite[0]["POR"].see[1]
    see_8000 = run_suite(("POR",), n=8000, B=200, seed=SEED)["POR"].see[1]
    ratio = see_8000 / see_4000
    ok = 0.60 < ratio < 0.82
    report(capsys, 2, ok, f"POR SEE ratio {ratio:.3f} (SEE {see_8000:.4f} / {see_4000:.4f})")
    assert ok


def test_criterion_3_discrete_identification(capsys):
    start = time.perf_counter()
    gaps = [verify_identification(random_world(s)) for s in range(50)]
    worst = max(max(r.gformula_gap, r.ipw_gap) for r in gaps)
    broken = sum(verify_identification(random_world(s, z_effect=0.5)).max_discrepancy > 1e-4
                 for s in range(10))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and broken >= 9 and elapsed <= 10
    report(capsys, 3, ok, f"max gap {worst:.2e} over 50 worlds; {broken}/10 violations detected; "
                          f"{elapsed:.1f}s")
    assert ok


def test_criterion_4_sra_reduction(capsys):
    worst = 0.0
    for s in range(20):
        world = sra_world(s)
        bridges = solve_bridges_exact(world)
        h0, q1 = sra_reference(world)
        worst = max(worst, np.max(np.abs(bridges.h0 - h0)), np.max(np.abs(bridges.q1 - q1)))
    ok = worst <= 1e-12
    report(capsys, 4, ok, f"max |exact bridge - classical formula| {worst:.2e} over 20 worlds")
    assert ok


def test_criterion_5_double_robustness(capsys):
    data = simulate(n=100_000, seed=SEED)
    cases = [("PDR", "none"), ("PDR", "WOR"), ("PDR", "WIPW"), ("POR", "none"), ("PIPW", "none")]
    errors = {}
    for est, mis in cases:
        errors[f"{est}/{mis}"] = abs(estimate(data, est, misspec=mis, strict=False).beta_hat[1] - 1.0)
    ok = all(e < 0.03 for e in errors.values())
    report(capsys, 5, ok, ", ".join(f"{k} {v:.4f}" for k, v in errors.items()))
    assert ok


def test_criterion_6_solver_contracts(capsys):
    config = SolverConfig(restarts=0)
    gmm_worst, converged, q_min = 0.0, 0, np.inf
    for r in range(200):
        data = simulate(n=4000, seed=SEED + r)
        h = br.fit_h(data)
        gmm_worst = max(gmm_worst, h.norm1, h.norm0)
        q = br.fit_q(data, config, strict=False)
        if q.converged:
            converged += 1
            q_min = min(q_min, q.q0().min(), q.q1().min())
    ok = gmm_worst <= 1e-10 and converged >= 198 and q_min > 1
    report(capsys, 6, ok, f"GMM residual max {gmm_worst:.2e}; q converged from zero on "
                          f"{converged}/200; min fitted q {q_min:.4f}")
    assert ok


def test_criterion_7_sandwich(table_suite, capsys):
    pdr = table_suite[0]["PDR"]
    ratio = pdr.sd[1] / pdr.see[1]
    covs = [o.cov for o in pdr.outcomes if o.status == "ok"]
    asym = max(np.max(np.abs(c - c.T)) for c in covs)
    min_eig = min(np.linalg.eigvalsh(c).min() for c in covs)
    ok = abs(ratio - 1) <= 0.15 and asym <= 1e-8 and min_eig >= -1e-8 and pdr.n_failed == 0
    report(capsys, 7, ok, f"mean SE / SD {ratio:.3f} over {pdr.n_used} replicates; "
                          f"asymmetry {asym:.1e}; min eigenvalue {min_eig:.2e}")
    assert ok


def test_criterion_8_determinism(tmp_path, capsys):
    args = ["mc", "--n", "1000", "--B", "6", "--seed", "5", "--format", "csv"]
    outputs = []
    for tag, workers in (("serial_a", 1), ("serial_b", 1), ("parallel", 2)):
        path = tmp_path / f"{tag}.csv"
        assert main(args + ["--workers", str(workers), "--out", str(path)]) == 0
        outputs.append(path.read_bytes())
    ok = outputs[0] == outputs[1] == outputs[2]
    report(capsys, 8, ok, "serial, repeated and 2-worker tables byte-identical" if ok
           else "tables differ between runs")
    assert ok
