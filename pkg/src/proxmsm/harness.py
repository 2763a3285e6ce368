"""Monte Carlo scenario runner for the nine estimator variants of the simulation study.

Every replicate draws one dataset (seed ``base + r``) and fits each bridge once;
the variants that share a bridge share the fit. Aggregates use converged
replicates only, in replicate-index order, so results do not depend on how the
replicates were scheduled.
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import bridges as br
from .core import ConvergenceError, InputError, MsmmSpec, NotIdentifiedError, PanelDataset
from .dgm import DgmParams, apply_misspec, simulate, true_beta
from .estimators import estimate_dr_sra, estimate_pdr, estimate_pipw, estimate_por
from .solvers import SolverConfig

# Variant name -> (estimator, misspecification), in table order.
VARIANTS = {
    "POR": ("POR", "none"),
    "POR-WOR": ("POR", "WOR"),
    "PIPW": ("PIPW", "none"),
    "PIPW-WIPW": ("PIPW", "WIPW"),
    "PDR": ("PDR", "none"),
    "PDR-WOR": ("PDR", "WOR"),
    "PDR-WIPW": ("PDR", "WIPW"),
    "PDR-BW": ("PDR", "BOTH"),
    "DR-SRA": ("DR-SRA", "none"),
}
TABLE_ORDER = tuple(VARIANTS)
ABORT_FRACTION = 0.2


class HarnessAbort(RuntimeError):
    """Too many replicates of a scenario raised errors."""


@dataclass(frozen=True)
class Scenario:
    estimator: str
    n: int = 4000
    B: int = 200
    seed: int = 0
    params: DgmParams = field(default_factory=DgmParams)
    spec: MsmmSpec | None = None
    truth: np.ndarray | None = None

    def __post_init__(self):
        if self.estimator not in VARIANTS:
            raise InputError(f"unknown estimator variant {self.estimator!r}; choose from {TABLE_ORDER}")
        if self.B < 1:
            raise InputError("B must be at least 1")
        if self.n < 1:
            raise InputError("n must be at least 1")
        if self.spec is None:
            object.__setattr__(self, "spec", MsmmSpec.cumulative())
        if self.truth is None:
            object.__setattr__(self, "truth", true_beta(self.params, self.spec))
        object.__setattr__(self, "truth", np.asarray(self.truth, dtype=float))


@dataclass(frozen=True)
class Outcome:
    """Result of one variant on one replicate; ``status`` is ok, nonconverged or error."""

    index: int
    status: str
    beta: np.ndarray | None = None
    se: np.ndarray | None = None
    message: str = ""
    cov: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class ScenarioResult:
    scenario: Scenario
    outcomes: tuple[Outcome, ...]

    @property
    def beta(self) -> np.ndarray:
        ok = [o.beta for o in self.outcomes if o.status == "ok"]
        return np.array(ok).reshape(len(ok), self.scenario.spec.p)

    @property
    def se(self) -> np.ndarray:
        ok = [o.se for o in self.outcomes if o.status == "ok"]
        return np.array(ok).reshape(len(ok), self.scenario.spec.p)

    @property
    def n_used(self) -> int:
        return sum(o.status == "ok" for o in self.outcomes)

    @property
    def n_nonconverged(self) -> int:
        return sum(o.status == "nonconverged" for o in self.outcomes)

    @property
    def n_failed(self) -> int:
        return sum(o.status == "error" for o in self.outcomes)

    @property
    def bias(self) -> np.ndarray:
        if self.n_used == 0:
            return np.full(self.scenario.spec.p, np.nan)
        return self.beta.mean(axis=0) - self.scenario.truth

    @property
    def see(self) -> np.ndarray:
        """Empirical standard error: sample SD of the estimates (NaN below two replicates)."""
        if self.n_used < 2:
            return np.full(self.scenario.spec.p, np.nan)
        return self.beta.std(axis=0, ddof=1)

    @property
    def sd(self) -> np.ndarray:
        """Average estimated standard error."""
        if self.n_used == 0:
            return np.full(self.scenario.spec.p, np.nan)
        return self.se.mean(axis=0)

    @property
    def cp(self) -> np.ndarray:
        if self.n_used == 0:
            return np.full(self.scenario.spec.p, np.nan)
        covered = np.abs(self.beta - self.scenario.truth) <= 1.96 * self.se
        return covered.mean(axis=0)


class _SharedFits:
    """Lazily fitted bridges for one dataset, keyed by which inputs are transformed."""

    def __init__(self, data: PanelDataset, config: SolverConfig):
        self.data = data
        self.config = config
        self._h: dict[bool, br.HBridgeFit] = {}
        self._q: dict[bool, br.QBridgeFit] = {}

    def h(self, misspec: str) -> br.HBridgeFit:
        key = misspec in ("WOR", "BOTH")
        if key not in self._h:
            self._h[key] = br.fit_h(apply_misspec(misspec, self.data)[0])
        return self._h[key]

    def q(self, misspec: str) -> br.QBridgeFit:
        key = misspec in ("WIPW", "BOTH")
        if key not in self._q:
            self._q[key] = br.fit_q(apply_misspec(misspec, self.data)[1], self.config, strict=False)
        return self._q[key]


def _run_variant(fits: _SharedFits, name: str, spec: MsmmSpec, index: int) -> Outcome:
    estimator, misspec = VARIANTS[name]
    data = fits.data
    try:
        if estimator == "POR":
            rep = estimate_por(data, fits.h(misspec), spec)
        elif estimator == "DR-SRA":
            rep = estimate_dr_sra(data, spec, config=fits.config)
        else:
            q_fit = fits.q(misspec)
            if not q_fit.converged:
                return Outcome(index, "nonconverged",
                               message=f"q-bridge moment norms {q_fit.norm0:.3g}, {q_fit.norm1:.3g}")
            if estimator == "PIPW":
                rep = estimate_pipw(data, q_fit, spec)
            else:
                rep = estimate_pdr(data, fits.h(misspec), q_fit, spec)
    except ConvergenceError as exc:
        return Outcome(index, "nonconverged", message=str(exc))
    except (NotIdentifiedError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return Outcome(index, "error", message=str(exc))
    return Outcome(index, "ok", rep.beta_hat, rep.se, cov=rep.cov)


def replicate_outcomes(index: int, names: tuple[str, ...], n: int, seed: int, params: DgmParams,
                       spec: MsmmSpec, config: SolverConfig = SolverConfig()) -> dict[str, Outcome]:
    """All requested variants on the replicate drawn with ``seed``."""
    fits = _SharedFits(simulate(params, n, seed), config)
    return {name: _run_variant(fits, name, spec, index) for name in names}


def _replicate_task(args):
    return replicate_outcomes(*args)


def run_suite(names=TABLE_ORDER, n: int = 4000, B: int = 200, seed: int = 0,
              params: DgmParams | None = None, spec: MsmmSpec | None = None,
              workers: int = 1, config: SolverConfig = SolverConfig(),
              check_abort: bool = True) -> dict[str, ScenarioResult]:
    """Run several variants over the same ``B`` replicates, sharing each dataset."""
    params = params or DgmParams()
    spec = spec or MsmmSpec.cumulative()
    names = tuple(names)
    scenarios = {nm: Scenario(nm, n, B, seed, params, spec) for nm in names}
    tasks = [(r, names, n, seed + r, params, spec, config) for r in range(B)]
    if workers > 1 and B > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_rep = list(pool.map(_replicate_task, tasks, chunksize=max(1, B // (4 * workers))))
    else:
        per_rep = [_replicate_task(t) for t in tasks]
    results = {}
    for nm in names:
        outs = tuple(sorted((rep[nm] for rep in per_rep), key=lambda o: o.index))
        res = ScenarioResult(scenarios[nm], outs)
        if check_abort and res.n_failed > ABORT_FRACTION * B:
            first = next(o.message for o in outs if o.status == "error")
            raise HarnessAbort(f"{nm}: {res.n_failed} of {B} replicates failed (first: {first})")
        results[nm] = res
    return results


def run_scenario(s: Scenario, workers: int = 1, config: SolverConfig = SolverConfig()) -> ScenarioResult:
    return run_suite((s.estimator,), s.n, s.B, s.seed, s.params, s.spec, workers, config)[s.estimator]


@dataclass(frozen=True, eq=False)
class SuiteTable:
    """Rendered summary of a suite for one MSMM coefficient."""

    results: dict[str, ScenarioResult]
    coef: int = 1

    HEADER = ("Estimator", "Bias", "SEE", "SD", "95% CP", "Used", "Excluded", "Failed")

    def rows(self) -> list[tuple]:
        out = []
        for name, res in self.results.items():
            j = self.coef
            out.append((name, 1e3 * res.bias[j], 1e3 * res.see[j], 1e3 * res.sd[j],
                        100 * res.cp[j], res.n_used, res.n_nonconverged, res.n_failed))
        return out

    @staticmethod
    def _fmt(x) -> str:
        if isinstance(x, str):
            return x
        if isinstance(x, (int, np.integer)):
            return str(x)
        return "NA" if not np.isfinite(x) else f"{x:.1f}"

    def _cells(self) -> list[list[str]]:
        return [[self._fmt(c) for c in row] for row in self.rows()]

    def text(self) -> str:
        cells = [list(self.HEADER)] + self._cells()
        widths = [max(len(r[k]) for r in cells) for k in range(len(self.HEADER))]
        lines = []
        for r in cells:
            lines.append("  ".join(c.ljust(w) if k == 0 else c.rjust(w)
                                   for k, (c, w) in enumerate(zip(r, widths))).rstrip())
        return "\n".join(lines) + "\n"

    def markdown(self) -> str:
        lines = ["| " + " | ".join(self.HEADER) + " |",
                 "|" + "|".join(["---"] + ["---:"] * (len(self.HEADER) - 1)) + "|"]
        lines += ["| " + " | ".join(r) + " |" for r in self._cells()]
        return "\n".join(lines) + "\n"

    def csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["estimator", "bias_e3", "see_e3", "sd_e3", "cp_pct", "used", "excluded", "failed"])
        for row in self.rows():
            writer.writerow([row[0]] + ["NA" if not np.isfinite(x) else repr(float(x)) for x in row[1:5]]
                            + list(row[5:]))
        return buf.getvalue()

    def render(self, fmt: str = "text") -> str:
        if fmt == "text":
            return self.text()
        if fmt in ("md", "markdown"):
            return self.markdown()
        if fmt == "csv":
            return self.csv()
        raise InputError(f"unknown table format {fmt!r}")


def table1_suite(n: int = 4000, B: int = 200, seed: int = 0, params: DgmParams | None = None,
                 workers: int | None = None, names=TABLE_ORDER, coef: int = 1,
                 config: SolverConfig = SolverConfig()) -> SuiteTable:
    """All nine variants in table order; bias/SEE/SD are reported x1e3 and CP in percent."""
    workers = os.cpu_count() or 1 if workers is None else workers
    order = [nm for nm in TABLE_ORDER if nm in set(names)]
    unknown = set(names) - set(TABLE_ORDER)
    if unknown:
        raise InputError(f"unknown estimator variants: {sorted(unknown)}")
    return SuiteTable(run_suite(order, n, B, seed, params, None, workers, config), coef)
