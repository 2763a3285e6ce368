"""Two-occasion simulation with unmeasured time-varying confounding.

Causal order: X0, U0, A0, Z0, W0, X1, U1, A1, Z1, W1, Y. Every structural
equation is linear-Gaussian except the two logistic treatment assignments.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .core import InputError, MsmmSpec, PanelDataset, TreatmentSupport

MISSPEC_KINDS = ("none", "WOR", "WIPW", "BOTH")


@dataclass(frozen=True)
class DgmParams:
    """Structural coefficients; defaults reproduce the published simulation design.

    Treatment assignment is ``P(A=a | .) = 1 / (1 + exp((-1)^(1-a) * eta))``, so
    ``P(A=1) = expit(-eta)``.
    """

    x0_mean: float = -0.35
    x0_sd: float = 0.5
    u0_mean: float = 0.35
    u0_sd: float = 0.5
    # A(0): eta = a0_int + a0_x0 X0 + a0_u0 U0
    a0_int: float = 0.5
    a0_x0: float = -0.2
    a0_u0: float = -0.7
    z0_int: float = 0.3
    z0_a0: float = 0.7
    z0_x0: float = 0.4
    z0_u0: float = 0.7
    z0_sd: float = 0.5
    w0_int: float = 0.2
    w0_x0: float = 0.7
    w0_u0: float = -0.75
    w0_sd: float = 0.5
    x1_int: float = 0.2
    x1_a0: float = 0.7
    x1_x0: float = 0.7
    x1_sd: float = 0.5
    u1_int: float = 0.2
    u1_a0: float = 0.7
    u1_u0: float = 0.7
    u1_sd: float = 0.5
    # A(1): eta = a1_int + a1_a0 A0 + a1_x (X0 + X1) + a1_u (U0 + U1)
    a1_int: float = 0.7
    a1_a0: float = -0.7
    a1_x: float = -0.35
    a1_u: float = -0.7
    # Z(1) loads on A0 + A1, X0 + X1, U0 + U1
    z1_int: float = 0.2
    z1_a: float = 0.7
    z1_x: float = 0.5
    z1_u: float = -0.75
    z1_sd: float = 0.5
    w1_int: float = 0.35
    w1_x: float = 0.45
    w1_u: float = -0.7
    w1_sd: float = 0.5
    y_int: float = -1.3
    y_a1: float = 1.0
    y_a0: float = 1.14
    y_x1: float = 0.5
    y_u1: float = -0.7
    y_x0: float = 0.2
    y_u0: float = -0.7
    y_sd: float = 0.5

    def __post_init__(self):
        for f in fields(self):
            val = getattr(self, f.name)
            if not np.isfinite(val):
                raise InputError(f"parameter {f.name} is not finite")
            if f.name.endswith("_sd") and not val > 0:
                raise InputError(f"noise SD {f.name} must be positive, got {val}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict | None) -> "DgmParams":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise InputError(f"unknown DGM parameters: {unknown}")
        return cls(**{k: float(v) for k, v in d.items()})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "DgmParams":
        return cls.from_dict(json.loads(text))

    def severed(self) -> "DgmParams":
        """Copy with U removed from both treatment and outcome equations (SRA holds)."""
        return replace(self, a0_u0=0.0, a1_u=0.0, y_u0=0.0, y_u1=0.0)


def _assign(rng: np.random.Generator, eta: np.ndarray) -> np.ndarray:
    p1 = 1.0 / (1.0 + np.exp(eta))
    return (rng.random(eta.shape[0]) < p1).astype(np.int8)


def _draw(params: DgmParams, n: int, seed: int, regime=None) -> dict[str, np.ndarray]:
    if n < 1:
        raise InputError("n must be at least 1")
    p = params
    rng = np.random.default_rng(seed)
    x0 = p.x0_mean + p.x0_sd * rng.standard_normal(n)
    u0 = p.u0_mean + p.u0_sd * rng.standard_normal(n)
    a0 = _assign(rng, p.a0_int + p.a0_x0 * x0 + p.a0_u0 * u0)
    if regime is not None:
        a0 = np.full(n, regime[0], dtype=np.int8)
    z0 = p.z0_int + p.z0_a0 * a0 + p.z0_x0 * x0 + p.z0_u0 * u0 + p.z0_sd * rng.standard_normal(n)
    w0 = p.w0_int + p.w0_x0 * x0 + p.w0_u0 * u0 + p.w0_sd * rng.standard_normal(n)
    x1 = p.x1_int + p.x1_a0 * a0 + p.x1_x0 * x0 + p.x1_sd * rng.standard_normal(n)
    u1 = p.u1_int + p.u1_a0 * a0 + p.u1_u0 * u0 + p.u1_sd * rng.standard_normal(n)
    a1 = _assign(rng, p.a1_int + p.a1_a0 * a0 + p.a1_x * (x0 + x1) + p.a1_u * (u0 + u1))
    if regime is not None:
        a1 = np.full(n, regime[1], dtype=np.int8)
    z1 = (p.z1_int + p.z1_a * (a0 + a1) + p.z1_x * (x0 + x1) + p.z1_u * (u0 + u1)
          + p.z1_sd * rng.standard_normal(n))
    w1 = p.w1_int + p.w1_x * (x0 + x1) + p.w1_u * (u0 + u1) + p.w1_sd * rng.standard_normal(n)
    y = (p.y_int + p.y_a1 * a1 + p.y_a0 * a0 + p.y_x1 * x1 + p.y_u1 * u1 + p.y_x0 * x0
         + p.y_u0 * u0 + p.y_sd * rng.standard_normal(n))
    return dict(y=y, a0=a0, a1=a1, z0=z0, z1=z1, w0=w0, w1=w1, x0=x0, x1=x1, u0=u0, u1=u1)


def simulate(params: DgmParams | None = None, n: int = 4000, seed: int = 0, *,
             return_latent: bool = False):
    """Draw ``n`` i.i.d. records; deterministic given ``seed``.

    The unmeasured confounders are not part of the dataset. With
    ``return_latent=True`` they are returned alongside it as ``{"u0", "u1"}``,
    for oracle checks only.
    """
    cols = _draw(params or DgmParams(), n, seed)
    latent = {"u0": cols.pop("u0"), "u1": cols.pop("u1")}
    data = PanelDataset(**cols, v=None, support=TreatmentSupport.full())
    return (data, latent) if return_latent else data


def counterfactual_mean(params: DgmParams | None, regime, n: int, seed: int) -> float:
    """Monte Carlo E[Y_regime] from a simulation with both treatments set to ``regime``.

    The random stream is consumed exactly as in :func:`simulate`, so calls with the
    same seed share common random numbers across regimes.
    """
    return float(_draw(params or DgmParams(), n, seed, regime=tuple(regime))["y"].mean())


def path_traced_mean(params: DgmParams | None, regime) -> float:
    """Exact E[Y_regime]: every non-treatment equation is linear, so means propagate."""
    p = params or DgmParams()
    a0, a1 = regime
    ex1 = p.x1_int + p.x1_a0 * a0 + p.x1_x0 * p.x0_mean
    eu1 = p.u1_int + p.u1_a0 * a0 + p.u1_u0 * p.u0_mean
    return (p.y_int + p.y_a1 * a1 + p.y_a0 * a0 + p.y_x1 * ex1 + p.y_u1 * eu1
            + p.y_x0 * p.x0_mean + p.y_u0 * p.u0_mean)


def true_beta(params: DgmParams | None = None, spec: MsmmSpec | None = None,
              method: str = "path", n: int = 10**6, seed: int = 0) -> np.ndarray:
    """MSMM coefficients projecting the true counterfactual means on ``spec``'s design.

    ``method="path"`` uses exact path tracing; ``method="mc"`` uses intervened
    simulation with ``n`` draws per regime.
    """
    spec = spec or MsmmSpec.cumulative()
    regimes = list(spec.support)
    if method == "path":
        means = np.array([path_traced_mean(params, r) for r in regimes])
    elif method == "mc":
        means = np.array([counterfactual_mean(params, r, n, seed) for r in regimes])
    else:
        raise InputError(f"unknown truth method {method!r}")
    design = np.vstack([spec.regime_design(r, np.zeros((1, 0))) for r in regimes])
    beta, *_ = np.linalg.lstsq(design, means, rcond=None)
    return beta


def apply_misspec(kind: str, data: PanelDataset) -> tuple[PanelDataset, PanelDataset]:
    """Views of ``data`` for the outcome-bridge and treatment-bridge fitters.

    ``WOR`` feeds sqrt(|W|) + 1 to the outcome bridges; ``WIPW`` feeds |Z| to the
    treatment bridges; ``BOTH`` does both. ``data`` itself is untouched.
    """
    if kind not in MISSPEC_KINDS:
        raise InputError(f"unknown misspecification {kind!r}; choose from {MISSPEC_KINDS}")
    h_view = q_view = data
    if kind in ("WOR", "BOTH"):
        h_view = data.replace(w0=np.sqrt(np.abs(data.w0)) + 1, w1=np.sqrt(np.abs(data.w1)) + 1)
    if kind in ("WIPW", "BOTH"):
        q_view = data.replace(z0=np.abs(data.z0), z1=np.abs(data.z1))
    return h_view, q_view
