"""Shared data model: panel datasets, treatment regimes, MSMM specifications, reports."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence

import numpy as np


class InputError(ValueError):
    """Invalid user input (bad columns, roles, support, configuration)."""


class NotIdentifiedError(RuntimeError):
    """A linear system that should pin down parameters is singular."""


class ConvergenceError(RuntimeError):
    """An iterative solver failed to reach its tolerance."""

    def __init__(self, message: str, norm: float = float("nan")):
        super().__init__(message)
        self.norm = norm


class TreatmentRegime(NamedTuple):
    a0: int
    a1: int

    def __str__(self) -> str:
        return f"({self.a0},{self.a1})"


@dataclass(frozen=True)
class TreatmentSupport:
    regimes: tuple[TreatmentRegime, ...]

    def __post_init__(self):
        regs = tuple(TreatmentRegime(int(r[0]), int(r[1])) for r in self.regimes)
        if not regs:
            raise InputError("treatment support must be nonempty")
        if len(set(regs)) != len(regs):
            raise InputError("treatment support contains duplicate regimes")
        for r in regs:
            if r.a0 not in (0, 1) or r.a1 not in (0, 1):
                raise InputError(f"regime {r} is not binary")
        object.__setattr__(self, "regimes", regs)

    @classmethod
    def full(cls) -> "TreatmentSupport":
        return cls(((0, 0), (0, 1), (1, 0), (1, 1)))

    @classmethod
    def monotone(cls) -> "TreatmentSupport":
        """Once treated, always treated: {(0,0), (0,1), (1,1)}."""
        return cls(((0, 0), (0, 1), (1, 1)))

    @classmethod
    def parse(cls, spec) -> "TreatmentSupport":
        if spec is None or spec == "full":
            return cls.full()
        if spec == "monotone":
            return cls.monotone()
        if isinstance(spec, str):
            raise InputError(f"unknown treatment support preset {spec!r}")
        return cls(tuple(tuple(r) for r in spec))

    def __contains__(self, regime) -> bool:
        return TreatmentRegime(int(regime[0]), int(regime[1])) in self.regimes

    def __iter__(self):
        return iter(self.regimes)

    def __len__(self) -> int:
        return len(self.regimes)

    def to_json(self) -> list[list[int]]:
        return [[r.a0, r.a1] for r in self.regimes]


def _as_matrix(x, n: int, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[0] != n:
        raise InputError(f"column {name!r} has length {arr.shape[0] if arr.ndim else 0}, expected {n}")
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Two-occasion observed data, one row per subject.

    Scalar roles (``y``, ``a0``, ``a1``) are 1-D arrays; proxy and covariate roles
    are 2-D ``(n, k)`` arrays, possibly with ``k = 0``. Arrays are read-only.
    """

    y: np.ndarray
    a0: np.ndarray
    a1: np.ndarray
    z0: np.ndarray
    z1: np.ndarray
    w0: np.ndarray
    w1: np.ndarray
    x0: np.ndarray
    x1: np.ndarray
    v: np.ndarray
    support: TreatmentSupport = field(default_factory=TreatmentSupport.full)

    ROLES = ("y", "a0", "a1", "z0", "z1", "w0", "w1", "x0", "x1", "v")

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        n = y.shape[0]
        if n < 1:
            raise InputError("empty dataset")
        cols = {"y": y}
        for role in ("a0", "a1"):
            raw = np.asarray(getattr(self, role), dtype=float).ravel()
            if raw.shape[0] != n:
                raise InputError(f"column {role!r} has length {raw.shape[0]}, expected {n}")
            if not np.all((raw == 0) | (raw == 1)):
                raise InputError(f"treatment column {role!r} is not binary")
            cols[role] = raw.astype(np.int8)
        for role in ("z0", "z1", "w0", "w1", "x0", "x1"):
            cols[role] = _as_matrix(getattr(self, role), n, role)
        v = self.v
        cols["v"] = np.zeros((n, 0)) if v is None else _as_matrix(v, n, "v")
        for role, arr in cols.items():
            if arr.dtype.kind == "f" and not np.all(np.isfinite(arr)):
                raise InputError(f"column {role!r} has missing or non-finite values")
            object.__setattr__(self, role, _frozen(arr))
        support = self.support
        if not isinstance(support, TreatmentSupport):
            support = TreatmentSupport.parse(support)
            object.__setattr__(self, "support", support)
        observed = set(zip(cols["a0"].tolist(), cols["a1"].tolist()))
        bad = sorted(r for r in observed if r not in support)
        if bad:
            raise InputError(f"regime outside support: {', '.join(str(TreatmentRegime(*r)) for r in bad)}")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def x0v(self) -> np.ndarray:
        """Baseline covariates with V appended; V enters the bridges as part of X(0)."""
        return np.hstack([self.x0, self.v]) if self.v.shape[1] else self.x0

    def columns(self) -> dict[str, np.ndarray]:
        return {role: getattr(self, role) for role in self.ROLES}

    def replace(self, **changes) -> "PanelDataset":
        support = changes.pop("support", self.support)
        cols = self.columns()
        cols.update(changes)
        return PanelDataset(**cols, support=support)

    def concat(self, other: "PanelDataset") -> "PanelDataset":
        cols = {r: np.concatenate([getattr(self, r), getattr(other, r)]) for r in self.ROLES}
        return PanelDataset(**cols, support=self.support)

    def take(self, index) -> "PanelDataset":
        return PanelDataset(**{r: getattr(self, r)[index] for r in self.ROLES}, support=self.support)

    def equals(self, other: "PanelDataset") -> bool:
        return self.support == other.support and all(
            np.array_equal(getattr(self, r), getattr(other, r)) for r in self.ROLES
        )


def dataset_from_columns(
    columns: Mapping[str, Sequence[float]],
    roles: Mapping[str, str | Sequence[str]],
    support: TreatmentSupport | None = None,
) -> PanelDataset:
    """Assemble a validated :class:`PanelDataset` from named columns.

    ``roles`` maps each role to a column name (scalar roles) or a list of column
    names (vector roles). Every role except ``v`` is required.
    """
    unknown = set(roles) - set(PanelDataset.ROLES)
    if unknown:
        raise InputError(f"unknown roles: {sorted(unknown)}")
    missing = [r for r in PanelDataset.ROLES if r != "v" and r not in roles]
    if missing:
        raise InputError(f"missing roles: {missing}")
    lengths = {len(np.asarray(c)) for c in columns.values()}
    if len(lengths) > 1:
        raise InputError(f"length mismatch among columns: {sorted(lengths)}")

    def pick(names):
        names = [names] if isinstance(names, str) else list(names)
        for name in names:
            if name not in columns:
                raise InputError(f"column {name!r} not found")
        if not names:
            return None
        return np.column_stack([np.asarray(columns[nm], dtype=float) for nm in names])

    built = {}
    for role in ("y", "a0", "a1"):
        names = roles[role]
        names = [names] if isinstance(names, str) else list(names)
        if len(names) != 1:
            raise InputError(f"role {role!r} takes exactly one column")
        built[role] = pick(names)[:, 0]
    n = built["y"].shape[0]
    for role in ("z0", "z1", "w0", "w1", "x0", "x1", "v"):
        mat = pick(roles.get(role, []))
        if mat is None:
            if role != "v":
                raise InputError(f"role {role!r} needs at least one column")
            mat = np.zeros((n, 0))
        built[role] = mat
    return PanelDataset(**built, support=support or TreatmentSupport.full())


DesignFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def _cumulative_design(a0, a1, v):
    return np.column_stack([np.ones_like(a0, dtype=float), a0 + a1])


def _saturated_monotone_design(a0, a1, v):
    return np.column_stack([np.ones_like(a0, dtype=float), (1 - a0) * a1, a0])


def _saturated_full_design(a0, a1, v):
    return np.column_stack([np.ones_like(a0, dtype=float), a0, a1, a0 * a1])


@dataclass(frozen=True, eq=False)
class MsmmSpec:
    """Identity-link marginal structural mean model ``g(a, v; beta) = beta . design(a, v)``.

    ``design`` is vectorised: it takes arrays ``a0``, ``a1`` of length n and an
    ``(n, kv)`` matrix ``v`` and returns an ``(n, p)`` matrix.
    """

    kind: str
    p: int
    design: DesignFn
    support: TreatmentSupport
    names: tuple[str, ...] = ()

    @classmethod
    def cumulative(cls, support: TreatmentSupport | None = None) -> "MsmmSpec":
        return cls("cumulative", 2, _cumulative_design, support or TreatmentSupport.full(),
                   ("beta0", "beta1"))

    @classmethod
    def saturated(cls, support: TreatmentSupport | None = None) -> "MsmmSpec":
        support = support or TreatmentSupport.monotone()
        if support == TreatmentSupport.monotone():
            return cls("saturated", 3, _saturated_monotone_design, support, ("beta0", "beta1", "beta2"))
        if support == TreatmentSupport.full():
            return cls("saturated", 4, _saturated_full_design, support,
                       ("beta0", "beta1", "beta2", "beta3"))
        raise InputError("saturated MSMM is defined for the full or monotone support only")

    @classmethod
    def custom(cls, design: DesignFn, p: int, support: TreatmentSupport) -> "MsmmSpec":
        return cls("custom", p, design, support, tuple(f"beta{j}" for j in range(p)))

    @classmethod
    def from_name(cls, kind: str, support: TreatmentSupport | None = None) -> "MsmmSpec":
        if kind == "cumulative":
            return cls.cumulative(support)
        if kind == "saturated":
            return cls.saturated(support)
        raise InputError(f"unknown MSMM kind {kind!r}")

    def design_matrix(self, a0, a1, v) -> np.ndarray:
        a0 = np.asarray(a0, dtype=float)
        a1 = np.asarray(a1, dtype=float)
        out = np.asarray(self.design(a0, a1, v), dtype=float)
        return out.reshape(a0.shape[0], self.p)

    def regime_design(self, regime, v: np.ndarray) -> np.ndarray:
        """Design rows for every subject under a fixed regime; ``v`` is ``(n, kv)``."""
        if regime not in self.support:
            raise InputError(f"regime outside support: {TreatmentRegime(*regime)}")
        n = v.shape[0]
        return self.design_matrix(np.full(n, regime[0]), np.full(n, regime[1]), v)


def msmm_design(spec: MsmmSpec, regime, v: Iterable[float] = ()) -> np.ndarray:
    """Single design vector for ``regime`` and baseline covariates ``v``."""
    v = np.asarray(list(v), dtype=float).reshape(1, -1)
    return spec.regime_design(regime, v)[0]


@dataclass(frozen=True)
class EstimateReport:
    estimator: str
    beta_hat: np.ndarray
    cov: np.ndarray
    names: tuple[str, ...] = ()
    diagnostics: dict = field(default_factory=dict)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    @property
    def ci95(self) -> np.ndarray:
        se = self.se
        return np.column_stack([self.beta_hat - 1.96 * se, self.beta_hat + 1.96 * se])

    @property
    def converged(self) -> bool:
        return all(self.diagnostics.get("converged", {}).values())

    def to_dict(self) -> dict:
        names = self.names or tuple(f"beta{j}" for j in range(len(self.beta_hat)))
        return {
            "estimator": self.estimator,
            "names": list(names),
            "beta_hat": self.beta_hat.tolist(),
            "se": self.se.tolist(),
            "ci95": self.ci95.tolist(),
            "cov": self.cov.tolist(),
            "diagnostics": self.diagnostics,
        }

    def summary(self) -> str:
        names = self.names or tuple(f"beta{j}" for j in range(len(self.beta_hat)))
        parts = [f"{nm}={b:.4f} (se {s:.4f})" for nm, b, s in zip(names, self.beta_hat, self.se)]
        return f"{self.estimator}: " + ", ".join(parts)
