"""Exact identification checks in finite-state worlds.

A world is a product of conditional probability tables on the grid of
``AXES``. Each table is stored at full rank (10 axes) with size 1 on every axis
that is not a parent, so the proximal independences hold by construction: a
forbidden parent simply has no axis. Violations are an explicit opt-in through
``DiscreteWorld.violations``.

With finite states every bridge equation is a linear system per stratum, solved
here to machine precision and checked by residuals.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .core import InputError, NotIdentifiedError

AXES = ("x0", "u0", "a0", "z0", "w0", "x1", "u1", "a1", "z1", "w1")
AX = {a: i for i, a in enumerate(AXES)}
# Parents permitted by the proximal independences; the outcome table is keyed "y".
PARENTS = {
    "x0": (),
    "u0": ("x0",),
    "a0": ("x0", "u0"),
    "z0": ("x0", "u0", "a0"),
    "w0": ("x0", "u0"),
    "x1": ("x0", "u0", "a0"),
    "u1": ("x0", "u0", "a0", "x1"),
    "a1": ("x0", "u0", "a0", "x1", "u1"),
    "z1": ("x0", "u0", "a0", "z0", "x1", "u1", "a1"),
    "w1": ("x0", "u0", "a0", "x1", "u1", "w0"),
    "y": ("x0", "u0", "a0", "x1", "u1", "a1"),
}
REGIMES = ((0, 0), (0, 1), (1, 0), (1, 1))
RESIDUAL_TOL = 1e-10
RANK_TOL = 1e-9


def _dim(dims: dict, axis: str) -> int:
    return 2 if axis[0] == "a" else dims[axis[0]]


def _parents_of(arr: np.ndarray, own: str | None) -> tuple[str, ...]:
    return tuple(a for a in AXES if a != own and arr.shape[AX[a]] > 1)


@dataclass(frozen=True, eq=False)
class DiscreteWorld:
    """Conditional tables in causal order plus the outcome mean table.

    ``dims`` maps ``"x"``, ``"u"``, ``"z"``, ``"w"`` to category counts (shared
    by both occasions); treatments are binary. ``factors[v]`` is P(v | parents)
    broadcast on the full grid; ``y_mean`` is E[Y | parents]. ``violations``
    lists ``(child, parent)`` edges allowed beyond ``PARENTS``.
    """

    dims: dict
    factors: dict
    y_mean: np.ndarray
    violations: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        dims = {k: int(self.dims.get(k, 1)) for k in ("x", "u", "z", "w")}
        if min(dims.values()) < 1:
            raise InputError("category counts must be at least 1")
        object.__setattr__(self, "dims", dims)
        viol = frozenset(tuple(v) for v in self.violations)
        object.__setattr__(self, "violations", viol)
        if set(self.factors) != set(AXES):
            raise InputError(f"world needs one table per variable {AXES}")
        facs = {}
        for var in AXES:
            arr = np.array(self.factors[var], dtype=float)
            facs[var] = self._check_table(var, arr, own=var)
            arr.flags.writeable = False
        object.__setattr__(self, "factors", facs)
        y = self._check_table("y", np.array(self.y_mean, dtype=float), own=None)
        y.flags.writeable = False
        object.__setattr__(self, "y_mean", y)
        self._check_acyclic()

    def _check_table(self, var: str, arr: np.ndarray, own: str | None) -> np.ndarray:
        if arr.ndim != len(AXES):
            raise InputError(f"table {var} must have {len(AXES)} axes, got {arr.ndim}")
        if not np.all(np.isfinite(arr)):
            raise InputError(f"table {var} has non-finite entries")
        allowed = set(PARENTS[var]) | {p for c, p in self.violations if c == var}
        for a in AXES:
            size = arr.shape[AX[a]]
            full = _dim(self.dims, a)
            if a == own:
                if size != full:
                    raise InputError(f"table {var} must span all {full} categories of {var}")
            elif size not in (1, full):
                raise InputError(f"table {var} axis {a} has size {size}, expected 1 or {full}")
            elif size > 1 and a not in allowed:
                raise InputError(f"table {var} depends on {a}, which the proximal independences forbid")
        if own is not None:
            if np.any(arr < 0) or not np.allclose(arr.sum(axis=AX[own]), 1.0, atol=1e-12, rtol=0):
                raise InputError(f"table {var} is not a conditional pmf")
            if own[0] == "a" and not np.all((arr > 0) & (arr < 1)):
                raise InputError(f"positivity fails for {var}")
        return arr

    def _check_acyclic(self):
        parents = {v: set(_parents_of(self.factors[v], v)) for v in AXES}
        done: set[str] = set()
        while len(done) < len(AXES):
            ready = [v for v in AXES if v not in done and parents[v] <= done]
            if not ready:
                raise InputError("world tables form a cycle")
            done.update(ready)

    def joint(self, regime=None) -> np.ndarray:
        """Joint pmf on the full grid; with ``regime`` the treatment tables are point masses."""
        out = np.ones([_dim(self.dims, a) for a in AXES])
        for var in AXES:
            fac = self.factors[var]
            if regime is not None and var in ("a0", "a1"):
                fac = np.zeros([_dim(self.dims, a) if a == var else 1 for a in AXES])
                fac[(slice(None),) * AX[var] + (regime[var == "a1"],)] = 1.0
            out = out * fac
        return out

    def scaled(self, c: float) -> "DiscreteWorld":
        return DiscreteWorld(self.dims, self.factors, c * self.y_mean, self.violations)

    def to_dict(self) -> dict:
        return {"dims": self.dims,
                "factors": {v: {"shape": list(t.shape), "values": t.ravel().tolist()}
                            for v, t in self.factors.items()},
                "y_mean": {"shape": list(self.y_mean.shape), "values": self.y_mean.ravel().tolist()},
                "violations": sorted(list(v) for v in self.violations)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteWorld":
        unknown = set(d) - {"dims", "factors", "y_mean", "violations"}
        if unknown:
            raise InputError(f"unknown world keys: {sorted(unknown)}")

        def arr(spec):
            return np.array(spec["values"], dtype=float).reshape(spec["shape"])

        try:
            return cls(d["dims"], {v: arr(t) for v, t in d["factors"].items()}, arr(d["y_mean"]),
                       frozenset(tuple(v) for v in d.get("violations", ())))
        except (KeyError, ValueError, TypeError) as exc:
            if isinstance(exc, InputError):
                raise
            raise InputError(f"malformed world description: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "DiscreteWorld":
        return cls.from_dict(json.loads(text))


# World builders.
def _table(rng, var: str, parents, dims: dict, sampler) -> np.ndarray:
    axes = [a for a in AXES if a in parents or a == var]
    sizes = [_dim(dims, a) for a in axes if a != var]
    rows = sampler(rng, int(np.prod(sizes)), _dim(dims, var))
    arr = np.moveaxis(rows.reshape(*sizes, -1), -1, axes.index(var))
    return arr.reshape([_dim(dims, a) if a in axes else 1 for a in AXES])


def _dirichlet(rng, m, k):
    return rng.dirichlet(np.ones(k), size=m)


def _treatment(rng, m, k):
    p = rng.uniform(0.1, 0.9, size=m)
    return np.column_stack([1 - p, p])


def _outcome(rng, parents, dims, scale=1.0) -> np.ndarray:
    shape = [_dim(dims, a) if a in parents else 1 for a in AXES]
    return scale * rng.standard_normal(shape)


def random_world(seed: int, d_u: int = 2, d_z: int = 2, d_w: int = 2, d_x: int = 1,
                 z_effect: float = 0.0, margin: float = 1e-4, null_effect: bool = False,
                 max_tries: int = 1000) -> DiscreteWorld:
    """Random world obeying the proximal independences.

    Tables are redrawn until every bridge system and completeness matrix has
    smallest singular value at least ``margin`` (skipped when the cardinalities
    make completeness impossible). ``z_effect`` adds ``z_effect * Z(1)`` to the
    outcome, breaking Z-Y independence. ``null_effect`` makes Y depend on
    baseline variables only.
    """
    dims = {"x": d_x, "u": d_u, "z": d_z, "w": d_w}
    rng = np.random.default_rng(seed)
    can_be_complete = min(d_z, d_w) >= d_u
    for _ in range(max_tries):
        factors = {v: _table(rng, v, PARENTS[v], dims, _treatment if v[0] == "a" else _dirichlet)
                   for v in AXES}
        y_parents = ("x0", "u0") if null_effect else PARENTS["y"]
        y = _outcome(rng, y_parents, dims)
        violations = frozenset()
        if z_effect:
            levels = np.arange(d_z, dtype=float).reshape([d_z if a == "z1" else 1 for a in AXES])
            y = y + z_effect * levels
            violations = frozenset({("y", "z1")})
        world = DiscreteWorld(dims, factors, y, violations)
        if not can_be_complete or _min_singular(world) >= margin:
            return world
    raise RuntimeError(f"no world with singular-value margin {margin} after {max_tries} draws")


def sra_world(seed: int, d_w: int = 2, d_x: int = 1) -> DiscreteWorld:
    """World with no unmeasured confounding: U has one category, W is a measured
    confounder of treatment and outcome, and each Z is an exact copy of W."""
    dims = {"x": d_x, "u": 1, "z": d_w, "w": d_w}
    rng = np.random.default_rng(seed)
    par = {"x0": (), "u0": (), "w0": ("x0",), "a0": ("x0", "w0"), "x1": ("x0", "a0"),
           "u1": (), "w1": ("x0", "a0", "w0", "x1"), "a1": ("x0", "a0", "w0", "x1", "w1")}
    factors = {v: _table(rng, v, p, dims, _treatment if v[0] == "a" else _dirichlet)
               for v, p in par.items()}
    eye = np.eye(d_w)
    factors["z0"] = eye.reshape([d_w if a in ("z0", "w0") else 1 for a in AXES])
    factors["z1"] = eye.reshape([d_w if a in ("z1", "w1") else 1 for a in AXES])
    y = _outcome(rng, ("x0", "a0", "w0", "x1", "a1", "w1"), dims)
    violations = frozenset({("a0", "w0"), ("a1", "w0"), ("a1", "w1"), ("z0", "w0"), ("z1", "w1"),
                            ("y", "w0"), ("y", "w1")})
    return DiscreteWorld(dims, factors, y, violations)


# Marginal tables.
def _marg(arr: np.ndarray, keep) -> np.ndarray:
    """Sum ``arr`` over every axis not in ``keep`` and order the rest as ``keep``."""
    arr = np.broadcast_to(arr, np.broadcast_shapes(arr.shape, (1,) * len(AXES)))
    drop = tuple(i for i, a in enumerate(AXES) if a not in keep)
    s = arr.sum(axis=drop)
    remaining = [a for a in AXES if a in keep]
    return np.transpose(s, [remaining.index(k) for k in keep])


def _cond(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def _strata(*sizes):
    return itertools.product(*(range(s) for s in sizes))


@dataclass(frozen=True)
class CompletenessReport:
    complete: bool
    entries: tuple  # (matrix name, stratum, rank, required rank)

    def failures(self) -> list:
        return [e for e in self.entries if e[2] < e[3]]


def _completeness_matrices(world: DiscreteWorld):
    """Yield (name, stratum, P(proxy | U, stratum) matrix, required rank)."""
    d = world.dims
    du, dz, dw, dx = d["u"], d["z"], d["w"], d["x"]
    p = world.joint()
    z0 = _marg(p, ("a0", "x0", "u0", "z0"))
    w0 = _marg(p, ("x0", "u0", "w0"))
    zb = _marg(p, ("a0", "a1", "x0", "x1", "u0", "u1", "z0", "z1"))
    wb = _marg(p, ("a0", "x0", "x1", "u0", "u1", "w0", "w1"))
    for a0, x0 in _strata(2, dx):
        yield "P(Z0|U0)", (a0, x0), z0[a0, x0], du
    for (x0,) in _strata(dx):
        yield "P(W0|U0)", (x0,), w0[x0], du
    for a0, a1, x0, x1 in _strata(2, 2, dx, dx):
        yield "P(Z|U)", (a0, a1, x0, x1), zb[a0, a1, x0, x1].reshape(du * du, dz * dz), du * du
    for a0, x0, x1 in _strata(2, dx, dx):
        yield "P(W|U)", (a0, x0, x1), wb[a0, x0, x1].reshape(du * du, dw * dw), du * du


def completeness_rank(world: DiscreteWorld) -> CompletenessReport:
    """Rank of each proxy-given-confounder matrix; complete iff every rank reaches
    the number of confounder categories."""
    entries = []
    for name, stratum, joint_rows, need in _completeness_matrices(world):
        mass = joint_rows.sum(axis=1, keepdims=True)
        mat = _cond(joint_rows, mass)[mass[:, 0] > 0]
        sv = np.linalg.svd(mat, compute_uv=False) if mat.size else np.zeros(0)
        rank = int(np.sum(sv > RANK_TOL * max(1.0, sv[0] if sv.size else 0.0)))
        entries.append((name, stratum, rank, need))
    return CompletenessReport(all(e[2] >= e[3] for e in entries), tuple(entries))


@dataclass(frozen=True, eq=False)
class ExactBridges:
    """Bridge tables. Axis orders: h1 (a0, a1, x0, x1, w0, w1); h0 (a0, a1, x0, w0);
    q0 (a0, x0, z0); q1 (a0, a1, x0, x1, z0, z1)."""

    h1: np.ndarray
    h0: np.ndarray
    q0: np.ndarray
    q1: np.ndarray
    residuals: dict


def _solve(lhs: np.ndarray, rhs: np.ndarray, what: str) -> tuple[np.ndarray, float]:
    rows = np.any(lhs != 0, axis=1) | (rhs != 0)
    lhs, rhs = lhs[rows], rhs[rows]
    if lhs.shape[0] == lhs.shape[1] and np.linalg.matrix_rank(lhs) == lhs.shape[1]:
        sol = np.linalg.solve(lhs, rhs)
    else:
        sol = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    resid = float(np.max(np.abs(lhs @ sol - rhs))) if rhs.size else 0.0
    if resid > RESIDUAL_TOL * max(1.0, float(np.max(np.abs(rhs), initial=0.0))):
        raise NotIdentifiedError(f"bridge equations inconsistent ({what}: residual {resid:.3g})")
    return sol, resid


def _bridge_systems(world: DiscreteWorld):
    """Solve the four bridge systems; returns tables, residuals and the system matrices."""
    d = world.dims
    dz, dw, dx, du = d["z"], d["w"], d["x"], d["u"]
    p = world.joint()
    py = p * world.y_mean
    mats = []  # (system matrix, rank implied by the confounder cardinality)

    # h1: E[Y | a, z, x] = sum_w h1(w, a, x) f(w | a, z, x), per (a, x).
    keep_zw = ("a0", "a1", "x0", "x1", "z0", "z1", "w0", "w1")
    keep_z = keep_zw[:6]
    p_zw = _marg(p, keep_zw)
    p_z = _marg(p, keep_z)
    ey_z = _cond(_marg(py, keep_z), p_z)
    f_w_z = _cond(p_zw, p_z[..., None, None])
    h1 = np.zeros((2, 2, dx, dx, dw, dw))
    r_h1 = 0.0
    for s in _strata(2, 2, dx, dx):
        lhs = f_w_z[s].reshape(dz * dz, dw * dw)
        sol, r = _solve(lhs, ey_z[s].reshape(-1), "h1")
        h1[s] = sol.reshape(dw, dw)
        r_h1 = max(r_h1, r)
        mats.append((lhs, du * du))

    # h0: E[H1(a) | a0, z0, x0] = sum_w0 h0(w0, a, x0) f(w0 | a0, z0, x0), per (a, x0).
    p_z0 = _marg(p, ("a0", "x0", "z0"))
    f_w0_z0 = _cond(_marg(p, ("a0", "x0", "z0", "w0")), p_z0[..., None])
    f_xw_z0 = _cond(_marg(p, ("a0", "x0", "z0", "x1", "w0", "w1")), p_z0[..., None, None, None])
    h0 = np.zeros((2, 2, dx, dw))
    r_h0 = 0.0
    for a0, a1, x0 in _strata(2, 2, dx):
        # h1 evaluated at the fixed regime, averaged over (X1, W0, W1) given (a0, z0, x0).
        h1_fixed = h1[a0, a1, x0]  # (x1, w0, w1)
        rhs = np.einsum("zxvw,xvw->z", f_xw_z0[a0, x0], h1_fixed)
        lhs = f_w0_z0[a0, x0]
        sol, r = _solve(lhs, rhs, "h0")
        h0[a0, a1, x0] = sol
        r_h0 = max(r_h0, r)
        mats.append((lhs, du))

    # q0: 1 / f(a0 | w0, x0) = sum_z0 q0(z0, a0, x0) f(z0 | a0, w0, x0), per (a0, x0).
    p_w0 = _marg(p, ("x0", "w0"))
    p_aw0 = _marg(p, ("a0", "x0", "w0"))
    f_a0 = _cond(p_aw0, p_w0[None])
    f_z0_w0 = _cond(_marg(p, ("a0", "x0", "w0", "z0")), p_aw0[..., None])
    q0 = np.zeros((2, dx, dz))
    r_q0 = 0.0
    for a0, x0 in _strata(2, dx):
        lhs = f_z0_w0[a0, x0]
        sol, r = _solve(lhs, _cond(np.ones(dw), f_a0[a0, x0]), "q0")
        q0[a0, x0] = sol
        r_q0 = max(r_q0, r)
        mats.append((lhs, du))

    # q1: E[Q0(a0) | a0, w, x] / f(a1 | a0, w, x) = sum_z q1(z, a, x) f(z | a, w, x), per (a, x).
    keep_w = ("a0", "x0", "x1", "w0", "w1")
    p_w = _marg(p, keep_w)
    p_aw = _marg(p, ("a0", "a1", "x0", "x1", "w0", "w1"))
    f_a1 = _cond(p_aw, p_w[:, None])
    f_z0_w = _cond(_marg(p, keep_w + ("z0",)), p_w[..., None])
    f_z_aw = _cond(_marg(p, ("a0", "a1", "x0", "x1", "w0", "w1", "z0", "z1")), p_aw[..., None, None])
    q1 = np.zeros((2, 2, dx, dx, dz, dz))
    r_q1 = 0.0
    for a0, a1, x0, x1 in _strata(2, 2, dx, dx):
        eq0 = np.einsum("vwz,z->vw", f_z0_w[a0, x0, x1], q0[a0, x0])
        rhs = _cond(eq0, f_a1[a0, a1, x0, x1]).reshape(-1)
        lhs = f_z_aw[a0, a1, x0, x1].reshape(dw * dw, dz * dz)
        sol, r = _solve(lhs, rhs, "q1")
        q1[a0, a1, x0, x1] = sol.reshape(dz, dz)
        r_q1 = max(r_q1, r)
        mats.append((lhs, du * du))

    res = {"h1": r_h1, "h0": r_h0, "q0": r_q0, "q1": r_q1}
    return ExactBridges(h1, h0, q0, q1, res), mats


def _min_singular(world: DiscreteWorld) -> float:
    """Smallest singular value at the rank each matrix must reach; higher ones are
    zero by construction when proxies have more categories than U."""
    out = np.inf
    for *_, joint_rows, need in _completeness_matrices(world):
        mass = joint_rows.sum(axis=1, keepdims=True)
        out = min(out, np.linalg.svd(_cond(joint_rows, mass), compute_uv=False)[need - 1])
    try:
        _, mats = _bridge_systems(world)
    except NotIdentifiedError:
        return 0.0
    for m, need in mats:
        out = min(out, np.linalg.svd(m, compute_uv=False)[need - 1])
    return float(out)


def solve_bridges_exact(world: DiscreteWorld) -> ExactBridges:
    """Exact (h1, h0, q0, q1) tables; raises unless the world is complete."""
    comp = completeness_rank(world)
    if not comp.complete:
        name, stratum, rank, need = comp.failures()[0]
        raise NotIdentifiedError(f"world is not complete: {name} at stratum {stratum} has rank "
                                 f"{rank} < {need}")
    return _bridge_systems(world)[0]


@dataclass(frozen=True)
class IdentificationReport:
    """Counterfactual means per regime: truth by intervention, proximal g-formula, proximal IPW."""

    regimes: tuple
    truth: np.ndarray
    gformula: np.ndarray
    ipw: np.ndarray
    residuals: dict

    @property
    def gformula_gap(self) -> float:
        return float(np.max(np.abs(self.gformula - self.truth)))

    @property
    def ipw_gap(self) -> float:
        return float(np.max(np.abs(self.ipw - self.truth)))

    @property
    def max_discrepancy(self) -> float:
        return max(self.gformula_gap, self.ipw_gap, float(np.max(np.abs(self.gformula - self.ipw))))

    def to_dict(self) -> dict:
        return {"regimes": [list(r) for r in self.regimes], "truth": self.truth.tolist(),
                "gformula": self.gformula.tolist(), "ipw": self.ipw.tolist(),
                "bridge_residuals": self.residuals, "max_discrepancy": self.max_discrepancy}

    def text(self) -> str:
        lines = [f"{'regime':<8}{'truth':>22}{'g-formula':>22}{'IPW':>22}"]
        for r, t, g, w in zip(self.regimes, self.truth, self.gformula, self.ipw):
            lines.append(f"{str(tuple(r)):<8}{t:>22.15g}{g:>22.15g}{w:>22.15g}")
        lines.append(f"max discrepancy: {self.max_discrepancy:.3e}")
        return "\n".join(lines) + "\n"


def verify_identification(world: DiscreteWorld, bridges: ExactBridges | None = None) -> IdentificationReport:
    bridges = bridges or solve_bridges_exact(world)
    p = world.joint()
    p_w0 = _marg(p, ("x0", "w0"))
    truth, gform, ipw = [], [], []
    for a0, a1 in REGIMES:
        truth.append(float(np.sum(world.joint((a0, a1)) * world.y_mean)))
        gform.append(float(np.sum(bridges.h0[a0, a1] * p_w0)))
        # E[Y 1(A = a) q1(Z, a, X)], with q1 laid out on the grid.
        q1 = bridges.q1[a0, a1].transpose(0, 2, 1, 3)  # grid order (x0, z0, x1, z1)
        shape = [q1.shape[("x0", "z0", "x1", "z1").index(ax)] if ax in ("x0", "z0", "x1", "z1") else 1
                 for ax in AXES]
        sel = (p * world.y_mean).take([a0], axis=AX["a0"]).take([a1], axis=AX["a1"])
        ipw.append(float(np.sum(sel * q1.reshape(shape))))
    return IdentificationReport(REGIMES, np.array(truth), np.array(gform), np.array(ipw),
                                dict(bridges.residuals))


def sra_reference(world: DiscreteWorld) -> tuple[np.ndarray, np.ndarray]:
    """Iterated regression h0 and inverse propensity product q1 computed directly,
    for a world whose proxies are measured confounders (Z = W).

    Returns ``(h0, q1)`` laid out like ``ExactBridges`` (with z indexing w).
    """
    d = world.dims
    dw, dx = d["w"], d["x"]
    p = world.joint()
    py = p * world.y_mean
    keep = ("a0", "a1", "x0", "x1", "w0", "w1")
    p_l = _marg(p, keep)
    ey = _cond(_marg(py, keep), p_l)
    p_l0 = _marg(p, ("a0", "x0", "w0"))
    f_next = _cond(_marg(p, ("a0", "x0", "w0", "x1", "w1")), p_l0[..., None, None])
    h0 = np.einsum("bxvyw,baxyvw->baxv", f_next, ey)
    f_a0 = _cond(p_l0, _marg(p, ("x0", "w0"))[None])
    p_hist = _marg(p, ("a0", "x0", "x1", "w0", "w1"))
    f_a1 = _cond(p_l, p_hist[:, None])
    q1 = np.zeros((2, 2, dx, dx, dw, dw))
    for a0, a1, x0, x1 in _strata(2, 2, dx, dx):
        q1[a0, a1, x0, x1] = 1.0 / (f_a0[a0, x0][:, None] * f_a1[a0, a1, x0, x1])
    return h0, q1
