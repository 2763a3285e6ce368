"""Confounding bridge functions fitted by the method of moments.

Outcome bridges are linear working models fitted sequentially (h1, then h0) by
just-identified linear GMM. Treatment bridges use the exponential-link models

    q0 = 1 + exp(s0 * t0 . (1, A0, Z0, X0))
    q1 = q0 * (1 + exp(s1 * t1 . (1, A0, A1, Z0, Z1, X0, X1)))

with s_t = (-1)^(1 - A_t), fitted by damped Newton (q0, then q1). ``X0``
includes any baseline MSMM covariates V.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ConvergenceError, PanelDataset
from .solvers import SolverConfig, damped_newton, solve_linear_moments

ETA_LIMIT = 30.0


def _ones(data: PanelDataset) -> np.ndarray:
    return np.ones((data.n, 1))


def _col(a, n: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(a, dtype=float), (n,)).reshape(n, 1)


# Outcome bridge design: intercept, treatment history, W history, X history.
def h1_features(data: PanelDataset, a0=None, a1=None) -> np.ndarray:
    n = data.n
    a0 = data.a0 if a0 is None else a0
    a1 = data.a1 if a1 is None else a1
    return np.hstack([_ones(data), _col(a0, n), _col(a1, n), data.w0, data.w1, data.x0v, data.x1])


def h1_instruments(data: PanelDataset) -> np.ndarray:
    return np.hstack([_ones(data), _col(data.a0, data.n), _col(data.a1, data.n),
                      data.z0, data.z1, data.x0v, data.x1])


def h0_features(data: PanelDataset, a0=None, a1=None) -> np.ndarray:
    n = data.n
    a0 = data.a0 if a0 is None else a0
    a1 = data.a1 if a1 is None else a1
    return np.hstack([_ones(data), _col(a0, n), _col(a1, n), data.w0, data.x0v])


def h0_instruments(data: PanelDataset) -> np.ndarray:
    return np.hstack([_ones(data), _col(data.a0, data.n), data.z0, data.x0v])


@dataclass(frozen=True, eq=False)
class HBridgeFit:
    """Fitted outcome bridges together with the data view they were fitted on."""

    b1: np.ndarray
    b0: np.ndarray
    norm1: float
    norm0: float
    data: PanelDataset = field(repr=False)
    h0_lhs: np.ndarray = field(repr=False)
    terms: "HTerms" = field(repr=False, default=None)

    converged = True

    def __post_init__(self):
        if self.terms is None:
            object.__setattr__(self, "terms", HTerms(self.data))

    def h1(self, regime) -> np.ndarray:
        """h1(W(0), W(1), regime, X(0), X(1)) for every record."""
        return self.terms.h1_at(regime) @ self.b1

    def h0(self, regime) -> np.ndarray:
        return self.terms.h0_at(regime) @ self.b0


class HTerms:
    """Design matrices of the outcome bridges on one dataset, built once."""

    def __init__(self, data: PanelDataset):
        self.data = data
        self.r1 = h1_features(data)
        self.m1 = h1_instruments(data)
        self.m0 = h0_instruments(data)
        # (A0, a1) designs for the h0 equations, indexed by a1.
        self.r1_a1 = [h1_features(data, data.a0, a1) for a1 in (0, 1)]
        self.r0_a1 = [h0_features(data, data.a0, a1) for a1 in (0, 1)]
        self._h1_at: dict = {}
        self._h0_at: dict = {}

    def h1_at(self, regime) -> np.ndarray:
        key = (int(regime[0]), int(regime[1]))
        if key not in self._h1_at:
            self._h1_at[key] = h1_features(self.data, *key)
        return self._h1_at[key]

    def h0_at(self, regime) -> np.ndarray:
        key = (int(regime[0]), int(regime[1]))
        if key not in self._h0_at:
            self._h0_at[key] = h0_features(self.data, *key)
        return self._h0_at[key]

    def h1_moment(self, b1: np.ndarray) -> np.ndarray:
        return self.m1 * (self.data.y - self.r1 @ b1)[:, None]

    def h0_moment(self, b0: np.ndarray, b1: np.ndarray, lhs: np.ndarray) -> np.ndarray:
        parts = [self.m0 * (self.r1_a1[a1] @ b1 - self.r0_a1[a1] @ b0)[:, None] for a1 in (0, 1)]
        return np.hstack(parts) @ lhs


def h1_moment(b1: np.ndarray, data: PanelDataset) -> np.ndarray:
    """Per-record ``(Y - h1) M1``."""
    return HTerms(data).h1_moment(b1)


def h0_moment(b0: np.ndarray, b1: np.ndarray, data: PanelDataset, lhs: np.ndarray) -> np.ndarray:
    """Per-record h0 moment, projected to ``dim(b0)`` with the stacked cross-moment matrix.

    The raw moment stacks ``(h1(A0, a1) - h0(A0, a1)) M0`` over ``a1 in {0, 1}``;
    ``lhs.T`` maps it to the normal equations, which share the solution.
    """
    return HTerms(data).h0_moment(b0, b1, lhs)


def fit_h1(data: PanelDataset, terms: HTerms | None = None) -> tuple[np.ndarray, float]:
    """Solve ``Pn[(Y - h1(b1)) M1] = 0``; returns ``(b1, max |moment|)``."""
    t = terms or HTerms(data)
    lhs = t.m1.T @ t.r1 / data.n
    rhs = t.m1.T @ data.y / data.n
    b1 = solve_linear_moments(lhs, rhs, "h1")
    return b1, float(np.max(np.abs(t.h1_moment(b1).mean(axis=0))))


def fit_h0(data: PanelDataset, b1: np.ndarray,
           terms: HTerms | None = None) -> tuple[np.ndarray, float, np.ndarray]:
    """Solve ``Pn[(h1(a1, A0) - h0(a1, A0)) M0] = 0`` for both ``a1``.

    Returns ``(b0, max |moment|, stacked cross-moment matrix)``.
    """
    t = terms or HTerms(data)
    lhs = np.vstack([t.m0.T @ t.r0_a1[a1] / data.n for a1 in (0, 1)])
    rhs = np.concatenate([t.m0.T @ (t.r1_a1[a1] @ b1) / data.n for a1 in (0, 1)])
    b0 = solve_linear_moments(lhs, rhs, "h0")
    return b0, float(np.max(np.abs(lhs @ b0 - rhs))), lhs


def fit_h(data: PanelDataset) -> HBridgeFit:
    terms = HTerms(data)
    b1, n1 = fit_h1(data, terms)
    b0, n0, lhs = fit_h0(data, b1, terms)
    return HBridgeFit(b1, b0, n1, n0, data, lhs, terms)


# Treatment bridges.
def q0_features(data: PanelDataset) -> np.ndarray:
    return np.hstack([_ones(data), _col(data.a0, data.n), data.z0, data.x0v])


def q0_instruments(data: PanelDataset) -> np.ndarray:
    """Unsigned N0 = (1, A0, W0, X0)."""
    return np.hstack([_ones(data), _col(data.a0, data.n), data.w0, data.x0v])


def q1_features(data: PanelDataset) -> np.ndarray:
    return np.hstack([_ones(data), _col(data.a0, data.n), _col(data.a1, data.n),
                      data.z0, data.z1, data.x0v, data.x1])


def q1_instruments(data: PanelDataset) -> np.ndarray:
    """Unsigned N1 = (1, A0, A1, W0, W1, X0, X1)."""
    return np.hstack([_ones(data), _col(data.a0, data.n), _col(data.a1, data.n),
                      data.w0, data.w1, data.x0v, data.x1])


def _sign(a: np.ndarray) -> np.ndarray:
    return 2.0 * a - 1.0


class QTerms:
    """Features and signed instruments of the treatment bridges on one dataset."""

    def __init__(self, data: PanelDataset):
        self.data = data
        self.s0 = _sign(data.a0)
        self.s1 = _sign(data.a1)
        self.f0 = q0_features(data)
        self.f1 = q1_features(data)
        self.n0 = q0_instruments(data) * self.s0[:, None]
        self.n1 = q1_instruments(data) * self.s1[:, None]

    def q0(self, t0: np.ndarray) -> np.ndarray:
        return 1.0 + np.exp(self.s0 * (self.f0 @ t0))

    def q1(self, t1: np.ndarray, t0: np.ndarray, q0: np.ndarray | None = None) -> np.ndarray:
        q0 = self.q0(t0) if q0 is None else q0
        return q0 * (1.0 + np.exp(self.s1 * (self.f1 @ t1)))

    def m0(self, t0: np.ndarray) -> np.ndarray:
        out = self.n0 * self.q0(t0)[:, None]
        out[:, 1] -= 1.0
        return out

    def m1(self, t1: np.ndarray, t0: np.ndarray, q0: np.ndarray | None = None) -> np.ndarray:
        q0 = self.q0(t0) if q0 is None else q0
        out = self.n1 * self.q1(t1, t0, q0)[:, None]
        out[:, 2] -= q0
        return out


def q0_values(t0: np.ndarray, data: PanelDataset) -> np.ndarray:
    return QTerms(data).q0(t0)


def q1_values(t1: np.ndarray, t0: np.ndarray, data: PanelDataset) -> np.ndarray:
    return QTerms(data).q1(t1, t0)


def q0_moment(t0: np.ndarray, data: PanelDataset) -> np.ndarray:
    """Per-record ``Q0 N0 - N0+``; N0+ is the unit vector on the A0 slot."""
    return QTerms(data).m0(t0)


def q1_moment(t1: np.ndarray, t0: np.ndarray, data: PanelDataset) -> np.ndarray:
    """Per-record ``Q1 N1 - Q0 N1+``; N1+ is the unit vector on the A1 slot."""
    return QTerms(data).m1(t1, t0)


@dataclass(frozen=True, eq=False)
class QBridgeFit:
    """Fitted treatment bridges; ``q0``/``q1`` are evaluated at the observed treatments."""

    t0: np.ndarray
    t1: np.ndarray
    converged0: bool
    converged1: bool
    norm0: float
    norm1: float
    data: PanelDataset = field(repr=False)
    iterations: tuple[int, int] = (0, 0)
    terms: QTerms = field(repr=False, default=None)

    def __post_init__(self):
        if self.terms is None:
            object.__setattr__(self, "terms", QTerms(self.data))

    @property
    def converged(self) -> bool:
        return self.converged0 and self.converged1

    def q0(self) -> np.ndarray:
        return self.terms.q0(self.t0)

    def q1(self) -> np.ndarray:
        return self.terms.q1(self.t1, self.t0)


def _check_arms(a: np.ndarray, which: str):
    if a.min() == a.max():
        raise ConvergenceError(f"q-bridge for {which} needs both treatment arms present")


def _fail(res, what: str, eta_max: float):
    if eta_max > 0.9 * ETA_LIMIT:
        raise ConvergenceError(f"{what}: q-bridge numerically unstable (|linear predictor| near "
                               f"{ETA_LIMIT:g}); final moment norm {res.norm:.3g}", res.norm)
    raise ConvergenceError(f"{what} did not converge (final moment norm {res.norm:.3g})", res.norm)


def fit_q0(data: PanelDataset, config: SolverConfig = SolverConfig(), strict: bool = True,
           terms: QTerms | None = None):
    """Solve ``Pn[Q0(t0) N0 - N0+] = 0`` from ``t0 = 0``; returns a NewtonResult."""
    _check_arms(data.a0, "A(0)")
    t = terms or QTerms(data)

    def moment(th):
        return t.m0(th).mean(axis=0)

    def jac(th):
        e = t.s0 * np.exp(t.s0 * (t.f0 @ th))
        return (t.n0 * e[:, None]).T @ t.f0 / data.n

    def admissible(th):
        return np.max(np.abs(t.f0 @ th)) <= ETA_LIMIT

    res = damped_newton(moment, np.zeros(t.f0.shape[1]), config, jac, admissible)
    if strict and not res.converged:
        _fail(res, "q0", np.max(np.abs(t.f0 @ res.theta)))
    return res


def fit_q1(data: PanelDataset, t0: np.ndarray, config: SolverConfig = SolverConfig(),
           strict: bool = True, terms: QTerms | None = None):
    """Solve ``Pn[Q1(t1) N1 - Q0(t0) N1+] = 0`` from ``t1 = 0`` given fitted ``t0``."""
    _check_arms(data.a1, "A(1)")
    t = terms or QTerms(data)
    q0 = t.q0(t0)

    def moment(th):
        return t.m1(th, t0, q0).mean(axis=0)

    def jac(th):
        e = t.s1 * q0 * np.exp(t.s1 * (t.f1 @ th))
        return (t.n1 * e[:, None]).T @ t.f1 / data.n

    def admissible(th):
        return np.max(np.abs(t.f1 @ th)) <= ETA_LIMIT

    res = damped_newton(moment, np.zeros(t.f1.shape[1]), config, jac, admissible)
    if strict and not res.converged:
        _fail(res, "q1", np.max(np.abs(t.f1 @ res.theta)))
    return res


def fit_q(data: PanelDataset, config: SolverConfig = SolverConfig(), strict: bool = True) -> QBridgeFit:
    terms = QTerms(data)
    r0 = fit_q0(data, config, strict, terms)
    r1 = fit_q1(data, r0.theta, config, strict, terms)
    return QBridgeFit(r0.theta, r1.theta, r0.converged, r1.converged, r0.norm, r1.norm, data,
                      (r0.iterations, r1.iterations), terms)
