"""MSMM estimators: proximal outcome regression (POR), proximal IPW (PIPW), proximal
doubly robust (PDR), and a classical doubly robust comparator that assumes
sequential randomization given all measured covariates (DR-SRA).

With an identity link every estimating equation is affine in beta, so beta is a
single linear solve. Standard errors come from the stacked M-estimation sandwich
over nuisance and MSMM parameters.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import bridges as br
from .core import (ConvergenceError, EstimateReport, InputError, MsmmSpec, NotIdentifiedError,
                   PanelDataset)
from .dgm import apply_misspec
from .solvers import COND_LIMIT, SolverConfig, central_jacobian, damped_newton

IndexFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
ESTIMATORS = ("POR", "PIPW", "PDR", "DR-SRA")
TRUNCATION_QUANTILE = 0.995


def _index(spec: MsmmSpec, d: IndexFn | None, regime, v: np.ndarray) -> np.ndarray:
    n = v.shape[0]
    a0, a1 = np.full(n, regime[0], dtype=float), np.full(n, regime[1], dtype=float)
    if d is None:
        return spec.design_matrix(a0, a1, v)
    return np.asarray(d(a0, a1, v), dtype=float).reshape(n, spec.p)


def _observed_index(spec: MsmmSpec, d: IndexFn | None, data: PanelDataset) -> np.ndarray:
    a0, a1 = data.a0.astype(float), data.a1.astype(float)
    if d is None:
        return spec.design_matrix(a0, a1, data.v)
    return np.asarray(d(a0, a1, data.v), dtype=float).reshape(data.n, spec.p)


def _solve_beta(lhs: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    sv = np.linalg.svd(lhs, compute_uv=False)
    if sv[-1] == 0 or sv[0] / sv[-1] > COND_LIMIT:
        raise NotIdentifiedError("MSMM not identified by support and d")
    return np.linalg.solve(lhs, rhs)


def sandwich_variance(psi: Callable[[np.ndarray], np.ndarray], theta: np.ndarray, p: int,
                      step: float = 1e-6) -> np.ndarray:
    """Covariance of the last ``p`` entries of ``theta`` from stacked estimating functions.

    ``psi(theta)`` returns the ``(n, K)`` per-record stacked moments. The bread is
    the central-difference Jacobian of their mean, the meat their outer product;
    ``cov = A^-1 B A^-T / n``, symmetrised.
    """
    theta = np.asarray(theta, dtype=float)
    vals = psi(theta)
    n = vals.shape[0]
    bread = central_jacobian(lambda t: psi(t).mean(axis=0), theta, step)
    meat = vals.T @ vals / n
    try:
        inv = np.linalg.inv(bread)
    except np.linalg.LinAlgError as exc:
        raise NotIdentifiedError("variance not estimable (singular bread matrix)") from exc
    full = inv @ meat @ inv.T / n
    cov = full[-p:, -p:]
    cov = (cov + cov.T) / 2
    if np.linalg.eigvalsh(cov).min() < -1e-8 * max(1.0, np.abs(cov).max()):
        raise NotIdentifiedError("variance not estimable (covariance not positive semidefinite)")
    return cov


def _report(name, beta, cov, spec, diagnostics) -> EstimateReport:
    return EstimateReport(name, beta, cov, spec.names, diagnostics)


# Outcome regression.
def _por_terms(ht: br.HTerms, b0: np.ndarray, spec, d, v):
    lhs = np.zeros((spec.p, spec.p))
    parts = []
    for regime in spec.support:
        idx = _index(spec, d, regime, v)
        design = spec.regime_design(regime, v)
        h0 = ht.h0_at(regime) @ b0
        parts.append((idx, design, h0))
        lhs += idx.T @ design / v.shape[0]
    return lhs, parts


def _por_moment(beta, parts):
    return sum(idx * (h0 - design @ beta)[:, None] for idx, design, h0 in parts)


def estimate_por(data: PanelDataset, h_fit: br.HBridgeFit, spec: MsmmSpec,
                 d: IndexFn | None = None) -> EstimateReport:
    """Solve ``Pn{sum_a d(a, V) [H0(a) - g(a, V; beta)]} = 0``."""
    ht = h_fit.terms
    lhs, parts = _por_terms(ht, h_fit.b0, spec, d, data.v)
    rhs = sum(idx.T @ h0 for idx, _, h0 in parts) / data.n
    beta = _solve_beta(lhs, rhs)
    k1, k0 = h_fit.b1.size, h_fit.b0.size

    def psi(theta):
        b1, b0, b = theta[:k1], theta[k1:k1 + k0], theta[k1 + k0:]
        _, prt = _por_terms(ht, b0, spec, d, data.v)
        return np.hstack([ht.h1_moment(b1), ht.h0_moment(b0, b1, h_fit.h0_lhs),
                          _por_moment(b, prt)])

    cov = sandwich_variance(psi, np.concatenate([h_fit.b1, h_fit.b0, beta]), spec.p)
    return _report("POR", beta, cov, spec, _h_diag(h_fit))


# Inverse weighting.
def estimate_pipw(data: PanelDataset, q_fit: br.QBridgeFit, spec: MsmmSpec,
                  d: IndexFn | None = None) -> EstimateReport:
    """Solve ``Pn{d(A, V) Q1(A) [Y - g(A, V; beta)]} = 0``."""
    qt = q_fit.terms
    idx = _observed_index(spec, d, data)
    design = spec.design_matrix(data.a0, data.a1, data.v)
    q1 = q_fit.q1()
    beta = _solve_beta((idx * q1[:, None]).T @ design / data.n, idx.T @ (q1 * data.y) / data.n)
    k0, k1 = q_fit.t0.size, q_fit.t1.size

    def psi(theta):
        t0, t1, b = theta[:k0], theta[k0:k0 + k1], theta[k0 + k1:]
        q0 = qt.q0(t0)
        w = qt.q1(t1, t0, q0)
        return np.hstack([qt.m0(t0), qt.m1(t1, t0, q0),
                          idx * (w * (data.y - design @ b))[:, None]])

    cov = sandwich_variance(psi, np.concatenate([q_fit.t0, q_fit.t1, beta]), spec.p)
    return _report("PIPW", beta, cov, spec, _q_diag(q_fit))


# Doubly robust.
def _xi_parts(data, ht, b1, b0, q0, q1, spec, d):
    """Per-regime (index, design, beta-free part of Xi)."""
    parts = []
    for regime in spec.support:
        a0, a1 = regime
        idx = _index(spec, d, regime, data.v)
        design = spec.regime_design(regime, data.v)
        h1 = ht.h1_at(regime) @ b1
        h0 = ht.h0_at(regime) @ b0
        hit1 = (data.a0 == a0) & (data.a1 == a1)
        hit0 = data.a0 == a0
        xi = hit1 * q1 * (data.y - h1) + hit0 * q0 * (h1 - h0) + h0
        parts.append((idx, design, xi))
    return parts


def _solve_xi(parts, n, p):
    lhs = sum(idx.T @ design for idx, design, _ in parts) / n
    rhs = sum(idx.T @ xi for idx, _, xi in parts) / n
    return _solve_beta(lhs.reshape(p, p), rhs)


def _xi_moment(beta, parts):
    return sum(idx * (xi - design @ beta)[:, None] for idx, design, xi in parts)


def estimate_pdr(data: PanelDataset, h_fit: br.HBridgeFit, q_fit: br.QBridgeFit, spec: MsmmSpec,
                 d: IndexFn | None = None) -> EstimateReport:
    """Solve ``Pn[sum_a d(a, V) Xi(beta)_a] = 0`` with both bridge pairs plugged in.

    Non-converged treatment bridges are still used; the report flags them.
    """
    ht, qt = h_fit.terms, q_fit.terms
    parts = _xi_parts(data, ht, h_fit.b1, h_fit.b0, q_fit.q0(), q_fit.q1(), spec, d)
    beta = _solve_xi(parts, data.n, spec.p)
    sizes = np.cumsum([h_fit.b1.size, h_fit.b0.size, q_fit.t0.size, q_fit.t1.size])

    def psi(theta):
        b1, b0, t0, t1, b = np.split(theta, sizes)
        q0 = qt.q0(t0)
        q1 = qt.q1(t1, t0, q0)
        prt = _xi_parts(data, ht, b1, b0, q0, q1, spec, d)
        return np.hstack([ht.h1_moment(b1), ht.h0_moment(b0, b1, h_fit.h0_lhs),
                          qt.m0(t0), qt.m1(t1, t0, q0), _xi_moment(b, prt)])

    theta = np.concatenate([h_fit.b1, h_fit.b0, q_fit.t0, q_fit.t1, beta])
    cov = sandwich_variance(psi, theta, spec.p)
    return _report("PDR", beta, cov, spec, {**_h_diag(h_fit), **_q_diag(q_fit),
                                            "converged": {"h": True, "q0": q_fit.converged0,
                                                          "q1": q_fit.converged1}})


# Classical longitudinal DR under sequential randomization given L = (X, Z, W).
def sra_view(data: PanelDataset) -> PanelDataset:
    """Both proxy slots hold all measured time-varying covariates, so the outcome
    bridge fitters reduce to ordinary iterated least squares."""
    l0 = np.hstack([data.z0, data.w0])
    l1 = np.hstack([data.z1, data.w1])
    return data.replace(z0=l0, w0=l0, z1=l1, w1=l1)


def _prop0_features(sv: PanelDataset) -> np.ndarray:
    return np.hstack([np.ones((sv.n, 1)), sv.x0v, sv.w0])


def _prop1_features(sv: PanelDataset) -> np.ndarray:
    return np.hstack([np.ones((sv.n, 1)), sv.a0[:, None].astype(float), sv.x0v, sv.x1, sv.w0, sv.w1])


def _expit(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _logit_score(gamma, feats, a):
    return feats * (a - _expit(feats @ gamma))[:, None]


def fit_logistic(feats: np.ndarray, a: np.ndarray, config: SolverConfig = SolverConfig(),
                 what: str = "propensity"):
    """Maximum likelihood logistic regression by Newton on the score."""
    a = a.astype(float)

    def moment(g):
        return _logit_score(g, feats, a).mean(axis=0)

    def jac(g):
        p = _expit(feats @ g)
        return -(feats * (p * (1 - p))[:, None]).T @ feats / feats.shape[0]

    res = damped_newton(moment, np.zeros(feats.shape[1]), config, jac)
    if not res.converged:
        raise ConvergenceError(f"{what} model did not converge (final score norm {res.norm:.3g})",
                               res.norm)
    return res.theta


def _sra_weights(g0, g1, f0x, f1x, a0, a1, caps=None):
    p0 = _expit(f0x @ g0)
    p1 = _expit(f1x @ g1)
    w0 = 1.0 / np.where(a0 == 1, p0, 1 - p0)
    w1 = w0 / np.where(a1 == 1, p1, 1 - p1)
    if caps is None:
        caps = (np.quantile(w0, TRUNCATION_QUANTILE), np.quantile(w1, TRUNCATION_QUANTILE))
    return np.minimum(w0, caps[0]), np.minimum(w1, caps[1]), caps, (w0 > caps[0]).sum(), (w1 > caps[1]).sum()


def estimate_dr_sra(data: PanelDataset, spec: MsmmSpec, d: IndexFn | None = None,
                    config: SolverConfig = SolverConfig()) -> EstimateReport:
    """Longitudinal AIPW estimator that ignores unmeasured confounding.

    Outcome models are sequential linear regressions on (A, X, Z, W); treatment
    models are logistic. Inverse weights are truncated at their 99.5th percentile,
    with the cut-offs held fixed in the variance calculation.
    """
    sv = sra_view(data)
    h_fit = br.fit_h(sv)
    f0x, f1x = _prop0_features(sv), _prop1_features(sv)
    g0 = fit_logistic(f0x, data.a0, config, "A(0) propensity")
    g1 = fit_logistic(f1x, data.a1, config, "A(1) propensity")
    w0, w1, caps, cut0, cut1 = _sra_weights(g0, g1, f0x, f1x, data.a0, data.a1)
    ht = h_fit.terms
    parts = _xi_parts(data, ht, h_fit.b1, h_fit.b0, w0, w1, spec, d)
    beta = _solve_xi(parts, data.n, spec.p)
    sizes = np.cumsum([h_fit.b1.size, h_fit.b0.size, g0.size, g1.size])
    a0f, a1f = data.a0.astype(float), data.a1.astype(float)

    def psi(theta):
        b1, b0, c0, c1, b = np.split(theta, sizes)
        v0, v1, *_ = _sra_weights(c0, c1, f0x, f1x, data.a0, data.a1, caps)
        prt = _xi_parts(data, ht, b1, b0, v0, v1, spec, d)
        return np.hstack([ht.h1_moment(b1), ht.h0_moment(b0, b1, h_fit.h0_lhs),
                          _logit_score(c0, f0x, a0f), _logit_score(c1, f1x, a1f), _xi_moment(b, prt)])

    cov = sandwich_variance(psi, np.concatenate([h_fit.b1, h_fit.b0, g0, g1, beta]), spec.p)
    diag = {**_h_diag(h_fit), "converged": {"h": True, "propensity": True},
            "truncated": {"w0": int(cut0), "w1": int(cut1), "caps": [float(c) for c in caps]}}
    return _report("DR-SRA", beta, cov, spec, diag)


def _h_diag(h_fit) -> dict:
    return {"converged": {"h": True},
            "h_moment_norms": [float(h_fit.norm1), float(h_fit.norm0)],
            "b1": h_fit.b1.tolist(), "b0": h_fit.b0.tolist()}


def _q_diag(q_fit) -> dict:
    return {"converged": {"q0": bool(q_fit.converged0), "q1": bool(q_fit.converged1)},
            "q_moment_norms": [float(q_fit.norm0), float(q_fit.norm1)],
            "q_iterations": list(q_fit.iterations),
            "t0": q_fit.t0.tolist(), "t1": q_fit.t1.tolist()}


def estimate(data: PanelDataset, estimator: str, spec: MsmmSpec | None = None,
             misspec: str = "none", d: IndexFn | None = None,
             config: SolverConfig = SolverConfig(), strict: bool | None = None) -> EstimateReport:
    """Full pipeline: misspecification views, bridge fits, MSMM fit, sandwich.

    ``strict`` decides whether a non-converged treatment bridge raises
    :class:`ConvergenceError` (default: PIPW raises, PDR reports a flag).
    """
    spec = spec or MsmmSpec.cumulative(data.support)
    estimator = estimator.upper()
    if estimator not in ESTIMATORS:
        raise InputError(f"unknown estimator {estimator!r}; choose from {ESTIMATORS}")
    if spec.support != data.support:
        extra = [r for r in spec.support if r not in data.support]
        if extra:
            raise InputError(f"MSMM support includes regimes outside the data support: {extra}")
        bad = set(zip(data.a0.tolist(), data.a1.tolist())) - set(spec.support)
        if bad:
            raise InputError(f"regime outside support: {sorted(bad)}")
    if estimator == "DR-SRA":
        return estimate_dr_sra(data, spec, d, config)
    h_view, q_view = apply_misspec(misspec, data)
    if estimator == "POR":
        return estimate_por(data, br.fit_h(h_view), spec, d)
    if strict is None:
        strict = estimator == "PIPW"
    q_fit = br.fit_q(q_view, config, strict=strict)
    if estimator == "PIPW":
        return estimate_pipw(data, q_fit, spec, d)
    return estimate_pdr(data, br.fit_h(h_view), q_fit, spec, d)
