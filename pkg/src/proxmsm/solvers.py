"""Root finders for just-identified moment systems."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import ConvergenceError, InputError, NotIdentifiedError

COND_LIMIT = 1e12


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 100
    tol: float = 1e-10
    damping: float = 0.5
    max_halvings: int = 30
    jacobian: str = "analytic"
    fd_step: float = 1e-6
    restarts: int = 20
    restart_seed: int = 0

    def __post_init__(self):
        if not self.tol > 0:
            raise InputError("solver tolerance must be positive")
        if self.max_iterations < 1:
            raise InputError("max_iterations must be at least 1")
        if not 0 < self.damping < 1:
            raise InputError("damping factor must lie in (0, 1)")
        if self.jacobian not in ("analytic", "central"):
            raise InputError(f"unknown Jacobian mode {self.jacobian!r}")


@dataclass
class NewtonResult:
    theta: np.ndarray
    converged: bool
    iterations: int
    norm: float
    restarts_used: int = 0
    history: list = field(default_factory=list)


def solve_linear_moments(lhs: np.ndarray, rhs: np.ndarray, what: str = "system",
                         tol: float = 1e-10) -> np.ndarray:
    """Solve ``lhs @ theta = rhs`` for a square or consistent tall system.

    Square systems are solved directly; tall ones by least squares, and then the
    residual must vanish (the extra rows are redundant, not over-identifying).
    """
    lhs = np.atleast_2d(lhs)
    k, p = lhs.shape
    if k < p:
        raise NotIdentifiedError(f"{what} not identified: {k} equations for {p} unknowns")
    sv = np.linalg.svd(lhs, compute_uv=False)
    if sv[-1] == 0 or sv[0] / sv[-1] > COND_LIMIT:
        raise NotIdentifiedError(f"{what} not identified by chosen instruments (singular cross-moment matrix)")
    if k == p:
        return np.linalg.solve(lhs, rhs)
    theta, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    resid = np.max(np.abs(lhs @ theta - rhs))
    scale = max(1.0, np.max(np.abs(rhs)))
    if resid > tol * scale:
        raise NotIdentifiedError(f"{what}: stacked equations are inconsistent (residual {resid:.3g})")
    return theta


def central_jacobian(fun: Callable[[np.ndarray], np.ndarray], theta: np.ndarray,
                     step: float = 1e-6) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    cols = []
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = step
        cols.append((fun(theta + e) - fun(theta - e)) / (2 * step))
    return np.column_stack(cols)


def damped_newton(moment: Callable[[np.ndarray], np.ndarray], theta0: np.ndarray,
                  config: SolverConfig = SolverConfig(),
                  jacobian: Callable[[np.ndarray], np.ndarray] | None = None,
                  admissible: Callable[[np.ndarray], bool] | None = None) -> NewtonResult:
    """Newton's method on ``moment(theta) = 0`` with step halving.

    Steps are halved until the squared residual norm decreases; convergence is
    declared on the sup-norm.

    ``admissible`` rejects iterates (e.g. numerically unstable ones); a rejected
    trial step is halved like a non-improving one. Starts from ``theta0`` and, if
    that run fails, from ``config.restarts`` points drawn uniformly on [-1, 1]^k.
    """
    theta0 = np.asarray(theta0, dtype=float)
    rng = np.random.default_rng(config.restart_seed)
    starts = [theta0] + [rng.uniform(-1, 1, theta0.size) for _ in range(config.restarts)]
    best = None
    for attempt, start in enumerate(starts):
        res = _newton_run(moment, start, config, jacobian, admissible)
        res.restarts_used = attempt
        if res.converged:
            return res
        if best is None or res.norm < best.norm:
            best = res
    return best


def _newton_run(moment, theta, config, jacobian, admissible) -> NewtonResult:
    jac = jacobian or (lambda t: central_jacobian(moment, t, config.fd_step))
    if config.jacobian == "central":
        jac = lambda t: central_jacobian(moment, t, config.fd_step)  # noqa: E731
    ok = admissible or (lambda t: True)
    theta = theta.copy()
    if not ok(theta):
        return NewtonResult(theta, False, 0, np.inf)
    m = moment(theta)
    norm = np.max(np.abs(m))
    merit = m @ m
    history = [norm]
    for it in range(1, config.max_iterations + 1):
        if norm <= config.tol:
            return NewtonResult(theta, True, it - 1, norm, history=history)
        try:
            step = np.linalg.solve(jac(theta), -m)
        except np.linalg.LinAlgError:
            return NewtonResult(theta, False, it, norm, history=history)
        if not np.all(np.isfinite(step)):
            return NewtonResult(theta, False, it, norm, history=history)
        scale = 1.0
        for _ in range(config.max_halvings + 1):
            trial = theta + scale * step
            if ok(trial):
                m_trial = moment(trial)
                merit_trial = m_trial @ m_trial
                if np.isfinite(merit_trial) and merit_trial < merit:
                    break
            scale *= config.damping
        else:
            return NewtonResult(theta, False, it, norm, history=history)
        theta, m, merit = trial, m_trial, merit_trial
        norm = np.max(np.abs(m))
        history.append(norm)
    return NewtonResult(theta, norm <= config.tol, config.max_iterations, norm, history=history)


def require_converged(res: NewtonResult, what: str) -> NewtonResult:
    if not res.converged:
        raise ConvergenceError(f"{what} did not converge (final moment norm {res.norm:.3g})", res.norm)
    return res
