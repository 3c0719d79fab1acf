"""Convex baselines for QGT: linear programming and a box-constrained MAP relaxation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

__all__ = ["LpInfeasibleError", "CvxResult", "lp_estimate", "cvx_estimate", "cvx_objective"]

log = logging.getLogger(__name__)


class LpInfeasibleError(ValueError):
    """No ``beta`` in the unit box reproduces the observations exactly."""


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError(f"incompatible shapes X{X.shape} and y{y.shape}")
    return X, y


def lp_estimate(X, y) -> np.ndarray:
    """``argmin sum(beta)`` subject to ``X beta = y`` and ``0 <= beta <= 1`` (HiGHS)."""
    X, y = _check_xy(X, y)
    p = X.shape[1]
    res = linprog(np.ones(p), A_eq=X, b_eq=y, bounds=(0.0, 1.0), method="highs",
                  options={"primal_feasibility_tolerance": 1e-9, "dual_feasibility_tolerance": 1e-9})
    if res.status == 2:
        raise LpInfeasibleError("observations are not reachable from the unit box; use cvx_estimate")
    if res.status != 0:
        raise RuntimeError(f"linear program failed: {res.message}")
    return np.clip(res.x, 0.0, 1.0)


@dataclass
class CvxResult:
    estimate: np.ndarray
    objective: float
    n_iter: int
    converged: bool


def cvx_objective(beta, X, y, noise_var: float, pi: float) -> float:
    r = y - X @ beta
    return float(r @ r / (2.0 * noise_var) + np.log((1.0 - pi) / pi) * beta.sum())


def cvx_estimate(X, y, noise_var: float, pi: float, max_iter: int = 100_000, tol: float = 1e-8,
                 x0=None) -> CvxResult:
    """Minimise ``||y - X beta||^2 / (2 v) + log((1 - pi)/pi) sum(beta)`` over ``[0, 1]^p``.

    Accelerated projected gradient with step ``1/L``, ``L = ||X||_2^2 / v``, and
    a momentum restart whenever the objective goes up.  Stops when the norm of
    the gradient mapping ``L (beta - proj(beta - grad/L))`` is at most ``tol``.
    """
    X, y = _check_xy(X, y)
    if noise_var <= 0:
        raise ValueError("noise_var must be positive")
    if not 0.0 < pi < 1.0:
        raise ValueError("pi must lie in (0, 1)")
    lam = np.log((1.0 - pi) / pi)
    lip = np.linalg.norm(X, 2) ** 2 / noise_var
    Xty = X.T @ y / noise_var

    def grad(b):
        return X.T @ (X @ b) / noise_var - Xty + lam

    def proj(b):
        return np.clip(b, 0.0, 1.0)

    beta = proj(np.zeros(X.shape[1]) if x0 is None else np.asarray(x0, dtype=float))
    z, t = beta.copy(), 1.0
    f_prev = cvx_objective(beta, X, y, noise_var, pi)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new = proj(z - grad(z) / lip)
        f_new = cvx_objective(new, X, y, noise_var, pi)
        if f_new > f_prev:
            # restart from the last iterate without momentum
            z, t = beta.copy(), 1.0
            new = proj(beta - grad(beta) / lip)
            f_new = cvx_objective(new, X, y, noise_var, pi)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = new + ((t - 1.0) / t_next) * (new - beta)
        beta, t, f_prev = new, t_next, f_new
        mapping = lip * np.linalg.norm(beta - proj(beta - grad(beta) / lip))
        if mapping <= tol:
            converged = True
            break
    if not converged:
        log.warning("cvx_estimate stopped after %d iterations without reaching tol=%g", it, tol)
    return CvxResult(estimate=beta, objective=f_prev, n_iter=it, converged=converged)
