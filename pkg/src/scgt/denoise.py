"""Bayes-optimal denoisers for Bernoulli and categorical priors.

Bernoulli channel: ``s = chi2 * beta + sqrt(chi2) * G``.  The likelihood ratio
between ``beta = 1`` and ``beta = 0`` collapses to ``exp(s - chi2 / 2)``, so
the posterior mean is a logistic function of ``logit(pi) + s - chi2 / 2`` and
its derivative in ``s`` is ``f (1 - f)``.

Categorical channel: ``s = e_l + G`` with ``G ~ N(0, T)``.  Terms of the
Gaussian exponent that do not depend on ``l`` cancel, leaving the logits
``log pi_l + (T^{-1} s)_l - (T^{-1})_{ll} / 2``.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError
from scipy.special import expit, logit

__all__ = [
    "bernoulli_posterior_mean",
    "bernoulli_posterior_deriv",
    "categorical_posterior_mean",
    "categorical_posterior_jacobian",
    "categorical_posterior_cov",
    "BernoulliDenoiser",
    "CategoricalDenoiser",
    "NumericalError",
    "CHI2_FLOOR",
    "annihilates_ones",
    "ones_complement_basis",
    "precision_from_cov",
    "COV_REG",
]

CHI2_FLOOR = 1e-12
COV_REG = 1e-10


class NumericalError(ArithmeticError):
    """A covariance was not positive definite, or an iterate went non-finite."""

    def __init__(self, msg, block=None):
        super().__init__(msg if block is None else f"{msg} (block {block})")
        self.block = block


def _check_chi2(chi2):
    chi2 = np.asarray(chi2, dtype=float)
    if np.any(~(chi2 > 0)):
        raise ValueError("chi2 must be positive")
    return np.maximum(chi2, CHI2_FLOOR)


def _degenerate(pi) -> bool:
    if not 0.0 <= pi <= 1.0:
        raise ValueError(f"pi must lie in [0, 1], got {pi}")
    return pi == 0.0 or pi == 1.0


def bernoulli_posterior_mean(s, chi2, pi: float):
    """``E[beta | chi2 beta + sqrt(chi2) G = s]`` for ``beta ~ Bernoulli(pi)``."""
    s = np.asarray(s, dtype=float)
    if _degenerate(pi):
        return np.full(np.broadcast(s, np.asarray(chi2)).shape, float(pi))
    chi2 = _check_chi2(chi2)
    return expit(logit(pi) + s - 0.5 * chi2)


def bernoulli_posterior_deriv(s, chi2, pi: float):
    """Derivative of :func:`bernoulli_posterior_mean` in ``s``."""
    s = np.asarray(s, dtype=float)
    if _degenerate(pi):
        return np.zeros(np.broadcast(s, np.asarray(chi2)).shape)
    f = bernoulli_posterior_mean(s, chi2, pi)
    return f * (1.0 - f)


# -- categorical ---------------------------------------------------------------

def _check_pi(pi) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.ndim != 1 or (pi < 0).any() or abs(pi.sum() - 1.0) > 1e-12:
        raise ValueError("pi must be a probability vector")
    return pi


def ones_complement_basis(L: int) -> np.ndarray:
    """Orthonormal ``L x (L - 1)`` basis of the vectors summing to zero (Helmert)."""
    U = np.zeros((L, L - 1))
    for k in range(1, L):
        U[:k, k - 1] = 1.0
        U[k, k - 1] = -k
        U[:, k - 1] /= np.sqrt(k * (k + 1))
    return U


def annihilates_ones(M, rtol: float = 1e-9) -> bool:
    """True when ``M 1`` is negligible next to ``M`` (rows of one-hot signals see no
    information along the all-ones direction, so such ``M`` is singular there)."""
    M = np.asarray(M, dtype=float)
    scale = np.abs(M).max()
    return bool(scale == 0.0 or np.abs(M.sum(axis=-1)).max() <= rtol * scale)


def precision_from_cov(T, reg: float = COV_REG, block=None, drop_ones: bool = False) -> np.ndarray:
    """``(T + reg I)^{-1}`` via a Cholesky solve.

    With ``drop_ones`` the inverse is taken on the complement of the all-ones
    vector and is zero along it.  When ``T 1 = 0`` this differs from the plain
    regularised inverse only by ``11^T / (L reg)``, a term that shifts every
    categorical logit equally, and it avoids cancelling numbers of size
    ``1 / reg``.
    """
    T = np.asarray(T, dtype=float)
    L = T.shape[0]
    T = 0.5 * (T + T.T)
    U = ones_complement_basis(L) if drop_ones else np.eye(L)
    try:
        factor = cho_factor(U.T @ T @ U + reg * np.eye(U.shape[1]), lower=True)
    except LinAlgError:
        raise NumericalError("covariance is not positive definite after regularisation", block)
    P = U @ cho_solve(factor, U.T)
    return 0.5 * (P + P.T)


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    m = np.max(logits, axis=-1, keepdims=True)
    w = np.exp(logits - m)
    return w / w.sum(axis=-1, keepdims=True)


def posterior_from_precision(s, P, pi) -> np.ndarray:
    """Posterior mean rows for observations ``s`` (shape ``(..., L)``) given ``T^{-1} = P``."""
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore"):
        log_pi = np.log(pi)
    logits = log_pi + s @ P - 0.5 * np.diag(P)
    return _softmax_rows(logits)


def categorical_posterior_mean(s, T, pi) -> np.ndarray:
    """``E[B | B + G = s]`` for ``B ~ Categorical(pi)`` one-hot and ``G ~ N(0, T)``."""
    pi = _check_pi(pi)
    return posterior_from_precision(s, precision_from_cov(T), pi)


def categorical_posterior_cov(f: np.ndarray) -> np.ndarray:
    """Posterior covariances ``diag(f) - f f^T`` for rows of posterior means ``f``."""
    f = np.asarray(f, dtype=float)
    cov = -f[..., :, None] * f[..., None, :]
    idx = np.arange(f.shape[-1])
    cov[..., idx, idx] += f
    return cov


def categorical_posterior_jacobian(s, T, pi) -> np.ndarray:
    """Jacobian ``d f / d s`` (rows index outputs); equals ``Cov[B | s] T^{-1}``."""
    pi = _check_pi(pi)
    P = precision_from_cov(T)
    f = posterior_from_precision(s, P, pi)
    return categorical_posterior_cov(f) @ P


class BernoulliDenoiser:
    """Callable wrapper around the Bernoulli posterior mean for a fixed prior."""

    def __init__(self, pi: float):
        self.pi = float(pi)

    def __call__(self, s, chi2):
        return bernoulli_posterior_mean(s, chi2, self.pi)

    def deriv(self, s, chi2):
        return bernoulli_posterior_deriv(s, chi2, self.pi)


class CategoricalDenoiser:
    def __init__(self, pi):
        self.pi = _check_pi(pi)

    @property
    def L(self) -> int:
        return len(self.pi)

    def __call__(self, s, T):
        return categorical_posterior_mean(s, T, self.pi)

    def jacobian(self, s, T):
        return categorical_posterior_jacobian(s, T, self.pi)
