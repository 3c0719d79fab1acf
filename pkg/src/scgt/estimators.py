"""scikit-learn style decoders.

``fit(X, y)`` takes a raw binary design and raw test outcomes and recovers the
signal; ``coef_`` holds the soft estimate and ``labels_`` the quantized one.
``predict(X)`` returns the outcomes the recovered signal would produce on the
tests ``X``, in the manner of a linear model.
"""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .amp import AmpConfig, quantize, run_columnwise_sc_amp, run_matrix_sc_amp, run_sc_amp_qgt
from .baselines import cvx_estimate, lp_estimate
from .design import build_base_matrix, design_from_binary, trivial_base_matrix
from .model import rescale_pooled, rescale_qgt

__all__ = ["SCAMPDecoder", "PooledSCAMPDecoder", "ColumnwiseSCAMPDecoder", "LPDecoder", "CVXDecoder"]


def _check_binary(X):
    if not np.all((X == 0) | (X == 1)):
        raise ValueError("X must be a 0/1 design matrix")


class _DecoderMixin:
    def predict(self, X):
        check_is_fitted(self, "labels_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} columns, expected {self.n_features_in_}")
        return X @ self._signal_matrix()

    def _signal_matrix(self):
        return self.labels_


class _AmpBase(_DecoderMixin, BaseEstimator):
    def _design(self, X):
        if self.kind == "iid":
            base = trivial_base_matrix(self.alpha)
        else:
            base = build_base_matrix(self.omega, self.lam, self.alpha)
        return design_from_binary(X.astype(np.uint8), base, kind=self.kind)

    def _config(self):
        return AmpConfig(max_iters=self.max_iters, tol=self.tol)

    def _sums(self, design, block_sums, pi):
        if block_sums is not None:
            return np.asarray(block_sums, dtype=float)
        warnings.warn("block sums not given; using the prior estimate p pi / C", UserWarning, stacklevel=3)
        return np.broadcast_to(design.cols_per_block * np.asarray(pi, dtype=float),
                               (design.C,) + np.shape(pi)).copy()


class SCAMPDecoder(_AmpBase):
    """SC-AMP decoder for quantitative group testing.

    ``sigma2`` is the variance of the rescaled noise; it only matters in
    precomputed mode, the online estimates absorb it otherwise.
    """

    def __init__(self, omega=6, lam=40, alpha=0.5, pi=0.3, sigma2=0.0, kind="sc", max_iters=300, tol=1e-9):
        self.omega = omega
        self.lam = lam
        self.alpha = alpha
        self.pi = pi
        self.sigma2 = sigma2
        self.kind = kind
        self.max_iters = max_iters
        self.tol = tol

    def fit(self, X, y, block_sums=None):
        X, y = check_X_y(X, y, dtype=float)
        _check_binary(X)
        self.n_features_in_ = X.shape[1]
        design = self._design(X)
        yt = rescale_qgt(design, y, self._sums(design, block_sums, self.pi))
        res = run_sc_amp_qgt(design, yt, self.pi, self.sigma2, config=self._config())
        self.coef_ = res.estimate
        self.labels_ = quantize(res.estimate, "threshold_half")
        self.n_iter_ = res.n_iter
        self.converged_ = res.converged
        return self


class PooledSCAMPDecoder(_AmpBase):
    """Matrix SC-AMP decoder for pooled data; ``labels_`` holds category indices."""

    def __init__(self, omega=6, lam=40, alpha=0.5, pi=(1 / 3, 1 / 3, 1 / 3), kind="sc", max_iters=300, tol=1e-9):
        self.omega = omega
        self.lam = lam
        self.alpha = alpha
        self.pi = pi
        self.kind = kind
        self.max_iters = max_iters
        self.tol = tol

    def _run(self, design, Yt, pi):
        res = run_matrix_sc_amp(design, Yt, pi, None, config=self._config())
        return res.estimate, res.n_iter, res.converged

    def fit(self, X, y, block_sums=None):
        X = check_array(X, dtype=float)
        Y = check_array(y, dtype=float)
        if Y.shape[0] != X.shape[0]:
            raise ValueError("X and Y must have the same number of rows")
        _check_binary(X)
        self.n_features_in_ = X.shape[1]
        pi = np.asarray(self.pi, dtype=float)
        design = self._design(X)
        Yt = rescale_pooled(design, Y, self._sums(design, block_sums, pi))
        est, self.n_iter_, self.converged_ = self._run(design, Yt, pi)
        self.coef_ = est
        self.labels_ = np.argmax(est, axis=1)
        return self

    def _signal_matrix(self):
        return np.eye(self.coef_.shape[1])[self.labels_]


class ColumnwiseSCAMPDecoder(PooledSCAMPDecoder):
    """One scalar SC-AMP per category column; quantized by row argmax."""

    def _run(self, design, Yt, pi):
        est, results = run_columnwise_sc_amp(design, Yt, pi, 0.0, config=self._config())
        return est, max(r.n_iter for r in results), all(r.converged for r in results)


class LPDecoder(_DecoderMixin, BaseEstimator):
    """Minimum-weight box-relaxed solution of ``X beta = y`` (noiseless QGT)."""

    def __init__(self, threshold=0.5):
        self.threshold = threshold

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        self.n_features_in_ = X.shape[1]
        self.coef_ = lp_estimate(X, y)
        self.labels_ = (self.coef_ > self.threshold).astype(float)
        return self


class CVXDecoder(_DecoderMixin, BaseEstimator):
    """Box-constrained MAP relaxation for noisy QGT; ``noise_var`` is the raw noise variance."""

    def __init__(self, noise_var=1.0, pi=0.3, threshold=0.5, max_iter=100_000, tol=1e-8):
        self.noise_var = noise_var
        self.pi = pi
        self.threshold = threshold
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        self.n_features_in_ = X.shape[1]
        res = cvx_estimate(X, y, self.noise_var, self.pi, self.max_iter, self.tol)
        self.coef_ = res.estimate
        self.labels_ = (self.coef_ > self.threshold).astype(float)
        self.n_iter_ = res.n_iter
        self.converged_ = res.converged
        return self
