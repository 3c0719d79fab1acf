"""Finite-instance performance measures for QGT and pooled-data estimates."""

from __future__ import annotations

import warnings

import numpy as np

__all__ = [
    "mse",
    "normalized_sq_correlation",
    "pooled_correlation",
    "fpr_fnr",
    "hamming_error_rate",
    "row_error_rate",
]


def _pair(estimate, truth):
    est = np.asarray(estimate, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {tru.shape}")
    return est, tru


def mse(estimate, truth) -> float:
    """``||truth - estimate||^2 / p``; Frobenius norm over ``p`` rows for matrices."""
    est, tru = _pair(estimate, truth)
    return float(np.sum((est - tru) ** 2) / est.shape[0])


def normalized_sq_correlation(estimate, truth) -> float:
    """``<est, truth>^2 / (||est||^2 ||truth||^2)``, or 0 (with a warning) if either norm is 0."""
    est, tru = _pair(estimate, truth)
    est, tru = est.ravel(), tru.ravel()
    den = float(est @ est) * float(tru @ tru)
    if den == 0.0:
        warnings.warn("zero-norm vector in correlation; reporting 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return float(est @ tru) ** 2 / den


def pooled_correlation(estimate, truth) -> float:
    """``(1/p) sum_j <est_j, truth_j>`` over rows."""
    est, tru = _pair(estimate, truth)
    return float(np.sum(est * tru) / est.shape[0])


def fpr_fnr(estimate_quantized, truth) -> tuple[float, float]:
    """False positive and false negative rates of a 0/1 estimate.

    A rate whose denominator is empty (no true negatives, or no true
    positives) is returned as NaN with a warning.
    """
    est, tru = _pair(estimate_quantized, truth)
    est, tru = est.astype(bool).ravel(), tru.astype(bool).ravel()
    neg, pos = np.count_nonzero(~tru), np.count_nonzero(tru)
    if neg == 0:
        warnings.warn("truth has no negatives; FPR undefined", RuntimeWarning, stacklevel=2)
    if pos == 0:
        warnings.warn("truth has no positives; FNR undefined", RuntimeWarning, stacklevel=2)
    fpr = np.count_nonzero(est & ~tru) / neg if neg else float("nan")
    fnr = np.count_nonzero(~est & tru) / pos if pos else float("nan")
    return float(fpr), float(fnr)


def hamming_error_rate(estimate_quantized, truth) -> float:
    est, tru = _pair(estimate_quantized, truth)
    return float(np.count_nonzero(est != tru) / est.size)


def row_error_rate(estimate_quantized, truth) -> float:
    """Fraction of rows of a pooled estimate that differ anywhere from the truth."""
    est, tru = _pair(estimate_quantized, truth)
    return float(np.count_nonzero(np.any(est != tru, axis=1)) / est.shape[0])
