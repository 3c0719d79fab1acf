"""SC-AMP for QGT, matrix SC-AMP for pooled data, and column-wise SC-AMP.

All three run on the rescaled design (``DesignPair.slabs``) and only touch the
nonzero band blocks.  With the trivial 1x1 base matrix the QGT recursion is the
textbook Bayes-AMP for the linear model.

Iteration ``k`` (QGT)::

    phi_r      = mean square of Theta^k over row block r
    chi2_c     = sum_r Wt[r, c] / phi_r
    beta^{k+1} = Xt^T (Theta^k / phi) + chi2 * betahat^k
    betahat^{k+1} = f(beta^{k+1}; chi2)
    b_r        = (1/delta_in) sum_c Wt[r, c] <f'>_c
    Theta^{k+1} = yt - Xt betahat^{k+1} + b * Theta^k / phi
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .denoise import (
    COV_REG,
    annihilates_ones,
    bernoulli_posterior_deriv,
    bernoulli_posterior_mean,
    categorical_posterior_cov,
    posterior_from_precision,
    precision_from_cov,
)
from .design import DesignPair

__all__ = [
    "AmpConfig",
    "AmpResult",
    "AmpDivergenceError",
    "run_sc_amp_qgt",
    "run_matrix_sc_amp",
    "run_columnwise_sc_amp",
    "quantize",
]

log = logging.getLogger(__name__)

PHI_FLOOR = 1e-100


class AmpDivergenceError(ArithmeticError):
    def __init__(self, iteration: int, what: str = "iterate"):
        super().__init__(f"non-finite {what} at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class AmpConfig:
    """Run controls.

    ``se_mode="precomputed"`` replaces the online noise estimates by a state
    evolution trajectory passed to the runner.  ``damping`` (a factor in
    ``(0, 1]`` applied to the estimate update) is for exploration only.
    """

    max_iters: int = 300
    tol: float = 1e-9
    se_mode: str = "online"
    deterministic: bool = True
    damping: float | None = None

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.tol >= 0:
            raise ValueError("tol must be nonnegative")
        if self.se_mode not in ("online", "precomputed"):
            raise ValueError(f"unknown se_mode {self.se_mode!r}")
        if self.damping is not None and not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")


@dataclass
class AmpResult:
    estimate: np.ndarray
    effective: np.ndarray
    n_iter: int
    converged: bool
    residual: np.ndarray = field(repr=False)
    noise_history: list = field(default_factory=list, repr=False)
    mse_history: list = field(default_factory=list, repr=False)
    corr_history: list = field(default_factory=list, repr=False)
    estimates: list | None = field(default=None, repr=False)

    def write_trace(self, path) -> Path:
        """Per-iteration CSV: k, per-block noise summary, MSE and correlation if known."""
        path = Path(path)
        width = len(np.atleast_1d(self.noise_history[0])) if self.noise_history else 0
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k"] + [f"chi2_{c}" for c in range(width)] + ["mse", "correlation"])
            for k, chi in enumerate(self.noise_history):
                mse = self.mse_history[k] if k < len(self.mse_history) else ""
                corr = self.corr_history[k] if k < len(self.corr_history) else ""
                w.writerow([k] + [repr(float(v)) for v in np.atleast_1d(chi)] + [mse, corr])
        return path


def _check_finite(k, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise AmpDivergenceError(k)


def _block_mean_square(design: DesignPair, theta: np.ndarray) -> np.ndarray:
    m = design.rows_per_block
    return np.maximum((theta.reshape(design.R, m) ** 2).mean(axis=1), PHI_FLOOR)


def _track(result_lists, est, truth):
    if truth is None:
        return
    mses, corrs = result_lists
    mses.append(float(np.mean((est - truth) ** 2)))
    num = float(est @ truth) ** 2
    den = float(est @ est) * float(truth @ truth)
    corrs.append(num / den if den > 0 else 0.0)


# -- QGT -----------------------------------------------------------------------

def run_sc_amp_qgt(design: DesignPair, yt, pi: float, sigma2: float = 0.0, config: AmpConfig | None = None,
                   *, truth=None, se=None, keep_estimates: bool = False) -> AmpResult:
    """SC-AMP for ``yt = Xt beta + noise`` with ``beta ~ Bernoulli(pi)``.

    ``sigma2`` only enters through the noise estimates, which absorb it; it is
    accepted for interface symmetry with state evolution.  ``se`` is a
    :class:`ScalarSeTrajectory` used when ``config.se_mode == "precomputed"``.
    ``truth`` enables per-iteration MSE/correlation tracking.
    """
    config = config or AmpConfig()
    yt = np.asarray(yt, dtype=float)
    if yt.shape != (design.n,):
        raise ValueError(f"yt must have shape ({design.n},), got {yt.shape}")
    if not 0.0 <= pi <= 1.0:
        raise ValueError("pi must lie in [0, 1]")
    if config.se_mode == "precomputed" and se is None:
        raise ValueError("precomputed mode needs a state evolution trajectory")
    Wt = design.base.W_tilde
    m_rows, m_cols = design.rows_per_block, design.cols_per_block
    delta_in = design.delta_in

    bhat = np.full(design.p, float(pi))
    theta = yt - design.matvec(bhat)
    beff = np.zeros(design.p)
    chi_hist, mses, corrs = [], [], []
    kept = [bhat.copy()] if keep_estimates else None
    _track((mses, corrs), bhat, truth)
    converged = False
    k = 0
    for k in range(config.max_iters):
        if config.se_mode == "online":
            phi = _block_mean_square(design, theta)
            _check_finite(k + 1, phi)
            chi2 = Wt.T @ (1.0 / phi)
        else:
            kk = min(k, se.k_final - 1)
            phi = np.maximum(se.phi[kk], PHI_FLOOR)
            chi2 = Wt.T @ (1.0 / phi)
        chi_hist.append(chi2)
        q_rows = np.repeat(1.0 / phi, m_rows)
        chi2_cols = np.repeat(chi2, m_cols)

        beff = design.rmatvec(q_rows * theta) + chi2_cols * bhat
        new = bernoulli_posterior_mean(beff, chi2_cols, pi)
        if config.damping is not None:
            new = config.damping * new + (1.0 - config.damping) * bhat
        deriv = bernoulli_posterior_deriv(beff, chi2_cols, pi).reshape(design.C, m_cols).mean(axis=1)
        b = (Wt @ deriv) / delta_in
        theta = yt - design.matvec(new) + np.repeat(b, m_rows) * q_rows * theta
        _check_finite(k + 1, new, theta)

        step = np.linalg.norm(new - bhat) / np.sqrt(design.p)
        bhat = new
        if keep_estimates:
            kept.append(bhat.copy())
        _track((mses, corrs), bhat, truth)
        if step < config.tol:
            converged = True
            break
    return AmpResult(estimate=bhat, effective=beff, n_iter=k + 1, converged=converged, residual=theta,
                     noise_history=chi_hist, mse_history=mses, corr_history=corrs, estimates=kept)


# -- pooled data -----------------------------------------------------------------

def _block_second_moments(design: DesignPair, Theta: np.ndarray) -> np.ndarray:
    m = design.rows_per_block
    T = Theta.reshape(design.R, m, -1)
    return np.einsum("rmi,rmj->rij", T, T) / m


def run_matrix_sc_amp(design: DesignPair, Yt, pi, noise_cov=None, config: AmpConfig | None = None,
                      *, truth=None, reg: float = COV_REG) -> AmpResult:
    """Matrix SC-AMP for the pooled-data model ``Yt = Xt B + noise``.

    Row-block covariances ``phi_r`` are estimated from the residual; the
    effective noise of column block ``c`` has precision
    ``P_c = sum_r Wt[r, c] phi_r^{-1}`` and ``Q_rc = phi_r^{-1} P_c^{-1}``.
    ``noise_cov`` is absorbed by the online estimates and kept for symmetry.

    When every ``phi_r`` annihilates the all-ones vector (noiseless data) the
    inverses are taken on its complement; see ``precision_from_cov``.
    """
    config = config or AmpConfig()
    Yt = np.asarray(Yt, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if Yt.ndim != 2 or Yt.shape[0] != design.n:
        raise ValueError(f"Yt must have shape ({design.n}, L), got {Yt.shape}")
    L = Yt.shape[1]
    if pi.shape != (L,) or abs(pi.sum() - 1.0) > 1e-12 or (pi < 0).any():
        raise ValueError("pi must be a probability vector matching the columns of Yt")
    Wt = design.base.W_tilde
    R, C = design.R, design.C
    m_rows, m_cols = design.rows_per_block, design.cols_per_block
    delta_in = design.delta_in

    Bhat = np.broadcast_to(pi, (design.p, L)).copy()
    Theta = Yt - design.matvec(Bhat)
    Beff = np.zeros_like(Bhat)
    trace_hist, mses, corrs = [], [], []
    _track_pooled((mses, corrs), Bhat, truth)
    converged = False
    k = 0
    for k in range(config.max_iters):
        phi = _block_second_moments(design, Theta)
        _check_finite(k + 1, phi)
        drop = all(annihilates_ones(ph) for ph in phi)
        inv_phi = np.array([precision_from_cov(phi[r], reg, block=r, drop_ones=drop) for r in range(R)])
        P = np.einsum("rc,rab->cab", Wt, inv_phi)
        Tau = np.array([precision_from_cov(P[c], 0.0, block=c, drop_ones=drop) for c in range(C)])
        trace_hist.append(np.trace(Tau, axis1=1, axis2=2))

        jac = np.zeros((C, L, L))
        new = np.empty_like(Bhat)
        for c, blocks, rows, cols, slab in design.iter_slabs():
            Q = inv_phi[blocks.start:blocks.stop] @ Tau[c]          # (band, L, L)
            weighted = np.einsum("rmi,rij->rmj", Theta[rows].reshape(len(blocks), m_rows, L), Q)
            Beff[cols] = slab.T @ weighted.reshape(-1, L) + Bhat[cols]
            f = posterior_from_precision(Beff[cols], P[c], pi)
            # mean of Cov[B | s] P over the block
            jac[c] = categorical_posterior_cov(f).mean(axis=0) @ P[c]
            new[cols] = f
        if config.damping is not None:
            new = config.damping * new + (1.0 - config.damping) * Bhat

        # row block r: (1/delta_in) Theta_i sum_c Wt[r, c] Q_rc J_c^T
        Q_all = np.einsum("rab,cbd->rcad", inv_phi, Tau)
        M = np.einsum("rc,rcab,cdb->rad", Wt, Q_all, jac) / delta_in
        U = np.einsum("rmi,rij->rmj", Theta.reshape(R, m_rows, L), M).reshape(design.n, L)
        Theta = Yt - design.matvec(new) + U
        _check_finite(k + 1, new, Theta)

        step = np.linalg.norm(new - Bhat) / np.sqrt(design.p)
        Bhat = new
        _track_pooled((mses, corrs), Bhat, truth)
        if step < config.tol:
            converged = True
            break
    return AmpResult(estimate=Bhat, effective=Beff, n_iter=k + 1, converged=converged, residual=Theta,
                     noise_history=trace_hist, mse_history=mses, corr_history=corrs)


def _track_pooled(lists, est, truth):
    if truth is None:
        return
    mses, corrs = lists
    mses.append(float(np.sum((est - truth) ** 2) / est.shape[0]))
    corrs.append(float(np.sum(est * truth) / est.shape[0]))


def run_columnwise_sc_amp(design: DesignPair, Yt, pi, sigma2=0.0, config: AmpConfig | None = None,
                          *, truth=None) -> tuple[np.ndarray, list]:
    """``L`` independent scalar SC-AMP runs, column ``l`` with prior ``Bernoulli(pi_l)``.

    Returns the stacked ``p x L`` estimate and the per-column results.  A
    column that diverges is reported by re-raising with the column index.
    """
    Yt = np.asarray(Yt, dtype=float)
    pi = np.asarray(pi, dtype=float)
    L = Yt.shape[1]
    sig = np.broadcast_to(np.asarray(sigma2, dtype=float), (L,)) if np.ndim(sigma2) < 2 \
        else np.diag(np.asarray(sigma2, dtype=float))
    results = []
    for l in range(L):
        try:
            results.append(run_sc_amp_qgt(design, Yt[:, l], float(pi[l]), float(sig[l]), config,
                                          truth=None if truth is None else truth[:, l]))
        except AmpDivergenceError as err:
            raise AmpDivergenceError(err.iteration, f"iterate in column {l}") from err
    return np.column_stack([r.estimate for r in results]), results


def quantize(estimate, mode: str = "threshold_half") -> np.ndarray:
    """``threshold_half``: 1 where the value exceeds 0.5 (strictly).
    ``row_argmax``: one-hot at each row's maximum, ties to the lowest index.
    """
    est = np.asarray(estimate, dtype=float)
    if mode == "threshold_half":
        return (est > 0.5).astype(float)
    if mode == "row_argmax":
        if est.ndim != 2:
            raise ValueError("row_argmax needs a 2-d estimate")
        return np.eye(est.shape[1])[np.argmax(est, axis=1)]
    raise ValueError(f"unknown quantization mode {mode!r}")
