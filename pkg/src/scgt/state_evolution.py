"""State evolution for SC-AMP (scalar, QGT) and matrix SC-AMP (pooled data).

Scalar recursion, per row block ``r`` and column block ``c``::

    phi_r  = sigma2 + (1/delta_in) sum_c Wt[r, c] psi_c
    chi2_c = sum_r Wt[r, c] / phi_r
    psi_c  = mmse(chi2_c)

started from ``psi_c = Var(beta)``.  Index ``k`` of a trajectory holds the
quantities describing the ``k``-th AMP estimate, with ``chi2[0] = 0`` standing
for the uninformative starting point.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy.special import expit, logit, ndtr
from scipy.stats import qmc, norm

from .denoise import COV_REG, annihilates_ones, ones_complement_basis, posterior_from_precision, precision_from_cov
from .design import BaseMatrix, trivial_base_matrix

__all__ = [
    "mmse_bernoulli",
    "ScalarSeTrajectory",
    "CovSeTrajectory",
    "iterate_scalar_se",
    "iterate_yedla_se",
    "iterate_cov_se",
    "se_predict_metrics",
    "cov_se_predict_metrics",
    "reference_test_limit",
    "entropy",
]

log = logging.getLogger(__name__)

_GH_NODES, _GH_WEIGHTS = hermegauss(101)
_GH_WEIGHTS = _GH_WEIGHTS / np.sqrt(2.0 * np.pi)

# logit-space rule for the wide-channel branch; f(1-f) <= exp(-|L|) so the
# window loses less than 1e-17
_L_MAX = 40.0
_GL_NODES, _GL_WEIGHTS = leggauss(401)
_GL_NODES = _GL_NODES * _L_MAX
_GL_WEIGHTS = _GL_WEIGHTS * _L_MAX


def _bump(L):
    return expit(L) * expit(-L)


def mmse_bernoulli(chi2, pi: float):
    """``E[(beta - E[beta | sqrt(s) beta + G])^2]`` at ``s = chi2``.

    Written as ``E[f (1 - f)]`` where ``f`` is a logistic function of the
    posterior log-odds ``L ~ N(logit(pi) +- s/2, s)``.  For ``s <= 1`` the
    expectation is taken over ``G`` with Gauss-Hermite nodes; otherwise over
    ``L`` with Gauss-Legendre nodes on a window where ``f (1 - f)`` is nonzero.
    """
    chi2 = np.asarray(chi2, dtype=float)
    if np.any(chi2 < 0) or np.any(np.isnan(chi2)):
        raise ValueError("chi2 must be nonnegative")
    if pi <= 0.0 or pi >= 1.0:
        return np.zeros_like(chi2)
    a = logit(pi)
    s = np.atleast_1d(chi2).ravel()
    out = np.zeros_like(s)

    narrow = s <= 1.0
    if narrow.any():
        sn = s[narrow][:, None]
        shift = np.sqrt(sn) * _GH_NODES
        e1 = _bump(a + 0.5 * sn + shift) @ _GH_WEIGHTS
        e0 = _bump(a - 0.5 * sn + shift) @ _GH_WEIGHTS
        out[narrow] = pi * e1 + (1.0 - pi) * e0

    wide = (s > 1.0) & np.isfinite(s)
    if wide.any():
        sw = s[wide][:, None]
        sd = np.sqrt(sw)
        dens1 = np.exp(-0.5 * ((_GL_NODES - a - 0.5 * sw) / sd) ** 2) / (sd * np.sqrt(2 * np.pi))
        dens0 = np.exp(-0.5 * ((_GL_NODES - a + 0.5 * sw) / sd) ** 2) / (sd * np.sqrt(2 * np.pi))
        out[wide] = (_bump(_GL_NODES) * (pi * dens1 + (1.0 - pi) * dens0)) @ _GL_WEIGHTS
    # infinite chi2 is a perfect channel
    return np.clip(out, 0.0, pi * (1.0 - pi)).reshape(chi2.shape)


# -- scalar recursion ------------------------------------------------------------

def _as_base(base) -> BaseMatrix:
    return trivial_base_matrix() if base is None else base


@dataclass
class ScalarSeTrajectory:
    """Full scalar SE trajectory; arrays are indexed by iteration first."""

    base: BaseMatrix
    delta: float
    pi: float
    sigma2: float
    psi: np.ndarray
    chi2: np.ndarray
    phi: np.ndarray
    converged: bool

    @property
    def delta_in(self) -> float:
        return self.delta * self.base.C / self.base.R

    @property
    def k_final(self) -> int:
        return self.psi.shape[0] - 1

    @property
    def mse(self) -> np.ndarray:
        """Predicted MSE per iteration, averaged over column blocks."""
        return self.psi.mean(axis=1)

    def at(self, k: int) -> dict:
        k = min(k, self.k_final)
        return {"psi": self.psi[k], "chi2": self.chi2[k], "phi": self.phi[k]}

    @property
    def x(self) -> np.ndarray:
        """Row-block form ``x_r = sum_c Wt[r, c] psi_c`` of every iterate."""
        return self.psi @ self.base.W_tilde.T


def _phi(Wt, psi, sigma2, delta_in):
    return sigma2 + (Wt @ psi) / delta_in


def _chi2_from_phi(Wt, phi):
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        inv = 1.0 / phi
        inv = Wt * inv[:, None]
    return np.where(Wt > 0, inv, 0.0).sum(axis=0)


def iterate_scalar_se(base, delta: float, pi: float, sigma2: float = 0.0, k_max: int = 10_000,
                      tol: float = 1e-12, min_iters: int = 0) -> ScalarSeTrajectory:
    """Run the scalar recursion until ``max_c |psi^{k+1} - psi^k| < tol``.

    ``base=None`` means the i.i.d. design.  ``min_iters`` forces at least that
    many steps even after convergence, which is handy for comparing with AMP.
    """
    base = _as_base(base)
    if delta <= 0:
        raise ValueError("delta must be positive")
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")
    Wt = base.W_tilde
    delta_in = delta * base.C / base.R
    var = pi * (1.0 - pi)
    psi = np.full(base.C, var)
    psis, chis, phis = [psi], [np.zeros(base.C)], []
    converged = False
    for k in range(k_max):
        phi = _phi(Wt, psi, sigma2, delta_in)
        phis.append(phi)
        chi2 = _chi2_from_phi(Wt, phi)
        new = mmse_bernoulli(chi2, pi)
        psis.append(new)
        chis.append(chi2)
        step = np.max(np.abs(new - psi))
        psi = new
        if step < tol and k + 1 >= min_iters:
            converged = True
            break
    else:
        log.warning("scalar SE did not converge in %d iterations (delta=%g)", k_max, delta)
    phis.append(_phi(Wt, psi, sigma2, delta_in))
    return ScalarSeTrajectory(base=base, delta=float(delta), pi=float(pi), sigma2=float(sigma2),
                              psi=np.array(psis), chi2=np.array(chis), phi=np.array(phis),
                              converged=converged)


def iterate_yedla_se(base, delta: float, pi: float, sigma2: float = 0.0, k_max: int = 10_000,
                     tol: float = 1e-12, x0=None) -> np.ndarray:
    """The same recursion written on row blocks only::

        x_r <- sum_c Wt[r, c] mmse( sum_r' Wt[r', c] / (sigma2 + x_r' / delta_in) )

    Starts from ``x_r = sum_c Wt[r, c] Var(beta)`` unless ``x0`` is given, and
    returns the whole trajectory with shape ``(K + 1, R)``.
    """
    base = _as_base(base)
    Wt = base.W_tilde
    delta_in = delta * base.C / base.R
    var = pi * (1.0 - pi)
    x = Wt @ np.full(base.C, var) if x0 is None else np.broadcast_to(np.asarray(x0, float), (base.R,)).copy()
    xs = [x]
    for _ in range(k_max):
        new = Wt @ mmse_bernoulli(_chi2_from_phi(Wt, sigma2 + x / delta_in), pi)
        xs.append(new)
        if np.max(np.abs(new - x)) < tol:
            break
        x = new
    return np.array(xs)


# -- matrix recursion -------------------------------------------------------------

@dataclass
class CovSeTrajectory:
    base: BaseMatrix
    delta: float
    pi: np.ndarray
    noise_cov: np.ndarray
    psi: np.ndarray          # (K+1, C, L, L)
    phi: np.ndarray          # (K+1, R, L, L)
    precision: np.ndarray    # (K+1, C, L, L), inverse of T; zeros at k=0
    converged: bool
    n_nodes: int = 21

    @property
    def k_final(self) -> int:
        return self.psi.shape[0] - 1

    @property
    def Tau(self) -> np.ndarray:
        out = np.full_like(self.precision, np.inf)
        for idx in np.ndindex(self.precision.shape[:2]):
            if idx[0] > 0:
                out[idx] = np.linalg.inv(self.precision[idx])
        return out


def _reduced(P: np.ndarray):
    """Basis to integrate over: the ones-complement when ``P 1 = 0``, else everything.

    A precision with ``P 1 = 0`` comes from noiseless one-hot data, where the
    denoiser ignores the all-ones direction, so no nodes are placed along it.
    """
    L = P.shape[0]
    if L > 1 and annihilates_ones(P):
        U = ones_complement_basis(L)
        return U, U.T @ P @ U
    return np.eye(L), P


def _gauss_points(P: np.ndarray, n_nodes: int, rel_cut: float = 1e-8):
    """Nodes and weights for ``E[h(G)]`` with ``G ~ N(0, P^{-1})``.

    Directions whose variance is below ``rel_cut`` times the largest one get a
    single node at zero.
    """
    B, P = _reduced(P)
    G, w = _gauss_points_full(P, n_nodes, rel_cut)
    return G @ B.T, w


def _gauss_points_full(P, n_nodes, rel_cut):
    mu, V = np.linalg.eigh(P)
    var = 1.0 / np.maximum(mu, 1e-300)
    keep = var > rel_cut * var.max()
    m = int(keep.sum())
    # eigenvectors of a degenerate T are arbitrary; a QR of the projector gives
    # a basis of the retained subspace that moves continuously with T
    U = V[:, keep]
    Q, Rq = np.linalg.qr((U @ U.T)[:, :m])
    if np.min(np.abs(np.diag(Rq)), initial=1.0) < 1e-8:
        Q = U
    S = Q.T @ (U * var[keep]) @ U.T @ Q
    chol = np.linalg.cholesky(0.5 * (S + S.T))
    x, w = hermegauss(n_nodes)
    w = w / np.sqrt(2 * np.pi)
    idx = np.array(list(itertools.product(range(n_nodes), repeat=m)), dtype=int).reshape(-1, m)
    weights = np.prod(w[idx], axis=1)
    G = x[idx] @ chol.T @ Q.T
    return G, weights


def _qmc_points(P: np.ndarray, n_samples: int, seed: int = 0):
    B, P = _reduced(P)
    mu, V = np.linalg.eigh(P)
    sd = 1.0 / np.sqrt(np.maximum(mu, 1e-300))
    m = int(np.ceil(np.log2(n_samples)))
    u = qmc.Sobol(d=P.shape[0], scramble=True, seed=seed).random_base2(m)
    z = norm.ppf(np.clip(u, 1e-16, 1 - 1e-16))
    return (z * sd) @ V.T @ B.T, np.full(len(z), 1.0 / len(z))


def _cov_points(P, method, n_nodes, n_samples):
    if method == "gh":
        return _gauss_points(P, n_nodes)
    if method == "qmc":
        return _qmc_points(P, n_samples)
    raise ValueError(f"unknown expectation method {method!r}")


def _categorical_error_cov(P, pi, G, w):
    L = len(pi)
    out = np.zeros((L, L))
    for l in np.flatnonzero(pi > 0):
        e = np.eye(L)[l]
        err = posterior_from_precision(e + G, P, pi) - e
        out += pi[l] * (err.T * w) @ err
    return 0.5 * (out + out.T)


def _precisions(Wt, phi, reg):
    """``sum_r Wt[r, c] (phi_r + reg I)^{-1}`` for every column block."""
    drop = all(annihilates_ones(ph) for ph in phi)
    inv_phi = np.array([precision_from_cov(ph, reg, block=r, drop_ones=drop) for r, ph in enumerate(phi)])
    return np.einsum("rc,rab->cab", Wt, inv_phi)


def iterate_cov_se(base, delta: float, pi, noise_cov=None, k_max: int = 5_000, tol: float = 1e-12,
                   method: str = "gh", n_nodes: int = 21, n_samples: int = 1 << 20,
                   reg: float = COV_REG) -> CovSeTrajectory:
    """Matrix SE for pooled data, from ``psi_c = diag(pi) - pi pi^T``.

    Expectations over ``G ~ N(0, T_c)`` use a tensor Gauss-Hermite rule on the
    non-degenerate subspace of ``T_c`` (``method="gh"``) or scrambled Sobol
    points (``method="qmc"``).  Without noise every ``phi_r`` annihilates the
    all-ones vector; precisions are then formed on its complement, which the
    denoiser cannot distinguish from the regularised inverse.
    """
    base = _as_base(base)
    pi = np.asarray(pi, dtype=float)
    L = len(pi)
    noise_cov = np.zeros((L, L)) if noise_cov is None else np.asarray(noise_cov, dtype=float)
    if np.ndim(noise_cov) == 0:
        noise_cov = noise_cov * np.eye(L)
    Wt = base.W_tilde
    delta_in = delta * base.C / base.R
    psi = np.broadcast_to(np.diag(pi) - np.outer(pi, pi), (base.C, L, L)).copy()
    psis, phis, precs = [psi], [], [np.zeros((base.C, L, L))]
    converged = False
    for k in range(k_max):
        phi = noise_cov + np.einsum("rc,cab->rab", Wt, psi) / delta_in
        phis.append(phi)
        P = _precisions(Wt, phi, reg)
        new = np.array([_categorical_error_cov(P[c], pi, *_cov_points(P[c], method, n_nodes, n_samples))
                        for c in range(base.C)])
        psis.append(new)
        precs.append(P)
        step = np.max(np.abs(new - psi))
        psi = new
        if step < tol:
            converged = True
            break
    else:
        log.warning("cov SE did not converge in %d iterations (delta=%g)", k_max, delta)
    phis.append(noise_cov + np.einsum("rc,cab->rab", Wt, psi) / delta_in)
    return CovSeTrajectory(base=base, delta=float(delta), pi=pi, noise_cov=noise_cov,
                           psi=np.array(psis), phi=np.array(phis), precision=np.array(precs),
                           converged=converged, n_nodes=n_nodes)


def cov_se_predict_metrics(traj: CovSeTrajectory, k: int | None = None, method: str = "gh",
                           n_nodes: int | None = None, n_samples: int = 1 << 18) -> dict:
    """Predicted correlation ``(1/C) sum_c E<f(B + G_c), B>`` and MSE at iterate ``k``.

    ``correlation_quantized`` scores the row-argmax of the estimate instead;
    it is an indicator, so quasi-Monte-Carlo is always used for it.
    """
    k = traj.k_final if k is None else min(k, traj.k_final)
    pi = traj.pi
    L = len(pi)
    if k == 0:
        corr = float(pi @ pi)
        return {"correlation": corr, "correlation_quantized": float(pi.max()),
                "mse": float(np.trace(traj.psi[0][0]))}
    corr, corr_q = 0.0, 0.0
    C = traj.base.C
    for c in range(C):
        P = traj.precision[k][c]
        G, w = _cov_points(P, method, n_nodes or traj.n_nodes, n_samples)
        Gq, wq = _qmc_points(P, n_samples)
        for l in np.flatnonzero(pi > 0):
            e = np.eye(L)[l]
            corr += pi[l] * (posterior_from_precision(e + G, P, pi)[:, l] @ w)
            fq = posterior_from_precision(e + Gq, P, pi)
            corr_q += pi[l] * (np.argmax(fq, axis=1) == l) @ wq
    mse = float(np.mean([np.trace(ps) for ps in traj.psi[k]]))
    return {"correlation": corr / C, "correlation_quantized": corr_q / C, "mse": mse}


# -- predicted metrics for QGT -----------------------------------------------------

def _fpr_fnr_blocks(chi2, pi, zeta):
    """Per-block limits of FPR and FNR at threshold ``zeta``."""
    chi2 = np.asarray(chi2, dtype=float)
    if zeta <= 0.0:
        return np.ones_like(chi2), np.zeros_like(chi2)
    if zeta >= 1.0:
        return np.zeros_like(chi2), np.ones_like(chi2)
    a = logit(zeta) - logit(pi)
    with np.errstate(divide="ignore", invalid="ignore"):
        chi = np.sqrt(chi2)
        # f(chi G) > zeta  <=>  G > a/chi + chi/2
        fpr = 1.0 - ndtr(a / chi + chi / 2)
        # f(chi2 + chi G) <= zeta  <=>  G <= a/chi - chi/2
        fnr = ndtr(a / chi - chi / 2)
    zero = chi2 == 0
    fpr = np.where(zero, float(pi > zeta), fpr)
    fnr = np.where(zero, float(pi <= zeta), fnr)
    inf = np.isinf(chi2)
    fpr = np.where(inf, 0.0, fpr)
    fnr = np.where(inf, 0.0, fnr)
    return fpr, fnr


def se_predict_metrics(chi2, pi: float, zeta=()) -> dict:
    """Limits of MSE, normalised squared correlation, FPR and FNR.

    ``chi2`` is the per-column-block vector for one iterate (a row of
    ``ScalarSeTrajectory.chi2``).  Uses ``E[f beta] = E[f^2] = pi - mmse`` for the
    Bayes denoiser.
    """
    chi2 = np.atleast_1d(np.asarray(chi2, dtype=float))
    psi = mmse_bernoulli(chi2, pi)
    mse = float(psi.mean())
    cross = float(np.mean(pi - psi))
    corr = cross ** 2 / (cross * pi) if cross > 0 else 0.0
    out = {"mse": mse, "correlation": corr, "fpr": {}, "fnr": {}}
    for z in np.atleast_1d(zeta):
        fpr, fnr = _fpr_fnr_blocks(chi2, pi, float(z))
        out["fpr"][float(z)] = float(fpr.mean())
        out["fnr"][float(z)] = float(fnr.mean())
    return out


# -- information-theoretic reference --------------------------------------------

def entropy(pi) -> float:
    """Shannon entropy in nats."""
    pi = np.asarray(pi, dtype=float)
    pi = pi[pi > 0]
    return float(-(pi * np.log(pi)).sum())


def reference_test_limit(pi, p: int) -> float:
    """``n*/p = gamma* / log p`` for noiseless recovery (natural logs).

    A scalar ``pi`` means QGT, i.e. categories ``(pi, 1 - pi)``.
    """
    if p <= 1:
        raise ValueError("p must exceed 1")
    pi = np.atleast_1d(np.asarray(pi, dtype=float))
    if pi.size == 1:
        pi = np.array([pi[0], 1.0 - pi[0]])
    L = len(pi)
    order = np.sort(pi)[::-1]
    H = entropy(pi)
    best = 0.0
    for r in range(1, L):
        merged = np.concatenate([[order[:L - r + 1].sum()], order[L - r + 1:]])
        best = max(best, 2.0 * (H - entropy(merged)) / (L - r))
    return best / np.log(p)
