"""Scalar potential function for the rescaled QGT model.

    U(b; delta) = -delta (1 - sigma2 t) + delta log(1 + b / (delta sigma2)) + 2 I(t),
    t = 1 / (b / delta + sigma2),

where ``I(t)`` is the mutual information between ``beta ~ Bernoulli(pi)`` and
``sqrt(t) beta + G``.  By the I-MMSE relation ``dI/dt = mmse(t) / 2`` the
derivative is ``(t^2 / delta) (b - mmse(t))``, so stationary points of ``U``
are exactly the fixed points of the i.i.d. state evolution.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq, minimize_scalar
from scipy.special import logit

from .state_evolution import entropy, mmse_bernoulli

__all__ = [
    "NOISELESS_SIGMA2",
    "mutual_info_bernoulli",
    "potential_value",
    "potential_derivative",
    "PotentialCurve",
    "find_argmin_and_stationary",
    "lemma_rate_check",
    "write_curve",
]

log = logging.getLogger(__name__)

NOISELESS_SIGMA2 = 1e-60
_G_MAX = 38.0


def _softplus(x):
    return np.logaddexp(0.0, x)


def _gauss(g):
    return np.exp(-0.5 * g * g) / np.sqrt(2.0 * np.pi)


def _mi_scalar(s: float, pi: float) -> float:
    if s == 0.0 or pi in (0.0, 1.0):
        return 0.0
    H = entropy([pi, 1.0 - pi])
    if not np.isfinite(s):
        return H
    a = logit(pi)
    rs = np.sqrt(s)
    # posterior log-odds are a + s/2 + rs g (beta=1) and a - s/2 + rs g (beta=0)
    k1 = -(a + 0.5 * s) / rs
    k0 = (0.5 * s - a) / rs

    def integral(fun, kink):
        pts = [kink] if -_G_MAX < kink < _G_MAX else None
        val, _ = quad(fun, -_G_MAX, _G_MAX, points=pts, epsabs=1e-14, epsrel=1e-13, limit=400)
        return val

    e1 = integral(lambda g: _gauss(g) * _softplus(-(a + 0.5 * s + rs * g)), k1)
    e0 = integral(lambda g: _gauss(g) * _softplus(a - 0.5 * s + rs * g), k0)
    return float(min(max(H - pi * e1 - (1.0 - pi) * e0, 0.0), H))


def mutual_info_bernoulli(s, pi: float):
    """``I(beta; sqrt(s) beta + G)`` in nats, by adaptive quadrature."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0) or np.any(np.isnan(s_arr)):
        raise ValueError("s must be nonnegative")
    out = np.array([_mi_scalar(float(v), float(pi)) for v in s_arr.ravel()])
    return out.reshape(s_arr.shape) if s_arr.ndim else float(out[0])


def _check(b, delta, pi, sigma2):
    if delta <= 0:
        raise ValueError("delta must be positive")
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive; use NOISELESS_SIGMA2 for the noiseless model")
    var = pi * (1.0 - pi)
    b = np.asarray(b, dtype=float)
    if np.any(b < 0) or np.any(b > var * (1 + 1e-12)):
        raise ValueError(f"b must lie in [0, {var}]")
    return b


def _snr(b, delta, sigma2):
    return 1.0 / (b / delta + sigma2)


def potential_value(b, delta: float, pi: float, sigma2: float):
    b = _check(b, delta, pi, sigma2)
    ratio = b / (delta * sigma2)
    # sigma2 t = 1 / (1 + ratio), written to survive sigma2 = 1e-60
    first = -delta * (1.0 - 1.0 / (1.0 + ratio))
    second = delta * np.log1p(ratio)
    third = 2.0 * mutual_info_bernoulli(_snr(b, delta, sigma2), pi)
    out = first + second + third
    return float(out) if np.ndim(out) == 0 else out


def potential_derivative(b, delta: float, pi: float, sigma2: float):
    """``dU/db = (t^2 / delta) (b - mmse(t))``."""
    b = _check(b, delta, pi, sigma2)
    t = _snr(b, delta, sigma2)
    return t * t / delta * (b - mmse_bernoulli(t, pi))


def _fixed_point_gap(b, delta, pi, sigma2):
    # same sign as dU/db, but O(1) in size
    return float(b - mmse_bernoulli(_snr(b, delta, sigma2), pi))


@dataclass
class PotentialCurve:
    delta: float
    pi: float
    sigma2: float
    grid: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    argmin_grid: float
    argmin: float
    stationary: list
    largest_stationary: float

    def meta(self) -> dict:
        d = asdict(self)
        for key in ("grid", "values"):
            d.pop(key)
        return d


def _root(fun, lo, hi):
    return brentq(fun, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)


def find_argmin_and_stationary(delta: float, pi: float, sigma2: float = NOISELESS_SIGMA2,
                               grid_size: int = 500) -> PotentialCurve:
    """Evaluate ``U`` on ``grid_size`` points of ``[0, Var]`` and locate its extrema.

    The grid minimiser (largest one when several are within 1e-12) is refined
    to a root of ``dU/db`` when the derivative changes sign around it, and by a
    bounded golden-section search otherwise.  Stationary points come from sign
    changes of ``dU/db`` on the grid, each refined by Brent's method.
    """
    if grid_size < 100:
        raise ValueError("grid_size must be at least 100")
    var = pi * (1.0 - pi)
    grid = np.linspace(0.0, var, grid_size)
    values = potential_value(grid, delta, pi, sigma2)
    if not np.all(np.isfinite(values)):
        raise FloatingPointError("potential is not finite on the grid")

    i = int(np.flatnonzero(values <= values.min() + 1e-12).max())
    argmin_grid = float(grid[i])
    gap = lambda b: _fixed_point_gap(b, delta, pi, sigma2)
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid_size - 1)]
    argmin = argmin_grid
    if gap(lo) < 0 < gap(hi):
        argmin = float(_root(gap, lo, hi))
    elif hi > lo and i not in (0, grid_size - 1):
        res = minimize_scalar(lambda b: potential_value(b, delta, pi, sigma2), bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-12})
        if res.fun <= values[i]:
            argmin = float(res.x)

    g = np.array([gap(b) for b in grid])
    roots = []
    if g[0] == 0.0:
        roots.append(0.0)
    for j in range(grid_size - 1):
        if g[j] < 0 < g[j + 1] or g[j] > 0 > g[j + 1]:
            roots.append(float(_root(gap, grid[j], grid[j + 1])))
        elif g[j + 1] == 0.0:
            roots.append(float(grid[j + 1]))
    largest = max(roots) if roots else float("nan")
    return PotentialCurve(delta=float(delta), pi=float(pi), sigma2=float(sigma2), grid=grid,
                          values=values, argmin_grid=argmin_grid, argmin=argmin,
                          stationary=roots, largest_stationary=largest)


def lemma_rate_check(delta: float, Delta: float, sigma_grid, pi: float = 0.1,
                     grid_size: int = 500) -> dict:
    """Compare the largest minimiser over ``(0, Var]`` with ``3.5 delta sigma^(2 - 2 Delta/delta)``.

    Returns the table of ``(sigma, argmin, bound, holds)`` rows sorted by
    decreasing ``sigma``, the largest ``sigma`` from which the bound holds for
    every smaller grid value (``sigma0``), and whether such a value exists.
    """
    if not 0.0 < Delta < delta:
        raise ValueError("Delta must lie in (0, delta)")
    rows = []
    for sigma in sorted(np.asarray(sigma_grid, dtype=float), reverse=True):
        curve = find_argmin_and_stationary(delta, pi, sigma ** 2, grid_size)
        bound = 3.5 * delta * sigma ** (2.0 - 2.0 * Delta / delta)
        rows.append({"sigma": float(sigma), "argmin": curve.argmin, "bound": float(bound),
                     "holds": bool(curve.argmin < bound)})
    sigma0 = None
    for row in reversed(rows):
        if not row["holds"]:
            break
        sigma0 = row["sigma"]
    return {"rows": rows, "sigma0": sigma0, "holds_below_sigma0": sigma0 is not None}


def write_curve(curve: PotentialCurve, path) -> tuple[Path, Path]:
    """Write ``b,U`` rows to ``path`` and the extrema to a JSON sidecar."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["b", "U"])
        for b, u in zip(curve.grid, curve.values):
            w.writerow([repr(float(b)), repr(float(u))])
    side = path.with_suffix(".json")
    side.write_text(json.dumps(curve.meta(), indent=2))
    return path, side
