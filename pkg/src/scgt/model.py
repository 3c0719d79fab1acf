"""QGT and pooled-data instances: signals, noisy observations, rescaling.

Observations are generated from the raw binary design and then recentred and
rescaled so that ``yt = Xt @ beta + psi_t`` holds exactly, where ``psi_t`` is
the raw noise divided by the design's rescaling constant.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .design import DesignPair

__all__ = [
    "QgtInstance",
    "PooledInstance",
    "sample_qgt_signal",
    "sample_pooled_signal",
    "observe_qgt",
    "observe_pooled",
    "rescale_qgt",
    "rescale_pooled",
    "block_sums",
    "prior_block_sums",
    "raw_noise_variance",
    "save_instance",
    "load_instance",
]

SCHEMA = "scgt.instance/1"

NoiseSampler = Callable[[np.random.Generator, tuple, float], np.ndarray]


def _gaussian(rng: np.random.Generator, shape: tuple, var: float) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(var), size=shape)


@dataclass(frozen=True, eq=False)
class QgtInstance:
    beta: np.ndarray = field(repr=False)
    pi: float
    d: int
    psi: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    yt: np.ndarray = field(repr=False)
    sigma2: float
    sums: np.ndarray = field(repr=False)
    scale: float = 1.0
    seed: int | None = None

    @property
    def psi_t(self) -> np.ndarray:
        """Rescaled noise ``psi / scale``."""
        return self.psi / self.scale


@dataclass(frozen=True, eq=False)
class PooledInstance:
    B: np.ndarray = field(repr=False)
    pi: np.ndarray
    Psi: np.ndarray = field(repr=False)
    Y: np.ndarray = field(repr=False)
    Yt: np.ndarray = field(repr=False)
    noise_cov: np.ndarray
    sums: np.ndarray = field(repr=False)
    scale: float = 1.0
    seed: int | None = None

    @property
    def L(self) -> int:
        return self.B.shape[1]

    @property
    def Psi_t(self) -> np.ndarray:
        return self.Psi / self.scale


def _check_pi_vector(pi) -> np.ndarray:
    pi = np.atleast_1d(np.asarray(pi, dtype=float))
    if pi.ndim != 1 or (pi < 0).any():
        raise ValueError("pi must be a nonnegative vector")
    if abs(pi.sum() - 1.0) > 1e-12:
        raise ValueError(f"pi must sum to 1 within 1e-12, got {pi.sum()!r}")
    return pi


def sample_qgt_signal(p: int, pi: float, seed=None) -> np.ndarray:
    """i.i.d. ``Bernoulli(pi)`` defectivity vector as ``float`` zeros and ones."""
    if p < 1:
        raise ValueError("p must be positive")
    if not 0.0 <= pi <= 1.0:
        raise ValueError(f"pi must lie in [0, 1], got {pi}")
    rng = np.random.default_rng(seed)
    return (rng.random(p) < pi).astype(float)


def sample_pooled_signal(p: int, pi, seed=None) -> np.ndarray:
    """``p x L`` matrix whose rows are one-hot draws from ``Categorical(pi)``."""
    pi = _check_pi_vector(pi)
    rng = np.random.default_rng(seed)
    labels = rng.choice(len(pi), size=p, p=pi)
    return np.eye(len(pi))[labels]


def block_sums(design: DesignPair, signal: np.ndarray) -> np.ndarray:
    """Per column block sums ``S_c`` of the signal, shape ``(C,)`` or ``(C, L)``."""
    signal = np.asarray(signal, dtype=float)
    return signal.reshape((design.C, design.cols_per_block) + signal.shape[1:]).sum(axis=1)


def prior_block_sums(design: DesignPair, pi) -> np.ndarray:
    """``p pi / C`` for every block; the large-sample stand-in for true sums."""
    pi = np.asarray(pi, dtype=float)
    return np.broadcast_to(design.cols_per_block * pi, (design.C,) + pi.shape).copy()


def raw_noise_variance(design: DesignPair, sigma2: float) -> float:
    """Raw noise variance that gives rescaled noise of second moment ``sigma2``."""
    return sigma2 * design.scale ** 2


def _offsets(design: DesignPair, sums: np.ndarray) -> np.ndarray:
    # alpha * sum_c W[r, c] S_c for every row block, expanded to rows
    per_block = design.alpha * np.tensordot(design.base.W, sums, axes=(1, 0))
    return np.repeat(per_block, design.rows_per_block, axis=0)


def rescale_qgt(design: DesignPair, y, sums) -> np.ndarray:
    """Recentre and rescale raw counts: ``(y - alpha sum_c W S_c) / scale``."""
    y = np.asarray(y, dtype=float)
    sums = np.asarray(sums, dtype=float)
    if y.shape != (design.n,):
        raise ValueError(f"y must have shape ({design.n},), got {y.shape}")
    if sums.shape != (design.C,):
        raise ValueError(f"block sums must have shape ({design.C},), got {sums.shape}")
    return (y - _offsets(design, sums)) / design.scale


def rescale_pooled(design: DesignPair, Y, sums) -> np.ndarray:
    Y = np.asarray(Y, dtype=float)
    sums = np.asarray(sums, dtype=float)
    if Y.ndim != 2 or Y.shape[0] != design.n:
        raise ValueError(f"Y must have shape ({design.n}, L), got {Y.shape}")
    if sums.shape != (design.C, Y.shape[1]):
        raise ValueError(f"block sums must have shape ({design.C}, {Y.shape[1]}), got {sums.shape}")
    return (Y - _offsets(design, sums)) / design.scale


def _noise_var(design, noise_var, noise_scaling):
    if noise_var < 0:
        raise ValueError("noise variance must be nonnegative")
    if noise_scaling == "rescaled":
        return raw_noise_variance(design, noise_var), float(noise_var)
    if noise_scaling == "raw":
        return float(noise_var), float(noise_var) / design.scale ** 2
    raise ValueError(f"noise_scaling must be 'rescaled' or 'raw', got {noise_scaling!r}")


def observe_qgt(design: DesignPair, beta, noise_var: float = 0.0, *, noise_scaling: str = "rescaled",
                seed=None, sums: str = "true", pi: float | None = None,
                sampler: NoiseSampler | None = None) -> QgtInstance:
    """Run the tests ``y = X beta + psi`` and rescale them.

    ``noise_scaling="rescaled"`` interprets ``noise_var`` as the variance of the
    rescaled noise; ``"raw"`` as the variance of ``psi`` itself.  ``sums="prior"``
    replaces the true block sums by ``p pi / C`` (requires ``pi``).
    """
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (design.p,):
        raise ValueError(f"beta must have shape ({design.p},), got {beta.shape}")
    raw_var, sigma2 = _noise_var(design, noise_var, noise_scaling)
    rng = np.random.default_rng(seed)
    sampler = sampler or _gaussian
    psi = sampler(rng, (design.n,), raw_var) if raw_var > 0 else np.zeros(design.n)
    y = design.raw_matvec(beta) + psi
    if pi is None:
        pi = float(beta.mean())
    S = block_sums(design, beta) if sums == "true" else prior_block_sums(design, pi)
    yt = rescale_qgt(design, y, S)
    return QgtInstance(beta=beta, pi=float(pi), d=int(beta.sum()), psi=psi, y=y, yt=yt,
                       sigma2=sigma2, sums=S, scale=design.scale, seed=seed)


def observe_pooled(design: DesignPair, B, noise_var=0.0, *, noise_scaling: str = "rescaled",
                   seed=None, sums: str = "true", pi=None) -> PooledInstance:
    """Pooled analogue of :func:`observe_qgt`.

    ``noise_var`` is a scalar (independent columns) or an ``L x L`` covariance.
    """
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or B.shape[0] != design.p:
        raise ValueError(f"B must have shape ({design.p}, L), got {B.shape}")
    if not np.allclose(B.sum(axis=1), 1.0):
        raise ValueError("rows of B must be one-hot")
    L = B.shape[1]
    cov = np.asarray(noise_var, dtype=float)
    cov = cov * np.eye(L) if cov.ndim == 0 else cov
    if cov.shape != (L, L):
        raise ValueError(f"noise covariance must be {L}x{L}")
    if noise_scaling == "rescaled":
        raw_cov, noise_cov = cov * design.scale ** 2, cov
    elif noise_scaling == "raw":
        raw_cov, noise_cov = cov, cov / design.scale ** 2
    else:
        raise ValueError(f"noise_scaling must be 'rescaled' or 'raw', got {noise_scaling!r}")
    rng = np.random.default_rng(seed)
    if np.any(raw_cov):
        Psi = rng.multivariate_normal(np.zeros(L), raw_cov, size=design.n)
    else:
        Psi = np.zeros((design.n, L))
    Y = design.raw_matvec(B) + Psi
    pi = B.mean(axis=0) if pi is None else _check_pi_vector(pi)
    S = block_sums(design, B) if sums == "true" else prior_block_sums(design, pi)
    Yt = rescale_pooled(design, Y, S)
    return PooledInstance(B=B, pi=np.asarray(pi, dtype=float), Psi=Psi, Y=Y, Yt=Yt,
                          noise_cov=noise_cov, sums=S, scale=design.scale, seed=seed)


def save_instance(instance, path) -> tuple[Path, Path]:
    """Write a JSON header and an ``.npz`` payload next to each other."""
    path = Path(path)
    if isinstance(instance, QgtInstance):
        header = {"schema": SCHEMA, "task": "qgt", "pi": instance.pi, "d": instance.d,
                  "sigma2": instance.sigma2, "scale": instance.scale, "seed": instance.seed}
        arrays = {"signal": instance.beta, "y": instance.y, "yt": instance.yt,
                  "psi": instance.psi, "sums": instance.sums}
    elif isinstance(instance, PooledInstance):
        header = {"schema": SCHEMA, "task": "pooled", "pi": instance.pi.tolist(),
                  "noise_cov": np.asarray(instance.noise_cov).tolist(), "scale": instance.scale,
                  "seed": instance.seed}
        arrays = {"signal": instance.B, "y": instance.Y, "yt": instance.Yt,
                  "psi": instance.Psi, "sums": instance.sums}
    else:
        raise TypeError(f"cannot save {type(instance).__name__}")
    json_path, npz_path = path.with_suffix(".json"), path.with_suffix(".npz")
    json_path.write_text(json.dumps(header, indent=2))
    np.savez(npz_path, **arrays)
    return json_path, npz_path


def load_instance(path):
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    if header.get("schema") != SCHEMA:
        raise ValueError(f"unsupported instance schema {header.get('schema')!r}")
    with np.load(path.with_suffix(".npz")) as data:
        arrays = {k: data[k] for k in data.files}
    if header["task"] == "qgt":
        return QgtInstance(beta=arrays["signal"], pi=header["pi"], d=header["d"], psi=arrays["psi"],
                           y=arrays["y"], yt=arrays["yt"], sigma2=header["sigma2"],
                           sums=arrays["sums"], scale=header["scale"], seed=header["seed"])
    return PooledInstance(B=arrays["signal"], pi=np.asarray(header["pi"]), Psi=arrays["psi"],
                          Y=arrays["y"], Yt=arrays["yt"], noise_cov=np.asarray(header["noise_cov"]),
                          sums=arrays["sums"], scale=header["scale"], seed=header["seed"])
