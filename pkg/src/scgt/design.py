"""Spatially coupled Bernoulli test designs.

A design is built from an ``(omega, lambda)`` base matrix ``W`` of Bernoulli
parameters.  Each base entry is expanded into an ``(n/R) x (p/C)`` block with
entries drawn from ``Bernoulli(alpha * W[r, c])``.  The i.i.d. design is the
special case ``R = C = 1``, ``W = 1``.

The rescaled design ``Xt`` is only ever materialised on the band: for column
block ``c`` the nonzero row blocks are contiguous, so each column block keeps a
single dense slab of shape ``(n_rows_in_band, p / C)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

__all__ = [
    "BaseMatrix",
    "DesignPair",
    "build_base_matrix",
    "trivial_base_matrix",
    "sample_design",
    "design_from_binary",
    "variance_profile",
    "dump_design",
    "load_design",
]

_SAMPLE_CHUNK = 1 << 22  # entries drawn per RNG call when filling a block


@dataclass(frozen=True, eq=False)
class BaseMatrix:
    """``R x C`` profile of Bernoulli parameters for a coupled design."""

    omega: int
    lam: int
    alpha: float
    W: np.ndarray = field(repr=False)

    @property
    def R(self) -> int:
        return self.W.shape[0]

    @property
    def C(self) -> int:
        return self.W.shape[1]

    @property
    def band(self) -> np.ndarray:
        """Boolean mask of the nonzero entries of ``W``."""
        return self.W > 0

    @property
    def W_tilde(self) -> np.ndarray:
        """Variance profile ``W(1 - alpha W) / (1 - alpha)``.

        For the ``(omega, lambda)`` family this is ``1/omega`` on the band; the
        closed form is used there so that columns sum to one to rounding.
        """
        Wt = np.zeros_like(self.W)
        Wt[self.band] = 1.0 / self.omega
        return Wt

    def W_tilde_formula(self) -> np.ndarray:
        a = self.alpha
        return self.W * (1.0 - a * self.W) / (1.0 - a)

    def row_range(self, c: int) -> tuple[int, int]:
        """Half-open range of row blocks that are nonzero in column block ``c``."""
        rows = np.flatnonzero(self.band[:, c])
        return int(rows[0]), int(rows[-1]) + 1

    @property
    def is_trivial(self) -> bool:
        return self.R == 1 and self.C == 1


def _band_value(omega: int, alpha: float) -> float:
    disc = 1.0 - 4.0 * alpha * (1.0 - alpha) / omega
    if disc < 0:
        raise ValueError(f"negative discriminant for omega={omega}, alpha={alpha}")
    root = np.sqrt(disc)
    if omega == 1:
        return 1.0  # both roots reduce to 1; avoid rounding past it
    if alpha <= 0.5:
        return (1.0 - root) / (2.0 * alpha)
    return (1.0 + root) / (2.0 * alpha)


def build_base_matrix(omega: int, lam: int, alpha: float = 0.5) -> BaseMatrix:
    """Band base matrix with coupling width ``omega`` and coupling length ``lam``.

    The nonzero value is chosen so that ``W(1 - alpha W)/(1 - alpha) = 1/omega``,
    which makes the rescaled block variances independent of ``alpha``.
    """
    omega, lam = int(omega), int(lam)
    if omega < 1:
        raise ValueError(f"omega must be >= 1, got {omega}")
    if lam < 2 * omega - 1:
        raise ValueError(f"lambda must be >= 2*omega - 1 = {2 * omega - 1}, got {lam}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    value = _band_value(omega, alpha)
    R, C = lam + omega - 1, lam
    W = np.zeros((R, C))
    for c in range(C):
        W[c:c + omega, c] = value
    W.setflags(write=False)
    return BaseMatrix(omega=omega, lam=lam, alpha=float(alpha), W=W)


def trivial_base_matrix(alpha: float = 0.5) -> BaseMatrix:
    """The ``1 x 1`` base matrix ``W = [[1]]`` of the i.i.d. design."""
    return build_base_matrix(1, 1, alpha)


@dataclass(frozen=True, eq=False)
class DesignPair:
    """A binary design ``X`` together with its recentred, rescaled form.

    ``slabs[c]`` holds ``Xt[rows, cols]`` for column block ``c`` where ``rows``
    spans the row blocks on the band; everything outside the slabs is zero.
    """

    base: BaseMatrix
    n: int
    p: int
    kind: str
    seed: int | None
    X: np.ndarray = field(repr=False)
    slabs: tuple = field(repr=False)

    def __post_init__(self):
        _check_divisible(self.base, self.n, self.p)

    # -- block geometry -------------------------------------------------
    @property
    def R(self) -> int:
        return self.base.R

    @property
    def C(self) -> int:
        return self.base.C

    @property
    def alpha(self) -> float:
        return self.base.alpha

    @property
    def rows_per_block(self) -> int:
        return self.n // self.R

    @property
    def cols_per_block(self) -> int:
        return self.p // self.C

    @property
    def delta(self) -> float:
        return self.n / self.p

    @property
    def delta_in(self) -> float:
        return (self.n / self.R) / (self.p / self.C)

    @property
    def scale(self) -> float:
        """``sqrt(n alpha (1 - alpha) / R)``, the rescaling denominator."""
        a = self.alpha
        return float(np.sqrt(self.n * a * (1.0 - a) / self.R))

    @property
    def row_block_of(self) -> np.ndarray:
        return np.repeat(np.arange(self.R), self.rows_per_block)

    @property
    def col_block_of(self) -> np.ndarray:
        return np.repeat(np.arange(self.C), self.cols_per_block)

    def row_slice(self, r_lo: int, r_hi: int | None = None) -> slice:
        if r_hi is None:
            r_hi = r_lo + 1
        m = self.rows_per_block
        return slice(r_lo * m, r_hi * m)

    def col_slice(self, c: int) -> slice:
        q = self.cols_per_block
        return slice(c * q, (c + 1) * q)

    def iter_slabs(self) -> Iterator[tuple[int, range, slice, slice, np.ndarray]]:
        """Yield ``(c, row_blocks, rows, cols, slab)`` for every column block."""
        for c in range(self.C):
            lo, hi = self.base.row_range(c)
            yield c, range(lo, hi), self.row_slice(lo, hi), self.col_slice(c), self.slabs[c]

    # -- products -------------------------------------------------------
    def matvec(self, v: np.ndarray) -> np.ndarray:
        """``Xt @ v`` for ``v`` of shape ``(p,)`` or ``(p, L)``."""
        v = np.asarray(v, dtype=float)
        out = np.zeros((self.n,) + v.shape[1:])
        for _, _, rows, cols, slab in self.iter_slabs():
            out[rows] += slab @ v[cols]
        return out

    def rmatvec(self, u: np.ndarray) -> np.ndarray:
        """``Xt.T @ u`` for ``u`` of shape ``(n,)`` or ``(n, L)``."""
        u = np.asarray(u, dtype=float)
        out = np.empty((self.p,) + u.shape[1:])
        for _, _, rows, cols, slab in self.iter_slabs():
            out[cols] = slab.T @ u[rows]
        return out

    def raw_matvec(self, v: np.ndarray) -> np.ndarray:
        """``X @ v`` computed from the binary design."""
        v = np.asarray(v, dtype=float)
        out = np.zeros((self.n,) + v.shape[1:])
        step = 2048
        for _, _, rows, cols, _ in self.iter_slabs():
            for start in range(rows.start, rows.stop, step):
                chunk = slice(start, min(start + step, rows.stop))
                out[chunk] += self.X[chunk, cols].astype(float) @ v[cols]
        return out

    @property
    def Xt(self) -> np.ndarray:
        """Dense rescaled design (allocates ``n x p`` floats)."""
        out = np.zeros((self.n, self.p))
        for _, _, rows, cols, slab in self.iter_slabs():
            out[rows, cols] = slab
        return out

    def items_per_test(self) -> np.ndarray:
        return self.X.sum(axis=1, dtype=np.int64)


def _check_divisible(base: BaseMatrix, n: int, p: int) -> None:
    if n < 1 or p < 1:
        raise ValueError(f"n and p must be positive, got n={n}, p={p}")
    bad = []
    if n % base.R:
        bad.append(f"n={n} is not a multiple of R={base.R}")
    if p % base.C:
        bad.append(f"p={p} is not a multiple of C={base.C}")
    if bad:
        raise ValueError("; ".join(bad))


def _block_rng(seed, r: int, c: int) -> np.random.Generator:
    if seed is None:
        return np.random.default_rng()
    return np.random.default_rng([int(seed), int(r), int(c)])


def _fill_bernoulli(out: np.ndarray, prob: float, rng: np.random.Generator) -> None:
    rows_per_chunk = max(1, _SAMPLE_CHUNK // max(out.shape[1], 1))
    for start in range(0, out.shape[0], rows_per_chunk):
        chunk = out[start:start + rows_per_chunk]
        chunk[...] = rng.random(chunk.shape) < prob


def _rescale_slabs(base: BaseMatrix, X: np.ndarray, n: int, p: int) -> tuple:
    a = base.alpha
    scale = np.sqrt(n * a * (1.0 - a) / base.R)
    m, q = n // base.R, p // base.C
    slabs = []
    for c in range(base.C):
        lo, hi = base.row_range(c)
        slab = X[lo * m:hi * m, c * q:(c + 1) * q].astype(float)
        centre = np.repeat(a * base.W[lo:hi, c], m)[:, None]
        slab -= centre
        slab /= scale
        slab.setflags(write=False)
        slabs.append(slab)
    return tuple(slabs)


def sample_design(base: BaseMatrix, n: int, p: int, seed=None, kind: str = "sc") -> DesignPair:
    """Draw a design with entries ``X_ij ~ Bernoulli(alpha W[r(i), c(j)])``.

    Each block ``(r, c)`` uses its own generator keyed by ``(seed, r, c)`` so
    the result does not depend on sampling order.  ``kind="iid"`` replaces the
    base matrix by the trivial one with the same ``alpha``.
    """
    kind = kind.lower()
    if kind not in ("sc", "iid"):
        raise ValueError(f"kind must be 'sc' or 'iid', got {kind!r}")
    if kind == "iid":
        base = trivial_base_matrix(base.alpha)
    n, p = int(n), int(p)
    _check_divisible(base, n, p)
    m, q = n // base.R, p // base.C
    X = np.zeros((n, p), dtype=np.uint8)
    for c in range(base.C):
        for r in range(*base.row_range(c)):
            block = X[r * m:(r + 1) * m, c * q:(c + 1) * q]
            _fill_bernoulli(block, base.alpha * base.W[r, c], _block_rng(seed, r, c))
    X.setflags(write=False)
    return DesignPair(base=base, n=n, p=p, kind=kind, seed=seed, X=X,
                      slabs=_rescale_slabs(base, X, n, p))


def design_from_binary(X, base: BaseMatrix, kind: str | None = None) -> DesignPair:
    """Wrap a user-supplied binary design; entries off the band must be zero."""
    X = np.asarray(X)
    if X.ndim != 2:
        raise ValueError(f"X must be 2-D, got shape {X.shape}")
    if not np.isin(X, (0, 1)).all():
        raise ValueError("X must be binary")
    n, p = X.shape
    _check_divisible(base, n, p)
    m, q = n // base.R, p // base.C
    mask = np.kron(base.band, np.ones((m, q), dtype=bool))
    if X[~mask].any():
        raise ValueError("X has nonzero entries outside the band of the base matrix")
    X = X.astype(np.uint8)
    X.setflags(write=False)
    if kind is None:
        kind = "iid" if base.is_trivial else "sc"
    return DesignPair(base=base, n=n, p=p, kind=kind, seed=None, X=X,
                      slabs=_rescale_slabs(base, X, n, p))


def variance_profile(design: DesignPair) -> np.ndarray:
    """Per-block variance ``R * W_tilde[r, c] / n`` of the rescaled entries."""
    return design.R * design.base.W_tilde / design.n


def dump_design(design: DesignPair, path) -> tuple[Path, Path]:
    """Write nonzero ``(i, j, X_ij)`` triples as CSV plus a JSON header."""
    path = Path(path)
    csv_path = path.with_suffix(".csv")
    json_path = path.with_suffix(".json")
    header = {
        "omega": design.base.omega,
        "lambda": design.base.lam,
        "alpha": design.alpha,
        "n": design.n,
        "p": design.p,
        "seed": design.seed,
        "kind": design.kind,
    }
    ii, jj = np.nonzero(design.X)
    with open(csv_path, "w") as fh:
        fh.write("i,j,x\n")
        np.savetxt(fh, np.column_stack([ii, jj, np.ones_like(ii)]), fmt="%d", delimiter=",")
    json_path.write_text(json.dumps(header, indent=2))
    return csv_path, json_path


def load_design(path) -> DesignPair:
    """Rebuild a design written by :func:`dump_design`."""
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    data = np.loadtxt(path.with_suffix(".csv"), delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    X = np.zeros((header["n"], header["p"]), dtype=np.uint8)
    if data.size:
        X[data[:, 0], data[:, 1]] = 1
    base = build_base_matrix(header["omega"], header["lambda"], header["alpha"])
    design = design_from_binary(X, base, kind=header["kind"])
    return DesignPair(base=design.base, n=design.n, p=design.p, kind=design.kind,
                      seed=header["seed"], X=design.X, slabs=design.slabs)
