"""Finite measure spaces, weighted inner products and orthonormalized subspaces.

Functions on a space of ``n`` atoms are plain float arrays of shape ``(n,)``.
A subspace is stored twice: as the raw spanning columns supplied by the user
and as a basis that is orthonormal for the ``mu``-weighted inner product, so
that Euclidean norms of coefficient vectors equal ``L2(mu)`` norms of the
functions they represent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionError, MeasureError, TrivialSubspaceError

DEFAULT_RANK_TOL = 1e-10
_MASS_TOL = 1e-12


@dataclass(frozen=True)
class DiscreteSpace:
    """``n`` atoms, optionally labelled and optionally laid out on a grid.

    ``shape`` is set for product spaces; atoms are then the C-order
    flattening of ``np.indices(shape)``.
    """

    n: int
    labels: tuple | None = None
    shape: tuple[int, ...] | None = None

    def __post_init__(self):
        if int(self.n) < 1:
            raise DimensionError(f"a space needs at least one atom, got n={self.n}")
        if self.labels is not None:
            labels = tuple(tuple(l) if isinstance(l, list) else l for l in self.labels)
            if len(labels) != self.n:
                raise DimensionError(f"{len(labels)} labels for {self.n} atoms")
            if len(set(labels)) != len(labels):
                raise DimensionError("atom labels must be pairwise distinct")
            object.__setattr__(self, "labels", labels)
        if self.shape is not None:
            shape = tuple(int(s) for s in self.shape)
            if int(np.prod(shape)) != self.n:
                raise DimensionError(f"grid shape {shape} does not hold {self.n} atoms")
            object.__setattr__(self, "shape", shape)


@dataclass(frozen=True)
class Measure:
    """A strictly positive probability vector."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.size == 0:
            raise MeasureError("empty measure")
        if not np.all(np.isfinite(w)):
            raise MeasureError("measure weights must be finite")
        bad = np.flatnonzero(w <= 0)
        if bad.size:
            raise MeasureError(
                f"measure must have full support; atom {bad[0]} has weight {w[bad[0]]!r}"
            )
        total = w.sum()
        if abs(total - 1.0) > _MASS_TOL:
            raise MeasureError(f"measure weights sum to {total!r}, not 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.weights.size

    @property
    def sqrt(self) -> np.ndarray:
        return np.sqrt(self.weights)

    @classmethod
    def normalized(cls, weights) -> "Measure":
        """Rescale positive weights to unit mass."""
        w = np.asarray(weights, dtype=float).reshape(-1)
        return cls(w / w.sum())

    @classmethod
    def uniform(cls, n: int) -> "Measure":
        return cls(np.full(n, 1.0 / n))


@dataclass(frozen=True)
class Subspace:
    """Column span of ``raw_basis`` with a ``mu``-orthonormal basis of it."""

    raw_basis: np.ndarray
    ortho_basis: np.ndarray
    name: str = ""
    singular_values: np.ndarray = field(default=None, repr=False)

    @property
    def rank(self) -> int:
        return self.ortho_basis.shape[1]

    @property
    def n(self) -> int:
        return self.ortho_basis.shape[0]

    def weighted(self, mu: Measure) -> np.ndarray:
        """Euclidean-orthonormal image ``diag(sqrt(mu)) @ Q`` in R^n."""
        return mu.sqrt[:, None] * self.ortho_basis


def _check_len(a: np.ndarray, b: np.ndarray, what: str = "functions"):
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"{what} have lengths {a.shape[0]} and {b.shape[0]}")


def weighted_inner(f, g, mu: Measure) -> float:
    """``sum_x mu(x) f(x) g(x)``."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    _check_len(f, g)
    _check_len(f, mu.weights, "function and measure")
    return float(np.dot(mu.weights * f, g))


def weighted_norm(f, mu: Measure) -> float:
    return float(np.sqrt(weighted_inner(f, f, mu)))


def orthonormalize(raw, mu: Measure, rank_tol: float = DEFAULT_RANK_TOL, name: str = "") -> Subspace:
    """Build a ``mu``-orthonormal basis for the column span of ``raw``.

    Parameters
    ----------
    raw : array-like, shape (n, d)
        Spanning functions as columns. A 1-D array is read as one column.
    mu : Measure
    rank_tol : float
        Singular values of ``diag(sqrt(mu)) @ raw`` below ``rank_tol`` times
        the largest one are treated as zero.

    Returns
    -------
    Subspace

    Raises
    ------
    TrivialSubspaceError
        If every column is numerically null.
    """
    if rank_tol <= 0:
        raise ValueError("rank_tol must be positive")
    raw = np.array(raw, dtype=float)
    if raw.ndim == 1:
        raw = raw[:, None]
    if raw.ndim != 2 or raw.shape[1] < 1:
        raise DimensionError(f"raw basis must be an n x d array with d >= 1, got shape {raw.shape}")
    _check_len(raw, mu.weights, "basis and measure")
    if not np.all(np.isfinite(raw)):
        raise DimensionError("raw basis contains non-finite entries")
    weighted = mu.sqrt[:, None] * raw
    u, s, _ = np.linalg.svd(weighted, full_matrices=False)
    if s.size == 0 or s[0] <= np.finfo(float).tiny:
        raise TrivialSubspaceError(f"subspace {name or '<unnamed>'} is trivial: all columns are null")
    r = int(np.sum(s > rank_tol * s[0]))
    u = u[:, :r]
    # Sign convention makes the basis deterministic up to LAPACK itself.
    signs = np.sign(u[np.argmax(np.abs(u), axis=0), np.arange(r)])
    signs[signs == 0] = 1.0
    q = (u * signs) / mu.sqrt[:, None]
    raw.setflags(write=False)
    q.setflags(write=False)
    return Subspace(raw_basis=raw, ortho_basis=q, name=name, singular_values=s)


@dataclass(frozen=True)
class PotentialTuple:
    """Dual potentials ``(h_1, ..., h_N)`` as coefficient vectors.

    ``thetas[i]`` holds coordinates in the orthonormal basis of subspace ``i``.
    """

    thetas: tuple

    def __post_init__(self):
        thetas = tuple(np.array(t, dtype=float).reshape(-1) for t in self.thetas)
        object.__setattr__(self, "thetas", thetas)

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(t.size for t in self.thetas)

    def stacked(self) -> np.ndarray:
        if not self.thetas:
            return np.zeros(0)
        return np.concatenate(self.thetas)

    def replace(self, i: int, theta) -> "PotentialTuple":
        thetas = list(self.thetas)
        thetas[i] = theta
        return PotentialTuple(tuple(thetas))

    @classmethod
    def zeros(cls, ranks: Sequence[int]) -> "PotentialTuple":
        return cls(tuple(np.zeros(r) for r in ranks))

    @classmethod
    def from_stacked(cls, vec, ranks: Sequence[int]) -> "PotentialTuple":
        vec = np.asarray(vec, dtype=float).reshape(-1)
        if vec.size != sum(ranks):
            raise DimensionError(f"stacked vector has length {vec.size}, ranks sum to {sum(ranks)}")
        cuts = np.cumsum(ranks)[:-1]
        return cls(tuple(np.split(vec, cuts)))


def component_fields(subspaces: Sequence[Subspace], h: PotentialTuple) -> list[np.ndarray]:
    """The functions ``h_i = Q_i theta_i`` on the atoms."""
    if len(subspaces) != len(h.thetas):
        raise DimensionError(f"{len(h.thetas)} potentials for {len(subspaces)} subspaces")
    n = {sub.n for sub in subspaces}
    if len(n) > 1:
        raise DimensionError(f"subspaces live on spaces of different sizes {sorted(n)}")
    out = []
    for sub, theta in zip(subspaces, h.thetas):
        if theta.size != sub.rank:
            raise DimensionError(
                f"potential for {sub.name or 'subspace'} has length {theta.size}, rank is {sub.rank}"
            )
        out.append(sub.ortho_basis @ theta)
    return out


def sum_field(subspaces: Sequence[Subspace], h: PotentialTuple) -> np.ndarray:
    """Pointwise sum ``h_1 + ... + h_N``."""
    fields = component_fields(subspaces, h)
    return np.sum(fields, axis=0)


def sup_distance(f, c) -> float:
    """``max_x |f(x) - c(x)|``; the ``L-infinity(mu)`` norm under full support."""
    f = np.asarray(f, dtype=float)
    c = np.asarray(c, dtype=float)
    _check_len(f, c)
    return float(np.max(np.abs(f - c)))
