"""Sum operator, quotient norms and Friedrichs angles.

Everything is computed in orthonormal coordinates: a tuple of potentials is
a stacked coefficient vector ``v`` and the sum operator is the ``n x sum(r_i)``
matrix ``A = [diag(sqrt(mu)) Q_1, ..., diag(sqrt(mu)) Q_N]``, so that
``||A v||_2`` is the ``L2(mu)`` norm of the summed field and ``||v||_2`` is
the product norm of the tuple. Operator norms of the factored operator are
then the extreme nonzero singular values of ``A``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    ContainmentError,
    DegenerateInstanceError,
    DimensionError,
    SumNotClosedError,
    TrivialSubspaceError,
)
from .measure import DEFAULT_RANK_TOL, Measure, PotentialTuple, Subspace, orthonormalize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SumOperator:
    blocks: tuple
    mu: Measure
    assembled: np.ndarray
    singular_values: np.ndarray
    kernel_basis: np.ndarray
    rank: int
    rank_tol: float
    # indices of blocks lying inside the span of the remaining ones
    standing_violations: tuple = ()

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(b.shape[1] for b in self.blocks)

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def kernel_dim(self) -> int:
        return self.kernel_basis.shape[1]

    def apply(self, h) -> np.ndarray:
        """Euclidean image ``A v``; its norm is ``||h_1 + ... + h_N||_L2``."""
        return self.assembled @ _as_vector(h, self.ranks)


def _as_vector(h, ranks) -> np.ndarray:
    if isinstance(h, PotentialTuple):
        if h.ranks != tuple(ranks):
            raise DimensionError(f"potential ranks {h.ranks} do not match blocks {tuple(ranks)}")
        return h.stacked()
    v = np.asarray(h, dtype=float).reshape(-1)
    if v.size != sum(ranks):
        raise DimensionError(f"coefficient vector has length {v.size}, blocks need {sum(ranks)}")
    return v


def _numerical_rank(s: np.ndarray, rank_tol: float) -> int:
    if s.size == 0 or s[0] <= 0:
        return 0
    return int(np.sum(s > rank_tol * s[0]))


def assemble_sum_operator(subspaces: Sequence[Subspace], mu: Measure, rank_tol: float = DEFAULT_RANK_TOL) -> SumOperator:
    """Assemble the sum operator of ``subspaces`` and its kernel."""
    if not subspaces:
        raise DimensionError("need at least one subspace")
    for sub in subspaces:
        if sub.n != mu.n:
            raise DimensionError(f"subspace {sub.name!r} has {sub.n} atoms, measure has {mu.n}")
    blocks = tuple(sub.ortho_basis for sub in subspaces)
    A = np.hstack([sub.weighted(mu) for sub in subspaces])
    _, s, vt = np.linalg.svd(A, full_matrices=True)
    rank = _numerical_rank(s, rank_tol)
    kernel = vt[rank:].T.copy()

    violations = []
    if len(subspaces) > 1:
        offsets = np.concatenate([[0], np.cumsum([b.shape[1] for b in blocks])])
        for i in range(len(blocks)):
            rest = np.delete(A, np.s_[offsets[i]:offsets[i + 1]], axis=1)
            s_rest = np.linalg.svd(rest, compute_uv=False)
            if _numerical_rank(s_rest, rank_tol) == rank:
                violations.append(i)
        if violations:
            names = [subspaces[i].name or str(i) for i in violations]
            log.warning("subspaces %s lie in the span of the others", names)
    for arr in (A, s, kernel):
        arr.setflags(write=False)
    return SumOperator(
        blocks=blocks,
        mu=mu,
        assembled=A,
        singular_values=s,
        kernel_basis=kernel,
        rank=rank,
        rank_tol=rank_tol,
        standing_violations=tuple(violations),
    )


@dataclass(frozen=True)
class AngleReport:
    cos_angle: float
    dim_intersection: int
    dims_complements: tuple[int, int]
    effectively_non_closed: bool = False

    @property
    def intersection_trivial(self) -> bool:
        return self.dim_intersection == 0


@dataclass(frozen=True)
class GeometryReport:
    norm_S: float
    norm_S_inv: float
    condition: float
    kernel_dim: int
    rank: int
    pairwise: AngleReport | None = None
    standing_violations: tuple = ()

    @property
    def delta(self) -> float:
        return 1.0 / self.norm_S_inv


def operator_norms(op: SumOperator, pairwise: AngleReport | None = None) -> GeometryReport:
    """``||S^||`` and ``||S^^-1||`` from the singular values of the assembled operator."""
    if op.rank == 0:
        raise DegenerateInstanceError("no singular value of the sum operator exceeds the rank tolerance")
    s = op.singular_values
    norm_s = float(s[0])
    norm_inv = float(1.0 / s[op.rank - 1])
    return GeometryReport(
        norm_S=norm_s,
        norm_S_inv=norm_inv,
        condition=norm_s * norm_inv,
        kernel_dim=op.kernel_dim,
        rank=op.rank,
        pairwise=pairwise,
        standing_violations=op.standing_violations,
    )


def project_out_kernel(h, op: SumOperator) -> np.ndarray:
    """Minimal-norm representative of the class of ``h`` modulo the kernel."""
    v = _as_vector(h, op.ranks)
    K = op.kernel_basis
    if K.shape[1] == 0:
        return v
    return v - K @ (K.T @ v)


def quotient_norm(h, op: SumOperator) -> float:
    """Quotient norm of the class of ``h`` modulo the kernel of the sum operator."""
    return float(np.linalg.norm(project_out_kernel(h, op)))


def sum_norm(h, op: SumOperator) -> float:
    """``L2(mu)`` norm of the summed field ``h_1 + ... + h_N``."""
    return float(np.linalg.norm(op.apply(h)))


def _weighted_pair(H1: Subspace, H2: Subspace, mu: Measure):
    if H1.n != mu.n or H2.n != mu.n:
        raise DimensionError(f"subspaces have {H1.n} and {H2.n} atoms, measure has {mu.n}")
    return H1.weighted(mu), H2.weighted(mu)


def _orth_columns(M: np.ndarray) -> np.ndarray:
    # Columns here are images of orthonormal frames under an orthogonal
    # projector, so their singular values are 0 or 1 up to rounding.
    if M.shape[1] == 0:
        return M
    u, s, _ = np.linalg.svd(M, full_matrices=False)
    return u[:, s > 0.5]


def friedrichs_angle(H1: Subspace, H2: Subspace, mu: Measure, rank_tol: float = DEFAULT_RANK_TOL) -> AngleReport:
    """Cosine of the Friedrichs angle between two subspaces of ``L2(mu)``.

    The intersection is read off the null space of ``[B1, -B2]`` (weighted
    orthonormal bases), each subspace is reduced to its part orthogonal to
    the intersection, and the cosine is the largest singular value of the
    cross-Gram matrix of the two reduced bases.

    Raises
    ------
    ContainmentError
        If either subspace is contained in the other.
    """
    B1, B2 = _weighted_pair(H1, H2, mu)
    C = np.hstack([B1, -B2])
    _, s, vt = np.linalg.svd(C, full_matrices=True)
    r = _numerical_rank(s, rank_tol)
    null = vt[r:].T
    # For a null vector (a, b): B1 a = B2 b and |a| = |b| = 1/sqrt(2).
    M = math.sqrt(2.0) * (B1 @ null[: B1.shape[1]])
    M = _orth_columns(M)
    dim_m = M.shape[1]

    P = np.eye(mu.n) - M @ M.T
    M1 = _orth_columns(P @ B1)
    M2 = _orth_columns(P @ B2)
    if M1.shape[1] == 0 or M2.shape[1] == 0:
        inner, outer = (H1, H2) if M1.shape[1] == 0 else (H2, H1)
        raise ContainmentError(
            f"subspace {inner.name or '<unnamed>'} is contained in {outer.name or '<unnamed>'}"
        )
    cos = float(np.linalg.svd(M1.T @ M2, compute_uv=False)[0])
    cos = min(max(cos, 0.0), 1.0)
    return AngleReport(
        cos_angle=cos,
        dim_intersection=dim_m,
        dims_complements=(M1.shape[1], M2.shape[1]),
        effectively_non_closed=bool(1.0 - cos <= rank_tol),
    )


def two_subspace_norms_from_angle(cos_angle: float, intersection_trivial: bool) -> tuple[float, float]:
    """Operator norms of the factored two-subspace sum operator from the angle.

    ``||S^|| = sqrt(1 + c)`` for a trivial intersection and ``sqrt(2)``
    otherwise; ``||S^^-1|| = (1 - c)^(-1/2)``.
    """
    if not 0.0 <= cos_angle:
        raise ValueError(f"cosine must lie in [0, 1), got {cos_angle!r}")
    if cos_angle >= 1.0:
        raise SumNotClosedError(f"cosine {cos_angle!r} >= 1: the sum of the subspaces is not closed")
    norm_s = math.sqrt(1.0 + cos_angle) if intersection_trivial else math.sqrt(2.0)
    return norm_s, 1.0 / math.sqrt(1.0 - cos_angle)


def generalized_angle(V1: Subspace, V2: Subspace, mu: Measure) -> float:
    """``sup |<v1, v2>_mu|`` over unit vectors of ``V1`` and ``V2``."""
    if V1.rank < 1 or V2.rank < 1:
        raise TrivialSubspaceError("generalized angle needs non-trivial subspaces")
    B1, B2 = _weighted_pair(V1, V2, mu)
    return float(np.linalg.svd(B1.T @ B2, compute_uv=False)[0])


@dataclass(frozen=True)
class StepBound:
    """Angle between ``H_1 + ... + H_j`` and ``H_{j+1}``."""

    j: int
    cos_angle: float | None
    dim_intersection: int
    norm_S: float
    norm_S_inv: float
    formula_norm_S: float | None
    formula_norm_S_inv: float | None
    note: str = ""


@dataclass(frozen=True)
class NSubspaceBounds:
    steps: tuple
    norm_bound: float
    norm_inv_bound: float
    condition_bound: float
    angle_condition_bound: float | None
    direct: GeometryReport
    slack: float = 1e-8

    @property
    def all_trivial(self) -> bool:
        return all(st.dim_intersection == 0 for st in self.steps)

    @property
    def holds(self) -> bool:
        d = self.direct
        tol = 1.0 + self.slack
        ok = d.norm_S <= self.norm_bound * tol and d.norm_S_inv <= self.norm_inv_bound * tol
        ok = ok and d.condition <= self.condition_bound * tol
        if self.angle_condition_bound is not None:
            ok = ok and d.condition <= self.angle_condition_bound * tol
        return bool(ok)

    @property
    def best_condition_bound(self) -> float:
        if self.angle_condition_bound is None:
            return self.condition_bound
        return min(self.condition_bound, self.angle_condition_bound)


def n_subspace_bounds(subspaces: Sequence[Subspace], mu: Measure, rank_tol: float = DEFAULT_RANK_TOL) -> NSubspaceBounds:
    """Stepwise product bounds on the norms of the N-fold factored sum operator.

    For ``j = 1..N-1`` the pair ``(H_1 + ... + H_j, H_{j+1})`` is analysed
    both by SVD of its own sum operator and, where the angle is defined,
    by the two-subspace formulas. The products of the pair norms bound
    ``||S^||`` and ``||S^^-1||``; when every stepwise intersection is trivial
    the angle form ``prod (1 + c_j) / (1 - c_j)`` bounds the squared
    condition number as well.
    """
    if len(subspaces) < 2:
        raise DimensionError("n_subspace_bounds needs at least two subspaces")
    steps = []
    for j in range(1, len(subspaces)):
        head = np.hstack([sub.ortho_basis for sub in subspaces[:j]])
        leading = orthonormalize(head, mu, rank_tol, name=f"H_<={j}")
        nxt = subspaces[j]
        pair = operator_norms(assemble_sum_operator([leading, nxt], mu, rank_tol))
        try:
            ang = friedrichs_angle(leading, nxt, mu, rank_tol)
        except ContainmentError as exc:
            steps.append(StepBound(j, None, -1, pair.norm_S, pair.norm_S_inv, None, None, str(exc)))
            continue
        if ang.effectively_non_closed:
            f_norm, f_inv = None, None
        else:
            f_norm, f_inv = two_subspace_norms_from_angle(ang.cos_angle, ang.intersection_trivial)
        steps.append(
            StepBound(j, ang.cos_angle, ang.dim_intersection, pair.norm_S, pair.norm_S_inv, f_norm, f_inv)
        )
    norm_bound = float(np.prod([st.norm_S for st in steps]))
    inv_bound = float(np.prod([st.norm_S_inv for st in steps]))
    angle_bound = None
    if all(st.dim_intersection == 0 and st.formula_norm_S_inv is not None for st in steps):
        prod = np.prod([(1 + st.cos_angle) / (1 - st.cos_angle) for st in steps])
        angle_bound = float(math.sqrt(prod))
    direct = operator_norms(assemble_sum_operator(subspaces, mu, rank_tol))
    return NSubspaceBounds(
        steps=tuple(steps),
        norm_bound=norm_bound,
        norm_inv_bound=inv_bound,
        condition_bound=norm_bound * inv_bound,
        angle_condition_bound=angle_bound,
        direct=direct,
    )
