"""Problem generators: multi-marginal OT, martingale OT and random subspaces."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .divergences import make_divergence
from .errors import DegenerateInstanceError, InfeasibleError, MeasureError, SizeError
from .geometry import assemble_sum_operator
from .measure import DiscreteSpace, Measure, orthonormalize
from .solver import Instance, make_instance

MAX_ATOMS = 4096
_MEAN_TOL = 1e-12


def _prob(w, what: str) -> np.ndarray:
    return Measure(np.asarray(w, dtype=float).reshape(-1)).weights


def _axis_indicators(shape: tuple[int, ...], axis: int) -> np.ndarray:
    idx = np.indices(shape).reshape(len(shape), -1)[axis]
    E = np.zeros((idx.size, shape[axis]))
    E[np.arange(idx.size), idx] = 1.0
    return E


def _product(weights: Sequence[np.ndarray]) -> np.ndarray:
    out = np.ones(1)
    for w in weights:
        out = np.multiply.outer(out, w).reshape(-1)
    return out


def _guard(n: int):
    if n > MAX_ATOMS:
        raise SizeError(f"instance would have {n} atoms, above the limit of {MAX_ATOMS}")


def gen_mmot(
    marginals: Sequence,
    cost,
    mean_zero: bool = True,
    divergence: str = "kl",
    epsilon: float = 1.0,
) -> Instance:
    """Multi-marginal OT on the product of the marginals' supports.

    ``H_i`` holds the functions of the ``i``-th coordinate. With
    ``mean_zero`` the first ``N - 1`` spaces are restricted to functions of
    zero mean under their marginal, which makes the spaces orthogonal.
    """
    marginals = [_prob(m, f"marginal {i}") for i, m in enumerate(marginals)]
    if not marginals:
        raise ValueError("need at least one marginal")
    shape = tuple(m.size for m in marginals)
    n = int(np.prod(shape))
    _guard(n)
    cost = np.asarray(cost, dtype=float)
    if cost.size != n:
        raise ValueError(f"cost has {cost.size} entries, the product space has {n}")
    mu = Measure.normalized(_product(marginals))
    N = len(marginals)
    bases = []
    for k, m in enumerate(marginals):
        E = _axis_indicators(shape, k)
        if mean_zero and k < N - 1:
            E = E - m[None, :]
        bases.append(E)
    return make_instance(
        mu,
        cost.reshape(-1),
        bases,
        divergence=divergence,
        epsilon=epsilon,
        names=[f"H{k + 1}" for k in range(N)],
        space=DiscreteSpace(n, shape=shape),
        metadata={"kind": "mmot", "mean_zero": bool(mean_zero), "marginals": [m.tolist() for m in marginals]},
    )


def gen_ot2(mu1, mu2, cost, mean_zero: bool = False, divergence: str = "kl", epsilon: float = 1.0) -> Instance:
    inst = gen_mmot([mu1, mu2], cost, mean_zero=mean_zero, divergence=divergence, epsilon=epsilon)
    inst.metadata["kind"] = "ot2"
    return inst


def convex_order_check(x1, mu1, x2, mu2) -> tuple[bool, float]:
    """Whether ``mu1`` precedes ``mu2`` in convex order.

    Compares call prices ``E(X - k)+`` at every atom of either support plus
    the means; returns the flag and the largest violation (``<= 0`` when it
    holds).
    """
    x1, x2 = np.asarray(x1, dtype=float), np.asarray(x2, dtype=float)
    mu1, mu2 = np.asarray(mu1, dtype=float), np.asarray(mu2, dtype=float)
    kinks = np.union1d(x1, x2)
    c1 = np.maximum(x1[None, :] - kinks[:, None], 0.0) @ mu1
    c2 = np.maximum(x2[None, :] - kinks[:, None], 0.0) @ mu2
    worst = max(float(np.max(c1 - c2)), abs(float(x1 @ mu1 - x2 @ mu2)))
    return worst <= 1e-12, worst


@dataclass(frozen=True)
class MotSpec:
    """Two-period martingale transport data.

    ``density`` optionally distorts the product reference: the reference
    measure becomes ``density * (mu1 x mu2)`` (rescaled to unit mass).
    ``coupling`` instead supplies a full-support martingale coupling used
    as the reference, with all targets taken as its own moments.
    """

    x1_atoms: tuple
    x2_atoms: tuple
    mu1: tuple
    mu2: tuple
    density: np.ndarray | None = None
    coupling: np.ndarray | None = None

    def __post_init__(self):
        for name in ("x1_atoms", "x2_atoms"):
            x = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if np.unique(x).size != x.size:
                raise ValueError(f"{name} must be distinct")
            object.__setattr__(self, name, tuple(float(v) for v in x))
        for name, atoms in (("mu1", self.x1_atoms), ("mu2", self.x2_atoms)):
            w = _prob(getattr(self, name), name)
            if w.size != len(atoms):
                raise ValueError(f"{name} has {w.size} weights for {len(atoms)} atoms")
            object.__setattr__(self, name, tuple(float(v) for v in w))
        for name, x, w in (("mu1", self.x1_atoms, self.mu1), ("mu2", self.x2_atoms, self.mu2)):
            mean = float(np.dot(x, w))
            if abs(mean) > _MEAN_TOL:
                raise MeasureError(f"{name} must have zero mean, got {mean:.3e}")
        if len(self.x2_atoms) < 2:
            raise MeasureError("mu2 must not be a Dirac measure")
        ok, worst = convex_order_check(self.x1_atoms, self.mu1, self.x2_atoms, self.mu2)
        if not ok:
            raise InfeasibleError(f"mu1 does not precede mu2 in convex order (violation {worst:.3e})")
        if self.density is not None and self.coupling is not None:
            raise ValueError("give either a distortion density or a reference coupling, not both")
        grid = (len(self.x1_atoms), len(self.x2_atoms))
        if self.density is not None:
            p = np.array(self.density, dtype=float).reshape(grid)
            if not np.all(np.isfinite(p)) or np.any(p <= 0):
                raise MeasureError("distortion density must be finite and bounded away from zero")
            p.setflags(write=False)
            object.__setattr__(self, "density", p)
        if self.coupling is not None:
            pi = np.array(self.coupling, dtype=float).reshape(grid)
            Measure(pi.reshape(-1))
            if not (np.allclose(pi.sum(1), self.mu1, atol=1e-12) and np.allclose(pi.sum(0), self.mu2, atol=1e-12)):
                raise InfeasibleError("reference coupling does not have marginals mu1, mu2")
            drift = pi @ np.asarray(self.x2_atoms) - pi.sum(1) * np.asarray(self.x1_atoms)
            if np.max(np.abs(drift)) > 1e-12:
                raise InfeasibleError("reference coupling is not a martingale")
            pi.setflags(write=False)
            object.__setattr__(self, "coupling", pi)

    @property
    def a(self) -> float:
        """``max |x1|``."""
        return float(np.max(np.abs(self.x1_atoms)))

    @property
    def diameter(self) -> float:
        return float(max(self.x1_atoms) - min(self.x1_atoms))

    @property
    def V2(self) -> float:
        return float(np.dot(self.mu2, np.square(self.x2_atoms)))

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.x1_atoms), len(self.x2_atoms)

    def normalized_density(self) -> np.ndarray | None:
        """Density of the reference against ``mu1 x mu2``, rescaled to unit mass."""
        if self.density is None:
            return None
        prod = np.outer(self.mu1, self.mu2)
        return self.density / float(np.sum(self.density * prod))


def mot_bases(spec: MotSpec) -> tuple[np.ndarray, np.ndarray]:
    """Raw spanning sets of the marginal space and the martingale space."""
    shape = spec.shape
    E1, E2 = _axis_indicators(shape, 0), _axis_indicators(shape, 1)
    x1 = np.repeat(spec.x1_atoms, shape[1])
    x2 = np.tile(spec.x2_atoms, shape[0])
    return np.hstack([E1, E2]), E1 * (x2 - x1)[:, None]


def gen_mot(spec: MotSpec, cost, divergence: str = "kl", epsilon: float = 1.0) -> Instance:
    """Martingale OT with marginal space ``H1`` and martingale space ``H2``.

    With a product or distorted reference the targets are the marginal
    moments of ``mu1 x mu2`` on ``H1`` and zero on ``H2``; with a supplied
    coupling they are the coupling's own moments.
    """
    shape = spec.shape
    n = shape[0] * shape[1]
    _guard(n)
    cost = np.asarray(cost, dtype=float).reshape(-1)
    if cost.size != n:
        raise ValueError(f"cost has {cost.size} entries, the grid has {n}")
    prod = np.outer(spec.mu1, spec.mu2).reshape(-1)
    if spec.coupling is not None:
        mu = Measure.normalized(spec.coupling.reshape(-1))
        reference = "coupling"
    elif spec.density is not None:
        mu = Measure.normalized(spec.normalized_density().reshape(-1) * prod)
        reference = "distorted"
    else:
        mu = Measure.normalized(prod)
        reference = "product"
    B1, B2 = mot_bases(spec)
    H1 = orthonormalize(B1, mu, name="marginals")
    H2 = orthonormalize(B2, mu, name="martingale")
    targets = None
    if spec.coupling is None:
        targets = [H1.ortho_basis.T @ prod, np.zeros(H2.rank)]
    labels = tuple((a, b) for a in spec.x1_atoms for b in spec.x2_atoms)
    meta = {
        "kind": "mot",
        "reference": reference,
        "x1_atoms": list(spec.x1_atoms),
        "x2_atoms": list(spec.x2_atoms),
        "mu1": list(spec.mu1),
        "mu2": list(spec.mu2),
    }
    if spec.density is not None:
        meta["density"] = spec.density.tolist()
    return make_instance(
        mu,
        cost,
        [H1, H2],
        divergence=divergence,
        epsilon=epsilon,
        targets=targets,
        space=DiscreteSpace(n, labels=labels, shape=shape),
        metadata=meta,
    )


def mot_angle_bound(a: float, V2: float) -> float:
    """Upper bound ``a / sqrt(a^2 + V2)`` on the cosine between the MOT spaces."""
    if not (a > 0 and V2 > 0):
        raise ValueError(f"a and V2 must be positive, got a={a!r}, V2={V2!r}")
    return a / math.sqrt(a * a + V2)


def mot_angle_bounds(spec: MotSpec) -> dict:
    """The bound with ``a`` read as the half-width and as the diameter of the first support."""
    return {
        "radius": mot_angle_bound(spec.a, spec.V2),
        "diameter": mot_angle_bound(spec.diameter, spec.V2),
    }


@dataclass(frozen=True)
class MotConditionBound:
    ratio: float
    conservative: float
    ratio_inv: float
    conservative_inv: float


def mot_condition_bound(p_sup: float, p_inv_sup: float, angle_bound: float) -> MotConditionBound:
    """Condition-number bounds for MOT with a distorted product reference.

    ``p_sup`` and ``p_inv_sup`` are the sup norms of the density ``p`` and
    of ``1/p``. Two distortion factors are evaluated:
    ``sqrt(p_inv_sup / p_sup)`` and ``sqrt(p_sup * p_inv_sup)``. Each
    ``*_inv`` field bounds ``||S^-1||`` alone; the others include the
    factor ``sqrt(2) = ||S||``.
    """
    if not (p_sup > 0 and p_inv_sup > 0):
        raise ValueError("density bounds must be positive")
    if p_sup * p_inv_sup < 1.0 - 1e-12:
        raise ValueError("sup p * sup 1/p is at least one for any density")
    if not 0 <= angle_bound < 1:
        raise ValueError(f"angle bound must lie in [0, 1), got {angle_bound!r}")
    base = 1.0 / math.sqrt(1.0 - angle_bound)
    inv_p = math.sqrt(p_inv_sup / p_sup) * base
    inv_c = math.sqrt(p_sup * p_inv_sup) * base
    return MotConditionBound(math.sqrt(2) * inv_p, math.sqrt(2) * inv_c, inv_p, inv_c)


def from_projection(theta, mu) -> np.ndarray:
    """Cost ``log(dmu/dtheta)`` turning the projection onto ``theta`` into a transport problem."""
    theta = theta if isinstance(theta, Measure) else Measure(theta)
    mu = mu if isinstance(mu, Measure) else Measure(mu)
    if theta.n != mu.n:
        raise ValueError("measures live on different spaces")
    return np.log(mu.weights) - np.log(theta.weights)


def _random_weights(rng: np.random.Generator, n: int, profile: str = "dirichlet") -> np.ndarray:
    if profile == "uniform":
        return np.full(n, 1.0 / n)
    if profile == "dirichlet":
        w = rng.dirichlet(np.full(n, 2.0))
        w = 0.5 * w + 0.5 / n
        return w / w.sum()
    raise ValueError(f"unknown mu profile {profile!r}")


def gen_random(
    seed: int,
    n: int = 8,
    N: int = 2,
    ranks: Sequence[int] | None = None,
    mu_profile: str = "dirichlet",
    shared_dims: int = 0,
    divergence: str = "kl",
    cost_scale: float = 1.0,
    min_delta: float = 1e-6,
    max_tries: int = 100,
) -> Instance:
    """Random subspaces of ``R^n`` with a random positive reference measure.

    ``shared_dims`` common random directions are added to every subspace so
    that the subspaces intersect. Draws with ``delta < min_delta`` or with a
    subspace inside the span of the others are rejected.
    """
    if n > MAX_ATOMS:
        raise SizeError(f"n = {n} exceeds {MAX_ATOMS}")
    rng = np.random.default_rng(seed)
    if ranks is None:
        ranks = [int(rng.integers(1, max(2, n // N) + 1)) for _ in range(N)]
    ranks = list(ranks)
    if len(ranks) != N or min(ranks) < 1:
        raise ValueError(f"need {N} positive ranks, got {ranks}")
    if max(ranks) + shared_dims >= n:
        raise ValueError("each subspace must be a proper subspace of R^n")
    for _ in range(max_tries):
        mu = Measure(_random_weights(rng, n, mu_profile))
        shared = rng.standard_normal((n, shared_dims))
        bases = [np.hstack([rng.standard_normal((n, r)), shared]) for r in ranks]
        subs = [orthonormalize(b, mu, name=f"H{i + 1}") for i, b in enumerate(bases)]
        op = assemble_sum_operator(subs, mu)
        if op.standing_violations or op.rank == 0:
            continue
        if op.singular_values[op.rank - 1] < min_delta:
            continue
        cost = cost_scale * rng.uniform(-1.0, 1.0, n)
        return make_instance(
            mu,
            cost,
            subs,
            divergence=divergence,
            metadata={"kind": "random", "seed": int(seed), "shared_dims": int(shared_dims)},
        )
    raise DegenerateInstanceError(f"no admissible draw in {max_tries} attempts (seed {seed})")


def random_marginal(rng: np.random.Generator, n: int) -> np.ndarray:
    return _random_weights(rng, n, "dirichlet")


def random_ot2(seed: int, n: int = 5, cost_scale: float = 1.0, mean_zero: bool = False, divergence: str = "kl") -> Instance:
    rng = np.random.default_rng(seed)
    m1, m2 = random_marginal(rng, n), random_marginal(rng, n)
    cost = cost_scale * rng.uniform(0.0, 1.0, (n, n))
    inst = gen_ot2(m1, m2, cost, mean_zero=mean_zero, divergence=divergence)
    inst.metadata["seed"] = int(seed)
    return inst


def random_mmot(seed: int, n: int = 3, N: int = 3, cost_scale: float = 1.0, mean_zero: bool = True,
                divergence: str = "kl") -> Instance:
    rng = np.random.default_rng(seed)
    margs = [random_marginal(rng, n) for _ in range(N)]
    cost = cost_scale * rng.uniform(0.0, 1.0, (n,) * N)
    inst = gen_mmot(margs, cost, mean_zero=mean_zero, divergence=divergence)
    inst.metadata["seed"] = int(seed)
    return inst


def _martingale_kernel_row(a: float, x2: np.ndarray, base: np.ndarray) -> np.ndarray:
    # exponential tilt of ``base`` whose mean is ``a``
    def mean_gap(lam):
        w = base * np.exp(lam * (x2 - a) - np.max(lam * (x2 - a)))
        return float(np.dot(w, x2 - a) / w.sum())

    lo, hi = -1.0, 1.0
    while mean_gap(lo) > 0:
        lo *= 2
    while mean_gap(hi) < 0:
        hi *= 2
    lam = brentq(mean_gap, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    w = base * np.exp(lam * (x2 - a) - np.max(lam * (x2 - a)))
    w = w / w.sum()
    # remove the residual drift exactly using the two outermost atoms
    drift = float(np.dot(w, x2) - a)
    lo_i, hi_i = int(np.argmin(x2)), int(np.argmax(x2))
    span = x2[hi_i] - x2[lo_i]
    w[hi_i] -= drift / span
    w[lo_i] += drift / span
    return w


def random_mot_spec(seed: int, n1: int = 3, n2: int = 4, distorted: bool = False) -> MotSpec:
    """Zero-mean marginals in convex order, built from a full-support martingale kernel."""
    rng = np.random.default_rng(seed)
    x1 = np.sort(rng.uniform(-1.0, 1.0, n1))
    mu1 = random_marginal(rng, n1)
    x1 = x1 - np.dot(x1, mu1)
    lo, hi = x1.min(), x1.max()
    x2 = np.sort(np.concatenate([[lo - rng.uniform(0.2, 1.0), hi + rng.uniform(0.2, 1.0)],
                                 rng.uniform(lo - 0.2, hi + 0.2, n2 - 2)]))
    base = random_marginal(rng, n2)
    K = np.array([_martingale_kernel_row(a, x2, base) for a in x1])
    mu2 = mu1 @ K
    mean2 = float(np.dot(mu2, x2))
    # kernel rows are exact martingales up to rounding; recentre the atoms
    x2 = x2 - mean2
    density = None
    if distorted:
        density = rng.uniform(0.5, 2.0, (n1, n2))
    return MotSpec(tuple(x1), tuple(x2), tuple(mu1), tuple(mu2 / mu2.sum()), density=density)


def random_mot(seed: int, n1: int = 3, n2: int = 4, distorted: bool = False, cost_scale: float = 1.0,
               divergence: str = "kl") -> Instance:
    spec = random_mot_spec(seed, n1, n2, distorted)
    rng = np.random.default_rng([seed, 1])
    cost = cost_scale * rng.uniform(0.0, 1.0, spec.shape)
    inst = gen_mot(spec, cost, divergence=divergence)
    inst.metadata["seed"] = int(seed)
    return inst


def example_mot_spec() -> MotSpec:
    """Uniform two-point ``mu1`` on ``+-1/2`` against ``(3/8, 1/4, 3/8)`` on ``-1, 0, 1``."""
    return MotSpec((-0.5, 0.5), (-1.0, 0.0, 1.0), (0.5, 0.5), (0.375, 0.25, 0.375))
