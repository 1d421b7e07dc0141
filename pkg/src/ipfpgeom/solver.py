"""Dual IPFP: cyclic exact minimization of the dual objective over subspaces.

The dual objective of an instance is

    F(h) = sum_x mu(x) psi(h_1(x) + ... + h_N(x) - c(x)) - sum_i <theta_i, t_i>

where ``theta_i`` are the orthonormal coordinates of ``h_i`` and ``t_i`` the
moment targets. With the default targets (moments of ``mu`` itself) the
linear term is ``integral of h_1 + ... + h_N d mu``. One sweep of the IPFP
minimizes ``F`` exactly in ``h_1``, then ``h_2``, ..., then ``h_N``; each
block problem is solved by damped Newton. The primal optimizer is recovered
as the density ``psi'(h_1 + ... + h_N - c)`` with respect to ``mu``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

from .divergences import DivergenceSpec, make_divergence
from .errors import (
    ConvergenceError,
    DimensionError,
    InfeasibleError,
    IPFPError,
    UnboundedIteratesError,
)
from .geometry import SumOperator, assemble_sum_operator, project_out_kernel
from .measure import (
    DEFAULT_RANK_TOL,
    DiscreteSpace,
    Measure,
    PotentialTuple,
    Subspace,
    orthonormalize,
    sup_distance,
)

log = logging.getLogger(__name__)

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class Instance:
    """Problem data: reference measure, cost, constraint subspaces and targets.

    ``raw_cost`` is the cost as supplied; ``cost`` is ``raw_cost / epsilon``,
    the form every solver works with.
    """

    space: DiscreteSpace
    mu: Measure
    raw_cost: np.ndarray
    subspaces: tuple
    divergence: DivergenceSpec
    epsilon: float = 1.0
    targets: tuple | None = None
    initial: PotentialTuple | None = None
    metadata: dict = field(default_factory=dict)
    rank_tol: float = DEFAULT_RANK_TOL

    def __post_init__(self):
        if self.space.n != self.mu.n:
            raise DimensionError(f"space has {self.space.n} atoms, measure has {self.mu.n}")
        raw = np.array(self.raw_cost, dtype=float).reshape(-1)
        if raw.size != self.mu.n:
            raise DimensionError(f"cost has {raw.size} values for {self.mu.n} atoms")
        if not np.all(np.isfinite(raw)):
            raise DimensionError("cost must be finite")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon!r}")
        raw.setflags(write=False)
        object.__setattr__(self, "raw_cost", raw)
        subs = tuple(self.subspaces)
        if not subs:
            raise DimensionError("an instance needs at least one subspace")
        for sub in subs:
            if sub.n != self.mu.n:
                raise DimensionError(f"subspace {sub.name!r} has {sub.n} atoms, measure has {self.mu.n}")
        object.__setattr__(self, "subspaces", subs)
        if self.targets is None:
            object.__setattr__(self, "explicit_targets", False)
            targets = tuple(sub.ortho_basis.T @ self.mu.weights for sub in subs)
        else:
            object.__setattr__(self, "explicit_targets", True)
            targets = tuple(np.array(t, dtype=float).reshape(-1) for t in self.targets)
            if len(targets) != len(subs):
                raise DimensionError(f"{len(targets)} target vectors for {len(subs)} subspaces")
            for sub, t in zip(subs, targets):
                if t.size != sub.rank:
                    raise DimensionError(f"target for {sub.name!r} has length {t.size}, rank is {sub.rank}")
        object.__setattr__(self, "targets", targets)
        if self.initial is not None and self.initial.ranks != self.ranks:
            raise DimensionError(f"initial potentials have ranks {self.initial.ranks}, expected {self.ranks}")
        t = np.concatenate(targets)
        leak = self.sum_operator.kernel_basis.T @ t
        if leak.size and np.max(np.abs(leak)) > 1e-9 * (1.0 + np.linalg.norm(t)):
            raise InfeasibleError(
                "targets are inconsistent on the kernel of the sum operator "
                f"(max violation {np.max(np.abs(leak)):.3e}); the dual is unbounded"
            )

    @property
    def N(self) -> int:
        return len(self.subspaces)

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(sub.rank for sub in self.subspaces)

    @cached_property
    def cost(self) -> np.ndarray:
        c = self.raw_cost / self.epsilon
        c.setflags(write=False)
        return c

    @cached_property
    def stacked_basis(self) -> np.ndarray:
        return np.hstack([sub.ortho_basis for sub in self.subspaces])

    @cached_property
    def stacked_targets(self) -> np.ndarray:
        return np.concatenate(self.targets)

    @cached_property
    def sum_operator(self) -> SumOperator:
        return assemble_sum_operator(self.subspaces, self.mu, self.rank_tol)

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.ranks)])

    def block(self, v: np.ndarray, i: int) -> np.ndarray:
        return v[self.offsets[i]:self.offsets[i + 1]]

    def zero_potentials(self) -> PotentialTuple:
        return PotentialTuple.zeros(self.ranks)

    def with_divergence(self, name: str) -> "Instance":
        return _replace(self, divergence=make_divergence(name))


def with_epsilon(inst: Instance, epsilon: float) -> Instance:
    """Same data with cost scale ``epsilon`` (the solver sees ``raw_cost / epsilon``)."""
    return _replace(inst, epsilon=epsilon)


def _replace(inst: Instance, **changes) -> Instance:
    kwargs = dict(
        space=inst.space,
        mu=inst.mu,
        raw_cost=inst.raw_cost,
        subspaces=inst.subspaces,
        divergence=inst.divergence,
        epsilon=inst.epsilon,
        targets=inst.targets if inst.explicit_targets else None,
        initial=inst.initial,
        metadata=dict(inst.metadata),
        rank_tol=inst.rank_tol,
    )
    kwargs.update(changes)
    return Instance(**kwargs)


def make_instance(
    mu,
    cost,
    bases: Sequence,
    divergence: str | DivergenceSpec = "kl",
    epsilon: float = 1.0,
    targets=None,
    names: Sequence[str] | None = None,
    space: DiscreteSpace | None = None,
    metadata: dict | None = None,
    rank_tol: float = DEFAULT_RANK_TOL,
) -> Instance:
    """Convenience constructor from raw arrays.

    ``bases`` may mix raw ``n x d`` spanning arrays and ready ``Subspace``
    objects; raw arrays are orthonormalized with respect to ``mu``.
    """
    if not isinstance(mu, Measure):
        mu = Measure(mu)
    if isinstance(divergence, str):
        divergence = make_divergence(divergence)
    names = list(names) if names is not None else [f"H{i + 1}" for i in range(len(bases))]
    subs = []
    for name, b in zip(names, bases):
        subs.append(b if isinstance(b, Subspace) else orthonormalize(b, mu, rank_tol, name=name))
    if space is None:
        space = DiscreteSpace(mu.n)
    return Instance(
        space=space,
        mu=mu,
        raw_cost=np.asarray(cost, dtype=float).reshape(-1),
        subspaces=tuple(subs),
        divergence=divergence,
        epsilon=epsilon,
        targets=targets,
        metadata=dict(metadata or {}),
        rank_tol=rank_tol,
    )


@dataclass(frozen=True)
class SolverConfig:
    max_sweeps: int = 1000
    sweep_tol: float = 1e-10
    inner_max_iter: int = 100
    inner_grad_tol: float = 1e-12
    armijo: tuple = (1e-4, 0.5)
    record_intermediates: bool = False
    radius_guard: float = 50.0

    def __post_init__(self):
        if self.max_sweeps < 1 or self.inner_max_iter < 1:
            raise ValueError("iteration limits must be positive")
        if not (self.sweep_tol > 0 and self.inner_grad_tol > 0 and self.radius_guard > 0):
            raise ValueError("tolerances and the radius guard must be positive")
        c1, shrink = self.armijo
        if not (0 < c1 < 1 and 0 < shrink < 1):
            raise ValueError(f"Armijo parameters must lie in (0, 1), got {self.armijo}")


def _vector(inst: Instance, h) -> np.ndarray:
    if isinstance(h, PotentialTuple):
        if h.ranks != inst.ranks:
            raise DimensionError(f"potentials have ranks {h.ranks}, instance needs {inst.ranks}")
        return h.stacked()
    v = np.asarray(h, dtype=float).reshape(-1)
    if v.size != sum(inst.ranks):
        raise DimensionError(f"coefficient vector has length {v.size}, instance needs {sum(inst.ranks)}")
    return v


def shifted_field(inst: Instance, h) -> np.ndarray:
    """``h_1 + ... + h_N - c`` on the atoms."""
    return inst.stacked_basis @ _vector(inst, h) - inst.cost


def dual_objective(inst: Instance, h) -> float:
    v = _vector(inst, h)
    s = inst.stacked_basis @ v - inst.cost
    return float(np.dot(inst.mu.weights, inst.divergence.psi(s)) - np.dot(v, inst.stacked_targets))


def objective_difference(inst: Instance, h_a, h_b) -> tuple[float, float]:
    """``F(h_a) - F(h_b)`` evaluated without cancellation, with a rounding bound.

    Returns
    -------
    value : float
    error : float
        A-priori bound on the floating-point error of ``value``.
    """
    va, vb = _vector(inst, h_a), _vector(inst, h_b)
    dv = va - vb
    base = inst.stacked_basis @ vb - inst.cost
    ds = inst.stacked_basis @ dv
    terms = inst.mu.weights * inst.divergence.psi_increment(base, ds)
    lin = dv * inst.stacked_targets
    value = float(terms.sum() - lin.sum())
    scale = float(np.abs(terms).sum() + np.abs(lin).sum())
    error = 4.0 * (terms.size + lin.size + 4) * _EPS * scale
    return value, error


def gradient_vector(inst: Instance, h) -> np.ndarray:
    s = shifted_field(inst, h)
    return inst.stacked_basis.T @ (inst.mu.weights * inst.divergence.psi_prime(s)) - inst.stacked_targets


def partial_gradient(inst: Instance, h, i: int) -> np.ndarray:
    """Riesz representative of the partial derivative in block ``i``."""
    s = shifted_field(inst, h)
    Q = inst.subspaces[i].ortho_basis
    return Q.T @ (inst.mu.weights * inst.divergence.psi_prime(s)) - inst.targets[i]


def riesz_gradient(inst: Instance, h) -> PotentialTuple:
    return PotentialTuple.from_stacked(gradient_vector(inst, h), inst.ranks)


def primal_recover(inst: Instance, h) -> np.ndarray:
    """Density of the primal candidate with respect to ``mu``."""
    return inst.divergence.psi_prime(shifted_field(inst, h))


def moment_residuals(inst: Instance, density) -> np.ndarray:
    p = inst.mu.weights * np.asarray(density, dtype=float)
    return np.array(
        [np.linalg.norm(sub.ortho_basis.T @ p - t) for sub, t in zip(inst.subspaces, inst.targets)]
    )


def _grad_floor(Q: np.ndarray, weighted_slope: np.ndarray, target: np.ndarray) -> float:
    # smallest gradient norm distinguishable from rounding noise
    scale = np.abs(Q).T @ np.abs(weighted_slope) + np.abs(target)
    return 16.0 * (Q.shape[0] + 2) * _EPS * float(np.linalg.norm(scale))


def _newton_block(inst: Instance, v: np.ndarray, i: int, cfg: SolverConfig) -> tuple[np.ndarray, int]:
    Q = inst.subspaces[i].ortho_basis
    t = inst.targets[i]
    mu = inst.mu.weights
    div = inst.divergence
    theta = inst.block(v, i).copy()
    rest = inst.stacked_basis @ v - Q @ theta - inst.cost
    c1, shrink = cfg.armijo

    def value(th):
        # trial points may overflow; inf is then simply rejected by Armijo
        with np.errstate(over="ignore"):
            return float(np.dot(mu, div.psi(rest + Q @ th)) - np.dot(th, t))

    f = value(theta)
    for it in range(cfg.inner_max_iter + 1):
        s = rest + Q @ theta
        slope = mu * div.psi_prime(s)
        g = Q.T @ slope - t
        gnorm = float(np.linalg.norm(g))
        if gnorm <= max(cfg.inner_grad_tol, _grad_floor(Q, slope, t)):
            return theta, it
        if it == cfg.inner_max_iter:
            break
        H = (Q * (mu * div.psi_second(s))[:, None]).T @ Q
        try:
            d = -scipy.linalg.cho_solve(scipy.linalg.cho_factor(H), g)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"block {i} Hessian is numerically singular", gnorm) from exc
        decrease = float(np.dot(g, d))
        if -decrease <= 64.0 * _EPS * (1.0 + abs(f)):
            # predicted decrease is below the resolution of F: Newton step is exact to rounding
            theta = theta + d
            f = value(theta)
            continue
        step = 1.0
        while True:
            trial = theta + step * d
            f_trial = value(trial)
            if f_trial <= f + c1 * step * decrease:
                break
            step *= shrink
            if step < 1e-20:
                raise ConvergenceError(f"line search failed in block {i}", gnorm)
        theta, f = trial, f_trial
    raise ConvergenceError(
        f"block {i} Newton did not reach {cfg.inner_grad_tol:g} in {cfg.inner_max_iter} iterations "
        f"(gradient norm {gnorm:.3e})",
        gnorm,
    )


def coordinate_minimize(inst: Instance, h, i: int, cfg: SolverConfig | None = None) -> np.ndarray:
    """Exact minimizer of ``F`` over block ``i`` with the other blocks fixed.

    Solves the moment-matching equations ``Q_i^T diag(mu) psi'(...) = t_i``
    by damped Newton with Armijo backtracking.

    Raises
    ------
    ConvergenceError
        If the gradient tolerance is not reached within ``inner_max_iter``.
    """
    cfg = cfg or SolverConfig()
    theta, _ = _newton_block(inst, _vector(inst, h), i, cfg)
    return theta


@dataclass
class IterateTrace:
    """Per-sweep record of a cyclic run.

    Arrays indexed by iterate (length ``T + 1``): ``F``, ``grad_sum_norm``,
    ``grad_quotient_norm``, ``thetas``. Arrays indexed by sweep (length ``T``,
    sweep ``t`` maps ``h^t`` to ``h^(t+1)``): ``radius`` (largest
    ``|h_1 + ... + h_N - c|`` over the sweep's intermediate iterates,
    endpoints included), ``step_sq``, ``step_sum_norm``,
    ``step_quotient_norm``, ``improvement`` and its rounding bound.
    ``gap``/``gap_err`` are filled in once a reference optimum is known.
    """

    F: list = field(default_factory=list)
    grad_sum_norm: list = field(default_factory=list)
    grad_quotient_norm: list = field(default_factory=list)
    radius: list = field(default_factory=list)
    step_sq: list = field(default_factory=list)
    step_sum_norm: list = field(default_factory=list)
    step_quotient_norm: list = field(default_factory=list)
    improvement: list = field(default_factory=list)
    improvement_err: list = field(default_factory=list)
    thetas: list | None = field(default_factory=list)
    intermediates: list | None = None
    gap: list | None = None
    gap_err: list | None = None
    converged: bool = False
    method: str = "ipfp"

    @property
    def n_sweeps(self) -> int:
        return len(self.step_sq)

    def sum_fields(self, inst: Instance) -> list[np.ndarray]:
        if not self.thetas:
            raise ValueError("trace carries no potential snapshots")
        return [inst.stacked_basis @ v for v in self.thetas]


@dataclass(frozen=True)
class Solution:
    potentials: PotentialTuple
    F_value: float
    primal_density: np.ndarray
    moment_residuals: np.ndarray
    converged: bool
    sweeps: int = 0
    radius: float = 0.0
    # total mu-mass where the recovered density is negative (quadratic only)
    negative_mass: float = 0.0


def _solution(inst: Instance, v: np.ndarray, converged: bool, sweeps: int) -> Solution:
    density = primal_recover(inst, v)
    neg = float(np.dot(inst.mu.weights, np.minimum(density, 0.0)))
    if neg < 0:
        log.warning("recovered density has negative mass %.3e", neg)
    return Solution(
        potentials=PotentialTuple.from_stacked(v, inst.ranks),
        F_value=dual_objective(inst, v),
        primal_density=density,
        moment_residuals=moment_residuals(inst, density),
        converged=converged,
        sweeps=sweeps,
        radius=float(np.max(np.abs(shifted_field(inst, v)))),
        negative_mass=-neg,
    )


BlockUpdate = Callable[[Instance, np.ndarray, int, SolverConfig], np.ndarray]


def _newton_update(inst, v, i, cfg):
    return _newton_block(inst, v, i, cfg)[0]


def _run_cyclic(inst: Instance, cfg: SolverConfig, h0, update: BlockUpdate, method: str):
    if h0 is None:
        h0 = inst.initial if inst.initial is not None else inst.zero_potentials()
    v = _vector(inst, h0).copy()
    op = inst.sum_operator
    trace = IterateTrace(method=method)
    if cfg.record_intermediates:
        trace.intermediates = []

    def record_point(vec):
        g = gradient_vector(inst, vec)
        trace.F.append(dual_objective(inst, vec))
        trace.grad_sum_norm.append(float(np.linalg.norm(g)))
        trace.grad_quotient_norm.append(float(np.linalg.norm(project_out_kernel(g, op))))
        trace.thetas.append(vec.copy())
        return trace.grad_sum_norm[-1]

    def radius_of(vec):
        return sup_distance(inst.stacked_basis @ vec, inst.cost)

    record_point(v)
    for sweep in range(cfg.max_sweeps):
        start = v.copy()
        radius = radius_of(v)
        inner = []
        for i in range(inst.N):
            theta = update(inst, v, i, cfg)
            v[inst.offsets[i]:inst.offsets[i + 1]] = theta
            r = radius_of(v)
            radius = max(radius, r)
            if cfg.record_intermediates:
                inner.append(v.copy())
            if r > cfg.radius_guard:
                raise UnboundedIteratesError(
                    f"unbounded iterates: |h_1 + ... + h_N - c| reached {r:.3g} > guard "
                    f"{cfg.radius_guard:g} in sweep {sweep}, block {i}",
                    r,
                )
        step = v - start
        imp, imp_err = objective_difference(inst, start, v)
        trace.radius.append(radius)
        trace.step_sq.append(float(step @ step))
        trace.step_sum_norm.append(float(np.linalg.norm(op.apply(step))))
        trace.step_quotient_norm.append(float(np.linalg.norm(project_out_kernel(step, op))))
        trace.improvement.append(imp)
        trace.improvement_err.append(imp_err)
        if cfg.record_intermediates:
            trace.intermediates.append(inner)
        gnorm = record_point(v)
        if gnorm <= cfg.sweep_tol:
            trace.converged = True
            break
    if not trace.converged:
        log.warning("%s stopped after %d sweeps with gradient norm %.3e", method, trace.n_sweeps, gnorm)
    return trace, _solution(inst, v, trace.converged, trace.n_sweeps)


def run_ipfp(inst: Instance, cfg: SolverConfig | None = None, h0=None) -> tuple[IterateTrace, Solution]:
    """Run the dual IPFP from ``h0`` (default: the instance's initial potentials or zero).

    Sweeps cycle through the blocks in order ``1..N``; the run stops at the
    first iterate whose stacked gradient norm is at most ``cfg.sweep_tol``,
    or after ``cfg.max_sweeps`` sweeps. At least one sweep is always made.

    Raises
    ------
    UnboundedIteratesError
        If an intermediate iterate leaves the radius guard.
    ConvergenceError
        If a block minimization fails.
    """
    return _run_cyclic(inst, cfg or SolverConfig(), h0, _newton_update, "ipfp")


def joint_solve(inst: Instance, tol: float = 1e-12, max_iter: int = 200, h0=None) -> Solution:
    """Reference optimum by Newton's method on all blocks at once.

    The Newton system is restricted to the orthogonal complement of the
    kernel of the sum operator, where the Hessian is nonsingular.
    """
    op = inst.sum_operator
    _, _, vt = np.linalg.svd(op.assembled, full_matrices=True)
    P = vt[: op.rank].T
    Q = inst.stacked_basis
    t = inst.stacked_targets
    mu = inst.mu.weights
    div = inst.divergence
    v = _vector(inst, h0 if h0 is not None else inst.zero_potentials()).copy()
    f = dual_objective(inst, v)
    for it in range(max_iter + 1):
        s = Q @ v - inst.cost
        slope = mu * div.psi_prime(s)
        g = Q.T @ slope - t
        gnorm = float(np.linalg.norm(g))
        if gnorm <= max(tol, _grad_floor(Q, slope, t)):
            return _solution(inst, v, True, it)
        if it == max_iter:
            break
        H = (Q * (mu * div.psi_second(s))[:, None]).T @ Q
        Hr = P.T @ H @ P
        try:
            d = -P @ scipy.linalg.cho_solve(scipy.linalg.cho_factor(Hr), P.T @ g)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError("joint Hessian is numerically singular", gnorm) from exc
        decrease = float(g @ d)
        if -decrease <= 64.0 * _EPS * (1.0 + abs(f)):
            v = v + d
            f = dual_objective(inst, v)
            continue
        step = 1.0
        while True:
            trial = v + step * d
            with np.errstate(over="ignore"):
                f_trial = dual_objective(inst, trial)
            if f_trial <= f + 1e-4 * step * decrease:
                break
            step *= 0.5
            if step < 1e-20:
                raise ConvergenceError("joint line search failed", gnorm)
        v, f = trial, f_trial
    raise ConvergenceError(f"joint Newton did not reach {tol:g} in {max_iter} iterations", gnorm)


def _indicator_matrix(shape: tuple[int, ...], axis: int) -> np.ndarray:
    idx = np.indices(shape).reshape(len(shape), -1)[axis]
    E = np.zeros((idx.size, shape[axis]))
    E[np.arange(idx.size), idx] = 1.0
    return E


def _marginal_structure(inst: Instance):
    """Match every subspace to the indicator span of one grid axis."""
    shape = inst.space.shape
    if shape is None:
        raise IPFPError("closed-form Sinkhorn needs a product space (space.shape unset)")
    out = []
    used = set()
    for sub in inst.subspaces:
        Q = sub.ortho_basis
        match = None
        for axis in range(len(shape)):
            if axis in used or shape[axis] != sub.rank:
                continue
            E = _indicator_matrix(shape, axis)
            W, *_ = np.linalg.lstsq(E, Q, rcond=None)
            if np.allclose(E @ W, Q, atol=1e-10, rtol=0):
                match = (axis, W)
                break
        if match is None:
            raise IPFPError(f"subspace {sub.name!r} is not the span of marginal indicators")
        used.add(match[0])
        out.append(match)
    return out


def sinkhorn_closed_form(inst: Instance, cfg: SolverConfig | None = None, h0=None) -> tuple[IterateTrace, Solution]:
    """Classical log-domain Sinkhorn for marginal constraints.

    Every block update sets the ``axis``-potential to
    ``log r - logsumexp(log mu + rest)`` where ``r`` is the target marginal,
    which is the exact block minimizer for the ``kl`` divergence. Potentials
    are mapped back to orthonormal coordinates, so the returned trace has the
    same schema as :func:`run_ipfp`.
    """
    if inst.divergence.name != "kl":
        raise IPFPError("closed-form Sinkhorn requires the kl divergence")
    structure = _marginal_structure(inst)
    shape = inst.space.shape
    log_mu = np.log(inst.mu.weights).reshape(shape)
    log_targets = []
    for (axis, W), t in zip(structure, inst.targets):
        r = np.linalg.solve(W.T, t)
        if np.any(r <= 0):
            raise InfeasibleError("target marginals must be strictly positive")
        log_targets.append(np.log(r))

    def update(inst_, v, i, cfg_):
        axis, W = structure[i]
        Q = inst_.subspaces[i].ortho_basis
        rest = (inst_.stacked_basis @ v - Q @ inst_.block(v, i) - inst_.cost).reshape(shape)
        others = tuple(a for a in range(len(shape)) if a != axis)
        pot = log_targets[i] - logsumexp(log_mu + rest, axis=others)
        return np.linalg.solve(W, pot)

    return _run_cyclic(inst, cfg or SolverConfig(), h0, update, "sinkhorn")
