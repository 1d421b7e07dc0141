"""Divergence generators and their convex conjugates.

Each divergence is described by ``phi`` (convex, ``phi(1) = 0``), its convex
conjugate ``psi`` with first and second derivatives, and the curvature
bounds of ``psi`` on ``(-R, R)``: ``sigma(R) <= psi'' <= lipschitz(R)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import xlogy

from .errors import DomainError
from .measure import Measure

DIVERGENCES = ("kl", "quadratic")


@dataclass(frozen=True)
class DivergenceSpec:
    name: str
    phi: Callable[[np.ndarray], np.ndarray]
    psi: Callable[[np.ndarray], np.ndarray]
    psi_prime: Callable[[np.ndarray], np.ndarray]
    psi_second: Callable[[np.ndarray], np.ndarray]
    sigma: Callable[[float], float]
    lipschitz: Callable[[float], float]
    # psi(base + delta) - psi(base) without cancellation for small delta
    psi_increment: Callable[[np.ndarray, np.ndarray], np.ndarray]
    nonnegative_density: bool

    def curvature_ratio(self, radius: float) -> float:
        """``sigma_R / L_R``."""
        return self.sigma(radius) / self.lipschitz(radius)


def _kl_phi(x):
    x = np.asarray(x, dtype=float)
    return xlogy(x, x) - x + 1.0


def _kl_psi(s):
    return np.expm1(s)


def _kl_psi_increment(base, delta):
    return np.exp(base) * np.expm1(delta)


def _quad_phi(x):
    x = np.asarray(x, dtype=float)
    return 0.5 * (x - 1.0) ** 2


def _quad_psi(s):
    s = np.asarray(s, dtype=float)
    return 0.5 * s * s + s


def _quad_psi_increment(base, delta):
    base = np.asarray(base, dtype=float)
    delta = np.asarray(delta, dtype=float)
    return delta * (base + 0.5 * delta + 1.0)


def _check_radius(radius):
    if not radius > 0:
        raise DomainError(f"radius must be positive, got {radius!r}")


def _kl_sigma(radius):
    _check_radius(radius)
    return float(np.exp(-radius))


def _kl_lipschitz(radius):
    _check_radius(radius)
    return float(np.exp(radius))


def _unit(radius):
    _check_radius(radius)
    return 1.0


def make_divergence(name: str) -> DivergenceSpec:
    """Return the divergence called ``name`` (``"kl"`` or ``"quadratic"``).

    ``kl`` is the normalized entropy ``x log x - x + 1`` with conjugate
    ``exp(s) - 1``. ``quadratic`` is ``(x - 1)^2 / 2`` extended to the whole
    real line, so signed densities are allowed and ``psi'' = 1``.
    """
    if name == "kl":
        return DivergenceSpec(
            name="kl",
            phi=_kl_phi,
            psi=_kl_psi,
            psi_prime=np.exp,
            psi_second=np.exp,
            sigma=_kl_sigma,
            lipschitz=_kl_lipschitz,
            psi_increment=_kl_psi_increment,
            nonnegative_density=True,
        )
    if name == "quadratic":
        return DivergenceSpec(
            name="quadratic",
            phi=_quad_phi,
            psi=_quad_psi,
            psi_prime=lambda s: np.asarray(s, dtype=float) + 1.0,
            psi_second=lambda s: np.ones_like(np.asarray(s, dtype=float)),
            sigma=_unit,
            lipschitz=_unit,
            psi_increment=_quad_psi_increment,
            nonnegative_density=False,
        )
    raise ValueError(f"unknown divergence {name!r}; expected one of {DIVERGENCES}")


def primal_divergence(density, mu: Measure, spec: DivergenceSpec) -> float:
    """``sum_x mu(x) phi(density(x))`` for a density with respect to ``mu``."""
    density = np.asarray(density, dtype=float)
    if density.shape != mu.weights.shape:
        raise DomainError(f"density has shape {density.shape}, measure has {mu.weights.shape}")
    if spec.nonnegative_density and np.any(density < 0):
        raise DomainError(f"{spec.name} divergence needs a nonnegative density")
    return float(np.dot(mu.weights, spec.phi(density)))


@dataclass(frozen=True)
class FenchelReport:
    max_gap: float
    min_slack: float
    n_pairs: int


def fenchel_audit(spec: DivergenceSpec, grid: Sequence[float], x_samples: Sequence[float] | None = None) -> FenchelReport:
    """Check Fenchel-Young numerically on ``grid``.

    ``max_gap`` is the largest ``|psi(s) - (s x* - phi(x*))|`` with
    ``x* = psi'(s)``; ``min_slack`` is the smallest ``psi(s) - (s x - phi(x))``
    over all pairs of ``s`` in ``grid`` and ``x`` in ``x_samples`` (which
    default to the maximizers themselves plus a fixed grid of the domain).
    """
    s = np.asarray(grid, dtype=float).reshape(-1)
    if s.size == 0:
        raise ValueError("grid must be non-empty")
    xstar = spec.psi_prime(s)
    gap = np.abs(spec.psi(s) - (s * xstar - spec.phi(xstar)))
    if x_samples is None:
        lo = 0.0 if spec.nonnegative_density else -5.0
        x_samples = np.concatenate([np.linspace(lo, 5.0, 101), xstar])
    x = np.asarray(x_samples, dtype=float).reshape(-1)
    slack = spec.psi(s)[:, None] - (s[:, None] * x[None, :] - spec.phi(x)[None, :])
    return FenchelReport(max_gap=float(gap.max()), min_slack=float(slack.min()), n_pairs=slack.size)
