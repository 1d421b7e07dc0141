"""Contraction coefficient of the dual IPFP and per-sweep certification.

Every check compares a left-hand side against a right-hand side and passes
when ``lhs - rhs <= rel_slack * max(|lhs|, |rhs|) + err_lhs + err_rhs``,
where the ``err`` terms are a-priori floating-point error bounds. They only
matter once a run has converged and both sides sit at rounding level.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .divergences import DivergenceSpec
from .geometry import GeometryReport, operator_norms
from .solver import (
    Instance,
    IterateTrace,
    Solution,
    _grad_floor,
    objective_difference,
    shifted_field,
)

log = logging.getLogger(__name__)

REL_SLACK = 1e-8

CHECK_NAMES = (
    "pl_inequality",
    "step_bound",
    "improvement_gap",
    "improvement_rate",
    "norm_comparison",
    "relative_improvement",
)


def rate_constant(sigma: float, lipschitz: float, norm_S: float, norm_S_inv: float, n_blocks: int) -> float:
    """``(1/N) * (sigma / (L * ||S|| * ||S^-1||))^2``."""
    if n_blocks < 1:
        raise ValueError("need at least one block")
    if min(sigma, lipschitz, norm_S, norm_S_inv) <= 0:
        raise ValueError("curvature bounds and norms must be positive")
    ratio = sigma / (lipschitz * norm_S * norm_S_inv)
    return ratio * ratio / n_blocks


@dataclass(frozen=True)
class CheckResult:
    lhs: float
    rhs: float
    tolerance: float
    ok: bool


def _check(lhs, rhs, err_lhs=0.0, err_rhs=0.0, rel=REL_SLACK) -> CheckResult:
    tol = rel * max(abs(lhs), abs(rhs)) + err_lhs + err_rhs
    return CheckResult(float(lhs), float(rhs), float(tol), bool(lhs - rhs <= tol))


@dataclass(frozen=True)
class SweepChecks:
    sweep: int
    checks: dict

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks.values())

    def failed(self) -> list[str]:
        return [name for name, c in self.checks.items() if not c.ok]


@dataclass(frozen=True)
class EnvelopeReport:
    rows: tuple
    holds: bool
    empirical_contraction: float | None
    bound_contraction: float

    @property
    def violations(self) -> list[int]:
        return [r.sweep for r in self.rows if not r.ok]


@dataclass(frozen=True)
class EnvelopeRow:
    sweep: int
    gap: float
    bound: float
    tolerance: float
    ok: bool


@dataclass
class RateCertificate:
    """Contraction coefficient with the ingredients it was computed from."""

    R: float
    measured_radius: float
    sigma_R: float
    L_R: float
    norm_S: float
    norm_S_inv: float
    delta: float
    n_blocks: int
    gamma: float
    F_opt: float
    divergence: str
    radius_pinned: bool = False
    diagnostic: str = ""
    per_sweep_checks: list = field(default_factory=list)
    envelope: EnvelopeReport | None = None

    @property
    def rho(self) -> float:
        return 1.0 - self.gamma

    @property
    def condition(self) -> float:
        return self.norm_S * self.norm_S_inv

    @property
    def consistency(self) -> float:
        """``delta * ||S^-1||``, one by construction."""
        return self.delta * self.norm_S_inv

    @property
    def all_ok(self) -> bool:
        sweeps_ok = all(s.ok for s in self.per_sweep_checks)
        env_ok = self.envelope is None or self.envelope.holds
        return sweeps_ok and env_ok


def attach_gaps(inst: Instance, trace: IterateTrace, reference: Solution) -> IterateTrace:
    """Fill ``trace.gap`` with ``F(h^t) - F_opt`` computed without cancellation."""
    if not trace.thetas:
        raise ValueError("trace carries no potential snapshots; cannot compute gaps")
    ref = reference.potentials.stacked()
    gaps, errs = [], []
    for v in trace.thetas:
        g, e = objective_difference(inst, v, ref)
        gaps.append(g)
        errs.append(e)
    trace.gap, trace.gap_err = gaps, errs
    return trace


def compute_gamma(
    trace: IterateTrace,
    reference: Solution,
    geometry: GeometryReport,
    spec: DivergenceSpec,
    n_blocks: int,
    radius: float | None = None,
    delta: float | None = None,
) -> RateCertificate:
    """Contraction coefficient for a recorded run.

    ``R`` is the largest ``|h_1 + ... + h_N - c|`` over every iterate of the
    trace (intermediate ones included) and the reference optimizer. Passing
    ``radius`` pins ``R`` to that value instead; a pinned value smaller than
    the measured one is flagged in ``diagnostic``.
    """
    if not trace.radius:
        raise ValueError("trace has no sweeps")
    measured = max(max(trace.radius), reference.radius)
    pinned = radius is not None
    R = float(radius) if pinned else measured
    diagnostic = ""
    if pinned and R < measured:
        diagnostic = f"pinned radius {R:.6g} is below the measured radius {measured:.6g}"
        log.warning(diagnostic)
    if R <= 0:
        # every iterate sits exactly on the cost; any positive radius is valid
        R = np.finfo(float).eps
    sigma, L = spec.sigma(R), spec.lipschitz(R)
    if sigma == 0.0 or not math.isfinite(L):
        gamma = 0.0
    else:
        gamma = rate_constant(sigma, L, geometry.norm_S, geometry.norm_S_inv, n_blocks)
    if gamma == 0.0:
        diagnostic = (diagnostic + "; " if diagnostic else "") + f"sigma_R/L_R underflows at R = {R:.6g}"
    return RateCertificate(
        R=R,
        measured_radius=measured,
        sigma_R=sigma,
        L_R=L,
        norm_S=geometry.norm_S,
        norm_S_inv=geometry.norm_S_inv,
        delta=geometry.delta if delta is None else float(delta),
        n_blocks=n_blocks,
        gamma=gamma,
        F_opt=reference.F_value,
        divergence=spec.name,
        radius_pinned=pinned,
        diagnostic=diagnostic,
    )


def _gradient_error(inst: Instance, v: np.ndarray) -> float:
    s = shifted_field(inst, v)
    slope = inst.mu.weights * inst.divergence.psi_prime(s)
    return _grad_floor(inst.stacked_basis, slope, inst.stacked_targets)


def audit_inequalities(inst: Instance, trace: IterateTrace, cert: RateCertificate) -> list[SweepChecks]:
    """Verify the six per-sweep inequalities behind the linear rate.

    For sweep ``t`` (``h^t -> h^(t+1)``), with ``g`` the stacked gradient at
    ``h^t``, ``D`` the step, ``gap = F(h^t) - F_opt`` and
    ``imp = F(h^t) - F(h^(t+1))``:

    pl_inequality         gap <= |g|^2 / (2 delta^2 sigma)
    step_bound            |g| <= L sqrt(N) ||S|| |D|
    improvement_gap       |D|^2 <= (2 / sigma) imp
    improvement_rate      sigma / (2 L^2 N ||S||^2) |g|^2 <= imp
    norm_comparison       delta |[D]| <= |S D|
    relative_improvement  gamma gap <= imp
    """
    needed = ("grad_sum_norm", "step_sq", "improvement", "step_sum_norm", "step_quotient_norm")
    for name in needed:
        if len(getattr(trace, name)) < trace.n_sweeps:
            raise ValueError(f"trace field {name!r} is incomplete")
    if trace.gap is None:
        raise ValueError("trace has no optimality gaps; call attach_gaps first")
    eps = np.finfo(float).eps
    sigma, L, N = cert.sigma_R, cert.L_R, cert.n_blocks
    nS, d, gamma = cert.norm_S, cert.delta, cert.gamma
    out = []
    for t in range(trace.n_sweeps):
        g = trace.grad_sum_norm[t]
        g_err = _gradient_error(inst, trace.thetas[t]) if trace.thetas else 0.0
        step = math.sqrt(trace.step_sq[t])
        step_err = 8.0 * eps * (step + np.linalg.norm(trace.thetas[t]) if trace.thetas else step)
        imp, imp_err = trace.improvement[t], trace.improvement_err[t]
        gap, gap_err = trace.gap[t], trace.gap_err[t]
        g2_err = 2.0 * g * g_err + g_err * g_err
        checks = {
            "pl_inequality": _check(gap, g * g / (2.0 * d * d * sigma), gap_err, g2_err / (2.0 * d * d * sigma)),
            "step_bound": _check(g, L * math.sqrt(N) * nS * step, g_err, L * math.sqrt(N) * nS * step_err),
            "improvement_gap": _check(trace.step_sq[t], 2.0 / sigma * imp, 2.0 * step * step_err, 2.0 / sigma * imp_err),
            "improvement_rate": _check(sigma / (2.0 * L * L * N * nS * nS) * g * g, imp,
                                       sigma / (2.0 * L * L * N * nS * nS) * g2_err, imp_err),
            "norm_comparison": _check(d * trace.step_quotient_norm[t], trace.step_sum_norm[t], d * step_err, nS * step_err),
            "relative_improvement": _check(gamma * gap, imp, gamma * gap_err, imp_err),
        }
        out.append(SweepChecks(t, checks))
    cert.per_sweep_checks = out
    return out


def check_envelope(trace: IterateTrace, cert: RateCertificate) -> EnvelopeReport:
    """``F(h^t) - F_opt <= (1 - gamma)^t (F(h^0) - F_opt)`` at every recorded iterate.

    Also reports the median observed ratio of consecutive gaps, using only
    gaps well above their rounding error.
    """
    if trace.gap is None:
        raise ValueError("trace has no optimality gaps; call attach_gaps first")
    rho = 1.0 - cert.gamma
    g0, e0 = trace.gap[0], trace.gap_err[0]
    rows = []
    for t, (gap, err) in enumerate(zip(trace.gap, trace.gap_err)):
        bound = rho ** t * g0
        c = _check(gap, bound, err, rho ** t * e0)
        rows.append(EnvelopeRow(t, gap, bound, c.tolerance, c.ok))
    ratios = [
        trace.gap[t + 1] / trace.gap[t]
        for t in range(len(trace.gap) - 1)
        if trace.gap[t + 1] > 1e3 * trace.gap_err[t + 1] and trace.gap[t] > 1e3 * trace.gap_err[t]
    ]
    emp = float(np.median(ratios)) if ratios else None
    report = EnvelopeReport(tuple(rows), all(r.ok for r in rows), emp, rho)
    cert.envelope = report
    return report


def certify(
    inst: Instance,
    trace: IterateTrace,
    reference: Solution,
    radius: float | None = None,
) -> RateCertificate:
    """Gaps, coefficient, per-sweep checks and envelope in one call."""
    op = inst.sum_operator
    geometry = operator_norms(op)
    attach_gaps(inst, trace, reference)
    delta = float(op.singular_values[op.rank - 1])
    cert = compute_gamma(trace, reference, geometry, inst.divergence, inst.N, radius=radius, delta=delta)
    audit_inequalities(inst, trace, cert)
    check_envelope(trace, cert)
    return cert
