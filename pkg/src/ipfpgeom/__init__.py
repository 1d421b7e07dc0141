"""Dual iterative proportional fitting for information projections onto
linear constraint sets, with rate certificates from subspace geometry."""

from .audit import RateCertificate, attach_gaps, audit_inequalities, certify, check_envelope, compute_gamma, rate_constant
from .divergences import DivergenceSpec, fenchel_audit, make_divergence, primal_divergence
from .errors import *  # noqa: F401,F403
from .geometry import (
    AngleReport,
    GeometryReport,
    SumOperator,
    assemble_sum_operator,
    friedrichs_angle,
    generalized_angle,
    n_subspace_bounds,
    operator_norms,
    project_out_kernel,
    quotient_norm,
    sum_norm,
    two_subspace_norms_from_angle,
)
from .instances import (
    MotSpec,
    convex_order_check,
    from_projection,
    gen_mmot,
    gen_mot,
    gen_ot2,
    gen_random,
    mot_angle_bound,
    mot_condition_bound,
)
from .io import load_instance, read_trace, save_instance, write_trace
from .measure import DiscreteSpace, Measure, PotentialTuple, Subspace, orthonormalize, weighted_inner, weighted_norm
from .solver import (
    Instance,
    IterateTrace,
    Solution,
    SolverConfig,
    coordinate_minimize,
    dual_objective,
    joint_solve,
    make_instance,
    partial_gradient,
    primal_recover,
    riesz_gradient,
    run_ipfp,
    sinkhorn_closed_form,
)

__version__ = "0.1.0"
