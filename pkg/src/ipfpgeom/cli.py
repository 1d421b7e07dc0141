"""Command-line entry point: ``ipfpgeom {gen,solve,geometry,audit}``.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure
(non-convergence, radius guard), 3 audit violation.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys

import numpy as np

from . import instances
from .audit import certify
from .errors import (
    ContainmentError,
    ConvergenceError,
    IPFPError,
    SchemaError,
    SumNotClosedError,
)
from .geometry import friedrichs_angle, n_subspace_bounds, operator_norms, two_subspace_norms_from_angle
from .io import load_instance, read_trace, save_instance, save_solution, to_jsonable, write_json, write_trace
from .solver import SolverConfig, joint_solve, run_ipfp, sinkhorn_closed_form, with_epsilon

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_AUDIT = 0, 1, 2, 3

log = logging.getLogger("ipfpgeom")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _gen(args) -> int:
    kw = {"divergence": args.divergence}
    if args.kind == "ot2":
        inst = instances.random_ot2(args.seed, n=args.n or 5, cost_scale=args.cost_scale,
                                    mean_zero=args.mean_zero, **kw)
    elif args.kind == "mmot":
        inst = instances.random_mmot(args.seed, n=args.n or 3, N=args.N or 3, cost_scale=args.cost_scale,
                                     mean_zero=args.mean_zero, **kw)
    elif args.kind == "mot":
        n = args.n or 3
        inst = instances.random_mot(args.seed, n1=n, n2=n + 1, distorted=args.distorted,
                                    cost_scale=args.cost_scale, **kw)
    else:
        inst = instances.gen_random(args.seed, n=args.n or 8, N=args.N or 2, shared_dims=args.shared_dims,
                                    cost_scale=args.cost_scale, **kw)
    if args.epsilon != 1.0:
        inst = with_epsilon(inst, args.epsilon)
    save_instance(inst, args.out)
    return EXIT_OK


def _load(args):
    inst = load_instance(args.instance)
    if getattr(args, "divergence", None) and args.divergence != inst.divergence.name:
        inst = inst.with_divergence(args.divergence)
    return inst


def _solve(args) -> int:
    inst = _load(args)
    cfg = SolverConfig(max_sweeps=args.max_sweeps, sweep_tol=args.tol, radius_guard=args.radius_guard)
    solver = run_ipfp
    if args.fast_sinkhorn:
        solver = sinkhorn_closed_form
    try:
        trace, sol = solver(inst, cfg)
    except ConvergenceError as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC
    cert = None
    try:
        cert = certify(inst, trace, joint_solve(inst))
    except IPFPError as exc:
        log.warning("audit columns left empty: %s", exc)
    if args.trace:
        write_trace(args.trace, trace, cert)
    if args.out:
        save_solution(sol, args.out)
    print(f"sweeps={sol.sweeps} converged={sol.converged} F={sol.F_value:.17g} "
          f"max_residual={float(np.max(sol.moment_residuals)):.3e}")
    return EXIT_OK if sol.converged else EXIT_NUMERIC


def geometry_report(inst) -> dict:
    op = inst.sum_operator
    rep = operator_norms(op)
    out = {
        "norm_S": rep.norm_S,
        "norm_S_inv": rep.norm_S_inv,
        "condition": rep.condition,
        "delta": float(op.singular_values[op.rank - 1]),
        "rank": rep.rank,
        "kernel_dim": rep.kernel_dim,
        "ranks": list(inst.ranks),
        "singular_values": op.singular_values.tolist(),
        "standing_violations": list(op.standing_violations),
    }
    if inst.N == 2:
        pair = {}
        try:
            ang = friedrichs_angle(*inst.subspaces, inst.mu, inst.rank_tol)
            pair = to_jsonable(ang)
            fs, fi = two_subspace_norms_from_angle(ang.cos_angle, ang.intersection_trivial)
            pair.update(formula_norm_S=fs, formula_norm_S_inv=fi,
                        norm_S_error=abs(fs - rep.norm_S), norm_S_inv_error=abs(fi - rep.norm_S_inv))
        except (ContainmentError, SumNotClosedError) as exc:
            pair["note"] = str(exc)
        out["two_subspace"] = pair
    if inst.N >= 2:
        out["n_subspace_bounds"] = to_jsonable(n_subspace_bounds(inst.subspaces, inst.mu, inst.rank_tol))
    meta = inst.metadata
    if meta.get("kind") == "mot":
        spec = instances.MotSpec(tuple(meta["x1_atoms"]), tuple(meta["x2_atoms"]), tuple(meta["mu1"]),
                                 tuple(meta["mu2"]), density=meta.get("density"))
        bounds = instances.mot_angle_bounds(spec)
        mot = {"a": spec.a, "V2": spec.V2, "angle_bound": bounds["radius"],
               "angle_bound_diameter": bounds["diameter"]}
        p = spec.normalized_density()
        if p is not None:
            cb = instances.mot_condition_bound(float(p.max()), float((1.0 / p).max()), bounds["radius"])
            mot["condition_bound"] = to_jsonable(cb)
            mot["norm_S_inv_within_conservative"] = rep.norm_S_inv <= cb.conservative_inv + 1e-8
            mot["norm_S_inv_within_ratio_variant"] = rep.norm_S_inv <= cb.ratio_inv + 1e-8
        out["mot"] = mot
    return out


def _geometry(args) -> int:
    inst = _load(args)
    report = geometry_report(inst)
    write_json(report, args.report)
    print(f"norm_S={report['norm_S']:.17g} norm_S_inv={report['norm_S_inv']:.17g}")
    return EXIT_OK


def certificate_report(cert) -> dict:
    sweeps = []
    for s in cert.per_sweep_checks:
        sweeps.append({"sweep": s.sweep, "ok": s.ok,
                       "checks": {k: to_jsonable(v) for k, v in s.checks.items()}})
    env = cert.envelope
    return {
        "rate_constant": {"gamma": cert.gamma, "rho": cert.rho, "R": cert.R, "measured_radius": cert.measured_radius,
                          "radius_pinned": cert.radius_pinned, "sigma_R": cert.sigma_R, "L_R": cert.L_R,
                          "norm_S": cert.norm_S, "norm_S_inv": cert.norm_S_inv, "delta": cert.delta,
                          "n_blocks": cert.n_blocks, "divergence": cert.divergence,
                          "delta_times_norm_S_inv": cert.consistency, "diagnostic": cert.diagnostic},
        "F_opt": cert.F_opt,
        "all_ok": cert.all_ok,
        "per_sweep_checks": sweeps,
        "exponential_envelope": {
            "holds": env.holds,
            "violations": env.violations,
            "empirical_contraction": env.empirical_contraction,
            "bound_contraction": env.bound_contraction,
            "rows": to_jsonable(env.rows),
        },
    }


def _audit(args) -> int:
    inst = _load(args)
    trace = read_trace(args.trace)
    if trace.thetas is None:
        raise SchemaError("trace file carries no potentials; cannot audit")
    try:
        reference = joint_solve(inst)
        cert = certify(inst, trace, reference, radius=args.radius)
    except ConvergenceError as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC
    write_json(certificate_report(cert), args.report)
    bad = [(s.sweep, s.failed()) for s in cert.per_sweep_checks if not s.ok]
    print(f"gamma={cert.gamma:.6e} rho={cert.rho:.17g} R={cert.R:.6g} sweeps={len(cert.per_sweep_checks)} "
          f"violations={len(bad) + len(cert.envelope.violations)}")
    for sweep, names in bad:
        print(f"sweep {sweep}: {', '.join(names)} violated")
    if cert.envelope.violations:
        print(f"envelope violated at sweeps {cert.envelope.violations}")
    return EXIT_OK if cert.all_ok else EXIT_AUDIT


def _positive_float(text):
    x = float(text)
    if not (x > 0 and math.isfinite(x)):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return x


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ipfpgeom", description="Dual IPFP solver with geometric rate certificates.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a generated instance")
    g.add_argument("--kind", choices=("ot2", "mmot", "mot", "random"), required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--mean-zero", action="store_true", help="mean-zero marginal spaces (ot2, mmot)")
    g.add_argument("--n", type=int, help="atoms per marginal, or total atoms for random")
    g.add_argument("--N", type=int, help="number of subspaces or marginals")
    g.add_argument("--shared-dims", type=int, default=0, help="common directions (random)")
    g.add_argument("--distorted", action="store_true", help="distorted reference measure (mot)")
    g.add_argument("--cost-scale", type=float, default=1.0)
    g.add_argument("--epsilon", type=_positive_float, default=1.0)
    g.add_argument("--divergence", choices=("kl", "quadratic"), default="kl")
    g.set_defaults(func=_gen)

    s = sub.add_parser("solve", help="run the dual IPFP")
    s.add_argument("--instance", required=True)
    s.add_argument("--divergence", choices=("kl", "quadratic"))
    s.add_argument("--tol", type=_positive_float, default=1e-10)
    s.add_argument("--max-sweeps", type=int, default=1000)
    s.add_argument("--radius-guard", type=_positive_float, default=50.0)
    s.add_argument("--trace")
    s.add_argument("--out")
    s.add_argument("--fast-sinkhorn", action="store_true", help="closed-form updates for marginal constraints")
    s.set_defaults(func=_solve)

    m = sub.add_parser("geometry", help="operator norms, angles and bounds")
    m.add_argument("--instance", required=True)
    m.add_argument("--report", required=True)
    m.set_defaults(func=_geometry)

    a = sub.add_parser("audit", help="certify a recorded trace")
    a.add_argument("--instance", required=True)
    a.add_argument("--trace", required=True)
    a.add_argument("--report", required=True)
    a.add_argument("--divergence", choices=("kl", "quadratic"))
    a.add_argument("--radius", type=_positive_float, help="pin R instead of measuring it")
    a.set_defaults(func=_audit)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if getattr(args, "max_sweeps", 1) < 1:
        parser.error("--max-sweeps must be positive")
    try:
        return args.func(args)
    except (OSError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConvergenceError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except IPFPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
