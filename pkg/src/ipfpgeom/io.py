"""Instance, trace, solution and report files.

Instances, solutions and reports are JSON. Traces are CSV with one row per
iterate, numbers written with 17 significant digits so that float64 values
survive a round trip unchanged.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from .divergences import DIVERGENCES, make_divergence
from .errors import IPFPError, MeasureError, SchemaError
from .measure import DEFAULT_RANK_TOL, DiscreteSpace, Measure, PotentialTuple, orthonormalize
from .solver import Instance, IterateTrace, Solution

SCHEMA_VERSION = 1

TRACE_COLUMNS = (
    "sweep", "F", "F_gap", "grad_sum_norm", "grad_quotient_norm", "radius", "step_sq",
    "pl_lhs", "pl_rhs", "envelope_bound", "imp_lhs", "imp_rhs",
    "improvement", "improvement_err", "gap_err", "step_sum_norm", "step_quotient_norm",
)


def _fmt(x) -> str:
    if x is None:
        return ""
    return format(float(x), ".17g")


def to_jsonable(obj):
    """Convert dataclasses, numpy values and tuples into plain JSON types."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        out = {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        for name in ("rho", "condition", "delta", "ok", "holds", "intersection_trivial"):
            attr = getattr(type(obj), name, None)
            if isinstance(attr, property):
                out[name] = to_jsonable(getattr(obj, name))
        return out
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, PotentialTuple):
        return [t.tolist() for t in obj.thetas]
    return obj


def write_json(data, path) -> None:
    Path(path).write_text(json.dumps(to_jsonable(data), indent=2, sort_keys=False) + "\n")


def instance_to_dict(inst: Instance) -> dict:
    space = {"n": inst.space.n}
    if inst.space.labels is not None:
        space["labels"] = [list(l) if isinstance(l, tuple) else l for l in inst.space.labels]
    if inst.space.shape is not None:
        space["shape"] = list(inst.space.shape)
    d = {
        "schema_version": SCHEMA_VERSION,
        "space": space,
        "mu": inst.mu.weights.tolist(),
        "cost": inst.raw_cost.tolist(),
        "epsilon": float(inst.epsilon),
        "divergence": inst.divergence.name,
        "rank_tol": float(inst.rank_tol),
        "subspaces": [{"name": s.name, "basis": s.raw_basis.tolist()} for s in inst.subspaces],
    }
    if inst.explicit_targets:
        d["targets"] = [t.tolist() for t in inst.targets]
    if inst.initial is not None:
        d["initial_potentials"] = [t.tolist() for t in inst.initial.thetas]
    if inst.metadata:
        d["metadata"] = to_jsonable(inst.metadata)
    return d


def _require(d: dict, key: str, where: str = ""):
    if key not in d:
        raise SchemaError(f"missing field {where + key!r}")
    return d[key]


def _vector(value, field: str, length: int | None = None) -> np.ndarray:
    if not isinstance(value, list):
        raise SchemaError(f"field {field!r} must be a list of numbers")
    for k, v in enumerate(value):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SchemaError(f"field {field!r} row {k}: expected a number, got {v!r}")
    arr = np.array(value, dtype=float)
    if length is not None and arr.size != length:
        raise SchemaError(f"field {field!r} has {arr.size} entries, expected {length}")
    return arr


def _matrix(value, field: str, rows: int) -> np.ndarray:
    if not isinstance(value, list) or len(value) != rows:
        got = len(value) if isinstance(value, list) else type(value).__name__
        raise SchemaError(f"field {field!r} must have {rows} rows, got {got}")
    width = None
    out = []
    for k, row in enumerate(value):
        if not isinstance(row, list):
            raise SchemaError(f"field {field!r} row {k} is not a list")
        if width is None:
            width = len(row)
        if len(row) != width or width == 0:
            raise SchemaError(f"field {field!r} row {k} has {len(row)} entries, expected {width or '>= 1'}")
        out.append(_vector(row, f"{field}[{k}]"))
    return np.array(out)


def instance_from_dict(d: dict) -> Instance:
    """Build an instance from its JSON form.

    Raises
    ------
    SchemaError
        On any structural problem, naming the offending field and row.
    """
    if not isinstance(d, dict):
        raise SchemaError("instance file must hold a JSON object")
    version = _require(d, "schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION}")
    space_d = _require(d, "space")
    if not isinstance(space_d, dict):
        raise SchemaError("field 'space' must be an object")
    n = _require(space_d, "n", "space.")
    if not isinstance(n, int) or n < 1:
        raise SchemaError(f"field 'space.n' must be a positive integer, got {n!r}")
    labels = space_d.get("labels")
    shape = space_d.get("shape")
    try:
        space = DiscreteSpace(n, labels=tuple(labels) if labels is not None else None,
                              shape=tuple(shape) if shape is not None else None)
    except IPFPError as exc:
        raise SchemaError(f"field 'space': {exc}") from exc
    try:
        mu = Measure(_vector(_require(d, "mu"), "mu", n))
    except MeasureError as exc:
        raise SchemaError(f"field 'mu': {exc}") from exc
    cost = _vector(_require(d, "cost"), "cost", n)
    epsilon = d.get("epsilon", 1.0)
    if isinstance(epsilon, bool) or not isinstance(epsilon, (int, float)) or not epsilon > 0:
        raise SchemaError(f"field 'epsilon' must be a positive number, got {epsilon!r}")
    name = d.get("divergence", "kl")
    if name not in DIVERGENCES:
        raise SchemaError(f"field 'divergence' must be one of {DIVERGENCES}, got {name!r}")
    rank_tol = float(d.get("rank_tol", DEFAULT_RANK_TOL))
    subs_d = _require(d, "subspaces")
    if not isinstance(subs_d, list) or not subs_d:
        raise SchemaError("field 'subspaces' must be a non-empty list")
    subs = []
    for i, s in enumerate(subs_d):
        where = f"subspaces[{i}]"
        if not isinstance(s, dict):
            raise SchemaError(f"field {where!r} must be an object")
        basis = _matrix(_require(s, "basis", where + "."), where + ".basis", n)
        try:
            subs.append(orthonormalize(basis, mu, rank_tol, name=s.get("name", f"H{i + 1}")))
        except IPFPError as exc:
            raise SchemaError(f"field {where!r}: {exc}") from exc
    targets = None
    if d.get("targets") is not None:
        t_d = d["targets"]
        if not isinstance(t_d, list) or len(t_d) != len(subs):
            raise SchemaError(f"field 'targets' must list one vector per subspace ({len(subs)})")
        targets = [_vector(t, f"targets[{i}]", subs[i].rank) for i, t in enumerate(t_d)]
    initial = None
    if d.get("initial_potentials") is not None:
        p_d = d["initial_potentials"]
        if not isinstance(p_d, list) or len(p_d) != len(subs):
            raise SchemaError(f"field 'initial_potentials' must list one vector per subspace ({len(subs)})")
        initial = PotentialTuple(tuple(_vector(t, f"initial_potentials[{i}]", subs[i].rank) for i, t in enumerate(p_d)))
    metadata = d.get("metadata", {})
    try:
        return Instance(
            space=space,
            mu=mu,
            raw_cost=cost,
            subspaces=tuple(subs),
            divergence=make_divergence(name),
            epsilon=float(epsilon),
            targets=targets,
            initial=initial,
            metadata=dict(metadata),
            rank_tol=rank_tol,
        )
    except IPFPError as exc:
        raise SchemaError(str(exc)) from exc


def save_instance(inst: Instance, path) -> None:
    write_json(instance_to_dict(inst), path)


def load_instance(path) -> Instance:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    return instance_from_dict(data)


def write_trace(path, trace: IterateTrace, cert=None) -> None:
    """Write one row per iterate ``h^0 .. h^T``.

    Sweep columns (step, radius, improvement, ...) on row ``t`` describe the
    sweep from ``h^t`` to ``h^(t+1)`` and are empty on the last row. The
    audit columns are filled when a certificate is given. The potentials
    follow as ``theta_0, theta_1, ...`` (all blocks stacked).
    """
    T = trace.n_sweeps
    m = trace.thetas[0].size if trace.thetas else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(TRACE_COLUMNS) + [f"theta_{k}" for k in range(m)])
        for t in range(T + 1):
            sweep = t < T
            row = {
                "sweep": str(t),
                "F": _fmt(trace.F[t]),
                "grad_sum_norm": _fmt(trace.grad_sum_norm[t]),
                "grad_quotient_norm": _fmt(trace.grad_quotient_norm[t]),
            }
            if sweep:
                for name in ("radius", "step_sq", "improvement", "improvement_err", "step_sum_norm",
                             "step_quotient_norm"):
                    row[name] = _fmt(getattr(trace, name)[t])
            if trace.gap is not None:
                row["F_gap"] = _fmt(trace.gap[t])
                row["gap_err"] = _fmt(trace.gap_err[t])
            if cert is not None:
                if sweep and cert.per_sweep_checks:
                    checks = cert.per_sweep_checks[t].checks
                    row["pl_lhs"] = _fmt(checks["pl_inequality"].lhs)
                    row["pl_rhs"] = _fmt(checks["pl_inequality"].rhs)
                    row["imp_lhs"] = _fmt(checks["improvement_rate"].lhs)
                    row["imp_rhs"] = _fmt(checks["improvement_rate"].rhs)
                if cert.envelope is not None:
                    row["envelope_bound"] = _fmt(cert.envelope.rows[t].bound)
            values = [row.get(c, "") for c in TRACE_COLUMNS]
            if trace.thetas:
                values += [_fmt(x) for x in trace.thetas[t]]
            w.writerow(values)


def read_trace(path) -> IterateTrace:
    """Rebuild an ``IterateTrace`` from a trace file (audit columns are ignored)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty trace file")
    header = rows[0]
    missing = [c for c in ("sweep", "F", "grad_sum_norm", "grad_quotient_norm") if c not in header]
    if missing:
        raise SchemaError(f"{path}: trace header lacks {missing}")
    col = {name: k for k, name in enumerate(header)}
    theta_cols = [k for k, name in enumerate(header) if name.startswith("theta_")]
    body = rows[1:]
    if not body:
        raise SchemaError(f"{path}: trace has no rows")

    def num(r, k, name):
        try:
            return float(r[k])
        except (ValueError, IndexError) as exc:
            raise SchemaError(f"{path}: column {name!r} row {r[0] if r else '?'}: bad number") from exc

    trace = IterateTrace(thetas=[])
    for t, r in enumerate(body):
        if len(r) != len(header):
            raise SchemaError(f"{path}: row {t} has {len(r)} fields, header has {len(header)}")
        for name in ("F", "grad_sum_norm", "grad_quotient_norm"):
            getattr(trace, name).append(num(r, col[name], name))
        if t < len(body) - 1:
            for name in ("radius", "step_sq", "improvement", "improvement_err", "step_sum_norm",
                         "step_quotient_norm"):
                if name not in col:
                    raise SchemaError(f"{path}: trace header lacks {name!r}")
                getattr(trace, name).append(num(r, col[name], name))
        trace.thetas.append(np.array([num(r, k, header[k]) for k in theta_cols]))
    if not theta_cols:
        trace.thetas = None
    return trace


def solution_to_dict(sol: Solution) -> dict:
    return {
        "potentials": [t.tolist() for t in sol.potentials.thetas],
        "F_value": sol.F_value,
        "primal_density": sol.primal_density.tolist(),
        "moment_residuals": sol.moment_residuals.tolist(),
        "converged": sol.converged,
        "sweeps": sol.sweeps,
        "radius": sol.radius,
        "negative_mass": sol.negative_mass,
    }


def solution_from_dict(d: dict) -> Solution:
    try:
        return Solution(
            potentials=PotentialTuple(tuple(np.array(t, dtype=float) for t in d["potentials"])),
            F_value=float(d["F_value"]),
            primal_density=np.array(d["primal_density"], dtype=float),
            moment_residuals=np.array(d["moment_residuals"], dtype=float),
            converged=bool(d["converged"]),
            sweeps=int(d.get("sweeps", 0)),
            radius=float(d.get("radius", math.nan)),
            negative_mass=float(d.get("negative_mass", 0.0)),
        )
    except KeyError as exc:
        raise SchemaError(f"solution file lacks field {exc.args[0]!r}") from exc


def save_solution(sol: Solution, path) -> None:
    write_json(solution_to_dict(sol), path)


def load_solution(path) -> Solution:
    return solution_from_dict(json.loads(Path(path).read_text()))
