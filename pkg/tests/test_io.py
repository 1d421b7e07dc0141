import json

import numpy as np
import pytest

from ipfpgeom.errors import SchemaError
from ipfpgeom.instances import gen_random, random_mot
from ipfpgeom.io import (
    TRACE_COLUMNS,
    instance_to_dict,
    load_instance,
    load_solution,
    read_trace,
    save_instance,
    save_solution,
    write_trace,
)
from ipfpgeom.audit import certify
from ipfpgeom.measure import PotentialTuple
from ipfpgeom.solver import joint_solve, run_ipfp, with_epsilon


def _same_instance(a, b):
    assert np.array_equal(a.mu.weights, b.mu.weights)
    assert np.array_equal(a.raw_cost, b.raw_cost)
    assert np.array_equal(a.cost, b.cost)
    assert a.epsilon == b.epsilon and a.divergence.name == b.divergence.name
    for s, t in zip(a.subspaces, b.subspaces):
        assert np.array_equal(s.raw_basis, t.raw_basis)
        assert np.array_equal(s.ortho_basis, t.ortho_basis)
    for s, t in zip(a.targets, b.targets):
        assert np.array_equal(s, t)
    assert a.space == b.space
    assert a.metadata == b.metadata


def test_random_instance_roundtrip(tmp_path):
    inst = gen_random(5, n=7, N=3, shared_dims=1)
    save_instance(inst, tmp_path / "i.json")
    _same_instance(inst, load_instance(tmp_path / "i.json"))


def test_mot_instance_roundtrip_keeps_targets_and_labels(tmp_path):
    inst = random_mot(4, distorted=True)
    save_instance(inst, tmp_path / "m.json")
    back = load_instance(tmp_path / "m.json")
    _same_instance(inst, back)
    assert back.explicit_targets
    assert back.space.labels == inst.space.labels


def test_epsilon_folded_on_load(tmp_path):
    inst = with_epsilon(gen_random(1, n=5, N=2), 0.5)
    save_instance(inst, tmp_path / "e.json")
    back = load_instance(tmp_path / "e.json")
    assert back.epsilon == 0.5
    assert np.array_equal(back.cost, 2 * back.raw_cost)
    assert json.loads((tmp_path / "e.json").read_text())["cost"] == inst.raw_cost.tolist()


def test_initial_potentials_used(tmp_path):
    inst = gen_random(2, n=6, N=2)
    _, sol = run_ipfp(inst)
    d = instance_to_dict(inst)
    d["initial_potentials"] = [t.tolist() for t in sol.potentials.thetas]
    (tmp_path / "w.json").write_text(json.dumps(d))
    warm = load_instance(tmp_path / "w.json")
    assert isinstance(warm.initial, PotentialTuple)
    trace, _ = run_ipfp(warm)
    assert trace.n_sweeps == 1


def _write(tmp_path, d):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(d))
    return p


def test_schema_errors(tmp_path):
    good = instance_to_dict(gen_random(3, n=5, N=2))

    d = dict(good, mu=[0.18] * 5)
    with pytest.raises(SchemaError, match="mu"):
        load_instance(_write(tmp_path, d))

    d = json.loads(json.dumps(good))
    d["subspaces"][1]["basis"][3].append(1.0)
    with pytest.raises(SchemaError, match=r"subspaces\[1\].basis.*row 3"):
        load_instance(_write(tmp_path, d))

    d = json.loads(json.dumps(good))
    d["subspaces"][0]["basis"] = [[0.0]] * 5
    with pytest.raises(SchemaError, match="trivial"):
        load_instance(_write(tmp_path, d))

    with pytest.raises(SchemaError, match="schema_version"):
        load_instance(_write(tmp_path, dict(good, schema_version=2)))

    d = dict(good)
    del d["cost"]
    with pytest.raises(SchemaError, match="cost"):
        load_instance(_write(tmp_path, d))

    with pytest.raises(SchemaError, match="cost.*row 2"):
        load_instance(_write(tmp_path, dict(good, cost=[0, 0, "x", 0, 0])))

    with pytest.raises(SchemaError, match="divergence"):
        load_instance(_write(tmp_path, dict(good, divergence="tv")))

    with pytest.raises(SchemaError, match="epsilon"):
        load_instance(_write(tmp_path, dict(good, epsilon=0)))

    (tmp_path / "junk.json").write_text("{")
    with pytest.raises(SchemaError):
        load_instance(tmp_path / "junk.json")


def test_trace_roundtrip(tmp_path):
    inst = gen_random(4, n=7, N=2)
    trace, sol = run_ipfp(inst)
    cert = certify(inst, trace, joint_solve(inst))
    write_trace(tmp_path / "t.csv", trace, cert)
    header = (tmp_path / "t.csv").read_text().splitlines()[0].split(",")
    assert tuple(header[: len(TRACE_COLUMNS)]) == TRACE_COLUMNS
    back = read_trace(tmp_path / "t.csv")
    for name in ("F", "grad_sum_norm", "grad_quotient_norm", "radius", "step_sq", "improvement",
                 "improvement_err", "step_sum_norm", "step_quotient_norm"):
        assert getattr(back, name) == getattr(trace, name), name
    assert all(np.array_equal(a, b) for a, b in zip(back.thetas, trace.thetas))
    again = certify(inst, back, joint_solve(inst))
    assert again.all_ok and again.gamma == cert.gamma


def test_trace_without_certificate(tmp_path):
    inst = gen_random(4, n=7, N=2)
    trace, _ = run_ipfp(inst)
    write_trace(tmp_path / "t.csv", trace)
    rows = (tmp_path / "t.csv").read_text().splitlines()
    assert len(rows) == trace.n_sweeps + 2
    assert rows[1].split(",")[TRACE_COLUMNS.index("pl_lhs")] == ""


def test_trace_errors(tmp_path):
    (tmp_path / "e.csv").write_text("")
    with pytest.raises(SchemaError):
        read_trace(tmp_path / "e.csv")
    (tmp_path / "h.csv").write_text("sweep,F\n0,1\n")
    with pytest.raises(SchemaError):
        read_trace(tmp_path / "h.csv")


def test_solution_roundtrip(tmp_path):
    inst = gen_random(6, n=6, N=2)
    _, sol = run_ipfp(inst)
    save_solution(sol, tmp_path / "s.json")
    back = load_solution(tmp_path / "s.json")
    assert back.F_value == sol.F_value
    assert np.array_equal(back.primal_density, sol.primal_density)
    assert np.array_equal(back.potentials.stacked(), sol.potentials.stacked())
    assert back.converged == sol.converged and back.sweeps == sol.sweeps
