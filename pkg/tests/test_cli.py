import csv
import json
import math
import subprocess
import sys

import pytest

from ipfpgeom.cli import main


def _gen(tmp_path, kind, seed=7, *extra):
    out = tmp_path / f"{kind}-{seed}.json"
    assert main(["gen", "--kind", kind, "--seed", str(seed), "--out", str(out), *extra]) == 0
    return out


def test_gen_is_deterministic(tmp_path):
    a = _gen(tmp_path, "ot2")
    b = tmp_path / "again.json"
    assert main(["gen", "--kind", "ot2", "--seed", "7", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


@pytest.mark.parametrize("kind,extra", [("ot2", ()), ("mmot", ("--mean-zero",)), ("mot", ()),
                                        ("random", ("--N", "3", "--shared-dims", "1"))])
def test_solve_then_audit(tmp_path, kind, extra, capsys):
    inst = _gen(tmp_path, kind, 7, *extra)
    trace, sol, rep = tmp_path / "t.csv", tmp_path / "s.json", tmp_path / "a.json"
    # the random draw is poorly conditioned and needs a few thousand sweeps
    assert main(["solve", "--instance", str(inst), "--trace", str(trace), "--out", str(sol),
                 "--max-sweeps", "5000"]) == 0
    assert json.loads(sol.read_text())["converged"]
    assert main(["audit", "--instance", str(inst), "--trace", str(trace), "--report", str(rep)]) == 0
    report = json.loads(rep.read_text())
    assert report["all_ok"]
    assert 0 < report["rate_constant"]["gamma"] < 1
    assert report["rate_constant"]["rho"] == pytest.approx(1 - report["rate_constant"]["gamma"])
    assert "violations=0" in capsys.readouterr().out


def test_solve_quadratic_and_fast_path(tmp_path):
    inst = _gen(tmp_path, "ot2")
    assert main(["solve", "--instance", str(inst), "--divergence", "quadratic", "--tol", "1e-9"]) == 0
    t = tmp_path / "t.csv"
    assert main(["solve", "--instance", str(inst), "--fast-sinkhorn", "--trace", str(t)]) == 0
    assert main(["audit", "--instance", str(inst), "--trace", str(t), "--report", str(tmp_path / "r.json")]) == 0


def test_geometry_on_mot(tmp_path):
    inst = _gen(tmp_path, "mot", 3, "--distorted")
    rep = tmp_path / "g.json"
    assert main(["geometry", "--instance", str(inst), "--report", str(rep)]) == 0
    report = json.loads(rep.read_text())
    assert report["norm_S"] == pytest.approx(math.sqrt(2), abs=1e-10)
    assert report["two_subspace"]["dim_intersection"] == 1
    assert report["two_subspace"]["norm_S_inv_error"] <= 1e-8
    assert report["mot"]["norm_S_inv_within_conservative"]
    assert report["n_subspace_bounds"]["direct"]["condition"] > 0


def test_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["solve"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["gen", "--kind", "torus", "--seed", "1", "--out", "x"])
    assert exc.value.code == 1
    assert main(["solve", "--instance", str(tmp_path / "missing.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema_version": 1}))
    assert main(["geometry", "--instance", str(bad), "--report", str(tmp_path / "g.json")]) == 1
    assert "missing field" in capsys.readouterr().err


def test_numerical_failure_exit(tmp_path):
    inst = _gen(tmp_path, "ot2", 7, "--cost-scale", "20")
    assert main(["solve", "--instance", str(inst), "--radius-guard", "0.5"]) == 2
    assert main(["solve", "--instance", str(inst), "--max-sweeps", "1"]) == 2


def test_audit_violation_exit(tmp_path):
    inst = _gen(tmp_path, "ot2")
    trace = tmp_path / "t.csv"
    assert main(["solve", "--instance", str(inst), "--trace", str(trace)]) == 0
    rows = list(csv.reader(trace.open()))
    k = rows[0].index("improvement")
    rows[1][k] = repr(-abs(float(rows[1][k])))
    with trace.open("w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    assert main(["audit", "--instance", str(inst), "--trace", str(trace), "--report", str(tmp_path / "r.json")]) == 3


def test_module_entry_point(tmp_path):
    out = tmp_path / "r.json"
    proc = subprocess.run([sys.executable, "-m", "ipfpgeom", "gen", "--kind", "random", "--seed", "1",
                           "--out", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(out.read_text())["schema_version"] == 1
