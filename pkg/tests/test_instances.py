import math

import numpy as np
import pytest

from ipfpgeom.errors import InfeasibleError, MeasureError, SizeError
from ipfpgeom.geometry import friedrichs_angle, operator_norms
from ipfpgeom.instances import (
    MotSpec,
    convex_order_check,
    example_mot_spec,
    from_projection,
    gen_mmot,
    gen_mot,
    gen_random,
    mot_angle_bound,
    mot_angle_bounds,
    mot_condition_bound,
    random_mot,
    random_mot_spec,
)
from ipfpgeom.io import instance_to_dict
from ipfpgeom.measure import Measure
from ipfpgeom.solver import run_ipfp


def test_mmot_without_normalization_shares_constants():
    inst = gen_mmot([[0.5, 0.5], [0.25, 0.75]], np.zeros(4), mean_zero=False)
    geo = operator_norms(inst.sum_operator)
    assert geo.kernel_dim == 1
    assert geo.norm_S == pytest.approx(math.sqrt(2), abs=1e-12)
    inst3 = gen_mmot([[0.5, 0.5]] * 3, np.zeros(8), mean_zero=False)
    assert operator_norms(inst3.sum_operator).kernel_dim == 2


def test_mmot_mean_zero_pairwise_orthogonal():
    rng = np.random.default_rng(0)
    margs = [rng.dirichlet(np.ones(3)) * 0.5 + 1 / 6 for _ in range(3)]
    inst = gen_mmot(margs, rng.uniform(size=27), mean_zero=True)
    subs = inst.subspaces
    for i in range(3):
        for j in range(i + 1, 3):
            assert friedrichs_angle(subs[i], subs[j], inst.mu).cos_angle <= 1e-10


def test_mmot_zero_cost_one_sweep():
    inst = gen_mmot([[0.2, 0.8], [0.5, 0.3, 0.2]], np.zeros(6), mean_zero=True)
    trace, sol = run_ipfp(inst)
    assert trace.n_sweeps == 1
    assert np.allclose(sol.primal_density, 1.0)


def test_size_guard():
    with pytest.raises(SizeError):
        gen_mmot([np.full(20, 0.05)] * 3, np.zeros(8000))
    with pytest.raises(SizeError):
        gen_random(0, n=10000)


def test_mot_intersection_is_spanned_by_increment():
    spec = example_mot_spec()
    inst = gen_mot(spec, np.zeros(6))
    H1, H2 = inst.subspaces
    ang = friedrichs_angle(H1, H2, inst.mu)
    assert ang.dim_intersection == 1
    delta = np.tile(spec.x2_atoms, 2) - np.repeat(spec.x1_atoms, 3)
    for H in (H1, H2):
        coef, *_ = np.linalg.lstsq(H.ortho_basis, delta, rcond=None)
        assert np.allclose(H.ortho_basis @ coef, delta, atol=1e-12)
    assert operator_norms(inst.sum_operator).norm_S == pytest.approx(math.sqrt(2), abs=1e-10)


def test_example_mot_converges():
    spec = example_mot_spec()
    assert spec.V2 == pytest.approx(0.75)
    assert spec.a == 0.5
    inst = gen_mot(spec, np.array([0.0, 1.0, 0.5, 0.2, 0.0, 1.0]))
    trace, sol = run_ipfp(inst)
    assert sol.converged
    assert sol.moment_residuals[1] <= 1e-10
    assert np.all(np.diff(trace.F) <= 1e-12)


def test_mot_angle_bound_formula():
    assert mot_angle_bound(1.0, 2.0) == pytest.approx(1 / math.sqrt(3), abs=1e-12)
    assert mot_angle_bound(1.0, 1e12) < 1e-5
    with pytest.raises(ValueError):
        mot_angle_bound(0.0, 1.0)
    with pytest.raises(ValueError):
        mot_angle_bound(1.0, -1.0)
    b = mot_angle_bounds(example_mot_spec())
    assert b["radius"] == pytest.approx(0.5) and b["diameter"] > b["radius"]


def test_mot_condition_bound_arithmetic():
    cb = mot_condition_bound(2.0, 2.0, 0.5)
    assert cb.ratio_inv == pytest.approx(math.sqrt(2))
    assert cb.conservative_inv == pytest.approx(2 * math.sqrt(2))
    assert cb.conservative == pytest.approx(4.0)
    with pytest.raises(ValueError):
        mot_condition_bound(1.0, 0.5, 0.5)
    with pytest.raises(ValueError):
        mot_condition_bound(1.0, 1.0, 1.0)


def test_distorted_reference_within_conservative_bound():
    for seed in range(8):
        spec = random_mot_spec(seed, distorted=True)
        inst = gen_mot(spec, np.zeros(12))
        p = spec.normalized_density()
        cb = mot_condition_bound(float(p.max()), float((1 / p).max()), mot_angle_bound(spec.a, spec.V2))
        geo = operator_norms(inst.sum_operator)
        assert geo.norm_S_inv <= cb.conservative_inv + 1e-8
        assert geo.condition <= cb.conservative + 1e-8


def test_convex_order():
    x, w = [-1.0, 0.0, 2.0], [0.4, 0.4, 0.2]
    assert convex_order_check(x, w, x, w)[0]
    assert convex_order_check([0.0], [1.0], x, w)[0]
    ok, worst = convex_order_check([-1.0, 1.0], [0.5, 0.5], [-0.5, 0.0, 0.5], [0.25, 0.5, 0.25])
    # call payoff at k = 0: 0.5 for the first law, 0.125 for the second
    assert not ok and worst == pytest.approx(0.375)


def test_mot_spec_validation():
    with pytest.raises(MeasureError):
        MotSpec((-1.0, 2.0), (-2.0, 2.0), (0.5, 0.5), (0.5, 0.5))
    with pytest.raises(MeasureError):
        MotSpec((0.0,), (0.0,), (1.0,), (1.0,))
    with pytest.raises(InfeasibleError):
        MotSpec((-1.0, 1.0), (-0.5, 0.5), (0.5, 0.5), (0.5, 0.5))
    with pytest.raises(MeasureError):
        MotSpec((-0.5, 0.5), (-1.0, 0.0, 1.0), (0.5, 0.5), (0.375, 0.25, 0.375), density=np.zeros((2, 3)))
    with pytest.raises(InfeasibleError):
        MotSpec((-0.5, 0.5), (-1.0, 0.0, 1.0), (0.5, 0.5), (0.375, 0.25, 0.375),
                coupling=np.full((2, 3), 1 / 6))


def test_mot_with_martingale_coupling_reference():
    x1, x2 = np.array([-0.5, 0.5]), np.array([-1.0, 0.0, 1.0])
    pi = np.array([[0.3, 0.15, 0.05], [0.05, 0.15, 0.3]])
    assert np.allclose(pi @ x2, pi.sum(1) * x1)
    spec = MotSpec(tuple(x1), tuple(x2), tuple(pi.sum(1)), tuple(pi.sum(0)), coupling=pi)
    inst = gen_mot(spec, np.zeros(6))
    trace, sol = run_ipfp(inst)
    # the reference already satisfies every constraint
    assert trace.n_sweeps == 1
    assert np.allclose(sol.primal_density, 1.0)


def test_random_mot_spec_is_valid():
    for seed in range(10):
        spec = random_mot_spec(seed, n1=3, n2=5)
        assert convex_order_check(spec.x1_atoms, spec.mu1, spec.x2_atoms, spec.mu2)[0]


def test_from_projection():
    mu = Measure([0.2, 0.3, 0.5])
    assert np.allclose(from_projection(mu, mu), 0.0)
    with pytest.raises(MeasureError):
        from_projection([0.0, 0.5, 0.5], mu)


def test_gen_random_deterministic_and_admissible():
    a, b = gen_random(42, n=9, N=3, shared_dims=1), gen_random(42, n=9, N=3, shared_dims=1)
    assert instance_to_dict(a) == instance_to_dict(b)
    for seed in range(20):
        inst = gen_random(seed, n=8, N=3)
        op = inst.sum_operator
        assert not op.standing_violations
        assert op.singular_values[op.rank - 1] >= 1e-6
    with pytest.raises(ValueError):
        gen_random(0, n=4, N=2, ranks=[4, 1])


def test_random_mot_is_seeded():
    assert instance_to_dict(random_mot(3)) == instance_to_dict(random_mot(3))
