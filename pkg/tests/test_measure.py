import numpy as np
import pytest

from ipfpgeom.errors import DimensionError, MeasureError, TrivialSubspaceError
from ipfpgeom.measure import (
    DiscreteSpace,
    Measure,
    PotentialTuple,
    component_fields,
    orthonormalize,
    sum_field,
    sup_distance,
    weighted_inner,
    weighted_norm,
)


def test_measure_rejects_bad_weights():
    with pytest.raises(MeasureError):
        Measure([0.5, 0.5, 0.0])
    with pytest.raises(MeasureError):
        Measure([0.3, 0.6])
    with pytest.raises(MeasureError):
        Measure([1.2, -0.2])
    with pytest.raises(MeasureError):
        Measure([np.nan, 1.0])
    with pytest.raises(MeasureError):
        Measure([])


def test_measure_constructors():
    m = Measure.normalized([1, 2, 3, 4])
    assert np.allclose(m.weights, [0.1, 0.2, 0.3, 0.4])
    assert Measure.uniform(4).weights.tolist() == [0.25] * 4
    with pytest.raises(ValueError):
        m.weights[0] = 1.0


def test_discrete_space_validation():
    with pytest.raises(DimensionError):
        DiscreteSpace(0)
    with pytest.raises(DimensionError):
        DiscreteSpace(3, labels=("a", "b"))
    with pytest.raises(DimensionError):
        DiscreteSpace(2, labels=("a", "a"))
    with pytest.raises(DimensionError):
        DiscreteSpace(6, shape=(2, 2))
    s = DiscreteSpace(6, labels=[[0, 1], [0, 2], [1, 1], [1, 2], [2, 1], [2, 2]], shape=[3, 2])
    assert s.shape == (3, 2) and s.labels[0] == (0, 1)


def test_weighted_inner_matches_direct_sum(rng):
    mu = Measure.normalized(rng.uniform(0.1, 1, 7))
    f, g = rng.standard_normal(7), rng.standard_normal(7)
    expected = sum(mu.weights[k] * f[k] * g[k] for k in range(7))
    assert weighted_inner(f, g, mu) == pytest.approx(expected, abs=1e-14)
    assert weighted_norm(f, mu) ** 2 == pytest.approx(weighted_inner(f, f, mu))
    with pytest.raises(DimensionError):
        weighted_inner(f, g[:5], mu)


def test_orthonormalize_is_mu_orthonormal_and_spans(rng):
    mu = Measure.normalized(rng.uniform(0.1, 1, 9))
    raw = rng.standard_normal((9, 4))
    sub = orthonormalize(raw, mu, name="H")
    Q = sub.ortho_basis
    assert sub.rank == 4
    assert np.allclose(Q.T @ (mu.weights[:, None] * Q), np.eye(4), atol=1e-12)
    coef, *_ = np.linalg.lstsq(Q, raw, rcond=None)
    assert np.allclose(Q @ coef, raw, atol=1e-12)


def test_orthonormalize_detects_rank_deficiency(rng):
    mu = Measure.uniform(6)
    col = rng.standard_normal(6)
    sub = orthonormalize(np.column_stack([col, 2 * col, -col]), mu)
    assert sub.rank == 1
    with pytest.raises(TrivialSubspaceError):
        orthonormalize(np.zeros((6, 2)), mu)
    with pytest.raises(DimensionError):
        orthonormalize(np.ones((5, 1)), mu)


def test_orthonormalize_is_deterministic(rng):
    mu = Measure.normalized(rng.uniform(0.1, 1, 8))
    raw = rng.standard_normal((8, 3))
    a, b = orthonormalize(raw, mu), orthonormalize(raw.copy(), mu)
    assert np.array_equal(a.ortho_basis, b.ortho_basis)


def test_potential_tuple_roundtrip():
    h = PotentialTuple(([1.0, 2.0], [3.0], [4.0, 5.0, 6.0]))
    assert h.ranks == (2, 1, 3)
    v = h.stacked()
    back = PotentialTuple.from_stacked(v, h.ranks)
    assert all(np.array_equal(x, y) for x, y in zip(h.thetas, back.thetas))
    assert h.replace(1, [9.0]).thetas[1].tolist() == [9.0]
    with pytest.raises(DimensionError):
        PotentialTuple.from_stacked(v[:-1], h.ranks)


def test_component_and_sum_fields(rng):
    mu = Measure.uniform(5)
    s1 = orthonormalize(rng.standard_normal((5, 2)), mu)
    s2 = orthonormalize(rng.standard_normal((5, 1)), mu)
    h = PotentialTuple((rng.standard_normal(2), rng.standard_normal(1)))
    f1, f2 = component_fields([s1, s2], h)
    assert np.allclose(sum_field([s1, s2], h), f1 + f2)
    with pytest.raises(DimensionError):
        component_fields([s1], h)
    with pytest.raises(DimensionError):
        component_fields([s2, s1], h)
    assert sup_distance([1.0, -2.0], [0.5, 0.5]) == 2.5
