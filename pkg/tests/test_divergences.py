import math
from fractions import Fraction

import numpy as np
import pytest

from ipfpgeom.divergences import fenchel_audit, make_divergence, primal_divergence
from ipfpgeom.errors import DomainError
from ipfpgeom.measure import Measure


@pytest.mark.parametrize("name", ["kl", "quadratic"])
def test_normalization(name):
    d = make_divergence(name)
    assert float(d.phi(np.array(1.0))) == 0.0
    assert float(d.psi(np.array(0.0))) == 0.0
    assert float(d.psi_prime(np.array(0.0))) == 1.0


@pytest.mark.parametrize("name", ["kl", "quadratic"])
def test_fenchel_young(name):
    d = make_divergence(name)
    rep = fenchel_audit(d, np.linspace(-4, 4, 81))
    assert rep.max_gap <= 1e-12
    assert rep.min_slack >= -1e-12
    assert rep.n_pairs > 0
    with pytest.raises(ValueError):
        fenchel_audit(d, [])


@pytest.mark.parametrize("name", ["kl", "quadratic"])
def test_curvature_bounds_hold_on_interval(name):
    d = make_divergence(name)
    for R in (0.1, 1.0, 3.0):
        s = np.linspace(-R, R, 201)
        second = d.psi_second(s)
        assert np.all(second >= d.sigma(R) * (1 - 1e-15))
        assert np.all(second <= d.lipschitz(R) * (1 + 1e-15))
        assert d.curvature_ratio(R) == pytest.approx(d.sigma(R) / d.lipschitz(R))


def test_kl_curvature_closed_form():
    d = make_divergence("kl")
    assert d.sigma(2.0) == pytest.approx(math.exp(-2.0))
    assert d.lipschitz(2.0) == pytest.approx(math.exp(2.0))
    assert d.curvature_ratio(0.5) == pytest.approx(math.exp(-1.0))
    with pytest.raises(DomainError):
        d.sigma(0.0)


def test_quadratic_increment_exact():
    d = make_divergence("quadratic")
    for b, e in [(0.3, 1e-9), (-2.0, 0.75), (1e3, 1e-7)]:
        exact = Fraction(e) * (Fraction(b) + Fraction(e) / 2 + 1)
        assert float(d.psi_increment(np.array(b), np.array(e))) == pytest.approx(float(exact), rel=1e-15)


def test_kl_increment_small_delta():
    d = make_divergence("kl")
    b, e = 0.7, 1e-13
    taylor = math.exp(b) * (e + e * e / 2)
    assert float(d.psi_increment(np.array(b), np.array(e))) == pytest.approx(taylor, rel=1e-14)
    b, e = -1.0, 0.5
    assert float(d.psi_increment(np.array(b), np.array(e))) == pytest.approx(math.exp(-0.5) - math.exp(-1.0))


def test_primal_divergence():
    mu = Measure([0.25, 0.75])
    kl = make_divergence("kl")
    dens = np.array([2.0, 2.0 / 3.0])
    expected = 0.25 * (2 * math.log(2) - 1) + 0.75 * ((2 / 3) * math.log(2 / 3) + 1 / 3)
    assert primal_divergence(dens, mu, kl) == pytest.approx(expected)
    assert primal_divergence(np.array([0.0, 4 / 3]), mu, kl) == pytest.approx(0.25 + 0.75 * ((4 / 3) * math.log(4 / 3) - 1 / 3))
    with pytest.raises(DomainError):
        primal_divergence(np.array([-1.0, 1.0]), mu, kl)
    quad = make_divergence("quadratic")
    assert primal_divergence(np.array([-1.0, 1.0]), mu, quad) == pytest.approx(0.5)
    with pytest.raises(DomainError):
        primal_divergence(np.ones(3), mu, quad)


def test_unknown_name():
    with pytest.raises(ValueError):
        make_divergence("hellinger")
