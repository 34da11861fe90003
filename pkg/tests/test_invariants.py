import numpy as np
import pytest

from dirac_moire.bulkspectra import beta
from dirac_moire.invariants import (
    DegeneratePointError, boundary_term, bulk_difference_invariant, curvature_map, half_invariant,
)
from dirac_moire.model import ModelError, ModelParams

P = ModelParams(1.0, 0.2, 1)


def closed_form_halves(p):
    """Scalar oracle: W_+^4 = (b^2 - l^2) / (2(l^2 + b^2)), W_+^3 = -1 - W_+^4."""
    b, l2 = beta(p), p.lam**2
    w4 = (b * b - l2) / (2 * (l2 + b * b))
    return w4, -1.0 - w4


@pytest.fixture(scope="module")
def report():
    return bulk_difference_invariant(P, 50.0, 600)


def test_reference_half_invariants(report):
    w4, w3 = closed_form_halves(P)
    assert w4 == pytest.approx(0.49752, abs=1e-5)
    h = report.halves
    assert abs(h[(1, 4)] - w4) < 1e-2
    assert abs(h[(1, 3)] - w3) < 1e-2


def test_bulk_difference_is_minus_two(report):
    assert report.nearest_int == -2
    assert report.residual < 1e-2


def test_gluing_sums(report):
    g1, g2 = report.gluing
    assert abs(g1 + 1) < 2e-2
    # W_+^3 - W_-^4 comes out as -1, consistent with the closed forms above
    assert abs(g2 + 1) < 2e-2


@pytest.mark.parametrize("omega,lam", [(0.5, 0.1), (2.0, 2.0), (1.0, 1.0)])
def test_half_invariant_matches_closed_form_elsewhere(omega, lam):
    p = ModelParams(omega, lam)
    w4, w3 = closed_form_halves(p)
    assert half_invariant(p, 4, 50.0, 300) == pytest.approx(w4, abs=1e-2)
    assert half_invariant(p, 3, 50.0, 300) == pytest.approx(w3, abs=1e-2)


def test_symmetry_relations():
    def W(om, lam, eta):
        return bulk_difference_invariant(ModelParams(om, lam, eta), 50.0, 300).W

    w = W(1.0, 0.2, 1)
    assert abs(w + W(-1.0, 0.2, 1)) < 2e-2
    assert abs(w - W(1.0, -0.2, 1)) < 2e-2
    assert abs(w + W(1.0, 0.2, -1)) < 2e-2


def test_plaquette_sum_gauge_independent():
    def g(x1, x2):
        return 0.8 * x1 * x2 / (1 + x1**2 + x2**2) + 0.3 * np.sin(x1 / (1 + abs(x2)))

    a = half_invariant(P, 4, 20.0, 200)
    b = half_invariant(P, 4, 20.0, 200, gauge=g)
    assert abs(a - b) < 1e-10


def test_disk_curvature_geometries_agree():
    polar = curvature_map(P, (3, 4), 10.0, 300, "polar").total
    square = curvature_map(P, (3, 4), 10.0, 401, "square").total
    # the square covers more of the plane, but the pair (3, 4) carries almost no curvature at large |xi|
    assert polar == pytest.approx(square, abs=2e-2)


def test_r_convergence():
    def W(R):
        return half_invariant(P, 4, R, 400)

    w12, w25, w50 = W(12.0), W(25.0), W(50.0)
    assert abs(w25 - w50) < abs(w12 - w25)


def test_boundary_term_vanishes_for_trivial_loop():
    # at tiny radius the smooth gauge barely changes, so the line integral is ~0
    assert abs(boundary_term(P, 3, 1e-6)) < 1e-6


def test_errors():
    with pytest.raises(DegeneratePointError):
        half_invariant(ModelParams(0.0, 0.2), 3)
    with pytest.raises(ModelError):
        curvature_map(P, (2,), 10.0, 50)
    with pytest.raises(ValueError):
        curvature_map(P, (3,), -1.0, 50)
