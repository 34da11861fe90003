import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dirac_moire.scatter1d import (
    ScatterMatrix, barrier, closed_form_barrier, compose, identity_smatrix, numeric_smatrix, position_sweep,
    richardson_error, smatrix_piecewise, split_conductivities, split_smatrices,
)


def smooth_bump(V0, w):
    return lambda x: V0 * np.where(np.abs(x) < w, np.cos(np.pi * np.asarray(x) / (2 * w)) ** 2, 0.0)


def test_zero_potential_is_free_propagation():
    S = numeric_smatrix(lambda x: np.zeros_like(x), -3.0, 2.0, 1.3)
    np.testing.assert_allclose(S.matrix, [[0, 1], [1, 0]], atol=1e-13)
    Z = smatrix_piecewise([0.0, 0.0], [], 1.0)
    np.testing.assert_array_equal(Z.matrix, identity_smatrix(1.0).matrix)


def test_barrier_matches_closed_form():
    V0, a, k = 0.5, 1.0, 1.0
    S = numeric_smatrix(barrier(V0, a), -a, a, k)
    assert abs(S.r_minus - closed_form_barrier(V0, a, k)) < 1e-8
    assert S.unitarity_error() < 1e-10


def test_barrier_closed_form_also_for_embedded_barrier():
    # cells are exact for piecewise-constant V, so padding with free space must not matter
    V0, a, k = 0.5, 1.0, 1.7
    edges = [-4.0, -a, a, 3.0]
    S = smatrix_piecewise(edges, [0.0, V0, 0.0], k)
    assert abs(S.r_minus - closed_form_barrier(V0, a, k)) < 1e-12


def test_reflectionless_barrier():
    k = np.sqrt(1 + np.pi**2 / 4)
    assert abs(closed_form_barrier(1.0, 1.0, k)) < 1e-10
    S = numeric_smatrix(barrier(1.0, 1.0), -1.0, 1.0, k)
    assert abs(S.r_minus) < 1e-10
    assert closed_form_barrier(0.0, 1.0, 1.0) == 0


def test_small_barrier_phase():
    R = closed_form_barrier(0.3, 1e-3, 1.0)
    assert np.angle(R) == pytest.approx(-np.pi / 2, abs=1e-2)


def test_closed_form_rejects_evanescent():
    with pytest.raises(ValueError):
        closed_form_barrier(2.0, 1.0, 1.0)


def test_evanescent_and_plateau_cells():
    # k^2 equal to a plateau uses the linear limit; k^2 below it the cosh/sinh blocks
    for V0 in (1.0, 2.5):
        S = numeric_smatrix(barrier(V0, 1.0), -1.0, 1.0, 1.0)
        assert S.unitarity_error() < 1e-10
    with pytest.raises(ValueError):
        numeric_smatrix(barrier(1.0, 1.0), -1.0, 1.0, 0.0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=3, max_size=6), st.floats(0.3, 3.0))
def test_unitarity_and_reciprocity_random_smooth(coefs, k):
    c = np.asarray(coefs)

    def V(x):
        x = np.asarray(x)
        s = sum(ci * np.cos((i + 1) * x) for i, ci in enumerate(c))
        return np.where(np.abs(x) < np.pi, s * np.cos(x / 2) ** 2, 0.0)

    S = numeric_smatrix(V, -np.pi, np.pi, k, 400)
    assert S.unitarity_error() < 1e-10
    assert abs(abs(S.t_plus) - abs(S.t_minus)) < 1e-12


def test_richardson_convergence():
    V = smooth_bump(0.8, 2.0)
    e1 = richardson_error(V, -2, 2, 1.1, 250)
    e2 = richardson_error(V, -2, 2, 1.1, 500)
    assert e2 < e1 / 3.5
    assert e2 < 1e-5


def test_composition_matches_direct():
    V = smooth_bump(0.6, 2.0)
    k = 0.9
    SL = numeric_smatrix(V, -2.0, 0.3, k, 575)
    SR = numeric_smatrix(V, 0.3, 2.0, k, 425)
    S = numeric_smatrix(V, -2.0, 2.0, k, 1000)
    C = compose(SL, SR)
    assert abs(abs(C.t_plus) - abs(S.t_plus)) < 1e-10
    np.testing.assert_allclose(C.matrix, S.matrix, atol=1e-10)


def test_sigma_outside_support_is_one():
    V = barrier(0.5, 1.0)
    for x0 in (-2.5, 1.5, 2.9):
        SL, SR = split_smatrices(V, -3.0, 3.0, x0, 1.0)
        r = split_conductivities(SL, SR)
        assert abs(r.sigma_plus - 1) < 1e-12
        assert abs(r.sigma_minus + 1) < 1e-12
    prof = position_sweep(V, -3.0, 3.0, 1.0, [-2.0, -1.5, 1.5, 2.0])
    np.testing.assert_allclose(prof, 1.0, atol=1e-12)


def test_centered_split_formula():
    V0, a, k = 0.5, 1.0, 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        SL, SR = split_smatrices(barrier(V0, a), -a, a, 0.0, k)
    R = SL.r_minus
    r, th = abs(R), np.angle(R)
    ref = (1 - r**4) / abs(1 - np.exp(2j * th) * r * r) ** 2
    assert abs(split_conductivities(SL, SR).sigma_plus - ref) < 1e-10


def test_small_reflection_expansion():
    V0, a, k = 0.02, 1.0, 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        SL, SR = split_smatrices(barrier(V0, a), -a, a, 0.0, k)
    R = SL.r_minus
    ref = 1 + 2 * np.cos(2 * np.angle(R)) * abs(R) ** 2
    assert split_conductivities(SL, SR).sigma_plus == pytest.approx(ref, abs=10 * abs(R) ** 4)


def test_dip_and_boost():
    # a thin barrier reflects with phase near -pi/2, giving a dip at the centre
    k = 1.0
    thin = position_sweep(barrier(0.3, 0.1), -1.0, 1.0, k, [0.0])[0]
    assert thin < 1
    # half-width chosen so the half-barrier reflection phase 2 theta is near 0 (mod 2 pi)
    wide = None
    for a in np.linspace(0.2, 6.0, 300):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            SL, _ = split_smatrices(barrier(0.3, a), -a, a, 0.0, k)
        if np.cos(2 * np.angle(SL.r_minus)) > 0.9 and abs(SL.r_minus) > 1e-3:
            wide = position_sweep(barrier(0.3, a), -a, a, k, [0.0])[0]
            break
    assert wide is not None and wide > 1


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 2 * np.pi), st.floats(0, 2 * np.pi), st.floats(0, 0.99), st.floats(0, 2 * np.pi),
       st.floats(0, 2 * np.pi), st.floats(0, 0.99))
def test_sum_rule_random_unitary(a1, b1, r1, a2, b2, r2):
    def unitary(a, b, r):
        t = np.sqrt(1 - r * r)
        return ScatterMatrix(r * np.exp(1j * a), t * np.exp(1j * b), t * np.exp(1j * b),
                             -r * np.exp(1j * (2 * b - a)), 1.0, (0.0, 1.0))

    SL, SR = unitary(a1, b1, r1), unitary(a2, b2, r2)
    assert SL.unitarity_error() < 1e-12
    res = split_conductivities(SL, SR)
    assert abs(res.sigma_plus + res.sigma_minus) < 1e-14


def test_degenerate_split_flagged():
    full = ScatterMatrix(1.0 + 0j, 0j, 0j, 1.0 + 0j, 1.0, (0.0, 1.0))
    with pytest.raises(ZeroDivisionError):
        split_conductivities(full, full)


def test_split_warns_inside_support():
    with pytest.warns(UserWarning):
        split_smatrices(barrier(0.5, 1.0), -2, 2, 0.0, 1.0)


def test_profile_continuity():
    V = smooth_bump(0.5, 2.0)
    xs = 0.3 + np.array([0.0, 1e-2, 1e-3, 1e-4])
    s = position_sweep(V, -2.0, 2.0, 1.0, xs, 4000)
    d = np.abs(s[1:] - s[0])
    assert d[2] < d[1] < d[0]
