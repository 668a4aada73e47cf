import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parabolica.diffeo import Compose, Identity, Inverse, PolyMap
from parabolica.mather import (aligned_distance, centralizer_distortion_gap, mather, translation_commutation_defect,
                               triviality_defect)
from parabolica.models import flowable_model, polynomial_model, two_component_model
from parabolica.variation import asymptotic_variation, localize, variation, variation_series


def poly_log_deriv_variation(coeffs, lo=0.0, hi=1.0):
    """Total variation of log Df for a polynomial f, from the critical points of Df."""
    P = np.polynomial.Polynomial(coeffs)
    d1, d2 = P.deriv(), P.deriv(2)
    crit = [r.real for r in d2.roots() if abs(r.imag) < 1e-12 and lo < r.real < hi]
    pts = np.array(sorted([lo, hi, *crit]))
    return float(np.sum(np.abs(np.diff(np.log(d1(pts))))))


# -- variation ----------------------------------------------------------------

def test_variation_of_identity_is_zero():
    assert variation(Identity()) == 0.0


@pytest.mark.parametrize("a,b", [(0.5, 0.3), (0.2, -0.4), (0.9, 0.0)])
def test_variation_of_polynomial(a, b):
    f = polynomial_model(a, b)
    assert variation(f, rtol=1e-8) == pytest.approx(poly_log_deriv_variation(f.coeffs), rel=1e-6)


def test_variation_on_subinterval():
    f = polynomial_model()
    assert variation(f, (0.2, 0.6), rtol=1e-8) == pytest.approx(poly_log_deriv_variation(f.coeffs, 0.2, 0.6), rel=1e-6)


@pytest.mark.parametrize("f", [polynomial_model(), flowable_model(2.0)])
def test_variation_of_inverse(f):
    assert variation(Inverse(f), rtol=1e-7) == pytest.approx(variation(f, rtol=1e-7), rel=1e-5)


@settings(max_examples=15, deadline=None)
@given(a1=st.floats(0.05, 0.6), b1=st.floats(-0.3, 0.3), a2=st.floats(0.05, 0.6), b2=st.floats(-0.3, 0.3))
def test_variation_subadditive(a1, b1, a2, b2):
    f, g = polynomial_model(a1, b1), polynomial_model(a2, b2)
    assert variation(Compose([f, g])) <= variation(f) + variation(g) + 1e-9


def test_variation_refinement_is_monotone():
    f = polynomial_model(0.6, -0.3)
    vals = [variation(f, grid=n, rtol=0.0, max_points=n) for n in (5, 9, 17, 33, 65)]
    assert all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))


def test_variation_series_matches_direct_iterates(flow05):
    s = variation_series(flow05, 4, grid=np.linspace(0, 1, 129))
    x = np.linspace(0, 1, 129)
    for n in (1, 2, 4):
        logs = np.zeros_like(x)
        y = x.copy()
        for _ in range(n):
            logs += np.log(flow05.deriv(y))
            y = flow05(y)
        assert s.V[n - 1] == pytest.approx(np.sum(np.abs(np.diff(logs))), rel=1e-12)
    assert s.to_csv().splitlines()[0] == "n,V,V_over_n"


def test_short_series_is_inconclusive(flow05):
    assert asymptotic_variation(flow05, N=1).verdict == "inconclusive"
    assert asymptotic_variation(flow05, N=16).verdict == "inconclusive"


def test_flowable_vanishes(flow05):
    r = asymptotic_variation(flow05, N=64)
    assert r.verdict == "vanishing" and r.estimate <= 1e-2


def test_surgered_is_positive(surg05, flow05):
    r = asymptotic_variation(surg05, N=64, control=flow05)
    assert r.verdict == "positive" and r.estimate > 0.5
    assert set(r.summary_row()) >= {"estimate", "inf_ratio", "verdict", "noise"}


@pytest.mark.slow
def test_localization_sums_components():
    entries, total, glob = localize(two_component_model(), N=64)
    assert [c for c, _ in entries] == [(0.0, 0.5), (0.5, 1.0)]
    assert total == pytest.approx(glob, rel=0.02)
    assert entries[1][1] > entries[0][1] > 0.1


# -- Mather invariant ---------------------------------------------------------

@pytest.fixture(scope="module")
def m_surg(surg05):
    return mather(surg05, grid=256)


def test_flowable_mather_is_a_translation(flow05):
    M = mather(flow05, grid=128)
    assert triviality_defect(M) < 1e-7
    assert translation_commutation_defect(M, 2, 128) < 1e-7
    assert M.seam_error < 1e-8


def test_surgered_mather_matches_the_inserted_bump(m_surg):
    # after surgery M = T_c o (t + 0.05 sin^4(pi t)): defect amp/2, k = 2 commutation amp
    assert triviality_defect(m_surg) == pytest.approx(0.025, abs=1e-6)
    assert translation_commutation_defect(m_surg, 2) == pytest.approx(0.05, abs=1e-5)
    assert m_surg.to_csv().startswith("t,M_t\n")


def test_mather_lift_is_equivariant(m_surg):
    t = np.linspace(0, 1, 50, endpoint=False)
    np.testing.assert_allclose(m_surg(t + 1), m_surg(t) + 1, atol=1e-12)


def test_changing_base_points_only_translates(surg05, m_surg):
    M2 = mather(surg05, p=0.3, q=0.7, grid=256)
    d, _ = aligned_distance(M2, m_surg)
    assert d < 1e-6
    assert aligned_distance(m_surg, m_surg, shift=False)[0] == 0.0


def test_conjugation_leaves_the_invariant_unchanged(surg05, m_surg):
    h = polynomial_model(0.3, 0.1)
    conj = Compose([h, surg05, Inverse(h)])
    d, _ = aligned_distance(mather(conj, grid=256), m_surg)
    assert d < 1e-6


# -- centralizer --------------------------------------------------------------

def test_centralizer_gap_for_identity_and_self(flow05):
    x = np.linspace(0.05, 0.95, 19)
    assert centralizer_distortion_gap(flow05, Identity(), x, 50) == 0.0
    gap = centralizer_distortion_gap(flow05, flow05, x, 50)
    # log Df^n(f x) - log Df^n(x) = log Df(f^n x) - log Df(x), bounded by V(f)
    assert 0 < gap <= variation(flow05) + 1e-9


def test_centralizer_gap_for_polynomial():
    f = PolyMap(polynomial_model().coeffs)
    x = np.array([0.3, 0.6])
    g = Compose([f, f])
    assert centralizer_distortion_gap(f, g, x, 20) <= 2 * variation(f) + 1e-9
