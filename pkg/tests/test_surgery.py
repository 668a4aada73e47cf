import numpy as np
import pytest

from parabolica.amplifier import (amplifier_spec, distortion_amplifier, distortion_constant, gap_series,
                                  log_derivative_deviation)
from parabolica.circle import BumpShift, ComposedLift, SupportedCircleDiffeo, Translation
from parabolica.diffeo import HomothetyConj, PolyMap
from parabolica.errors import DomainError, InvalidTreeError
from parabolica.mather import aligned_distance, mather, triviality_defect
from parabolica.models import flowable_model
from parabolica.ops import c1_distance, cl_distance, fixed_points
from parabolica.surgery import (conjugacy_from_flows, conjugacy_residual, fragment, insert_scaled, mather_surgery,
                                multi_surgery, place_supports, trivialize_mather)

X_IN = np.linspace(0.05, 0.95, 91)


@pytest.fixture(scope="module")
def m_flow(flow05):
    return mather(flow05, grid=128)


def supported(lift, alpha=0.0):
    return SupportedCircleDiffeo(lift, alpha)


# -- single and multiple surgery ----------------------------------------------

def test_surgery_changes_f_only_on_one_fundamental_domain(flow05, surg05):
    fx, gx = flow05(X_IN), surg05(X_IN)
    changed = X_IN[np.abs(fx - gx) > 1e-14]
    assert changed.size
    # the support [f^-1(q), q] is a single fundamental domain
    assert flow05(np.array([changed.min()]))[0] >= changed.max() - 0.01
    assert fixed_points(surg05).locations == [0.0, 1.0]


@pytest.mark.parametrize("amp,power", [(0.05, 4), (0.1, 2), (0.2, 6)])
def test_surgery_composition_law(flow05, m_flow, amp, power):
    phi = BumpShift(amp, 0.0, power)
    g = mather_surgery(flow05, supported(phi))
    d, _ = aligned_distance(mather(g, grid=128), ComposedLift([phi, m_flow.lift]), 128)
    assert d <= 1e-6


def test_surgery_with_identity_piece_is_exact(flow05):
    g = mather_surgery(flow05, supported(BumpShift(0.0)))
    np.testing.assert_allclose(g(X_IN), flow05(X_IN), atol=1e-14)


def test_multi_surgery_order_matters(flow05, m_flow):
    a, b = BumpShift(0.05, 0, 4), BumpShift(0.1, 0, 2)
    g = multi_surgery(flow05, [supported(a, 0.0), supported(b, -2.0)])
    Mg = mather(g, grid=128)
    assert aligned_distance(Mg, ComposedLift([a, b, m_flow.lift]), 128)[0] < 1e-8
    assert aligned_distance(Mg, ComposedLift([b, a, m_flow.lift]), 128)[0] > 1e-3


def test_multi_surgery_with_inverse_cancels(flow05):
    a = BumpShift(0.05, 0, 4)
    g = multi_surgery(flow05, [supported(a, 0.0), supported(a.inverse(), -2.0)])
    assert triviality_defect(mather(g, grid=128)) < 1e-8


def test_multi_surgery_rejects_bad_supports(flow05):
    a = supported(BumpShift(0.05), 0.0)
    with pytest.raises(InvalidTreeError):
        multi_surgery(flow05, [a, a.shifted(-1.0)])
    with pytest.raises(DomainError):
        multi_surgery(flow05, [a.shifted(1.0)])


def test_place_supports_spacing():
    pieces = [supported(BumpShift(0.01), 0.0) for _ in range(4)]
    placed = place_supports(pieces, beta=-3.0)
    alphas = [s.alpha for s in placed]
    assert alphas[0] <= -3.0
    assert all(b < a - 1 for a, b in zip(alphas, alphas[1:]))


# -- fragmentation ------------------------------------------------------------

@pytest.mark.parametrize("amp,eps", [(0.1, 0.05), (0.2, 0.03)])
def test_fragment_recomposes_with_small_pieces(amp, eps):
    phi = ComposedLift([Translation(0.3), BumpShift(amp, 0.0, 4)])
    fr = fragment(phi, eps)
    t = np.linspace(0, 1, 513)
    np.testing.assert_allclose(fr.compose()(t), phi(t), atol=1e-12)
    assert max(fr.sizes) <= eps
    assert fr.rotation == pytest.approx(0.3)
    for piece in fr.pieces:
        # identity on an interval of length 3/8 of each period
        s = np.linspace(piece.alpha - 1, piece.alpha, 4097)
        fixed = np.abs(piece.lift(s) - s) < 1e-15
        assert fixed.sum() >= 3 / 8 * 4096 - 2


def test_fragment_of_rotation_is_empty():
    fr = fragment(Translation(0.25), 0.05)
    assert fr.pieces == [] and fr.rotation == 0.25


# -- trivialization -----------------------------------------------------------

@pytest.mark.slow
def test_trivialize_surgered_map(surg05):
    before = triviality_defect(mather(surg05, grid=128))
    g, rep = trivialize_mather(surg05, eps_target=0.05, grid=128, report=True)
    after = triviality_defect(mather(g, grid=128))
    assert before >= 0.02 and after <= 1e-3
    assert cl_distance(surg05, g, 0, 16385) <= 5 * 0.05
    assert rep.beta <= 0 and rep.variation_left < 0.05 / 2
    alphas = [s.alpha for s in rep.placed]
    assert all(b < a - 1 for a, b in zip(alphas, alphas[1:]))


def test_trivialize_flowable_barely_moves(flow05):
    g = trivialize_mather(flow05, grid=64)
    assert cl_distance(flow05, g, 0, 4097) < 1e-10
    assert triviality_defect(mather(g, grid=64)) < 1e-8


# -- conjugacy to powers ------------------------------------------------------

@pytest.mark.parametrize("k", [2, 3])
def test_conjugacy_to_power(flow2, k):
    h = conjugacy_from_flows(flow2, k)
    assert conjugacy_residual(flow2, h, k, grid=65) <= 1e-7
    assert float(h.deriv(np.array([0.5]))[0]) == pytest.approx(k, abs=1e-6)


def test_conjugacy_is_tangent_to_scaling_at_zero(flow2):
    # A ~ -1/(c x) near 0, so h(x) = A^-1(k A(x)) ~ x / k
    h = conjugacy_from_flows(flow2, 2)
    err = np.abs(h(np.array([1e-2, 1e-3, 1e-4])) / np.array([1e-2, 1e-3, 1e-4]) - 0.5)
    assert err[0] > err[1] > err[2] and err[2] < 1e-3


def test_conjugacy_refuses_non_flowable(surg05):
    with pytest.raises(InvalidTreeError):
        conjugacy_from_flows(surg05, 2)


# -- insertion ----------------------------------------------------------------

@pytest.mark.parametrize("delta", [0.1, 0.02])
def test_insert_scaled(flow05, delta):
    small = HomothetyConj(flowable_model(delta), delta, 0.0)
    g = insert_scaled(flow05, delta, small)
    # a tangential zero is only located to about sqrt(machine eps)
    assert fixed_points(g).locations == pytest.approx([0.0, delta, 1.0], abs=1e-7)
    y = np.linspace(delta, 1, 33)
    big = flow05(np.clip((y - delta) / (1 - delta), 0, 1)) * (1 - delta) + delta
    np.testing.assert_allclose(g(y), big, atol=1e-14)


def test_insert_scaled_distance_shrinks(flow05):
    d = [c1_distance(flow05, insert_scaled(flow05, e, HomothetyConj(flowable_model(e), e, 0.0))) for e in (0.1, 0.02)]
    assert d[1] < d[0]


def test_insert_scaled_rejects_mismatch(flow05):
    with pytest.raises(InvalidTreeError):
        # Dh(delta) = 1/2 against the parabolic slope 1 of the rescaled f
        insert_scaled(flow05, 0.1, HomothetyConj(PolyMap([0.0, 1.5, -0.5]), 0.1, 0.0))


# -- distortion amplifier -----------------------------------------------------

@pytest.fixture(scope="module")
def amp_spec(flow05):
    return amplifier_spec(flow05, (0.40, 0.42), m=10, n=12)


def test_identity_amplifier_is_f(flow05):
    spec = amplifier_spec(flow05, (0.40, 0.42), m=10, n=12, identity=True)
    fn = distortion_amplifier(flow05, spec)
    assert fn is flow05
    assert log_derivative_deviation(flow05, fn, spec) == 0.0


def test_amplifier_keeps_fixed_points_and_stays_close(flow05, amp_spec):
    fn = distortion_amplifier(flow05, amp_spec)
    assert fixed_points(fn).locations == [0.0, 1.0]
    assert log_derivative_deviation(flow05, fn, amp_spec) < amp_spec.eps


def test_amplifier_gap_grows_linearly(flow05, amp_spec):
    fn = distortion_amplifier(flow05, amp_spec)
    x1 = np.linspace(*amp_spec.J1, 5)
    x2 = np.linspace(*amp_spec.J2, 5)
    ns, gaps = gap_series(fn, amp_spec, x1, x2)
    C = distortion_constant(flow05, amp_spec)
    bound = ns * np.log(0.8 / 0.5) - 2 * np.log(C)
    assert np.all(gaps >= bound)
    assert np.polyfit(ns, gaps, 1)[0] == pytest.approx(np.log(0.8 / 0.5), rel=0.25)


def test_amplifier_rejects_bad_rates(flow05):
    with pytest.raises(DomainError):
        amplifier_spec(flow05, (0.40, 0.42), m=10, n=5, mu1=0.8, mu2=0.5)
    with pytest.raises(DomainError):
        amplifier_spec(flow05, (0.40, 0.9), m=10, n=5)
