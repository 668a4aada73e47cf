import numpy as np
import pytest

from parabolica.construct import bernstein_smooth, germ_replace
from parabolica.diffeo import Identity
from parabolica.errors import InvalidTreeError
from parabolica.models import flowable_model, polynomial_model
from parabolica.ops import c1_distance, fixed_points


@pytest.mark.parametrize("mode", ["C1", "C2"])
def test_germ_replace_keeps_fixed_set(mode):
    f = polynomial_model()
    g = germ_replace(f, 0.05, mode=mode)
    assert fixed_points(g).locations == [0.0, 1.0]
    x = np.linspace(0.1, 0.9, 81)
    np.testing.assert_array_equal(g(x), f(x))


def test_germ_replace_uses_germ_near_endpoint():
    f = polynomial_model(0.5, 0.3)
    g = germ_replace(f, 0.05, mode="C2")
    x = np.linspace(0, 0.0125, 11)
    # D^2 f(0) = 2 * 0.5, so the germ is q1 with lambda 0.5
    np.testing.assert_allclose(g(x), x / (1 - 0.5 * x), rtol=1e-15)


def test_germ_replace_converges_as_eps_halves():
    f = polynomial_model()
    dists = [c1_distance(f, germ_replace(f, eps, mode="C2"), grid=8193) for eps in (0.08, 0.04, 0.02, 0.01)]
    assert all(b < a for a, b in zip(dists, dists[1:]))
    assert dists[-1] < 0.05


def test_germ_replace_is_idempotent():
    g = germ_replace(polynomial_model(), 0.05)
    gg = germ_replace(g, 0.05)
    # unchanged where g already is the germ and away from the bumps
    x = np.concatenate([np.linspace(0, 0.0125, 9), np.linspace(0.04, 0.96, 93), np.linspace(0.9875, 1, 9)])
    np.testing.assert_allclose(gg(x), g(x), atol=1e-15)


def test_germ_replace_rejects_identity_intervals():
    with pytest.raises(InvalidTreeError):
        germ_replace(Identity(), 0.05)


def test_bernstein_smooth_is_polynomial_in_the_middle(flow2):
    eps = 0.05
    g = bernstein_smooth(flow2, eps, 12)
    x = np.linspace(2 * eps, 1 - 2 * eps, 200)
    coef = np.polynomial.polynomial.polyfit(x, g(x), 13)
    assert np.max(np.abs(np.polynomial.polynomial.polyval(x, coef) - g(x))) < 1e-12
    np.testing.assert_array_equal(g(np.linspace(0, eps, 9)), flow2(np.linspace(0, eps, 9)))
    assert fixed_points(g).locations == [0.0, 1.0]


def test_bernstein_smooth_approaches_f_with_degree(flow2):
    d = [c1_distance(flow2, bernstein_smooth(flow2, 0.05, n)) for n in (8, 32, 128)]
    assert d[0] > d[1] > d[2]


def test_bernstein_smooth_rejects_interior_fixed_points():
    from parabolica.diffeo import FlowTime
    from parabolica.fields import model_field

    with pytest.raises(InvalidTreeError):
        bernstein_smooth(FlowTime(model_field(1.0, interior=0.5), 1.0), 0.05, 10)
