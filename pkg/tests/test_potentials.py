import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from migdyn.potentials import (AffineSubspace, Ball, Box, Product, QuadraticCoupling,
                               QuadraticForm, SeparableSum, SqDistToSet, Tikhonov, cone_rays,
                               conjugate_numeric, is_inf, normal_cone_residual, zero_potential)

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)
vec2 = st.tuples(finite, finite).map(np.array)

E2_AXIS = AffineSubspace.spanned(np.zeros(2), np.array([[0.0, 1.0]]))
SETS = [
    E2_AXIS,
    Box(np.array([0.0, -1.0]), np.array([1.0, 2.0])),
    Ball(np.array([1.0, -1.0]), 1.5),
]
POTENTIALS = [
    Tikhonov(np.array([2.0, 3.0]), 0.5),
    SqDistToSet(E2_AXIS, 0.5),
    SqDistToSet(SETS[1], 0.5),
    SqDistToSet(SETS[2], 1.0),
    QuadraticForm(np.array([[2.0, 1.0], [1.0, 1.0]]), np.array([1.0, 0.0])),
    QuadraticCoupling(np.eye(1), np.eye(1), [0], [1], 2),
]


def test_values_of_reference_points():
    x = np.array([3.0, 4.0])
    assert Tikhonov(np.zeros(2), 0.5).value(x) == pytest.approx(12.5)
    assert SqDistToSet(E2_AXIS, 0.5).value(x) == pytest.approx(4.5)
    assert QuadraticCoupling(np.eye(1), np.eye(1), [0], [1], 2).value(np.ones(2)) == 0.0


def test_gradients_of_reference_potentials():
    a = np.array([2.0, 3.0])
    x = np.array([-1.0, 0.5])
    np.testing.assert_allclose(Tikhonov(a, 0.5).gradient(x), x - a)
    L1, L2 = np.array([[2.0]]), np.array([[3.0]])
    q = QuadraticCoupling(L1, L2, [0], [1], 2)
    r = L1 @ x[:1] - L2 @ x[1:]
    np.testing.assert_allclose(q.gradient(x), np.concatenate([L1.T @ r, -L2.T @ r]))
    for C in SETS:
        np.testing.assert_allclose(SqDistToSet(C, 0.5).gradient(x), x - C.project(x), atol=1e-12)


@pytest.mark.parametrize("P", POTENTIALS, ids=lambda p: type(p).__name__)
@settings(max_examples=30, deadline=None)
@given(x=vec2)
def test_gradient_matches_finite_difference(P, x):
    h = 1e-6
    fd = np.array([(P.value(x + h * e) - P.value(x - h * e)) / (2 * h) for e in np.eye(2)])
    np.testing.assert_allclose(P.gradient(x), fd, atol=1e-5, rtol=1e-5)


@pytest.mark.parametrize("P", POTENTIALS, ids=lambda p: type(p).__name__)
def test_minimum_is_zero_on_the_argmin_set(P):
    C = P.argmin_set()
    rng = np.random.default_rng(1)
    pts = C.sample(rng, 50)
    np.testing.assert_allclose(P.value(pts), 0.0, atol=1e-10)
    assert np.all(P.value(rng.normal(size=(200, 2)) * 4) >= -1e-12)


@pytest.mark.parametrize("P", POTENTIALS, ids=lambda p: type(p).__name__)
@settings(max_examples=30, deadline=None)
@given(x=vec2, y=vec2)
def test_fenchel_young(P, x, y):
    c = P.conjugate(y)
    if is_inf(c):
        return
    assert P.value(x) + c >= x @ y - 1e-9 * (1 + abs(x @ y))


@pytest.mark.parametrize("P", POTENTIALS[:4], ids=lambda p: type(p).__name__)
@settings(max_examples=15, deadline=None)
@given(y=st.tuples(st.floats(-1, 1), st.floats(-1, 1)).map(np.array))
def test_conjugate_dominates_grid_estimate(P, y):
    box = Box(np.full(2, -6.0), np.full(2, 6.0))
    c = P.conjugate(y)
    if is_inf(c):
        return
    assert conjugate_numeric(P, y, box) <= c + 1e-9


def test_conjugate_examples():
    box = Box(np.full(2, -3.0), np.full(2, 3.0))
    P = Tikhonov(np.zeros(2), 0.5)
    y = np.array([1.0, 0.0])
    assert P.conjugate(y) == pytest.approx(0.5)
    assert conjugate_numeric(P, y, box) == pytest.approx(0.5, abs=1e-6)
    assert conjugate_numeric(P, np.zeros(2), box) == pytest.approx(0.0, abs=1e-12)
    S = SqDistToSet(SETS[1], 0.5)
    y = np.array([0.7, -0.4])
    # sigma_C(y) + |y|^2 / 2 for weight 1/2
    assert S.conjugate(y) == pytest.approx(0.7 * 1.0 + 0.4 * 1.0 + 0.5 * 0.65)
    assert conjugate_numeric(S, y, Box(np.full(2, -5.0), np.full(2, 5.0))) == \
        pytest.approx(S.conjugate(y), abs=1e-3)


def test_conjugate_is_infinite_off_the_orthogonal_complement():
    S = SqDistToSet(E2_AXIS, 0.5)
    assert is_inf(S.conjugate(np.array([0.0, 1.0])))
    assert S.conjugate(np.array([2.0, 0.0])) == pytest.approx(2.0)


def test_support_functions():
    assert Box(np.zeros(2), np.ones(2)).support(np.array([1.0, -1.0])) == pytest.approx(1.0)
    p = np.array([1.0, 2.0])
    C = AffineSubspace.spanned(p, np.array([[1.0, 1.0]]))
    assert C.support(np.array([1.0, -1.0])) == pytest.approx(-1.0)
    assert is_inf(C.support(np.array([1.0, 0.0])))
    y = np.array([3.0, -4.0])
    assert Ball(np.zeros(2), 2.0).support(y) == pytest.approx(10.0)


@pytest.mark.parametrize("C", SETS, ids=lambda c: type(c).__name__)
@settings(max_examples=30, deadline=None)
@given(x=vec2)
def test_projection_is_idempotent_and_variational(C, x):
    p = C.project(x)
    np.testing.assert_allclose(C.project(p), p, atol=1e-12)
    s = C.sample(np.random.default_rng(0), 100)
    assert np.max((x - p) @ (s - p).T) <= 1e-9


def test_product_projects_blockwise():
    P = Product([(Box(np.zeros(1), np.ones(1)), [0]), (Box(np.array([2.0]), np.array([3.0])), [1])], 2)
    np.testing.assert_allclose(P.project(np.array([5.0, 0.0])), [1.0, 2.0])


def test_normal_cone_residual():
    C = Box(np.zeros(1), np.ones(1))
    assert normal_cone_residual(C, np.ones(1), np.ones(1)) <= 0.0
    assert normal_cone_residual(C, np.array([0.5]), np.ones(1)) > 0.1
    with pytest.raises(ValueError):
        normal_cone_residual(C, np.array([2.0]), np.ones(1))


def test_cone_rays():
    phi = SqDistToSet(AffineSubspace.spanned(np.zeros(2), np.array([[0.0, 1.0]])), 0.5)
    a = np.array([2.0, 3.0])
    rays = cone_rays(phi, Tikhonov(a, 0.5), np.array([0.0, 3.0]))
    np.testing.assert_allclose(rays[0].direction, [2.0, 0.0])
    np.testing.assert_allclose(rays[1].direction, [4.0, 0.0])
    rays = cone_rays(phi, zero_potential(2), np.array([0.0, 1.0]))
    assert all(not np.any(r.direction) for r in rays)
    with pytest.raises(ValueError):
        cone_rays(phi, Tikhonov(a, 0.5), np.array([0.0, 0.0]))


def test_separable_sum_of_interval_distances():
    S = SeparableSum([(SqDistToSet(Box(np.zeros(1), np.ones(1)), 0.5), [0]),
                      (SqDistToSet(Box(np.array([2.0]), np.array([3.0])), 0.5), [1])])
    assert S.value(np.array([2.0, 0.0])) == pytest.approx(0.5 + 2.0)
    np.testing.assert_allclose(S.argmin_set().project(np.array([2.0, 0.0])), [1.0, 2.0])


def test_dimension_mismatch_is_rejected():
    with pytest.raises(ValueError):
        Tikhonov(np.zeros(2), 0.5).value(np.zeros(3))


def test_quadratic_form_is_accurate_far_from_the_origin():
    # large curvature and offset: the naive expansion loses every digit
    A = 4096.0 * np.array([[1.0, -1.0], [-1.0, 1.0]])
    q = QuadraticForm(A, np.zeros(2))
    x = np.array([1e3 + 1e-6, 1e3])
    assert q.value(x) == pytest.approx(0.5 * 4096 * 1e-12, rel=1e-6)
