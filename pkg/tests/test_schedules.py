import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from migdyn.potentials import AffineSubspace, ConeRay, SqDistToSet, Tikhonov, cone_rays
from migdyn.schedules import (EpsilonSchedule, TimeMapError, beta_from_eps, check_conditions,
                              check_h1, check_h2, check_h3, time_maps)

PHI = SqDistToSet(AffineSubspace.spanned(np.zeros(2), np.array([[0.0, 1.0]])), 0.5)
PSI = Tikhonov(np.array([2.0, 3.0]), 0.5)
RAYS = cone_rays(PHI, PSI, np.array([0.0, 3.0]))
T = 1e4

alphas = st.floats(0.3, 2.5)


def test_eps_examples():
    assert EpsilonSchedule.power_law(0.75).eps(0.0) == 1.0
    assert EpsilonSchedule.power_law(1.0).eps(9.0) == pytest.approx(0.1)
    assert EpsilonSchedule.constant(0.3).eps(17.0) == 0.3
    assert EpsilonSchedule.power_law(1.0).eps_dot(0.0) == pytest.approx(-1.0)
    assert EpsilonSchedule.constant(0.3).eps_dot(2.0) == 0.0


@settings(max_examples=30, deadline=None)
@given(alpha=alphas, scale=st.floats(0.1, 10), t=st.floats(0, 1e3))
def test_power_law_derivative(alpha, scale, t):
    s = EpsilonSchedule.power_law(alpha, scale)
    assert s.eps_dot(t) == pytest.approx(-alpha * scale / (1 + t) ** (alpha + 1), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(alpha=alphas)
def test_power_law_is_positive_and_decreasing(alpha):
    s = EpsilonSchedule.power_law(alpha)
    t = np.geomspace(1e-3, 1e6, 200)
    e = s.eps(t)
    assert np.all(e > 0) and np.all(np.diff(e) < 0)
    assert np.all(s.eps_dot(t) < 0)


def test_invalid_schedules_are_rejected():
    with pytest.raises(ValueError):
        EpsilonSchedule.power_law(-1.0)
    with pytest.raises(ValueError):
        EpsilonSchedule.constant(0.0)
    with pytest.raises(ValueError):
        EpsilonSchedule.custom([0.0, 1.0, 2.0], [1.0, 2.0, 0.5])


def test_custom_schedule_interpolates_a_power_law():
    t = np.linspace(0, 50, 501)
    ref = EpsilonSchedule.power_law(0.75)
    s = EpsilonSchedule.custom(t, ref.eps(t))
    assert s.eps(10.05) == pytest.approx(ref.eps(10.05), rel=1e-3)


def test_h1_examples():
    assert check_h1(EpsilonSchedule.power_law(0.75), T).holds
    assert not check_h1(EpsilonSchedule.power_law(2.0), T).holds
    assert not check_h1(EpsilonSchedule.exponential(1.0), T).holds


def test_h2_examples():
    assert check_h2(EpsilonSchedule.power_law(0.75), PHI, RAYS, T).holds
    assert not check_h2(EpsilonSchedule.power_law(0.5), PHI, RAYS, T).holds
    zero = [ConeRay(np.zeros(2), np.zeros(2))]
    rep = check_h2(EpsilonSchedule.power_law(0.5), PHI, zero, T)
    assert rep.holds and rep.method == "trivial"


def test_h2_integrand_is_half_eps_squared_on_the_model_case():
    s = EpsilonSchedule.power_law(0.75)
    rep = check_h2(s, PHI, RAYS[:1], T)
    p2 = RAYS[0].direction @ RAYS[0].direction
    # int_0^T (1+t)^(-3/2) dt = 2 (1 - (1+T)^(-1/2))
    expected = 0.5 * p2 * 2 * (1 - (1 + T) ** -0.5)
    assert rep.per_ray[0].integral == pytest.approx(expected, rel=1e-6)


def test_h3_examples():
    rep = check_h3(EpsilonSchedule.power_law(1.0), T)
    assert rep.holds and rep.k_estimate == pytest.approx(1.0)
    rep = check_h3(EpsilonSchedule.power_law(0.75), T)
    assert rep.holds and rep.k_estimate <= 0.75 + 1e-12
    assert not check_h3(EpsilonSchedule.power_law(1.5), T).holds


@pytest.mark.parametrize("alpha,h1,h2,h3", [
    (0.5, True, False, True),
    (0.75, True, True, True),
    (1.0, True, True, True),
    (2.0, False, True, False),
])
def test_verdicts(alpha, h1, h2, h3):
    rep = check_conditions(EpsilonSchedule.power_law(alpha), PHI, RAYS, T)
    assert (rep.h1.holds, rep.h2.holds, rep.h3.holds) == (h1, h2, h3)
    assert rep.all_hold == (h1 and h2 and h3)


def test_time_maps_for_harmonic_schedule():
    t_beta, t_eps = time_maps(EpsilonSchedule.power_law(1.0))
    t = np.linspace(0, 5, 11)
    np.testing.assert_allclose(t_eps(t), np.expm1(t), rtol=1e-12)
    np.testing.assert_allclose(t_beta(np.expm1(t)), t, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(alpha=st.floats(0.3, 1.0), t=st.floats(0, 100))
def test_time_map_round_trip(alpha, t):
    t_beta, t_eps = time_maps(EpsilonSchedule.power_law(alpha))
    assert t_beta(t_eps(t)) == pytest.approx(t, abs=1e-8)
    assert t_eps(t_beta(t)) == pytest.approx(t, abs=1e-8 * (1 + t))


def test_time_map_beyond_total_integral_raises():
    s = EpsilonSchedule.power_law(2.0)
    assert s.total() == pytest.approx(1.0)
    with pytest.raises(TimeMapError):
        s.time_eps(1.5)


def test_beta_schedule_matches_closed_form():
    # eps = 1/(1+t): t_eps(s) = e^s - 1, beta(s) = e^s
    b = beta_from_eps(EpsilonSchedule.power_law(1.0))
    s = np.linspace(0, 3, 7)
    np.testing.assert_allclose(b.beta(s), np.exp(s), rtol=1e-12)
    np.testing.assert_allclose(b.beta_dot(s), np.exp(s), rtol=1e-10)


def test_beta_form_conditions_follow_eps_conditions():
    # beta grows without bound iff H1 holds, beta_dot <= k beta iff H3 holds
    for alpha in (0.75, 1.0):
        b = beta_from_eps(EpsilonSchedule.power_law(alpha))
        s = np.linspace(0, 50, 101)
        assert b.beta(s[-1]) > 1e3
        assert np.max(b.beta_dot(s) / b.beta(s)) <= alpha + 1e-9
    b = beta_from_eps(EpsilonSchedule.power_law(2.0))
    assert b.horizon == pytest.approx(1.0)


def test_rescaled_schedule():
    s = EpsilonSchedule.power_law(0.75)
    r = s.rescaled(2.0)
    t = np.linspace(0, 10, 5)
    np.testing.assert_allclose(r.eps(t), 4.0 * s.eps(2.0 * t))


@pytest.mark.parametrize("s", [EpsilonSchedule.power_law(0.75, 2.0), EpsilonSchedule.exponential(0.3),
                               EpsilonSchedule.custom(np.linspace(0, 20, 41),
                                                      1.0 / (1.0 + np.linspace(0, 20, 41)))],
                         ids=["power", "exponential", "custom"])
@settings(max_examples=25, deadline=None)
@given(t=st.floats(0.01, 15.0))
def test_eps_dot_matches_central_difference(s, t):
    h = 1e-6 * (1 + t)
    if s.kind == "custom":
        # stay inside one interpolation cell, where the interpolant is smooth
        k = np.floor(t / 0.5) * 0.5
        t = min(max(t, k + 0.05), k + 0.45)
    fd = (s.eps(t + h) - s.eps(t - h)) / (2 * h)
    assert s.eps_dot(t) == pytest.approx(fd, rel=1e-6)
