import numpy as np
import pytest

from migdyn.diagnostics import (DiagnosticsObserver, check_e1_monotone, compute_series, e1, e2,
                                e2_dot_closed_form, e2_identity, h_z_series, identity_control,
                                limit_checks)
from migdyn.integrator import ProblemSpec, StepControl, integrate
from migdyn.potentials import AffineSubspace, SqDistToSet, Tikhonov
from migdyn.schedules import EpsilonSchedule

PHI = SqDistToSet(AffineSubspace.spanned(np.zeros(2), np.array([[0.0, 1.0]])), 0.5)
PSI = Tikhonov(np.array([2.0, 3.0]), 0.5)


def spec(**kw):
    base = dict(phi=PHI, psi=PSI, gamma=1.0, schedule=EpsilonSchedule.power_law(0.75),
                x0=[1.0, -1.0], v0=[0.5, 0.0], horizon=50.0, mass=1.5)
    base.update(kw)
    return ProblemSpec(**base)


def test_energies_at_a_point():
    s = spec()
    x, v, t = np.array([3.0, 4.0]), np.array([1.0, 2.0]), 3.0
    eps = 4.0 ** -0.75
    kin = 0.5 * 1.5 * 5.0
    assert e1(s, t, x, v) == pytest.approx(kin + 4.5 + eps * 1.0)
    assert e2(s, t, x, v) == pytest.approx((kin + 4.5) / eps + 1.0)


def test_e2_derivative_closed_form_by_chain_rule():
    s = spec()
    x, v, t = np.array([3.0, 4.0]), np.array([1.0, 2.0]), 3.0
    eps, deps = s.schedule.eps(t), s.schedule.eps_dot(t)
    # along the flow: x' = v, m v' = -gamma v - grad phi - eps grad psi
    a = -(s.gamma * v + PHI.gradient(x) + eps * PSI.gradient(x)) / s.mass
    direct = (s.mass * v @ a + PHI.gradient(x) @ v) / eps \
        - deps / eps ** 2 * (0.5 * s.mass * v @ v + PHI.value(x)) + PSI.gradient(x) @ v
    assert e2_dot_closed_form(s, t, x, v) == pytest.approx(direct, rel=1e-12)


def test_e2_refuses_vanishing_eps():
    s = spec(schedule=EpsilonSchedule.exponential(1.0))
    with pytest.raises(FloatingPointError):
        e2(s, 100.0, np.zeros(2), np.zeros(2))


def test_e2_identity_holds_and_detects_a_wrong_formula():
    s = spec(horizon=30.0)
    rep = e2_identity(s, probes=60)
    assert rep.holds and rep.max_rel_error < 1e-5

    def wrong(spec_, t, x, v):
        return e2_dot_closed_form(spec_.with_(gamma=1.01 * spec_.gamma), t, x, v)

    bad = e2_identity(s, probes=60, closed_form=wrong)
    assert not bad.holds and bad.max_rel_error > 3e-3


def test_identity_control_keeps_fixed_steps():
    rk4 = StepControl(method="fixed-RK4", h0=0.01)
    assert identity_control(rk4) is rk4
    c = identity_control(StepControl(rtol=1e-6, atol=1e-8), atol=1e-20)
    assert c.rtol == 1e-10 and c.atol == 1e-20


def test_e1_shifted_is_monotone_along_a_run():
    s = spec()
    series = compute_series(s, integrate(s))
    assert check_e1_monotone(series).holds
    assert series.E1[-1] < series.E1[0]


def test_monotone_check_flags_an_increase():
    s = spec()
    series = compute_series(s, integrate(s))
    E = series.E1_shifted.copy()
    E[len(E) // 2:] += 1e-3
    bumped = type(series)(**{**series.__dict__, "E1_shifted": E})
    rep = check_e1_monotone(bumped)
    assert not rep.holds and rep.max_violation > 5e-4


def test_observer_matches_single_pass():
    s = spec(horizon=20.0)
    obs = DiagnosticsObserver(s, [[0.0, 3.0]])
    traj = integrate(s, [obs], chunk=97)
    a, b = obs.series(), compute_series(s, traj, [[0.0, 3.0]])
    for name in ("E1", "E2", "h_z", "int_speed2", "int_phi", "int_hdot_pos"):
        np.testing.assert_allclose(getattr(a, name), getattr(b, name), rtol=1e-12, atol=1e-14)


def test_h_z_at_the_start():
    s = spec(v0=[0.0, 0.0])
    traj = integrate(s.with_(horizon=1.0))
    h, hdot, run = h_z_series(traj, s.x0)
    assert h[0] == 0.0 and hdot[0] == 0.0 and run[0] == 0.0
    with pytest.raises(ValueError):
        h_z_series(traj, np.zeros(3))


def test_limit_checks_after_a_long_run():
    s = spec(horizon=2000.0, mass=1.0)
    series = compute_series(s, integrate(s), [[0.0, 3.0]])
    rep = limit_checks(series, s)
    assert rep.passed["speed"] and rep.passed["grad_phi"]
    assert rep.values["speed_T"] < 1e-3
