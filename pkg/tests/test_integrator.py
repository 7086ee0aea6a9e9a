import numpy as np
import pytest

from migdyn import kernels
from migdyn.diagnostics import check_e1_monotone, compute_series
from migdyn.integrator import (IntegrationError, ProblemSpec, StepControl, Trajectory,
                               integrate, integrate_beta, rescale_affine, residual, rhs)
from migdyn.potentials import AffineSubspace, SqDistToSet, Tikhonov, zero_potential
from migdyn.schedules import EpsilonSchedule

SQ = Tikhonov(np.zeros(2), 0.5)
PHI = SqDistToSet(AffineSubspace.spanned(np.zeros(2), np.array([[0.0, 1.0]])), 0.5)
PSI = Tikhonov(np.array([2.0, 3.0]), 0.5)
EPS = EpsilonSchedule.power_law(0.75)


def spec(**kw):
    base = dict(phi=PHI, psi=PSI, gamma=1.0, schedule=EPS, x0=[1.0, -1.0], v0=[0.0, 0.0],
                horizon=20.0)
    base.update(kw)
    return ProblemSpec(**base)


def test_rhs_examples():
    s = spec(phi=SQ, psi=zero_potential(2))
    dx, dv = rhs(s, 0.0, [1.0, 0.0], [0.0, 0.0])
    np.testing.assert_allclose(dx, 0.0)
    np.testing.assert_allclose(dv, [-1.0, 0.0])
    # a point of C minimizing psi with psi'(z) = 0 is an equilibrium
    s = spec(psi=Tikhonov(np.array([0.0, 3.0]), 0.5))
    dx, dv = rhs(s, 5.0, [0.0, 3.0], [0.0, 0.0])
    assert not np.any(dx) and not np.any(dv)


def test_rhs_includes_mass_and_eps():
    s = spec(mass=2.0, gamma=3.0)
    x, v, t = np.array([1.0, 2.0]), np.array([0.5, -1.0]), 3.0
    _, dv = rhs(s, t, x, v)
    expected = -(3.0 * v + PHI.gradient(x) + EPS.eps(t) * PSI.gradient(x)) / 2.0
    np.testing.assert_allclose(dv, expected, rtol=1e-14)


def test_spec_validation():
    with pytest.raises(ValueError):
        spec(gamma=-1.0)
    with pytest.raises(ValueError):
        spec(mass=0.0)
    with pytest.raises(ValueError):
        spec(x0=[1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        spec(x0=[np.nan, 0.0])
    with pytest.raises(ValueError):
        StepControl(method="fixed-RK4")
    with pytest.raises(ValueError):
        spec(form="beta", schedule=EpsilonSchedule.power_law(2.0), horizon=2.0)


@pytest.mark.parametrize("method", ["adaptive-RK45", "fixed-RK4"])
def test_critically_damped_closed_form(method):
    # x'' + 2x' + x = 0: x(t) = (x0 + (v0 + x0) t) e^{-t}
    one = Tikhonov(np.zeros(1), 0.5)
    s = ProblemSpec(one, zero_potential(1), 2.0, EPS, [1.5], [-0.5], 10.0,
                    control=StepControl(method=method, h0=1e-3), output_dt=0.1)
    traj = integrate(s)
    exact = (1.5 + (-0.5 + 1.5) * traj.t) * np.exp(-traj.t)
    np.testing.assert_allclose(traj.x[:, 0], exact, atol=1e-6)


def test_rk4_is_fourth_order():
    one = Tikhonov(np.zeros(1), 0.5)
    errs = []
    for h in (0.1, 0.05):
        s = ProblemSpec(one, zero_potential(1), 2.0, EPS, [1.0], [0.0], 5.0,
                        control=StepControl(method="fixed-RK4", h0=h), output_dt=0.5)
        traj = integrate(s)
        errs.append(abs(traj.x[-1, 0] - (1 + 5.0) * np.exp(-5.0)))
    assert np.log2(errs[0] / errs[1]) == pytest.approx(4.0, abs=0.3)


def test_equilibrium_stays_fixed():
    s = spec(psi=Tikhonov(np.array([0.0, 3.0]), 0.5), x0=[0.0, 3.0])
    traj = integrate(s)
    assert np.abs(traj.x - [0.0, 3.0]).max() == 0.0


def test_output_grid_and_t_eval():
    s = spec(horizon=1.0, output_dt=0.25)
    traj = integrate(s, t_eval=[0.1, 0.6])
    np.testing.assert_allclose(traj.t, [0, 0.1, 0.25, 0.5, 0.6, 0.75, 1.0])
    with pytest.raises(ValueError):
        integrate(s, t_eval=[2.0])
    assert spec(horizon=1e4).cadence == pytest.approx(1.0)
    assert spec(horizon=10.0).cadence == 0.01


def test_observers_see_every_sample_in_order():
    seen = []
    s = spec(horizon=5.0)
    traj = integrate(s, observers=[lambda t, x, v: seen.append(t)], chunk=64)
    assert len(seen) > 1
    np.testing.assert_array_equal(np.concatenate(seen), traj.t)


def test_determinism():
    a, b = integrate(spec()), integrate(spec())
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.v, b.v)
    assert a.stats == b.stats
    assert spec().digest() == spec().digest()
    assert spec().digest() != spec(gamma=2.0).digest()


def test_csv_round_trip(tmp_path):
    traj = integrate(spec(horizon=2.0))
    path = tmp_path / "traj.csv"
    traj.to_csv(path)
    back = Trajectory.from_csv(path)
    np.testing.assert_array_equal(back.t, traj.t)
    np.testing.assert_array_equal(back.x, traj.x)
    np.testing.assert_array_equal(back.v, traj.v)


def test_residual_is_small_on_solutions_and_large_when_perturbed():
    s = spec(horizon=10.0, output_dt=1e-2)
    traj = integrate(s)
    t = traj.t[100:-100:50]
    assert residual(s, traj, t).max() < 1e-4
    bumped = Trajectory(traj.t, traj.x + 1e-2 * np.sin(20 * traj.t)[:, None], traj.v, s)
    assert residual(s, bumped, t).max() > 1.0
    with pytest.raises(ValueError):
        residual(s, traj, traj.t[0])


def test_beta_form_residual():
    s = spec(form="beta", schedule=EpsilonSchedule.power_law(0.75), horizon=5.0, output_dt=1e-2)
    traj = integrate_beta(s)
    t = traj.t[200:-200:25]
    assert residual(s, traj, t).max() < 1e-4


def test_affine_rescaling():
    s = spec(horizon=10.0, output_dt=1e-2)
    traj = integrate(s)
    y, s2 = rescale_affine(traj, 1.0)
    np.testing.assert_array_equal(y.x, traj.x)
    y, s2 = rescale_affine(traj, 2.0)
    assert s2.gamma == 2.0 and s2.horizon == 5.0
    inner = y.t[100:-100:25]
    assert residual(s2, y, inner).max() < 1e-4
    with pytest.raises(ValueError):
        rescale_affine(traj, -1.0)


def test_step_budget_abort_keeps_partial_trajectory():
    s = spec(control=StepControl(max_steps=10), horizon=50.0)
    with pytest.raises(IntegrationError) as info:
        integrate(s)
    assert info.value.status == kernels.STATUS_MAX_STEPS
    assert info.value.partial is not None


def _kernel_run(s, gamma, t_end):
    phi_l, psi_l = s.lowered
    t_out = np.linspace(0.0, t_end, 401)
    y0 = np.concatenate([s.x0, s.v0])
    return kernels.dp45_solve(0.0, y0, 0.0, t_out, t_end, 1e-8, 1e-10, np.inf, 10_000_000,
                              s.dim, gamma, 1.0, 0, phi_l, psi_l, s.schedule.packed), t_out


def test_negative_damping_is_caught_by_the_energy_check():
    # the spec rejects gamma < 0, so drive the kernel directly
    s = spec(phi=SQ, psi=zero_potential(2))
    (Y, *_), t = _kernel_run(s, -0.5, 20.0)
    traj = Trajectory(t, Y[:, :2], Y[:, 2:])
    rep = check_e1_monotone(compute_series(s, traj))
    assert not rep.holds and rep.max_violation > 1.0


def test_blow_up_is_reported():
    s = spec(phi=SQ, psi=zero_potential(2))
    (Y, _, _, _, st), _ = _kernel_run(s, -50.0, 1e3)
    assert st[2] in (kernels.STATUS_NONFINITE, kernels.STATUS_STEP_UNDERFLOW)
