"""Lyapunov quantities along trajectories and the checks built on them.

For a standard-form run with mass ``m``:

* ``E1 = m/2 |v|^2 + phi(x) + eps psi(x)``, with ``E1 - c eps`` nonincreasing
  when ``c = inf psi``;
* ``h_z = |x - z|^2 / 2`` for an anchor ``z``, with ``h_z' = <x - z, v>``;
* ``E2 = (m/2 |v|^2 + phi(x)) / eps + psi(x)``, whose derivative is exactly
  ``-gamma |v|^2 / eps - eps_dot / eps**2 * (m/2 |v|^2 + phi(x))``.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .integrator import StepControl, integrate

EPS_FLOOR = np.finfo(float).eps

IDENTITY_CONTROL = StepControl(rtol=1e-10, atol=1e-14)


def identity_control(control, atol=IDENTITY_CONTROL.atol):
    """Control for identity runs: adaptive tolerances tightened, fixed steps kept."""
    if control.method == "fixed-RK4":
        return control
    return replace(control, rtol=min(control.rtol, IDENTITY_CONTROL.rtol), atol=min(control.atol, atol))


def _kinetic(spec, v):
    v = np.asarray(v, dtype=float)
    return 0.5 * spec.mass * np.sum(v * v, axis=-1)


def e1(spec, t, x, v):
    """Mechanical energy with the vanishing coupling term."""
    return _kinetic(spec, v) + spec.phi.value(x) + spec.schedule.eps(t) * spec.psi.value(x)


def _checked_eps(spec, t):
    e = spec.schedule.eps(t)
    if np.any(e <= EPS_FLOOR):
        raise FloatingPointError("eps is at machine precision; E2 is ill-conditioned")
    return e


def e2(spec, t, x, v):
    """Energy rescaled by ``1 / eps``."""
    e = _checked_eps(spec, t)
    return (_kinetic(spec, v) + spec.phi.value(x)) / e + spec.psi.value(x)


def _e2_dot_terms(spec, t, x, v):
    e = _checked_eps(spec, t)
    de = spec.schedule.eps_dot(t)
    v = np.asarray(v, dtype=float)
    speed2 = np.sum(v * v, axis=-1)
    return -spec.gamma * speed2 / e, -de / e ** 2 * (_kinetic(spec, v) + spec.phi.value(x))


def e2_dot_closed_form(spec, t, x, v):
    dissipation, drift = _e2_dot_terms(spec, t, x, v)
    return dissipation + drift


def e2_dot_scale(spec, t, x, v):
    """Sum of the magnitudes of the two terms of the E2 derivative.

    The derivative itself changes sign along oscillating trajectories, so
    relative errors are measured against this cancellation-free scale.
    """
    dissipation, drift = _e2_dot_terms(spec, t, x, v)
    return np.abs(dissipation) + np.abs(drift)


@dataclass(frozen=True, eq=False)
class DiagnosticsSeries:
    t: np.ndarray
    E1: np.ndarray
    E1_shifted: np.ndarray
    E2: np.ndarray
    speed: np.ndarray
    grad_phi_norm: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    anchors: np.ndarray
    h_z: np.ndarray
    hdot_z: np.ndarray
    int_speed2: np.ndarray
    int_phi: np.ndarray
    int_eps_psi_gap: np.ndarray
    int_hdot_pos: np.ndarray
    x_norm_max: float

    def to_csv(self, path):
        cols = {"t": self.t, "E1": self.E1, "E1_shifted": self.E1_shifted, "E2": self.E2,
                "speed": self.speed, "grad_phi_norm": self.grad_phi_norm,
                "phi": self.phi, "psi": self.psi}
        for i in range(self.h_z.shape[1]):
            cols[f"h_z_{i}"] = self.h_z[:, i]
        cols["int_speed2"] = self.int_speed2
        cols["int_phi"] = self.int_phi
        np.savetxt(path, np.column_stack(list(cols.values())), delimiter=",",
                   header=",".join(cols), comments="", fmt="%.17g")


class DiagnosticsObserver:
    """Streams trajectory chunks into Lyapunov series.

    Pass an instance to :func:`migdyn.integrator.integrate` as an observer,
    then call :meth:`series`.  Running integrals use the trapezoid rule and
    carry across chunks.
    """

    def __init__(self, spec, anchors=()):
        self.spec = spec
        self.anchors = np.asarray(anchors, dtype=float).reshape(-1, spec.dim)
        self._rows = []
        self._carry = None
        self._x_norm_max = 0.0

    def __call__(self, t, x, v):
        spec = self.spec
        t = np.asarray(t, dtype=float)
        eps = spec.schedule.eps(t)
        phi = spec.phi.value(x)
        psi = spec.psi.value(x)
        speed2 = np.sum(v * v, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            E2 = np.where(eps > EPS_FLOOR, (0.5 * spec.mass * speed2 + phi) / eps + psi, np.nan)
        E1 = 0.5 * spec.mass * speed2 + phi + eps * psi
        c = spec.psi.lower_bound
        diff = x[:, None, :] - self.anchors[None, :, :]
        h = 0.5 * np.sum(diff * diff, axis=2)
        hdot = np.einsum("kaj,kj->ka", diff, v)
        psi_z = spec.psi.value(self.anchors[0]) if len(self.anchors) else 0.0
        integrands = np.column_stack([speed2, phi, eps * (psi - psi_z),
                                      np.maximum(hdot[:, 0], 0.0) if len(self.anchors)
                                      else np.zeros_like(t)])
        if self._carry is not None:
            t_prev, f_prev, acc = self._carry
            tt = np.concatenate([[t_prev], t])
            ff = np.vstack([f_prev, integrands])
            run = acc + np.cumsum(0.5 * np.diff(tt)[:, None] * (ff[1:] + ff[:-1]), axis=0)
        else:
            inc = 0.5 * np.diff(t)[:, None] * (integrands[1:] + integrands[:-1])
            run = np.vstack([np.zeros((1, 4)), np.cumsum(inc, axis=0)])
        self._carry = (t[-1], integrands[-1], run[-1])
        self._x_norm_max = max(self._x_norm_max, float(np.linalg.norm(x, axis=1).max()))
        self._rows.append(dict(
            t=t, E1=E1, E1_shifted=E1 - c * eps, E2=E2, speed=np.sqrt(speed2),
            grad_phi_norm=np.linalg.norm(spec.phi.gradient(x), axis=1), phi=phi, psi=psi,
            h_z=h, hdot_z=hdot, run=run))

    def series(self):
        cat = {k: np.concatenate([r[k] for r in self._rows]) for k in self._rows[0]}
        run = cat.pop("run")
        return DiagnosticsSeries(
            anchors=self.anchors, int_speed2=run[:, 0], int_phi=run[:, 1],
            int_eps_psi_gap=run[:, 2], int_hdot_pos=run[:, 3],
            x_norm_max=self._x_norm_max, **cat)


def compute_series(spec, traj, anchors=()):
    obs = DiagnosticsObserver(spec, anchors)
    obs(traj.t, traj.x, traj.v)
    return obs.series()


def h_z_series(traj, z):
    """``(h, h_dot, running integral of max(h_dot, 0))`` for anchor ``z``."""
    z = np.asarray(z, dtype=float)
    if z.shape != (traj.x.shape[1],):
        raise ValueError("anchor dimension mismatch")
    d = traj.x - z
    h = 0.5 * np.sum(d * d, axis=1)
    hdot = np.sum(d * traj.v, axis=1)
    pos = np.maximum(hdot, 0.0)
    run = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(traj.t) * (pos[1:] + pos[:-1]))])
    return h, hdot, run


# -- checks ---------------------------------------------------------------------

@dataclass(frozen=True)
class MonotoneReport:
    holds: bool
    max_increase: float
    max_violation: float
    slack: float


def check_e1_monotone(series, rtol=1e-8, atol=1e-10, tol=1e-7):
    """``E1 - c eps`` nonincreasing up to one step-error budget per sample."""
    E = series.E1_shifted
    inc = np.diff(E)
    slack = rtol * np.abs(E[:-1]) + atol
    excess = inc - slack
    max_violation = float(max(excess.max(initial=0.0), 0.0))
    return MonotoneReport(max_violation <= tol, float(inc.max(initial=0.0)), max_violation,
                          float(slack.max(initial=0.0)))


@dataclass(frozen=True)
class IdentityReport:
    holds: bool
    max_rel_error: float
    times: np.ndarray
    numeric: np.ndarray
    closed_form: np.ndarray


def e2_resolution(spec, t, x, v, control, step):
    """Smallest E2-derivative error a finite difference can resolve.

    State errors of size ``atol + rtol |y|`` per component, propagated
    through the gradient of E2 and divided by the stencil spacing.
    """
    e = _checked_eps(spec, t)[..., None]
    gx = spec.phi.gradient(x) / e + spec.psi.gradient(x)
    gv = spec.mass * np.asarray(v) / e
    tol_x = control.atol + control.rtol * np.abs(x)
    tol_v = control.atol + control.rtol * np.abs(v)
    return (np.sum(np.abs(gx) * tol_x, axis=-1) + np.sum(np.abs(gv) * tol_v, axis=-1)) / step


def e2_identity(spec, t_min=1.0, probes=200, step=1e-3, tol=1e-3, control=None,
                closed_form=None):
    """Compare a finite-difference derivative of E2 with its closed form.

    The run is integrated with five-point stencils of spacing ``step`` around
    ``probes`` log-spaced times in ``[t_min, horizon]``, sampled from the dense
    output.  Errors are taken relative to :func:`e2_dot_scale` plus the
    integrator resolution :func:`e2_resolution`.  ``control`` replaces the
    default :func:`identity_control` of the spec's own; ``closed_form`` replaces
    :func:`e2_dot_closed_form` (used to confirm that wrong formulas fail).
    """
    spec = spec.with_(control=control or identity_control(spec.control))
    closed_form = closed_form or e2_dot_closed_form
    h = float(step)
    centers = np.geomspace(t_min + 2 * h, spec.horizon - 2 * h, probes)
    stencil = (centers[:, None] + h * np.arange(-2, 3)[None, :]).ravel()
    traj = integrate(spec, t_eval=stencil)
    at = np.searchsorted(traj.t, stencil).reshape(probes, 5)
    vals = e2(spec, traj.t[at], traj.x[at], traj.v[at])
    numeric = (vals[:, 0] - 8 * vals[:, 1] + 8 * vals[:, 3] - vals[:, 4]) / (12 * h)
    x, v = traj.x[at[:, 2]], traj.v[at[:, 2]]
    closed = closed_form(spec, centers, x, v)
    denom = e2_dot_scale(spec, centers, x, v) + e2_resolution(spec, centers, x, v, spec.control, h)
    rel = np.abs(numeric - closed) / denom
    worst = float(np.max(rel))
    return IdentityReport(worst <= tol, worst, centers, numeric, closed)


@dataclass(frozen=True)
class LimitTolerances:
    speed: float = 1e-3
    grad_phi: float = 1e-2
    phi: float = 1e-4
    psi_gap: float = 5e-2
    tail_oscillation: float = 1e-2
    int_phi_tail: float = 1e-2


@dataclass(frozen=True)
class LimitReport:
    values: dict
    passed: dict = field(default_factory=dict)

    @property
    def ok(self):
        return all(self.passed.values())


def tail_oscillation(t, y, fraction=0.1):
    """``max - min`` of ``y`` over the last ``fraction`` of the time span."""
    mask = t >= t[-1] - fraction * (t[-1] - t[0])
    return float(np.ptp(y[mask]))


def limit_checks(series, spec, oracle_solution=None, tolerances=None, psi_selection=True):
    """Finite-horizon surrogates for the limits of the convergence analysis.

    ``psi_selection=False`` makes the Psi-limit check vacuous (Psi = 0).
    """
    tol = tolerances or LimitTolerances()
    t = series.t
    vals = {
        "speed_T": float(series.speed[-1]),
        "grad_phi_T": float(series.grad_phi_norm[-1]),
        "phi_T": float(series.phi[-1]),
        "int_phi_T": float(series.int_phi[-1]),
        "int_phi_tail": float(series.int_phi[-1] - np.interp(0.9 * t[-1], t, series.int_phi)),
        "int_speed2_T": float(series.int_speed2[-1]),
        "x_norm_max": series.x_norm_max,
    }
    passed = {
        "speed": vals["speed_T"] <= tol.speed,
        "grad_phi": vals["grad_phi_T"] <= tol.grad_phi,
        "phi": vals["phi_T"] <= tol.phi,
        "int_phi_tail": vals["int_phi_tail"] <= tol.int_phi_tail,
    }
    if oracle_solution is not None:
        z = np.asarray(oracle_solution, dtype=float)
        vals["psi_gap"] = float(abs(series.psi[-1] - spec.psi.value(z)))
        if psi_selection:
            passed["psi_gap"] = vals["psi_gap"] <= tol.psi_gap
    if series.h_z.shape[1]:
        osc = max(tail_oscillation(t, series.h_z[:, i]) for i in range(series.h_z.shape[1]))
        vals["h_z_tail_oscillation"] = osc
        vals["int_hdot_pos_T"] = float(series.int_hdot_pos[-1])
        passed["h_z_tail"] = osc <= tol.tail_oscillation
    return LimitReport(vals, passed)
