"""Time integration of the inertial system and its beta-rescaled form.

The standard form is ``m x'' + gamma x' + grad phi(x) + eps(t) grad psi(x) = 0``.
The beta form, obtained through the time change ``t_eps``, reads::

    (m / beta) w'' + (gamma - m beta' / beta**2) w' + beta grad phi(w) + grad psi(w) = 0

Both are integrated by the compiled kernels in :mod:`migdyn.kernels`, in
chunks of output samples so that observers can stream the trajectory.
"""

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .schedules import EpsilonSchedule, beta_from_eps

METHODS = ("adaptive-RK45", "fixed-RK4")
FORMS = ("standard", "beta")
CHUNK_SAMPLES = 4096
MAX_DEFAULT_SAMPLES = 10_000

_STATUS_TEXT = {
    kernels.STATUS_STEP_UNDERFLOW: "step size underflow (stiff or blowing-up solution)",
    kernels.STATUS_NONFINITE: "non-finite state",
    kernels.STATUS_MAX_STEPS: "step budget exhausted",
}


class IntegrationError(RuntimeError):
    """Numerical abort; ``partial`` holds the samples computed so far."""

    def __init__(self, message, status, partial=None):
        super().__init__(message)
        self.status = status
        self.partial = partial


@dataclass(frozen=True)
class StepControl:
    method: str = "adaptive-RK45"
    h0: float = 0.0
    rtol: float = 1e-8
    atol: float = 1e-10
    max_step: float = np.inf
    max_steps: int = 50_000_000

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.method == "fixed-RK4" and not self.h0 > 0:
            raise ValueError("fixed-RK4 needs a positive step h0")
        if self.rtol <= 0 or self.atol <= 0 or self.max_step <= 0:
            raise ValueError("rtol, atol and max_step must be positive")


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """One run: potentials, damping, mass, control schedule, initial state, horizon.

    With ``form="beta"`` the schedule is still the eps schedule; the beta
    coefficient is derived from it, and the horizon must stay below the total
    mass of eps.
    """

    phi: object
    psi: object
    gamma: float
    schedule: EpsilonSchedule
    x0: np.ndarray
    v0: np.ndarray
    horizon: float
    mass: float = 1.0
    control: StepControl = field(default_factory=StepControl)
    output_dt: float = None
    form: str = "standard"

    def __post_init__(self):
        x0 = np.array(self.x0, dtype=float).ravel()
        v0 = np.array(self.v0, dtype=float).ravel()
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "v0", v0)
        n = self.phi.dim
        if self.psi.dim != n or x0.shape != (n,) or v0.shape != (n,):
            raise ValueError("phi, psi, x0 and v0 must share one dimension")
        if not (np.all(np.isfinite(x0)) and np.all(np.isfinite(v0))):
            raise ValueError("initial state must be finite")
        if not self.gamma > 0:
            raise ValueError("damping gamma must be positive")
        if not self.mass > 0:
            raise ValueError("mass must be positive (the first-order case is not supported)")
        if not (self.horizon > 0 and np.isfinite(self.horizon)):
            raise ValueError("horizon must be positive and finite")
        if self.form not in FORMS:
            raise ValueError(f"unknown form {self.form!r}")
        if self.form == "beta" and self.horizon >= self.schedule.total():
            raise ValueError("beta-form horizon must be below the integral of eps")
        if self.output_dt is not None and not self.output_dt > 0:
            raise ValueError("output_dt must be positive")
        object.__setattr__(self, "_lowered", (self.phi.lower(), self.psi.lower()))

    @property
    def dim(self):
        return self.phi.dim

    @property
    def lowered(self):
        return self._lowered

    @property
    def mode(self):
        return FORMS.index(self.form)

    @property
    def cadence(self):
        if self.output_dt is not None:
            return float(self.output_dt)
        return max(0.01, self.horizon / MAX_DEFAULT_SAMPLES)

    def output_grid(self):
        dt = self.cadence
        k = int(np.floor(self.horizon / dt + 1e-9))
        grid = dt * np.arange(k + 1)
        if grid[-1] < self.horizon:
            grid = np.append(grid, self.horizon)
        return grid

    def with_(self, **changes):
        return replace(self, **changes)

    def digest(self):
        h = hashlib.sha256()
        h.update(repr((self.gamma, self.mass, self.horizon, self.form, self.control,
                       self.output_dt, self.schedule.describe())).encode())
        for arr in (self.x0, self.v0, *self.lowered[0], *self.lowered[1], *self.schedule.packed):
            h.update(np.ascontiguousarray(np.asarray(arr, dtype=float)).tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    spec: ProblemSpec = None
    stats: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    @property
    def final(self):
        return self.x[-1], self.v[-1]

    def to_csv(self, path):
        n = self.x.shape[1]
        header = ",".join(["t"] + [f"x_{i}" for i in range(n)] + [f"v_{i}" for i in range(n)])
        data = np.column_stack([self.t, self.x, self.v])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        n = (data.shape[1] - 1) // 2
        return cls(data[:, 0], data[:, 1:1 + n], data[:, 1 + n:])


def rhs(spec, t, x, v):
    """``(dx, dv)`` of the spec's system at time ``t``."""
    n = spec.dim
    y = np.concatenate([np.asarray(x, dtype=float), np.asarray(v, dtype=float)])
    phi_l, psi_l = spec.lowered
    out = kernels.rhs(float(t), y, n, float(spec.gamma), float(spec.mass), spec.mode,
                      phi_l, psi_l, spec.schedule.packed)
    return out[:n], out[n:]


def _solve_chunk(spec, t0, y0, h, t_out, t_end):
    c = spec.control
    phi_l, psi_l = spec.lowered
    args = (spec.dim, float(spec.gamma), float(spec.mass), spec.mode, phi_l, psi_l,
            spec.schedule.packed)
    if c.method == "adaptive-RK45":
        return kernels.dp45_solve(t0, y0, h, t_out, t_end, c.rtol, c.atol, c.max_step,
                                  c.max_steps, *args)
    return kernels.rk4_solve(t0, y0, c.h0, t_out, t_end, c.max_steps, *args)


def integrate(spec, observers=(), t_eval=None, chunk=CHUNK_SAMPLES):
    """Integrate ``spec`` over ``[0, horizon]``.

    Samples are produced on ``spec.output_grid()`` merged with ``t_eval``.
    Each observer is called as ``observer(t, x, v)`` once per chunk of
    consecutive samples.  Raises :class:`IntegrationError` on a numerical
    abort.
    """
    grid = spec.output_grid()
    if t_eval is not None:
        extra = np.asarray(t_eval, dtype=float).ravel()
        if np.any(extra < 0) or np.any(extra > spec.horizon):
            raise ValueError("t_eval outside [0, horizon]")
        grid = np.union1d(grid, extra)
    n = spec.dim
    y = np.concatenate([spec.x0, spec.v0])
    t = 0.0
    h = float(spec.control.h0)
    accepted = rejected = 0
    pieces = []
    for start in range(0, len(grid), chunk):
        t_out = np.ascontiguousarray(grid[start:start + chunk])
        Y, y, t_reached, h, st = _solve_chunk(spec, t, y, h, t_out, float(t_out[-1]))
        accepted += int(st[0])
        rejected += int(st[1])
        if st[2] != kernels.STATUS_OK:
            good = np.all(np.isfinite(Y), axis=1)
            pieces.append((t_out[good], Y[good]))
            partial = _assemble(pieces, n, spec, {"accepted": accepted, "rejected": rejected})
            raise IntegrationError(
                f"integration aborted near t={t_reached:.6g}: {_STATUS_TEXT[int(st[2])]}",
                int(st[2]), partial)
        t = float(t_reached)
        pieces.append((t_out, Y))
        for obs in observers:
            obs(t_out, Y[:, :n], Y[:, n:])
    stats = {"accepted": accepted, "rejected": rejected, "status": 0}
    return _assemble(pieces, n, spec, stats)


def _assemble(pieces, n, spec, stats):
    if pieces:
        T = np.concatenate([p[0] for p in pieces])
        Y = np.concatenate([p[1] for p in pieces])
    else:
        T, Y = np.zeros(0), np.zeros((0, 2 * n))
    return Trajectory(T, Y[:, :n].copy(), Y[:, n:].copy(), spec, stats)


def integrate_beta(spec):
    """Integrate the beta form; ``spec`` may be given in either form."""
    if spec.form != "beta":
        spec = spec.with_(form="beta")
    return integrate(spec)


# -- verification ---------------------------------------------------------------

def _stencil(traj, t):
    t = np.atleast_1d(np.asarray(t, dtype=float))
    idx = np.searchsorted(traj.t, t)
    idx = np.clip(idx, 0, len(traj.t) - 1)
    left = np.clip(idx - 1, 0, len(traj.t) - 1)
    idx = np.where(np.abs(traj.t[left] - t) < np.abs(traj.t[idx] - t), left, idx)
    if np.any(np.abs(traj.t[idx] - t) > 1e-9 * np.maximum(1.0, np.abs(t))):
        raise ValueError("residual times must be sample times of the trajectory")
    if np.any(idx < 2) or np.any(idx > len(traj.t) - 3):
        raise ValueError("residual needs two samples on each side; t is at the boundary")
    offs = np.arange(-2, 3)
    tt = traj.t[idx[:, None] + offs]
    h = np.diff(tt, axis=1)
    if np.any(np.abs(h - h[:, :1]) > 1e-6 * h[:, :1]):
        raise ValueError("residual needs a locally uniform sample spacing")
    return idx, h[:, 0]


def finite_difference(traj, t):
    """Fourth-order central differences ``(x', x'')`` at sample times ``t``."""
    idx, h = _stencil(traj, t)
    X = traj.x
    xm2, xm1, x0, xp1, xp2 = (X[idx + k] for k in range(-2, 3))
    hh = h[:, None]
    d1 = (-xp2 + 8 * xp1 - 8 * xm1 + xm2) / (12 * hh)
    d2 = (-xp2 + 16 * xp1 - 30 * x0 + 16 * xm1 - xm2) / (12 * hh * hh)
    return x0, d1, d2


def residual(spec, traj, t):
    """Norm of the equation residual of sampled positions, at sample time(s) ``t``."""
    scalar = np.ndim(t) == 0
    x, d1, d2 = finite_difference(traj, t)
    tt = np.atleast_1d(np.asarray(t, dtype=float))
    gphi = spec.phi.gradient(x)
    gpsi = spec.psi.gradient(x)
    m, g = spec.mass, spec.gamma
    if spec.form == "standard":
        e = spec.schedule.eps(tt)[:, None]
        r = m * d2 + g * d1 + gphi + e * gpsi
    else:
        b = beta_from_eps(spec.schedule)
        beta = b.beta(tt)[:, None]
        bdot = b.beta_dot(tt)[:, None]
        r = (m / beta) * d2 + (g - m * bdot / beta ** 2) * d1 + beta * gphi + gpsi
    out = np.linalg.norm(r, axis=1)
    return float(out[0]) if scalar else out


def rescale_affine(traj, a):
    """``y(t) = x(a t)`` together with the spec it solves.

    Returns ``(y, spec)`` where ``spec`` has ``phi -> a**2 phi``, ``psi``
    unchanged, ``eps -> a**2 eps(a t)`` and ``gamma -> a gamma``.
    """
    if not a > 0:
        raise ValueError("rescaling factor must be positive")
    s = traj.spec
    if s is None or s.form != "standard":
        raise ValueError("rescale_affine needs a standard-form trajectory with its spec")
    spec = s.with_(phi=s.phi.scaled(a * a), schedule=s.schedule.rescaled(a),
                   gamma=a * s.gamma, v0=a * s.v0, horizon=s.horizon / a,
                   output_dt=None if s.output_dt is None else s.output_dt / a)
    y = Trajectory(traj.t / a, traj.x.copy(), a * traj.v, spec, dict(traj.stats))
    return y, spec
