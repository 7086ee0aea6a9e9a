"""Vanishing control schedules eps(t) and the moderate-decrease checks.

A schedule is a positive, nonincreasing C^1 function.  The three checks are

* ``check_h1``: the integral of eps over [0, inf) diverges;
* ``check_h2``: for every cone direction p, ``t -> phi*(eps(t) p) -
  sigma_C(eps(t) p)`` is integrable;
* ``check_h3``: ``-eps_dot <= k eps**2`` for large t.

The module also provides the beta/eps time-rescaling dictionary:
``t_eps`` inverts the running integral of eps, ``t_beta`` is that running
integral, and ``beta(t) = 1 / eps(t_eps(t))``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator

from . import kernels
from .potentials import ConeRay, SqDistToSet, is_inf

KINDS = ("power", "exponential", "constant", "custom")
_KIND_CODE = {k: i for i, k in enumerate(KINDS)}

H1_RATIO_TOL = 1e-3
H2_SLOPE_MARGIN = 0.02
H3_GROWTH_TOL = 0.01


class TimeMapError(ValueError):
    """Raised when t_eps is evaluated past the (finite) total mass of eps."""


@dataclass(frozen=True, eq=False)
class EpsilonSchedule:
    """``eps(t) = amp * base(tscale * t)`` for one of the base families.

    Use the constructors :meth:`power_law`, :meth:`exponential`,
    :meth:`constant` and :meth:`custom` rather than the raw fields.
    """

    kind: str
    alpha: float = 1.0
    scale: float = 1.0
    rate: float = 1.0
    value: float = 1.0
    table_t: tuple = ()
    table_eps: tuple = ()
    amp: float = 1.0
    tscale: float = 1.0
    packed: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}; expected one of {KINDS}")
        if not (self.amp > 0 and self.tscale > 0):
            raise ValueError("amp and tscale must be positive")
        empty_b, empty_c = np.zeros(2), np.zeros((4, 1))
        cum, tail_r = np.zeros(2), 0.0
        p0, p1 = 0.0, 0.0
        if self.kind == "power":
            if not (self.alpha > 0 and self.scale > 0):
                raise ValueError("power law needs alpha > 0 and scale > 0")
            p0, p1 = float(self.alpha), float(self.scale)
        elif self.kind == "exponential":
            if not self.rate > 0:
                raise ValueError("exponential schedule needs rate > 0")
            p0 = float(self.rate)
        elif self.kind == "constant":
            if not self.value > 0:
                raise ValueError("constant schedule needs a positive value")
            p0 = float(self.value)
        else:
            t = np.asarray(self.table_t, dtype=float)
            e = np.asarray(self.table_eps, dtype=float)
            if t.ndim != 1 or t.shape != e.shape or len(t) < 2:
                raise ValueError("custom schedule needs matching 1-D tables with >= 2 points")
            if t[0] != 0.0 or np.any(np.diff(t) <= 0):
                raise ValueError("custom table times must start at 0 and increase strictly")
            if np.any(e <= 0) or np.any(np.diff(e) > 0):
                raise ValueError("custom table values must be positive and nonincreasing")
            pp = PchipInterpolator(t, e)
            empty_b, empty_c = pp.x.copy(), np.ascontiguousarray(pp.c)
            seg = pp.antiderivative()
            cum = seg(pp.x) - seg(pp.x[0])
            slope_end = float(pp.derivative()(t[-1]))
            tail_r = max(0.0, -slope_end * (1.0 + t[-1]) / e[-1])
        packed = (np.int64(_KIND_CODE[self.kind]), p0, p1, float(self.amp), float(self.tscale),
                  np.asarray(empty_b, dtype=float), np.asarray(empty_c, dtype=float),
                  np.asarray(cum, dtype=float), float(tail_r))
        object.__setattr__(self, "packed", packed)

    # constructors

    @classmethod
    def power_law(cls, alpha, scale=1.0):
        """``scale / (1 + t)**alpha``."""
        return cls("power", alpha=float(alpha), scale=float(scale))

    @classmethod
    def exponential(cls, rate):
        return cls("exponential", rate=float(rate))

    @classmethod
    def constant(cls, value):
        return cls("constant", value=float(value))

    @classmethod
    def custom(cls, t, eps):
        """Monotone cubic through the table, continued by a matching power-law tail."""
        return cls("custom", table_t=tuple(map(float, t)), table_eps=tuple(map(float, eps)))

    def rescaled(self, a):
        """``a**2 * eps(a t)``, the control seen by ``y(t) = x(a t)``."""
        if not a > 0:
            raise ValueError("rescaling factor must be positive")
        return EpsilonSchedule(self.kind, self.alpha, self.scale, self.rate, self.value,
                               self.table_t, self.table_eps, self.amp * a * a, self.tscale * a)

    @property
    def tail_exponent(self):
        return self.packed[8]

    # evaluation

    def _times(self, t):
        arr = np.asarray(t, dtype=float)
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise ValueError("schedule evaluated at a negative or non-finite time")
        return arr

    def _apply(self, t, scalar_fn, array_fn):
        arr = self._times(t)
        if arr.ndim == 0:
            return scalar_fn(float(arr), self.packed)
        flat = np.ascontiguousarray(arr.ravel())
        out = array_fn(flat, self.packed)
        if isinstance(out, tuple):
            return tuple(o.reshape(arr.shape) for o in out)
        return out.reshape(arr.shape)

    def eps(self, t):
        e = self._apply(t, kernels.sched_eval, kernels.sched_eval_array)
        return e[0]

    def eps_dot(self, t):
        return self._apply(t, kernels.sched_eval, kernels.sched_eval_array)[1]

    def __call__(self, t):
        return self.eps(t)

    def antiderivative(self, t):
        """``int_0^t eps``."""
        return self._apply(t, kernels.sched_antideriv, kernels.sched_antideriv_array)

    def total(self):
        """``int_0^inf eps`` (``inf`` when it diverges)."""
        return float(kernels.sched_total(self.packed))

    def time_eps(self, t):
        """The time ``s`` with ``int_0^s eps = t``."""
        out = self._apply(t, kernels.sched_time_eps, kernels.sched_time_eps_array)
        if np.any(np.isinf(out)):
            raise TimeMapError(
                f"t_eps undefined for t >= {self.total():.17g}: the integral of eps is finite")
        return out

    def describe(self):
        base = {
            "power": f"power(alpha={self.alpha:g}, scale={self.scale:g})",
            "exponential": f"exponential(rate={self.rate:g})",
            "constant": f"constant({self.value:g})",
            "custom": f"custom({len(self.table_t)} points, tail exponent {self.tail_exponent:.4g})",
        }[self.kind]
        if self.amp != 1.0 or self.tscale != 1.0:
            base = f"{self.amp:g} * {base} at {self.tscale:g} t"
        return base


def eps(s, t):
    return s.eps(t)


def eps_dot(s, t):
    return s.eps_dot(t)


# -- condition checks -----------------------------------------------------------

@dataclass(frozen=True)
class H1Report:
    holds: bool
    evidence: float
    growth_ratio: float
    method: str


@dataclass(frozen=True)
class RayIntegral:
    ray: ConeRay
    integral: float
    tail: float
    slope: float
    holds: bool


@dataclass(frozen=True)
class H2Report:
    holds: bool
    per_ray: list
    method: str


@dataclass(frozen=True)
class H3Report:
    holds: bool
    k_estimate: float
    onset_time: float
    growth: float


@dataclass(frozen=True)
class ConditionReport:
    h1: H1Report
    h2: H2Report
    h3: H3Report

    @property
    def all_hold(self):
        return self.h1.holds and self.h2.holds and self.h3.holds

    def as_dict(self):
        out = {
            "h1.holds": self.h1.holds,
            "h1.evidence": self.h1.evidence,
            "h1.growth_ratio": self.h1.growth_ratio,
            "h1.method": self.h1.method,
            "h2.holds": self.h2.holds,
            "h2.method": self.h2.method,
            "h2.rays": len(self.h2.per_ray),
            "h3.holds": self.h3.holds,
            "h3.k_estimate": self.h3.k_estimate,
            "h3.onset_time": self.h3.onset_time,
        }
        for i, r in enumerate(self.h2.per_ray):
            out[f"h2.ray{i}.norm"] = float(np.linalg.norm(r.ray.direction))
            out[f"h2.ray{i}.integral"] = r.integral
            out[f"h2.ray{i}.tail"] = r.tail
        return out


def _doubling_ratio(s, horizon, doublings=24):
    T = np.asarray([horizon * 2.0 ** k for k in range(doublings + 1)])
    cum = s.antiderivative(T)
    d = np.diff(cum)
    if d[-2] <= 0:
        return 0.0
    return float(d[-1] / d[-2])


def check_h1(s, horizon):
    """Divergence of the integral of eps."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    evidence = float(s.antiderivative(horizon))
    ratio = _doubling_ratio(s, horizon)
    if s.kind == "power":
        return H1Report(s.alpha <= 1.0, evidence, ratio, "analytic")
    if s.kind == "exponential":
        return H1Report(False, evidence, ratio, "analytic")
    if s.kind == "constant":
        return H1Report(True, evidence, ratio, "analytic")
    return H1Report(ratio >= 1.0 - H1_RATIO_TOL, evidence, ratio, "numeric")


def h1_numeric(s, horizon):
    """Growth of the running integral across log-doublings, for any kind."""
    return _doubling_ratio(s, horizon) >= 1.0 - H1_RATIO_TOL


def _h2_integrand(s, phi, p):
    C = phi.argmin_set()

    def g(t):
        y = s.eps(t) * p
        a = phi.conjugate(y)
        b = C.support(y)
        if is_inf(a):
            return np.inf
        if is_inf(b):
            raise ValueError("support function infinite along a cone ray: ray is not normal to C")
        return max(a - b, 0.0)

    return g


def _integrate_log_panels(g, horizon, quad):
    edges = np.concatenate([[0.0], np.geomspace(1e-3, horizon, quad.get("panels", 40))])
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, _err = integrate.quad(g, a, b, epsabs=quad.get("epsabs", 1e-12),
                                   epsrel=quad.get("epsrel", 1e-10), limit=200)
        total += val
    return total


def _tail(g, horizon):
    g1 = g(horizon)
    if not np.isfinite(g1):
        return np.inf, np.nan
    if g1 <= 1e-300:
        return 0.0, np.inf
    g2 = g(1.1 * horizon)
    if g2 <= 1e-300:
        return 0.0, np.inf
    slope = -np.log(g2 / g1) / np.log(1.1)
    if slope <= 1.0 + H2_SLOPE_MARGIN:
        return np.inf, float(slope)
    return float(g1 * horizon / (slope - 1.0)), float(slope)


def _model_case_holds(s):
    """Whether eps is square integrable, decided in closed form where possible."""
    if s.kind == "power":
        return 2 * s.alpha > 1.0
    if s.kind == "exponential":
        return True
    if s.kind == "constant":
        return False
    return 2 * s.tail_exponent > 1.0 + H2_SLOPE_MARGIN


def check_h2(s, phi, rays, horizon, quad=None):
    """Integrability of the conjugate gap along each cone ray (and its double)."""
    quad = {} if quad is None else dict(quad)
    rays = list(rays)
    if any(np.linalg.norm(r.direction) > 0 for r in rays):
        directions = rays
    else:
        zero = [RayIntegral(r, 0.0, 0.0, np.inf, True) for r in rays]
        return H2Report(True, zero, "trivial")
    model = isinstance(phi, SqDistToSet)
    per_ray = []
    for r in directions:
        p = np.asarray(r.direction, dtype=float)
        if not np.any(p):
            per_ray.append(RayIntegral(r, 0.0, 0.0, np.inf, True))
            continue
        g = _h2_integrand(s, phi, p)
        integral = _integrate_log_panels(g, horizon, quad)
        tail, slope = _tail(g, horizon)
        ok = _model_case_holds(s) if model else bool(np.isfinite(tail) and np.isfinite(integral))
        per_ray.append(RayIntegral(r, float(integral), tail, slope, ok))
    return H2Report(all(r.holds for r in per_ray), per_ray, "model-case" if model else "numeric")


def check_h3(s, horizon, onset=0.0, points=2000):
    """Bound ``-eps_dot / eps**2`` on a log grid and test that it stabilizes."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    T = float(horizon)
    lo = max(onset, 1e-6)
    grid = np.unique(np.concatenate([[onset], np.geomspace(lo, 2 * T, points), [T / 2, T, 2 * T]]))
    grid = grid[grid >= onset]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        e, de = s.eps(grid), s.eps_dot(grid)
        ratio = -de / (e * e)
    if np.any(de > 0):
        return H3Report(False, np.inf, onset, np.inf)
    if not np.all(np.isfinite(ratio)):
        return H3Report(False, np.inf, onset, np.inf)
    first = ratio[(grid >= T / 2) & (grid <= T)].max()
    second = ratio[(grid >= T) & (grid <= 2 * T)].max()
    growth = np.inf if first == 0 and second > 0 else (0.0 if first == 0 else second / first - 1.0)
    return H3Report(bool(growth <= H3_GROWTH_TOL), float(ratio.max()), float(onset), float(growth))


def check_conditions(s, phi, rays, horizon, quad=None):
    return ConditionReport(check_h1(s, horizon), check_h2(s, phi, rays, horizon, quad),
                           check_h3(s, horizon))


# -- time rescaling -------------------------------------------------------------

@dataclass(frozen=True)
class BetaSchedule:
    """``beta(t) = 1 / eps(t_eps(t))`` on ``[0, horizon)``."""

    eps_schedule: EpsilonSchedule

    @property
    def horizon(self):
        return self.eps_schedule.total()

    def beta(self, t):
        return 1.0 / self.eps_schedule.eps(self.eps_schedule.time_eps(t))

    def beta_dot(self, t):
        u = self.eps_schedule.time_eps(t)
        e = self.eps_schedule.eps(u)
        return -self.eps_schedule.eps_dot(u) / e ** 3

    def __call__(self, t):
        return self.beta(t)


def beta_from_eps(s):
    if s.eps(0.0) <= 0:
        raise ValueError("eps must be strictly positive")
    return BetaSchedule(s)


def time_maps(s):
    """``(t_beta, t_eps)``: the running integral of eps and its inverse."""
    return s.antiderivative, s.time_eps
