"""Hot numeric kernels: lowered potentials, schedules, and the RK drivers.

Everything here works on plain arrays and tuples so it can be compiled by
numba.  Two packed layouts are used throughout.

Lowered potential (``lp``), a 14-tuple::

    (rows, cols, data, q, c,
     box_idx, box_lo, box_hi, box_w,
     ball_ptr, ball_idx, ball_center, ball_radius, ball_w)

describing ``0.5 x'Qx - q'x + c`` (Q in COO form) plus weighted half squared
distances to coordinate boxes and to Euclidean balls.  Ball ``k`` acts on
coordinates ``ball_idx[ball_ptr[k]:ball_ptr[k+1]]``.

Schedule (``sc``), a 9-tuple::

    (kind, p0, p1, amp, tscale, breaks, coefs, cum, tail_r)

with ``eps(t) = amp * base(tscale * t)``.  Kinds: 0 power law
``p1 / (1 + u)**p0``, 1 exponential ``exp(-p0 u)``, 2 constant ``p0``, 3
tabulated piecewise cubic (``breaks``/``coefs`` in scipy PPoly layout, ``cum``
cumulative integrals at the breaks) continued past the table by a power law
with exponent ``tail_r``.

``mode`` selects the equation: 0 is the inertial system driven by eps, 1 is
its time-rescaled form driven by ``beta(t) = 1 / eps(t_eps(t))``.
"""

import numpy as np

from ._accel import NUMBA_ENABLED, kernel

STATUS_OK = 0
STATUS_STEP_UNDERFLOW = 1
STATUS_NONFINITE = 2
STATUS_MAX_STEPS = 3

# PI step-size control (Hairer-Wanner): the memory term damps the step
# oscillations that plain control shows on the stability boundary.
PI_BETA = 0.08
PI_EXPO = 0.2 - 0.75 * PI_BETA

# Dormand-Prince 5(4) with Shampine's quartic dense output.
DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
DP_A = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [1 / 5, 0.0, 0.0, 0.0, 0.0],
    [3 / 40, 9 / 40, 0.0, 0.0, 0.0],
    [44 / 45, -56 / 15, 32 / 9, 0.0, 0.0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0.0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
])
DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
DP_E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
DP_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])


# -- lowered potentials ------------------------------------------------------

# In-place primitives.  Under numba they are explicit loops, which avoids
# temporaries in the integrator's inner loop; the numpy fallback uses the
# equivalent vectorized expressions.

if NUMBA_ENABLED:
    @kernel
    def affine_into(rows, cols, data, q, x, out):
        """``out = Qx - q`` with ``Q`` in COO form, rows sorted."""
        for i in range(out.shape[0]):
            out[i] = -q[i]
        nnz = data.shape[0]
        k = 0
        while k < nnz:
            r = rows[k]
            acc = 0.0
            while k < nnz and rows[k] == r:
                acc += data[k] * x[cols[k]]
                k += 1
            out[r] += acc

    @kernel
    def combine_into(out, y, h, coef, K, m):
        """``out = y + h * sum_{r<m} coef[r] K[r]``."""
        for i in range(y.shape[0]):
            acc = 0.0
            for r in range(m):
                acc += coef[r] * K[r, i]
            out[i] = y[i] + h * acc

    @kernel
    def error_norm(y, y_new, h, coef, K, rtol, atol):
        """RMS of the embedded error estimate scaled by ``atol + rtol |y|``."""
        total = 0.0
        for i in range(y.shape[0]):
            acc = 0.0
            for r in range(K.shape[0]):
                acc += coef[r] * K[r, i]
            sc = atol + rtol * max(abs(y[i]), abs(y_new[i]))
            e = h * acc / sc
            total += e * e
        return np.sqrt(total / y.shape[0])

    @kernel
    def accel_into(out, y, n, cv, cg, cp, gphi, gpsi):
        for i in range(n):
            v = y[n + i]
            out[i] = v
            out[n + i] = cv * v + cg * gphi[i] + cp * gpsi[i]
else:
    def affine_into(rows, cols, data, q, x, out):
        out[:] = np.bincount(rows, weights=data * x[cols], minlength=out.shape[0]) - q

    def combine_into(out, y, h, coef, K, m):
        out[:] = y + h * (coef[:m] @ K[:m])

    def error_norm(y, y_new, h, coef, K, rtol, atol):
        sc = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        e = h * (coef @ K) / sc
        return np.sqrt(np.mean(e * e))

    def accel_into(out, y, n, cv, cg, cp, gphi, gpsi):
        v = y[n:]
        out[:n] = v
        out[n:] = cv * v + cg * gphi + cp * gpsi


@kernel
def lp_grad_into(x, lp, g):
    rows, cols, data, q = lp[0], lp[1], lp[2], lp[3]
    box_idx, box_lo, box_hi, box_w = lp[5], lp[6], lp[7], lp[8]
    ball_ptr, ball_idx, ball_center, ball_radius, ball_w = lp[9], lp[10], lp[11], lp[12], lp[13]
    affine_into(rows, cols, data, q, x, g)
    if box_idx.shape[0] > 0:
        xb = x[box_idx]
        g[box_idx] = g[box_idx] + box_w * (xb - np.minimum(np.maximum(xb, box_lo), box_hi))
    for k in range(ball_radius.shape[0]):
        idx = ball_idx[ball_ptr[k]:ball_ptr[k + 1]]
        d = x[idx] - ball_center[ball_ptr[k]:ball_ptr[k + 1]]
        nd = np.sqrt(np.sum(d * d))
        if nd > ball_radius[k]:
            g[idx] = g[idx] + ball_w[k] * (1.0 - ball_radius[k] / nd) * d


@kernel
def lp_grad(x, lp):
    g = np.empty(x.shape[0])
    lp_grad_into(x, lp, g)
    return g


# -- schedules ---------------------------------------------------------------

@kernel
def _table_segment(u, breaks):
    # index i with breaks[i] <= u < breaks[i+1], clamped to the table
    i = np.searchsorted(breaks, u, side="right") - 1
    if i < 0:
        i = 0
    if i > breaks.shape[0] - 2:
        i = breaks.shape[0] - 2
    return i


@kernel
def _base_eval(u, sc):
    kind, p0, p1 = sc[0], sc[1], sc[2]
    if kind == 0:
        e = p1 * (1.0 + u) ** (-p0)
        return e, -p0 * e / (1.0 + u)
    if kind == 1:
        e = np.exp(-p0 * u)
        return e, -p0 * e
    if kind == 2:
        return p0, 0.0
    breaks, coefs, tail_r = sc[5], sc[6], sc[8]
    t_last = breaks[breaks.shape[0] - 1]
    if u >= t_last:
        nseg = coefs.shape[1]
        dx = t_last - breaks[nseg - 1]
        e_last = ((coefs[0, nseg - 1] * dx + coefs[1, nseg - 1]) * dx + coefs[2, nseg - 1]) * dx + coefs[3, nseg - 1]
        e = e_last * ((1.0 + u) / (1.0 + t_last)) ** (-tail_r)
        return e, -tail_r * e / (1.0 + u)
    i = _table_segment(u, breaks)
    dx = u - breaks[i]
    e = ((coefs[0, i] * dx + coefs[1, i]) * dx + coefs[2, i]) * dx + coefs[3, i]
    de = (3.0 * coefs[0, i] * dx + 2.0 * coefs[1, i]) * dx + coefs[2, i]
    return e, de


@kernel
def sched_eval(t, sc):
    """Return ``(eps(t), eps_dot(t))``."""
    amp, tscale = sc[3], sc[4]
    e, de = _base_eval(tscale * t, sc)
    return amp * e, amp * tscale * de


@kernel
def _base_antideriv(u, sc):
    kind, p0, p1 = sc[0], sc[1], sc[2]
    if kind == 0:
        if p0 == 1.0:
            return p1 * np.log1p(u)
        return p1 * ((1.0 + u) ** (1.0 - p0) - 1.0) / (1.0 - p0)
    if kind == 1:
        return -np.expm1(-p0 * u) / p0
    if kind == 2:
        return p0 * u
    breaks, coefs, cum, tail_r = sc[5], sc[6], sc[7], sc[8]
    nseg = coefs.shape[1]
    t_last = breaks[nseg]
    if u >= t_last:
        e_last, _ = _base_eval(t_last, sc)
        ratio = (1.0 + u) / (1.0 + t_last)
        if tail_r == 1.0:
            tail = e_last * (1.0 + t_last) * np.log(ratio)
        else:
            tail = e_last * (1.0 + t_last) * (ratio ** (1.0 - tail_r) - 1.0) / (1.0 - tail_r)
        return cum[nseg] + tail
    i = _table_segment(u, breaks)
    dx = u - breaks[i]
    part = (((coefs[0, i] / 4.0 * dx + coefs[1, i] / 3.0) * dx + coefs[2, i] / 2.0) * dx + coefs[3, i]) * dx
    return cum[i] + part


@kernel
def _base_total(sc):
    """Integral of the base profile over [0, inf); inf when unbounded."""
    kind, p0, p1 = sc[0], sc[1], sc[2]
    if kind == 0:
        if p0 > 1.0:
            return p1 / (p0 - 1.0)
        return np.inf
    if kind == 1:
        return 1.0 / p0
    if kind == 2:
        return np.inf
    tail_r = sc[8]
    if tail_r > 1.0:
        nseg = sc[6].shape[1]
        t_last = sc[5][nseg]
        e_last, _ = _base_eval(t_last, sc)
        return sc[7][nseg] + e_last * (1.0 + t_last) / (tail_r - 1.0)
    return np.inf


@kernel
def sched_antideriv(t, sc):
    """Integral of eps over [0, t]."""
    amp, tscale = sc[3], sc[4]
    return amp / tscale * _base_antideriv(tscale * t, sc)


@kernel
def sched_total(sc):
    return sc[3] / sc[4] * _base_total(sc)


@kernel
def _base_antideriv_inverse(y, sc):
    kind, p0, p1 = sc[0], sc[1], sc[2]
    if y <= 0.0:
        return 0.0
    if y >= _base_total(sc):
        return np.inf
    if kind == 0:
        if p0 == 1.0:
            return np.expm1(y / p1)
        return (1.0 + (1.0 - p0) * y / p1) ** (1.0 / (1.0 - p0)) - 1.0
    if kind == 1:
        return -np.log1p(-p0 * y) / p0
    if kind == 2:
        return y / p0
    # tabulated: bracket, then safeguarded Newton on a monotone function
    lo = 0.0
    hi = 1.0
    while _base_antideriv(hi, sc) < y:
        lo = hi
        hi *= 2.0
    u = 0.5 * (lo + hi)
    for _ in range(200):
        f = _base_antideriv(u, sc) - y
        if f > 0.0:
            hi = u
        else:
            lo = u
        e, _de = _base_eval(u, sc)
        step = f / e
        u_new = u - step
        if not (lo < u_new < hi):
            u_new = 0.5 * (lo + hi)
        if abs(u_new - u) <= 4e-16 * max(1.0, abs(u)):
            u = u_new
            break
        u = u_new
    return u


@kernel
def sched_time_eps(t, sc):
    """Solve ``int_0^s eps = t`` for ``s``; inf past the total mass of eps."""
    amp, tscale = sc[3], sc[4]
    return _base_antideriv_inverse(t * tscale / amp, sc) / tscale


@kernel
def sched_eval_array(ts, sc):
    e = np.empty(ts.shape[0])
    de = np.empty(ts.shape[0])
    for i in range(ts.shape[0]):
        e[i], de[i] = sched_eval(ts[i], sc)
    return e, de


@kernel
def sched_antideriv_array(ts, sc):
    out = np.empty(ts.shape[0])
    for i in range(ts.shape[0]):
        out[i] = sched_antideriv(ts[i], sc)
    return out


@kernel
def sched_time_eps_array(ts, sc):
    out = np.empty(ts.shape[0])
    for i in range(ts.shape[0]):
        out[i] = sched_time_eps(ts[i], sc)
    return out


# -- equations of motion -----------------------------------------------------

@kernel
def rhs_into(t, y, out, n, gamma, mass, mode, phi, psi, sc, gphi, gpsi):
    """Write the first-order right-hand side at ``(t, y)`` into ``out``.

    ``gphi`` and ``gpsi`` are scratch arrays of length ``n``.
    """
    x = y[:n]
    lp_grad_into(x, phi, gphi)
    lp_grad_into(x, psi, gpsi)
    if mode == 0:
        e, _de = sched_eval(t, sc)
        accel_into(out, y, n, -gamma / mass, -1.0 / mass, -e / mass, gphi, gpsi)
    else:
        u = sched_time_eps(t, sc)
        e, de = sched_eval(u, sc)
        beta = 1.0 / e
        # beta_dot / beta**2 == -eps_dot / eps at the rescaled time
        b = beta / mass
        accel_into(out, y, n, -b * (gamma + mass * de / e), -b * beta, -b, gphi, gpsi)


@kernel
def rhs(t, y, n, gamma, mass, mode, phi, psi, sc):
    out = np.empty(2 * n)
    rhs_into(t, y, out, n, gamma, mass, mode, phi, psi, sc, np.empty(n), np.empty(n))
    return out


@kernel
def _rms(a):
    return np.sqrt(np.mean(a * a))


@kernel
def _initial_step(t, y, f, rtol, atol, max_step, t_end, n, gamma, mass, mode, phi, psi, sc):
    scale = atol + rtol * np.abs(y)
    d0 = _rms(y / scale)
    d1 = _rms(f / scale)
    if d0 < 1e-5 or d1 < 1e-5 or not (np.isfinite(d0) and np.isfinite(d1)):
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, t_end - t)
    y1 = y + h0 * f
    f1 = rhs(t + h0, y1, n, gamma, mass, mode, phi, psi, sc)
    d2 = _rms((f1 - f) / scale) / h0
    if not np.isfinite(d2):
        h1 = max(1e-6, h0 * 1e-3)
    elif d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100.0 * h0, h1, max_step)


@kernel
def dp45_solve(t0, y0, h0, t_out, t_end, rtol, atol, max_step, max_steps,
               n, gamma, mass, mode, phi, psi, sc):
    """Adaptive Dormand-Prince integration from ``t0`` to ``t_end``.

    Writes the dense-output state at every time in the sorted array ``t_out``
    (all within ``[t0, t_end]``).  Returns ``(Y, y_end, t_end_reached,
    h_next, stats)`` with ``stats = [accepted, rejected, status]``.
    """
    dim = y0.shape[0]
    nout = t_out.shape[0]
    Y = np.full((nout, dim), np.nan)
    stats = np.zeros(3, dtype=np.int64)
    j = 0
    while j < nout and t_out[j] <= t0:
        Y[j] = y0
        j += 1
    t = t0
    y = y0.copy()
    f = rhs(t, y, n, gamma, mass, mode, phi, psi, sc)
    h = h0
    if h <= 0.0 and t_end > t:
        h = _initial_step(t, y, f, rtol, atol, max_step, t_end, n, gamma, mass, mode, phi, psi, sc)
    K = np.empty((7, dim))
    K[0] = f
    stage = np.empty(dim)
    y_new = np.empty(dim)
    gphi = np.empty(n)
    gpsi = np.empty(n)
    powers = np.empty(4)
    en_old = 1e-4
    rejected_last = False
    while t < t_end:
        if stats[0] + stats[1] >= max_steps:
            stats[2] = STATUS_MAX_STEPS
            break
        h = min(h, max_step)
        last = False
        if h >= t_end - t:
            h = t_end - t
            last = True
        if h <= 10.0 * (np.nextafter(t, np.inf) - t):
            stats[2] = STATUS_STEP_UNDERFLOW
            break
        for s in range(1, 6):
            combine_into(stage, y, h, DP_A[s], K, s)
            rhs_into(t + DP_C[s] * h, stage, K[s], n, gamma, mass, mode, phi, psi, sc, gphi, gpsi)
        combine_into(y_new, y, h, DP_B, K, 6)
        t_new = t_end if last else t + h
        rhs_into(t_new, y_new, K[6], n, gamma, mass, mode, phi, psi, sc, gphi, gpsi)
        en = error_norm(y, y_new, h, DP_E, K, rtol, atol)
        if not np.isfinite(en):
            if not np.all(np.isfinite(y_new)) and h < 1e-12:
                stats[2] = STATUS_NONFINITE
                break
            stats[1] += 1
            h *= 0.2
            continue
        if en <= 1.0:
            if j < nout and t_out[j] <= t_new:
                Q = np.ascontiguousarray(K.T) @ DP_P
                while j < nout and t_out[j] <= t_new:
                    th = (t_out[j] - t) / h
                    powers[0] = th
                    powers[1] = th * th
                    powers[2] = powers[1] * th
                    powers[3] = powers[2] * th
                    Y[j] = y + h * (Q @ powers)
                    j += 1
            t = t_new
            y[:] = y_new
            K[0] = K[6]
            stats[0] += 1
            if not np.all(np.isfinite(y)):
                stats[2] = STATUS_NONFINITE
                break
            if en == 0.0:
                factor = 10.0
            else:
                factor = min(10.0, max(0.2, 0.9 * en ** -PI_EXPO * en_old ** PI_BETA))
            if rejected_last:
                factor = min(factor, 1.0)
            en_old = max(en, 1e-4)
            rejected_last = False
            if not last:
                h *= factor
        else:
            stats[1] += 1
            rejected_last = True
            h *= max(0.2, 0.9 * en ** -PI_EXPO)
    return Y, y, t, h, stats


@kernel
def rk4_solve(t0, y0, h0, t_out, t_end, max_steps, n, gamma, mass, mode, phi, psi, sc):
    """Classical fixed-step RK4 with cubic Hermite dense output."""
    dim = y0.shape[0]
    nout = t_out.shape[0]
    Y = np.full((nout, dim), np.nan)
    stats = np.zeros(3, dtype=np.int64)
    j = 0
    while j < nout and t_out[j] <= t0:
        Y[j] = y0
        j += 1
    t = t0
    y = y0.copy()
    f = rhs(t, y, n, gamma, mass, mode, phi, psi, sc)
    while t < t_end:
        if stats[0] >= max_steps:
            stats[2] = STATUS_MAX_STEPS
            break
        h = h0
        last = False
        if h >= t_end - t:
            h = t_end - t
            last = True
        k1 = f
        k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1, n, gamma, mass, mode, phi, psi, sc)
        k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2, n, gamma, mass, mode, phi, psi, sc)
        k4 = rhs(t + h, y + h * k3, n, gamma, mass, mode, phi, psi, sc)
        y_new = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t_new = t_end if last else t + h
        f_new = rhs(t_new, y_new, n, gamma, mass, mode, phi, psi, sc)
        while j < nout and t_out[j] <= t_new:
            th = (t_out[j] - t) / h
            h00 = (1.0 + 2.0 * th) * (1.0 - th) ** 2
            h10 = th * (1.0 - th) ** 2
            h01 = th * th * (3.0 - 2.0 * th)
            h11 = th * th * (th - 1.0)
            Y[j] = h00 * y + (h10 * h) * f + h01 * y_new + (h11 * h) * f_new
            j += 1
        t = t_new
        y = y_new
        f = f_new
        stats[0] += 1
        if not np.all(np.isfinite(y)):
            stats[2] = STATUS_NONFINITE
            break
    return Y, y, t, h0, stats
