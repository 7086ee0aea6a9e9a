"""Convex potentials, their minimizer sets, and the convex-analytic toolkit.

All potentials are normalized on construction so that their minimum value is
zero.  Values and gradients accept a single vector or a stack of vectors along
the leading axes.  Conjugates and support functions may be infinite; that case
is reported with the :data:`INF` marker rather than a float.
"""

from dataclasses import dataclass

import numpy as np
from scipy import optimize

EIG_NULL_TOL = 1e-10


class _Infinite:
    """Marker for ``+inf`` values of extended-real functions."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INF"

    def __float__(self):
        return float("inf")

    def __reduce__(self):
        return (_Infinite, ())


INF = _Infinite()


def is_inf(value):
    return value is INF


def _vec(x, n=None, name="x"):
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        raise ValueError(f"{name} must be a vector, got a scalar")
    if n is not None and arr.shape[-1] != n:
        raise ValueError(f"dimension mismatch: {name} has {arr.shape[-1]} coordinates, expected {n}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def _block(idx, n):
    idx = np.asarray(idx, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValueError(f"index block {idx.tolist()} out of range for dimension {n}")
    return idx


def _check_partition(blocks, n):
    seen = np.concatenate(blocks) if blocks else np.empty(0, dtype=np.int64)
    if len(np.unique(seen)) != len(seen):
        raise ValueError("index blocks overlap")
    if len(seen) != n:
        raise ValueError(f"index blocks cover {len(seen)} of {n} coordinates")


# -- sets ----------------------------------------------------------------------

class ArgminSet:
    """Closed convex set with an exact projection and support function."""

    dim: int

    def project(self, x):
        raise NotImplementedError

    def support(self, y):
        raise NotImplementedError

    def sample(self, rng, k, around=None):
        raise NotImplementedError

    def distance(self, x):
        x = _vec(x, self.dim)
        return np.linalg.norm(x - self.project(x), axis=-1)

    def contains(self, x, tol=1e-9):
        return bool(self.distance(x) <= tol)

    @property
    def is_affine(self):
        return False

    @property
    def bounded(self):
        return True


@dataclass(frozen=True, eq=False)
class AffineSubspace(ArgminSet):
    """``point + span(basis)``; ``basis`` has orthonormal columns, shape ``(n, k)``."""

    point: np.ndarray
    basis: np.ndarray

    def __post_init__(self):
        p = _vec(self.point, name="point")
        B = np.asarray(self.basis, dtype=float).reshape(p.shape[0], -1)
        if B.shape[1] and not np.allclose(B.T @ B, np.eye(B.shape[1]), atol=1e-10):
            raise ValueError("affine basis must have orthonormal columns")
        object.__setattr__(self, "point", p)
        object.__setattr__(self, "basis", B)

    @classmethod
    def spanned(cls, point, directions):
        """Build from arbitrary (row) spanning directions."""
        p = _vec(point, name="point")
        D = np.atleast_2d(np.asarray(directions, dtype=float)).reshape(-1, p.shape[0])
        if D.size == 0:
            return cls(p, np.zeros((p.shape[0], 0)))
        U, s, _ = np.linalg.svd(D.T, full_matrices=False)
        return cls(p, U[:, s > EIG_NULL_TOL * max(1.0, s.max())])

    @property
    def dim(self):
        return self.point.shape[0]

    @property
    def is_affine(self):
        return True

    @property
    def bounded(self):
        return self.basis.shape[1] == 0

    def project(self, x):
        x = _vec(x, self.dim)
        d = x - self.point
        return self.point + (d @ self.basis) @ self.basis.T

    def support(self, y):
        y = _vec(y, self.dim, "y")
        if np.linalg.norm(self.basis.T @ y) > 1e-12 * max(1.0, np.linalg.norm(y)):
            return INF
        return float(y @ self.point)

    def sample(self, rng, k, around=None):
        center = self.point if around is None else self.project(around)
        spread = 1.0 + np.linalg.norm(center)
        coef = rng.normal(scale=spread, size=(k, self.basis.shape[1]))
        return center + coef @ self.basis.T


@dataclass(frozen=True, eq=False)
class Box(ArgminSet):
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = _vec(self.lo, name="lo")
        hi = _vec(self.hi, lo.shape[0], "hi")
        if np.any(lo > hi):
            raise ValueError("box requires lo <= hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return self.lo.shape[0]

    def project(self, x):
        return np.clip(_vec(x, self.dim), self.lo, self.hi)

    def support(self, y):
        y = _vec(y, self.dim, "y")
        return float(np.sum(np.maximum(y * self.lo, y * self.hi)))

    def sample(self, rng, k, around=None):
        pts = rng.uniform(self.lo, self.hi, size=(k, self.dim))
        n_corner = min(k, 2 ** min(self.dim, 10))
        corners = rng.integers(0, 2, size=(n_corner, self.dim)).astype(bool)
        pts[:n_corner] = np.where(corners, self.hi, self.lo)
        return pts


@dataclass(frozen=True, eq=False)
class Ball(ArgminSet):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center, name="center"))
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self):
        return self.center.shape[0]

    def project(self, x):
        x = _vec(x, self.dim)
        d = x - self.center
        nd = np.linalg.norm(d, axis=-1, keepdims=True)
        factor = np.where(nd > self.radius, self.radius / np.where(nd > 0, nd, 1.0), 1.0)
        return self.center + d * factor

    def support(self, y):
        y = _vec(y, self.dim, "y")
        return float(y @ self.center + self.radius * np.linalg.norm(y))

    def sample(self, rng, k, around=None):
        d = rng.normal(size=(k, self.dim))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = self.radius * rng.uniform(size=(k, 1)) ** (1.0 / self.dim)
        r[: k // 4] = self.radius
        return self.center + r * d


@dataclass(frozen=True, eq=False)
class Product(ArgminSet):
    """Cartesian product; ``parts`` is a sequence of ``(set, index_block)``."""

    parts: tuple
    n: int

    def __post_init__(self):
        parts = tuple((s, _block(idx, self.n)) for s, idx in self.parts)
        for s, idx in parts:
            if s.dim != len(idx):
                raise ValueError("set dimension does not match its index block")
        _check_partition([idx for _, idx in parts], self.n)
        object.__setattr__(self, "parts", parts)

    @property
    def dim(self):
        return self.n

    @property
    def is_affine(self):
        return all(s.is_affine for s, _ in self.parts)

    @property
    def bounded(self):
        return all(s.bounded for s, _ in self.parts)

    def project(self, x):
        x = _vec(x, self.dim)
        out = np.array(x, copy=True)
        for s, idx in self.parts:
            out[..., idx] = s.project(x[..., idx])
        return out

    def support(self, y):
        y = _vec(y, self.dim, "y")
        total = 0.0
        for s, idx in self.parts:
            v = s.support(y[idx])
            if is_inf(v):
                return INF
            total += v
        return total

    def sample(self, rng, k, around=None):
        out = np.empty((k, self.dim))
        for s, idx in self.parts:
            out[:, idx] = s.sample(rng, k, None if around is None else np.asarray(around)[idx])
        return out

    def as_affine(self):
        """Merge a product of affine subspaces into one subspace."""
        if not self.is_affine:
            raise ValueError("product contains non-affine factors")
        point = np.zeros(self.n)
        cols = []
        for s, idx in self.parts:
            point[idx] = s.point
            for j in range(s.basis.shape[1]):
                col = np.zeros(self.n)
                col[idx] = s.basis[:, j]
                cols.append(col)
        basis = np.array(cols).T if cols else np.zeros((self.n, 0))
        return AffineSubspace(point, basis)


def support_function(C, y):
    """``sup_{x in C} <y, x>``; :data:`INF` along unbounded directions."""
    return C.support(y)


def normal_cone_residual(C, z, p, samples=10_000, rng=None, tol=1e-7):
    """Largest sampled value of ``<p, s - z>`` over ``s`` in ``C``.

    A value ``<= tol`` certifies (empirically) that ``p`` lies in the normal
    cone of ``C`` at ``z``.
    """
    z = _vec(z, C.dim, "z")
    p = _vec(p, C.dim, "p")
    if not C.contains(z, tol):
        raise ValueError(f"z is not in the set (distance {C.distance(z):.3e})")
    rng = np.random.default_rng(0) if rng is None else rng
    s = C.sample(rng, samples, around=z)
    s = np.vstack([s, C.project(z)[None, :]])
    return float(np.max((s - z) @ p))


# -- potentials ----------------------------------------------------------------

class _Lowering:
    """Accumulates the packed form consumed by :mod:`migdyn.kernels`."""

    def __init__(self, n):
        self.n = n
        self.Q = np.zeros((n, n))
        self.q = np.zeros(n)
        self.c = 0.0
        self.box = []      # (global idx, lo, hi, w)
        self.balls = []    # (global idx, center, radius, w)

    def add_quadratic(self, idx, A, b, c):
        self.Q[np.ix_(idx, idx)] += A
        self.q[idx] += b
        self.c += c

    def pack(self):
        rows, cols = np.nonzero(self.Q)
        data = self.Q[rows, cols]
        if self.box:
            bidx = np.concatenate([b[0] for b in self.box])
            blo = np.concatenate([b[1] for b in self.box])
            bhi = np.concatenate([b[2] for b in self.box])
            bw = np.concatenate([np.full(len(b[0]), b[3]) for b in self.box])
        else:
            bidx = np.zeros(0, dtype=np.int64)
            blo = bhi = bw = np.zeros(0)
        ptr = np.zeros(len(self.balls) + 1, dtype=np.int64)
        for k, ball in enumerate(self.balls):
            ptr[k + 1] = ptr[k] + len(ball[0])
        cat = lambda j, dt: (np.concatenate([b[j] for b in self.balls]).astype(dt)
                             if self.balls else np.zeros(0, dtype=dt))
        return (
            rows.astype(np.int64), cols.astype(np.int64), data.astype(float),
            self.q.copy(), float(self.c),
            bidx.astype(np.int64), blo.astype(float), bhi.astype(float), bw.astype(float),
            ptr, cat(0, np.int64), cat(1, float),
            np.array([b[2] for b in self.balls], dtype=float),
            np.array([b[3] for b in self.balls], dtype=float),
        )


def _lower_set_distance(low, C, idx, w):
    # w is the curvature: the lowered term is w/2 * dist^2
    if isinstance(C, Box):
        low.box.append((idx, C.lo, C.hi, w))
    elif isinstance(C, Ball):
        low.balls.append((idx, C.center, C.radius, w))
    elif isinstance(C, AffineSubspace):
        M = np.eye(C.dim) - C.basis @ C.basis.T
        Mp = M @ C.point
        low.add_quadratic(idx, w * M, w * Mp, 0.5 * w * C.point @ Mp)
    elif isinstance(C, Product):
        for s, sub in C.parts:
            _lower_set_distance(low, s, idx[sub], w)
    else:  # pragma: no cover
        raise TypeError(f"cannot lower set {type(C).__name__}")


class Potential:
    """Convex C^1 function normalized to ``min = 0``."""

    dim: int
    lower_bound = 0.0

    def value(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def conjugate(self, y):
        raise NotImplementedError(
            f"{type(self).__name__} has no closed-form conjugate; use conjugate_numeric")

    def argmin_set(self):
        raise NotImplementedError

    def scaled(self, factor):
        raise NotImplementedError

    def quadratic_form(self):
        """``(A, b)`` with ``value = 0.5 x'Ax - b'x + const``, or None."""
        return None

    @property
    def uniform_convexity_modulus(self):
        qf = self.quadratic_form()
        if qf is None:
            return None
        mu = float(np.linalg.eigvalsh(qf[0]).min())
        return f"quadratic:{mu:.17g}" if mu > EIG_NULL_TOL else None

    def lower(self):
        low = _Lowering(self.dim)
        self._lower_into(low, np.arange(self.dim))
        return low.pack()

    def _lower_into(self, low, idx):
        A, b = self.quadratic_form()
        low.add_quadratic(idx, A, b, float(self.value(np.zeros(self.dim))))

    def __call__(self, x):
        return self.value(x)


class QuadraticForm(Potential):
    """``0.5 x'Ax - b'x + c`` with ``A`` symmetric PSD, shifted to ``min = 0``."""

    def __init__(self, A, b=None, c=0.0):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n) or not np.allclose(A, A.T, atol=1e-12):
            raise ValueError("A must be a symmetric square matrix")
        b = np.zeros(n) if b is None else _vec(b, n, "b")
        lam, V = np.linalg.eigh(A)
        scale = max(1.0, float(np.abs(lam).max()) if n else 1.0)
        if lam.min(initial=0.0) < -EIG_NULL_TOL * scale:
            raise ValueError("A is not positive semidefinite")
        keep = lam > EIG_NULL_TOL * scale
        null = V[:, ~keep]
        if np.linalg.norm(null.T @ b) > 1e-9 * max(1.0, np.linalg.norm(b)):
            raise ValueError("quadratic form is unbounded below (b not in range(A))")
        self.A = 0.5 * (A + A.T)
        self.b = b
        self.c = float(c)
        self.dim = n
        self._range = V[:, keep]
        self._lam = lam[keep]
        self._null = null
        self._pinv_b = self._apply_pinv(b)
        self._shift = 0.5 * float(b @ self._pinv_b)
        self.raw_minimum = self.c - self._shift

    def _apply_pinv(self, y):
        return self._range @ ((self._range.T @ y) / self._lam)

    def value(self, x):
        x = _vec(x, self.dim)
        # spectral form about a minimizer: x'Ax - 2b'x would cancel badly
        # when A is large and x is near the argmin set
        c = (x - self._pinv_b) @ self._range
        return 0.5 * np.sum(self._lam * c * c, axis=-1)

    def gradient(self, x):
        x = _vec(x, self.dim)
        return x @ self.A - self.b

    def conjugate(self, y):
        y = _vec(y, self.dim, "y")
        w = y + self.b
        if np.linalg.norm(self._null.T @ w) > 1e-10 * max(1.0, np.linalg.norm(w)):
            return INF
        return 0.5 * float(w @ self._apply_pinv(w)) - self._shift

    def argmin_set(self):
        return AffineSubspace(self._pinv_b, self._null)

    def scaled(self, factor):
        return QuadraticForm(factor * self.A, factor * self.b, factor * self.c)

    def quadratic_form(self):
        return self.A, self.b


def zero_potential(n):
    return QuadraticForm(np.zeros((n, n)))


class Tikhonov(Potential):
    """``weight * ||x - center||^2``."""

    def __init__(self, center, weight=0.5):
        self.center = _vec(center, name="center")
        if not weight > 0:
            raise ValueError("weight must be positive")
        self.weight = float(weight)
        self.dim = self.center.shape[0]

    def value(self, x):
        d = _vec(x, self.dim) - self.center
        return self.weight * np.sum(d * d, axis=-1)

    def gradient(self, x):
        return 2 * self.weight * (_vec(x, self.dim) - self.center)

    def conjugate(self, y):
        y = _vec(y, self.dim, "y")
        return float(y @ y) / (4 * self.weight) + float(y @ self.center)

    def argmin_set(self):
        return AffineSubspace(self.center, np.zeros((self.dim, 0)))

    def scaled(self, factor):
        return Tikhonov(self.center, factor * self.weight)

    def quadratic_form(self):
        return 2 * self.weight * np.eye(self.dim), 2 * self.weight * self.center


class SqDistToSet(Potential):
    """``weight * dist(x, C)^2``."""

    def __init__(self, C, weight=0.5):
        if not weight > 0:
            raise ValueError("weight must be positive")
        self.set = C
        self.weight = float(weight)
        self.dim = C.dim

    def value(self, x):
        x = _vec(x, self.dim)
        d = x - self.set.project(x)
        return self.weight * np.sum(d * d, axis=-1)

    def gradient(self, x):
        x = _vec(x, self.dim)
        return 2 * self.weight * (x - self.set.project(x))

    def conjugate(self, y):
        y = _vec(y, self.dim, "y")
        s = self.set.support(y)
        if is_inf(s):
            return INF
        return float(y @ y) / (4 * self.weight) + s

    def argmin_set(self):
        return self.set

    def scaled(self, factor):
        return SqDistToSet(self.set, factor * self.weight)

    def quadratic_form(self):
        C = self.set.as_affine() if isinstance(self.set, Product) and self.set.is_affine else self.set
        if not isinstance(C, AffineSubspace):
            return None
        M = np.eye(self.dim) - C.basis @ C.basis.T
        return 2 * self.weight * M, 2 * self.weight * (M @ C.point)

    def _lower_into(self, low, idx):
        _lower_set_distance(low, self.set, idx, 2 * self.weight)


class SeparableSum(Potential):
    """``sum_i P_i(x[block_i])`` over a partition of the coordinates."""

    def __init__(self, parts, n=None):
        parts = [(P, np.asarray(idx, dtype=np.int64).ravel()) for P, idx in parts]
        n = sum(len(idx) for _, idx in parts) if n is None else n
        parts = [(P, _block(idx, n)) for P, idx in parts]
        for P, idx in parts:
            if P.dim != len(idx):
                raise ValueError("potential dimension does not match its index block")
        _check_partition([idx for _, idx in parts], n)
        self.parts = parts
        self.dim = n

    def value(self, x):
        x = _vec(x, self.dim)
        return sum(P.value(x[..., idx]) for P, idx in self.parts)

    def gradient(self, x):
        x = _vec(x, self.dim)
        g = np.zeros_like(x)
        for P, idx in self.parts:
            g[..., idx] = P.gradient(x[..., idx])
        return g

    def conjugate(self, y):
        y = _vec(y, self.dim, "y")
        total = 0.0
        for P, idx in self.parts:
            v = P.conjugate(y[idx])
            if is_inf(v):
                return INF
            total += v
        return total

    def argmin_set(self):
        return Product(tuple((P.argmin_set(), idx) for P, idx in self.parts), self.dim)

    def scaled(self, factor):
        return SeparableSum([(P.scaled(factor), idx) for P, idx in self.parts], self.dim)

    def quadratic_form(self):
        A = np.zeros((self.dim, self.dim))
        b = np.zeros(self.dim)
        for P, idx in self.parts:
            qf = P.quadratic_form()
            if qf is None:
                return None
            A[np.ix_(idx, idx)] = qf[0]
            b[idx] = qf[1]
        return A, b

    def _lower_into(self, low, idx):
        for P, sub in self.parts:
            P._lower_into(low, idx[sub])


class QuadraticCoupling(Potential):
    """``0.5 * ||L1 x[block1] - L2 x[block2]||^2``."""

    def __init__(self, L1, L2, block1, block2, n=None):
        L1 = np.atleast_2d(np.asarray(L1, dtype=float))
        L2 = np.atleast_2d(np.asarray(L2, dtype=float))
        if L1.shape[0] != L2.shape[0]:
            raise ValueError("L1 and L2 must map into the same space")
        block1 = np.asarray(block1, dtype=np.int64).ravel()
        block2 = np.asarray(block2, dtype=np.int64).ravel()
        n = len(block1) + len(block2) if n is None else n
        self.block1 = _block(block1, n)
        self.block2 = _block(block2, n)
        if L1.shape[1] != len(block1) or L2.shape[1] != len(block2):
            raise ValueError("operator shapes do not match the index blocks")
        if np.intersect1d(self.block1, self.block2).size:
            raise ValueError("coupling blocks overlap")
        self.L1, self.L2 = L1, L2
        self.dim = n

    def _residual(self, x):
        return x[..., self.block1] @ self.L1.T - x[..., self.block2] @ self.L2.T

    def value(self, x):
        r = self._residual(_vec(x, self.dim))
        return 0.5 * np.sum(r * r, axis=-1)

    def gradient(self, x):
        x = _vec(x, self.dim)
        r = self._residual(x)
        g = np.zeros_like(x)
        g[..., self.block1] = r @ self.L1
        g[..., self.block2] = -(r @ self.L2)
        return g

    def quadratic_form(self):
        M = np.zeros((self.L1.shape[0], self.dim))
        M[:, self.block1] = self.L1
        M[:, self.block2] -= self.L2
        return M.T @ M, np.zeros(self.dim)

    def _as_qf(self):
        return QuadraticForm(self.quadratic_form()[0])

    def conjugate(self, y):
        return self._as_qf().conjugate(y)

    def argmin_set(self):
        return self._as_qf().argmin_set()

    def scaled(self, factor):
        s = np.sqrt(factor)
        return QuadraticCoupling(s * self.L1, s * self.L2, self.block1, self.block2, self.dim)


def value(P, x):
    return P.value(x)


def gradient(P, x):
    return P.gradient(x)


def conjugate(P, y):
    return P.conjugate(y)


def conjugate_numeric(P, y, search_box, points_per_dim=None):
    """Brute-force lower estimate of ``sup_x <y,x> - P(x)`` over a box.

    A dense grid locates the best cell; bounded L-BFGS-B then polishes it.
    """
    y = _vec(y, P.dim, "y")
    lo, hi = search_box.lo, search_box.hi
    if search_box.dim != P.dim:
        raise ValueError("search box dimension mismatch")
    if np.any(hi <= lo):
        raise ValueError("search box is empty or degenerate")
    n = P.dim
    if points_per_dim is None:
        points_per_dim = {1: 4001, 2: 401, 3: 81}.get(n, 0)
    if points_per_dim:
        axes = [np.linspace(lo[i], hi[i], points_per_dim) for i in range(n)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    else:
        rng = np.random.default_rng(12345)
        grid = rng.uniform(lo, hi, size=(20_000, n))
    vals = grid @ y - P.value(grid)
    k = int(np.argmax(vals))
    best, x0 = float(vals[k]), grid[k]

    res = optimize.minimize(
        lambda x: -(x @ y - P.value(x)),
        x0,
        jac=lambda x: -(y - P.gradient(x)),
        method="L-BFGS-B",
        bounds=list(zip(lo, hi)),
        options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 1000},
    )
    return max(best, float(-res.fun))


@dataclass(frozen=True)
class ConeRay:
    """Direction ``p = -grad Psi(z)`` of the selection cone, witnessed by ``z``."""

    direction: np.ndarray
    witness: np.ndarray


def cone_rays(phi, psi, oracle_solution, tol=1e-7, samples=10_000):
    """Rays ``p`` and ``2p`` of the selection cone at a hierarchical solution."""
    C = phi.argmin_set()
    z = _vec(oracle_solution, phi.dim, "oracle_solution")
    if not C.contains(z, tol):
        raise ValueError(f"oracle solution is not in argmin(phi) (distance {C.distance(z):.3e})")
    p = -psi.gradient(z)
    residual = normal_cone_residual(C, z, p, samples=samples, tol=tol)
    if residual > tol * max(1.0, np.linalg.norm(p)):
        raise ValueError(f"-grad psi(z) is not normal to argmin(phi) at z (residual {residual:.3e})")
    return [ConeRay(p, z), ConeRay(2.0 * p, z)]
