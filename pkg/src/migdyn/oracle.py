"""Reference solutions of the hierarchical problem ``min {psi(z) : z in argmin phi}``.

Everything here is computed without time integration, so it can serve as
ground truth for the long-time limits of the dynamics.
"""

from dataclasses import dataclass, field

import numpy as np

from .potentials import AffineSubspace, Product, normal_cone_residual

PG_TOL = 1e-10
PG_MAX_ITER = 1_000_000
NULL_TOL = 1e-10


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class HierarchicalSolution:
    z_star: np.ndarray
    psi_min: float
    method: str
    certificate: dict = field(default_factory=dict)
    unique: bool = True

    @property
    def kkt_residual(self):
        return max(self.certificate.values())


def argmin_set_of(phi):
    try:
        C = phi.argmin_set()
    except NotImplementedError as exc:
        raise OracleError(f"cannot extract argmin set from {type(phi).__name__}") from exc
    if isinstance(C, Product) and C.is_affine:
        return C.as_affine()
    return C


def certificate(C, psi, z, samples=10_000, seed=0):
    """Stationarity, feasibility and sampled normal-cone residuals at ``z``."""
    g = psi.gradient(z)
    p = -g
    scale = max(1.0, float(np.linalg.norm(p)))
    rng = np.random.default_rng(seed)
    nc = normal_cone_residual(C, C.project(z), p, samples=samples, rng=rng, tol=np.inf)
    return {
        "stationarity": float(np.linalg.norm(z - C.project(z - g))),
        "feasibility": float(C.distance(z)),
        "normal_cone": max(0.0, float(nc)) / scale,
    }


def lipschitz_constant(A, tol=1e-10, max_iter=10_000, seed=0):
    """Largest eigenvalue of the PSD matrix ``A`` by power iteration."""
    n = A.shape[0]
    v = np.random.default_rng(seed).normal(size=n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = A @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        new = float(v @ w)
        v = w / nw
        if abs(new - lam) <= tol * max(1.0, abs(new)):
            return new
        lam = new
    return lam


def _is_zero(psi):
    qf = psi.quadratic_form()
    return qf is not None and not np.any(qf[0]) and not np.any(qf[1])


def _kkt_affine(C, A, b):
    B = C.basis
    if B.shape[1] == 0:
        return C.point.copy(), True
    H = B.T @ A @ B
    r = B.T @ (b - A @ C.point)
    y, *_ = np.linalg.lstsq(H, r, rcond=None)
    lam = np.linalg.eigvalsh(H)
    unique = bool(lam.min() > NULL_TOL * max(1.0, lam.max()))
    return C.point + B @ y, unique


def _projected_gradient(C, psi, A, z0):
    L = lipschitz_constant(A)
    if L <= 0:
        return C.project(z0), 0
    z = C.project(z0)
    for it in range(PG_MAX_ITER):
        z_new = C.project(z - psi.gradient(z) / L)
        if L * np.linalg.norm(z_new - z) <= PG_TOL:
            return z_new, it + 1
        z = z_new
    raise OracleError("projected gradient did not converge within the iteration cap")


def _locally_unique(C, psi, A, z, step=1e-6):
    lam, V = np.linalg.eigh(A)
    null = V[:, lam <= NULL_TOL * max(1.0, lam.max(initial=0.0))]
    g = psi.gradient(z)
    for d in null.T:
        if abs(g @ d) > 1e-8:
            continue
        for sgn in (1.0, -1.0):
            if C.contains(z + sgn * step * d, tol=1e-12):
                return False
    return True


def solve_hierarchical(phi, psi, x0=None, samples=10_000, seed=0):
    """Minimize ``psi`` over ``argmin phi``.

    Dispatch: closed-form projection when ``psi = 0`` (non-unique; the
    projection of ``x0`` is returned), a KKT linear solve for affine sets and
    quadratic ``psi``, projected gradient for other sets and quadratic
    ``psi``, and grid search in dimension at most three otherwise.
    """
    C = argmin_set_of(phi)
    n = phi.dim
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    qf = psi.quadratic_form()
    if _is_zero(psi):
        z = C.project(x0)
        method, unique = "closed-form projection", isinstance(C, AffineSubspace) and C.bounded
    elif qf is not None and isinstance(C, AffineSubspace):
        z, unique = _kkt_affine(C, *qf)
        method = "KKT linear solve"
    elif qf is not None:
        z, _ = _projected_gradient(C, psi, qf[0], x0)
        method, unique = "projected-gradient", _locally_unique(C, psi, qf[0], z)
    elif n <= 3:
        z = brute_force(phi, psi)
        method, unique = "grid brute force", True
    else:
        raise OracleError("no oracle for a non-quadratic psi in dimension > 3")
    return HierarchicalSolution(z, float(psi.value(z)), method,
                                certificate(C, psi, z, samples=samples, seed=seed), bool(unique))


def brute_force(phi, psi, radius=10.0, resolution=1e-3, points=41, descent_iters=200):
    """Coarse-to-fine grid search of ``psi`` over ``argmin phi`` (dimension <= 3).

    Grid points in a box around the set are projected onto it; the grid is
    then re-centred on the best point and shrunk until its spacing is below
    ``resolution / 10``, and finally polished by projected gradient steps
    with backtracking.
    """
    C = argmin_set_of(phi)
    n = phi.dim
    if n > 3:
        raise OracleError("grid brute force is limited to dimension <= 3")
    center = C.project(np.zeros(n))
    half = radius * (1.0 + float(np.max(np.abs(center))))
    best = center
    while True:
        axes = [np.linspace(c - half, c + half, points) for c in best]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        cand = C.project(grid)
        vals = psi.value(cand)
        best = cand[int(np.argmin(vals))]
        spacing = 2 * half / (points - 1)
        if spacing <= resolution / 10:
            break
        half = 2 * spacing
    z, fz, step = best, float(psi.value(best)), 1.0
    for _ in range(descent_iters):
        g = psi.gradient(z)
        while step > 1e-12:
            cand = C.project(z - step * g)
            fc = float(psi.value(cand))
            if fc <= fz - 1e-4 * np.dot(g, z - cand):
                break
            step *= 0.5
        else:
            break
        if np.linalg.norm(cand - z) < 1e-14:
            break
        z, fz, step = cand, fc, min(1.0, 2 * step)
    return z


# -- coupled Neumann problems ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class NeumannReference:
    """Mean-zero equilibria ``u_bar[i]`` of ``alpha_i L u = h_i``.

    The coupled limit is ``(u_bar[0] + r, u_bar[1] + r)`` for a common
    constant ``r``: the coupling term forces equal means.
    """

    u_bar: np.ndarray
    coupling_min: float

    def common_mean(self, u0, v0, gamma):
        """Limit of the shared mean for initial data ``u0, v0`` (shape ``(2, n)``).

        The total mean obeys ``m'' + gamma m' = 0`` because every force has
        zero total mean.
        """
        u0 = np.asarray(u0, dtype=float)
        v0 = np.asarray(v0, dtype=float)
        total = u0.mean(axis=1).sum() + v0.mean(axis=1).sum() / gamma
        return 0.5 * total

    def limit(self, r):
        return self.u_bar + r


def neumann_laplacian_dense(n):
    """Unit-spacing 1-D Neumann graph Laplacian as a dense matrix."""
    if n < 2:
        raise ValueError("grid needs at least two points")
    L = 2.0 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
    L[0, 0] = L[-1, -1] = 1.0
    return L


def neumann_reference(n, alphas, hs, tol=1e-10):
    """Solve each Neumann problem on the mean-zero subspace by a bordered system."""
    hs = np.asarray(hs, dtype=float).reshape(len(alphas), n)
    L = neumann_laplacian_dense(n)
    out = np.empty_like(hs)
    for i, (a, h) in enumerate(zip(alphas, hs)):
        if not a > 0:
            raise ValueError("alpha must be positive")
        if abs(h.sum()) > tol * max(1.0, np.abs(h).sum()):
            raise ValueError("forcing violates the Neumann compatibility condition (nonzero mean)")
        K = np.zeros((n + 1, n + 1))
        K[:n, :n] = a * L
        K[:n, n] = K[n, :n] = 1.0
        rhs = np.append(h, 0.0)
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError as exc:
            raise OracleError("singular Neumann system") from exc
        out[i] = sol[:n]
    d = out[0] - out[1]
    return NeumannReference(out, 0.5 * float(d @ d))
