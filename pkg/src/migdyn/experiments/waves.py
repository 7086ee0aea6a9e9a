"""Finite-difference discretization of two damped Neumann waves coupled through their difference."""

import numpy as np

from ..integrator import ProblemSpec, StepControl
from ..potentials import QuadraticCoupling, QuadraticForm

PROFILES = ("sin", "cos", "zero")


def neumann_laplacian(n):
    """Second differences with reflecting ends on ``n`` unit-spaced nodes."""
    if n < 2:
        raise ValueError("grid needs at least two points")
    D = np.diff(np.eye(n), axis=0)
    return D.T @ D


def profile(name, n, amplitude=1.0):
    """Mean-zero forcing sampled at cell midpoints."""
    s = (np.arange(n) + 0.5) / n
    if name == "sin":
        h = np.sin(2 * np.pi * s)
    elif name == "cos":
        h = np.cos(np.pi * s)
    elif name == "zero":
        h = np.zeros(n)
    else:
        raise ValueError(f"unknown profile {name!r}; expected one of {PROFILES}")
    return amplitude * (h - h.mean())


def wave_potentials(n, alpha1, alpha2, h1, h2):
    """``(phi, psi)`` on ``(u1, u2)`` in dimension ``2n``.

    ``phi = sum_i alpha_i/2 u_i'Lu_i - h_i'u_i`` shifted to minimum zero and
    ``psi = |u1 - u2|^2 / 2``.
    """
    h1 = np.asarray(h1, dtype=float)
    h2 = np.asarray(h2, dtype=float)
    if h1.shape != (n,) or h2.shape != (n,):
        raise ValueError("forcing profiles must have n entries")
    for name, h in (("h1", h1), ("h2", h2)):
        if abs(h.sum()) > 1e-10 * max(1.0, np.abs(h).sum()):
            raise ValueError(f"forcing {name} violates the Neumann compatibility condition")
    if not (alpha1 > 0 and alpha2 > 0):
        raise ValueError("alpha1 and alpha2 must be positive")
    L = neumann_laplacian(n)
    A = np.zeros((2 * n, 2 * n))
    A[:n, :n] = alpha1 * L
    A[n:, n:] = alpha2 * L
    phi = QuadraticForm(A, np.concatenate([h1, h2]))
    eye = np.eye(n)
    psi = QuadraticCoupling(eye, eye, np.arange(n), np.arange(n, 2 * n), 2 * n)
    return phi, psi


def discretize_waves(n, alpha1, alpha2, h1, h2, gamma, schedule, horizon,
                     u0=None, v0=None, control=None, output_dt=None):
    phi, psi = wave_potentials(n, alpha1, alpha2, h1, h2)
    u0 = np.zeros(2 * n) if u0 is None else u0
    v0 = np.zeros(2 * n) if v0 is None else v0
    return ProblemSpec(phi, psi, gamma, schedule, u0, v0, horizon,
                       control=control or StepControl(), output_dt=output_dt)
