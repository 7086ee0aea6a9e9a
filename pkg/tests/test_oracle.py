import numpy as np
import pytest

from migdyn.oracle import OracleError, brute_force, neumann_reference, solve_hierarchical
from migdyn.potentials import (AffineSubspace, Ball, Box, QuadraticCoupling, SeparableSum,
                               SqDistToSet, Tikhonov, zero_potential)

AXIS = AffineSubspace.spanned(np.zeros(2), np.array([[0.0, 1.0]]))


def intervals():
    return SeparableSum([(SqDistToSet(Box(np.zeros(1), np.ones(1)), 0.5), [0]),
                         (SqDistToSet(Box(np.array([2.0]), np.array([3.0])), 0.5), [1])])


def test_projection_of_the_tikhonov_center():
    sol = solve_hierarchical(SqDistToSet(AXIS, 0.5), Tikhonov(np.array([2.0, 3.0]), 0.5))
    np.testing.assert_allclose(sol.z_star, [0.0, 3.0], atol=1e-12)
    assert sol.psi_min == pytest.approx(2.0)
    assert sol.unique and sol.kkt_residual <= 1e-8


def test_closest_pair_of_intervals():
    psi = QuadraticCoupling(np.eye(1), np.eye(1), [0], [1], 2)
    sol = solve_hierarchical(intervals(), psi)
    np.testing.assert_allclose(sol.z_star, [1.0, 2.0], atol=1e-8)
    assert sol.psi_min == pytest.approx(0.5)
    assert sol.kkt_residual <= 1e-8
    np.testing.assert_allclose(brute_force(intervals(), psi), [1.0, 2.0], atol=2e-3)


def test_zero_psi_is_not_unique():
    sol = solve_hierarchical(SqDistToSet(AXIS, 0.5), zero_potential(2), x0=np.array([4.0, -2.0]))
    np.testing.assert_allclose(sol.z_star, [0.0, -2.0])
    assert sol.psi_min == 0.0 and not sol.unique


@pytest.mark.parametrize("C", [
    Box(np.array([-1.0, 0.0]), np.array([1.0, 0.5])),
    Ball(np.array([0.5, -0.5]), 1.0),
    AffineSubspace.spanned(np.array([1.0, 0.0]), np.array([[1.0, 1.0]])),
], ids=["box", "ball", "line"])
def test_brute_force_agrees_with_the_structured_solver(C):
    phi, psi = SqDistToSet(C, 0.5), Tikhonov(np.array([2.0, 3.0]), 0.5)
    sol = solve_hierarchical(phi, psi)
    assert sol.kkt_residual <= 1e-8
    assert np.linalg.norm(brute_force(phi, psi) - sol.z_star) <= 2e-3


def test_brute_force_is_limited_to_small_dimensions():
    phi = SqDistToSet(Box(np.zeros(4), np.ones(4)), 0.5)
    with pytest.raises(OracleError):
        brute_force(phi, Tikhonov(np.zeros(4), 0.5))


def test_neumann_reference_symmetry_and_equations():
    n = 16
    s = np.arange(n) + 0.5
    h = np.cos(np.pi * s / n)
    ref = neumann_reference(n, (2.0, 2.0), (h, h))
    np.testing.assert_allclose(ref.u_bar[0], ref.u_bar[1])
    assert ref.coupling_min == 0.0
    np.testing.assert_allclose(ref.u_bar.mean(axis=1), 0.0, atol=1e-12)
    L = 2.0 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
    L[0, 0] = L[-1, -1] = 1.0
    np.testing.assert_allclose(2.0 * L @ ref.u_bar[0], h, atol=1e-12)


def test_neumann_reference_rejects_incompatible_forcing():
    with pytest.raises(ValueError):
        neumann_reference(8, (1.0, 1.0), (np.ones(8), np.zeros(8)))


def test_common_mean_follows_total_momentum():
    ref = neumann_reference(4, (1.0, 1.0), (np.zeros(4), np.zeros(4)))
    u0 = np.array([[1.0] * 4, [3.0] * 4])
    v0 = np.array([[0.5] * 4, [0.0] * 4])
    assert ref.common_mean(u0, v0, gamma=0.5) == pytest.approx(0.5 * (4.0 + 1.0))
