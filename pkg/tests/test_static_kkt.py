import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfturnpike.errors import DegeneracyError, ModelAssumptionError, NonconvergenceError
from mfturnpike.model import LQMeanField, NonlinearAttraction, ScalarLQ
from mfturnpike.static_kkt import (NewtonOptions, StationaryTriple, constraint_differential,
                                   eulerian_kkt_residual, lagrangian_cost, solve_stationary,
                                   surjectivity_diagnostics, transfer_eulerian_to_lagrangian,
                                   transfer_lagrangian_to_eulerian)

from fixtures import ControlOnlyCost, SignedControl, ZeroModel
from oracles import fd_jacobian


def _guess(N, d, m, val):
    return np.full((N, d), val), np.full((N, d), val), np.full((N, m), val)


def test_scalar_origin():
    tri = solve_stationary(ScalarLQ(1, 1), _guess(1, 1, 1, 0.1))
    assert tri.residual <= 1e-10
    assert np.allclose(tri.joint(), 0.0, atol=1e-12)


def test_stable_lq_without_interaction_rests_at_origin():
    p = LQMeanField(A=-np.eye(2), Abar=np.zeros((2, 2)), B=np.eye(2), Q=np.eye(2), Qbar=np.zeros((2, 2)),
                    R=np.eye(2))
    tri = solve_stationary(p, _guess(3, 2, 2, 0.3))
    assert np.allclose(tri.joint(), 0.0, atol=1e-12)


def test_refeeding_a_solution_is_a_fixed_point():
    p = NonlinearAttraction(d=2, gamma=0.5, r=[0.3, -0.2])
    rng = np.random.default_rng(0)
    tri = solve_stationary(p, (rng.normal(size=(4, 2)) * 0.3, np.zeros((4, 2)), np.zeros((4, 2))))
    again = solve_stationary(p, (tri.X, tri.Psi, tri.U))
    assert again.iterations <= 1
    assert np.allclose(again.joint(), tri.joint(), atol=1e-10)


def test_singular_jacobian_is_reported():
    # no dynamics and no state cost: the state is undetermined
    with pytest.raises(DegeneracyError):
        solve_stationary(ControlOnlyCost(), _guess(2, 1, 1, 0.2))


def test_iteration_cap():
    p = NonlinearAttraction(d=1, gamma=0.5, r=[2.0])
    with pytest.raises(NonconvergenceError):
        X = np.array([[5.0], [-3.0], [0.5]])
        solve_stationary(p, (X, np.zeros((3, 1)), np.zeros((3, 1))), NewtonOptions(tol=1e-300, max_iter=2))


def test_constraint_differential():
    D = constraint_differential(ScalarLQ(1, 1), np.zeros((1, 1)), np.zeros((1, 1)))
    assert D.matrix.tolist() == [[1.0, 1.0]]
    assert not np.any(D.kernel)
    p = LQMeanField(A=np.eye(2), Abar=[[0.5, 0.1], [0.0, 0.2]], B=np.eye(2), Q=np.eye(2),
                    Qbar=np.zeros((2, 2)), R=np.eye(2))
    rng = np.random.default_rng(1)
    N = 3
    X, U = rng.normal(size=(N, 2)), rng.normal(size=(N, 2))
    D = constraint_differential(p, X, U)
    blk = D.kernel.reshape(N, 2, N, 4)
    assert np.allclose(blk[:, :, :, :2], np.broadcast_to(p.Abar[None, :, None, :] / N, (N, 2, N, 2)))

    def vmap(z):
        zz = z.reshape(N, 4)
        return p.v(zz[:, :2], zz[:, :2], zz[:, 2:]).ravel()

    J = fd_jacobian(vmap, np.hstack([X, U]).ravel())
    assert np.allclose(D.matrix, J, atol=1e-6)


def test_surjectivity_examples():
    z = np.zeros((1, 1))
    assert surjectivity_diagnostics(ScalarLQ(1, 1), z, z).pointwise_min == pytest.approx(np.sqrt(2))
    rep = surjectivity_diagnostics(ScalarLQ(0, 0), z, z)
    assert rep.pointwise_min == 0.0 and not rep.passed
    assert surjectivity_diagnostics(ScalarLQ(0, -3), z, z).pointwise_min == pytest.approx(3.0)


def test_transfer_examples():
    p = ControlOnlyCost()
    X = np.array([[1.0], [1.0]])
    tr = transfer_lagrangian_to_eulerian(p, X, np.array([[-1.0], [1.0]]))
    assert tr.uE.ravel().tolist() == [0.0]
    assert tr.cost_lagrangian == 1.0 and tr.cost_eulerian == 0.0
    tr = transfer_lagrangian_to_eulerian(p, X, np.array([[0.5], [0.5]]))
    assert tr.cost_lagrangian == tr.cost_eulerian
    Xd = np.array([[0.0], [1.0], [2.0]])
    tr = transfer_eulerian_to_lagrangian(p, Xd, [3.0, 4.0, 5.0])
    assert tr.U.ravel().tolist() == [3.0, 4.0, 5.0]
    assert tr.cost_eulerian == pytest.approx(tr.cost_lagrangian, abs=1e-12)
    back = transfer_lagrangian_to_eulerian(p, Xd, tr.U)
    assert np.array_equal(back.uE, tr.uE)


def test_transfer_rejects_non_affine_model():
    with pytest.raises(ModelAssumptionError):
        transfer_lagrangian_to_eulerian(SignedControl(), np.ones((2, 1)), np.array([[-1.0], [1.0]]))


def test_lq_transfer_cost_equality():
    rng = np.random.default_rng(2)
    p = LQMeanField(A=rng.normal(size=(2, 2)), Abar=rng.normal(size=(2, 2)), B=np.eye(2), Q=np.eye(2),
                    Qbar=np.eye(2), R=2 * np.eye(2))
    X = rng.normal(size=(5, 2))
    tr = transfer_eulerian_to_lagrangian(p, X, rng.normal(size=(5, 2)))
    assert abs(tr.cost_eulerian - tr.cost_lagrangian) <= 1e-12


def test_eulerian_residuals_at_solution():
    tri = solve_stationary(ScalarLQ(1, 1), _guess(1, 1, 1, 0.1))
    rep = eulerian_kkt_residual(ScalarLQ(1, 1), tri)
    assert rep.multiplier <= 1e-9 and rep.hamiltonian <= 1e-9
    assert abs(rep.multiplier - rep.state_costate) <= 1e-8


def test_eulerian_residual_grows_linearly_under_costate_perturbation():
    p = LQMeanField(A=[[0.5]], Abar=[[-0.8]], B=[[1.0]], Q=[[1.0]], Qbar=[[0.5]], R=[[1.0]], r=[0.5])
    tri = solve_stationary(p, _guess(3, 1, 1, 0.0))
    vals = []
    for delta in (1e-3, 2e-3, 4e-3):
        Psi = tri.Psi.copy()
        Psi[0] += delta
        vals.append(eulerian_kkt_residual(p, StationaryTriple(tri.X, Psi, tri.U)).multiplier)
    assert vals[0] > 0
    assert vals[1] / vals[0] == pytest.approx(2.0, rel=1e-6)
    assert vals[2] / vals[0] == pytest.approx(4.0, rel=1e-6)


def test_zero_problem_has_zero_residual():
    z = np.zeros((2, 1))
    assert eulerian_kkt_residual(ZeroModel(), StationaryTriple(z, z, z)).multiplier == 0.0


def test_nonconvex_control_cost_rejected():
    with pytest.raises(ModelAssumptionError):
        solve_stationary(ZeroModel(), _guess(1, 1, 1, 0.0))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_jensen_inequality(seed):
    rng = np.random.default_rng(seed)
    p = ControlOnlyCost()
    X = rng.integers(0, 3, size=(6, 1)).astype(float)
    U = rng.normal(size=(6, 1))
    tr = transfer_lagrangian_to_eulerian(p, X, U)
    assert tr.cost_eulerian <= tr.cost_lagrangian + 1e-12
    assert lagrangian_cost(p, X, U) == tr.cost_lagrangian


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_newton_recovers_stationary_point_and_eulerian_residual(seed):
    rng = np.random.default_rng(seed)
    p = NonlinearAttraction(d=1, gamma=0.4, r=[0.3])
    N = 4
    tri = solve_stationary(p, (0.2 * rng.normal(size=(N, 1)), np.zeros((N, 1)), np.zeros((N, 1))))
    assert tri.residual <= 1e-10
    assert eulerian_kkt_residual(p, tri).multiplier <= 10 * 1e-10 * max(1.0, np.sqrt(N))
