import numpy as np
import pytest
import scipy.sparse as sp

from modules.kkt_solver import KktFactorizationError, QuasiDefiniteKkt, hessian_matrix


def test_hessian_matrix_places_blocks():
    dense = np.array([[2.0, 1.0], [1.0, 3.0]])
    H = hessian_matrix(6, [slice(1, 3), slice(4, 6)], [np.array([5.0, 6.0]), dense]).toarray()
    expected = np.zeros((6, 6))
    expected[1, 1], expected[2, 2] = 5.0, 6.0
    expected[4:6, 4:6] = dense
    assert np.array_equal(H, expected)
    assert hessian_matrix(3, [], []).nnz == 0


@pytest.mark.parametrize("solver", ["superlu", "scipy"])
def test_solution_matches_dense_solve(solver, rng):
    n, m = 8, 3
    A = sp.random(m, n, density=0.6, random_state=7, format="csr") + sp.eye(m, n, format="csr")
    B = rng.standard_normal((n, n))
    H = sp.csc_matrix(B @ B.T + 0.1 * np.eye(n))
    kkt = QuasiDefiniteKkt(A, regularization=1e-10, refinement_steps=5, solver=solver)
    delta = kkt.factor_with_retries(H)
    assert delta == 1e-10
    rx, ry = rng.standard_normal(n), rng.standard_normal(m)
    x, y = kkt.solve(rx, ry)
    K = np.block([[H.toarray(), A.T.toarray()], [A.toarray(), np.zeros((m, m))]])
    expected = np.linalg.solve(K, np.concatenate([rx, ry]))
    assert np.allclose(np.concatenate([x, y]), expected, atol=1e-8)


def test_semidefinite_hessian_with_free_variables(rng):
    # zero rows in H, as for free variables; A has full row rank
    A = sp.csr_matrix(np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0]]))
    H = hessian_matrix(3, [slice(2, 3)], [np.array([4.0])])
    kkt = QuasiDefiniteKkt(A, regularization=1e-9, refinement_steps=10)
    kkt.factor_with_retries(H)
    x, y = kkt.solve(np.array([1.0, 0.0, 2.0]), np.array([0.5, 1.0]))
    K0 = sp.bmat([[H, A.T], [A, None]]).toarray()
    residual = K0 @ np.concatenate([x, y]) - np.array([1.0, 0.0, 2.0, 0.5, 1.0])
    assert np.linalg.norm(residual) < 1e-6


def test_no_equality_rows():
    kkt = QuasiDefiniteKkt(sp.csr_matrix((0, 2)))
    kkt.factor(sp.diags([2.0, 4.0]).tocsc(), 0.0)
    x, y = kkt.solve(np.array([2.0, 2.0]), np.zeros(0))
    assert np.allclose(x, [1.0, 0.5]) and y.size == 0


def test_singular_system_raises():
    kkt = QuasiDefiniteKkt(sp.csr_matrix((0, 2)), regularization=0.0)
    with pytest.raises(KktFactorizationError):
        kkt.factor_with_retries(sp.csc_matrix((2, 2)), retries=1)
