import numpy as np
import pytest

from prenmf.cllsolve import (CllsProblem, Infeasible, InfeasiblePoint,
                             MaxIterations, kkt_check, nnls_columns,
                             preprocess_matrix, solve_column)
from oracles import grid_column_oracle, nnls_oracle, qp_column_oracle

from conftest import random_nonneg


class TestSolveColumn:
    def test_identity_column(self):
        # Any positive b only raises the objective; the slack constraint
        # pins every coefficient at zero.
        sol = solve_column(CllsProblem(np.eye(3), 0))
        np.testing.assert_allclose(sol.b, 0.0)
        assert sol.objective == pytest.approx(1.0)
        assert sol.kkt_residual <= 1e-8

    def test_nested_squares_column(self, nested_squares):
        # Frozen value confirmed by both reference solvers below: the two
        # adjacent columns enter with weight 3/8 each.
        sol = solve_column(CllsProblem(nested_squares, 0))
        expected = np.array([0.0, 3.0 / 8.0, 0.0, 3.0 / 8.0])
        np.testing.assert_allclose(sol.b, expected, atol=1e-10)
        np.testing.assert_allclose(nested_squares @ sol.b, 3.0, atol=1e-9)
        assert sol.objective == pytest.approx(8.0, abs=1e-9)

        b_qp, f_qp = qp_column_oracle(nested_squares, 0)
        assert f_qp == pytest.approx(sol.objective, abs=1e-6)
        b_grid, f_grid = grid_column_oracle(nested_squares, 0,
                                            np.linspace(0, 1, 33))
        assert sol.objective <= f_grid + 1e-9

    def test_epsilon_relaxed_noisy(self, noisy):
        # With a 1% slack the small positive entry stops blocking the
        # subtraction: column 0 loses (essentially) all of column 1.
        sol = solve_column(CllsProblem(noisy, 0, epsilon=0.01))
        P0 = noisy[:, 0] - noisy @ sol.b
        np.testing.assert_allclose(P0, [-9.999e-3, 1.0, 9.999e-5],
                                   atol=5e-6)
        sol1 = solve_column(CllsProblem(noisy, 1, epsilon=0.01))
        P1 = noisy[:, 1] - noisy @ sol1.b
        np.testing.assert_allclose(P1, [0.01, -0.01, 0.99], atol=1e-9)

    def test_zero_target_column(self):
        M = np.array([[0.0, 1.0], [0.0, 2.0]])
        sol = solve_column(CllsProblem(M, 0))
        np.testing.assert_allclose(sol.b, 0.0)
        assert sol.objective == 0.0

    def test_b_i_stays_zero(self, rng):
        M = random_nonneg(rng, 6, 5)
        for i in range(5):
            sol = solve_column(CllsProblem(M, i))
            assert sol.b[i] == 0.0

    def test_epsilon_bounds_validated(self):
        with pytest.raises(ValueError):
            CllsProblem(np.eye(2), 0, epsilon=1.0)
        with pytest.raises(ValueError):
            CllsProblem(np.eye(2), 0, epsilon=-0.1)

    def test_infeasible_start_detected(self):
        M = np.array([[-1.0, 1.0], [1.0, 1.0]])
        with pytest.raises(Infeasible):
            solve_column(CllsProblem(M, 0))

    def test_iteration_cap(self, nested_squares):
        with pytest.raises(MaxIterations):
            solve_column(CllsProblem(nested_squares, 0), max_iter=1)

    def test_matches_qp_oracle_on_random(self, rng):
        for _ in range(10):
            M = random_nonneg(rng, 5, 4)
            i = int(rng.integers(4))
            sol = solve_column(CllsProblem(M, i))
            _, f_oracle = qp_column_oracle(M, i)
            assert sol.objective <= f_oracle + 1e-6 * (1 + f_oracle)


class TestKktCheck:
    def test_solver_output_certified(self, nested_squares):
        for i in range(4):
            p = CllsProblem(nested_squares, i)
            sol = solve_column(p)
            assert kkt_check(p, sol.b) <= 1e-8

    def test_origin_not_optimal_on_nested_squares(self, nested_squares):
        # The projected gradient at b = 0 is macroscopically nonzero.
        p = CllsProblem(nested_squares, 0)
        assert kkt_check(p, np.zeros(4)) > 0.1

    def test_closed_form_optimum_certified(self, nested_squares):
        p = CllsProblem(nested_squares, 0)
        b = np.array([0.0, 3.0 / 8.0, 0.0, 3.0 / 8.0])
        assert kkt_check(p, b) <= 1e-8

    def test_infeasible_point_rejected(self, nested_squares):
        p = CllsProblem(nested_squares, 0)
        with pytest.raises(InfeasiblePoint):
            kkt_check(p, np.array([0.0, 10.0, 0.0, 0.0]))
        with pytest.raises(InfeasiblePoint):
            kkt_check(p, np.array([0.5, 0.0, 0.0, 0.0]))


class TestPreprocessMatrix:
    def test_nested_squares_circulant(self, nested_squares):
        B, sols = preprocess_matrix(nested_squares)
        C = np.array([[0, 1, 0, 1], [1, 0, 1, 0],
                      [0, 1, 0, 1], [1, 0, 1, 0]], dtype=float)
        np.testing.assert_allclose(B, 0.375 * C, atol=1e-9)
        assert all(s.kkt_residual <= 1e-8 for s in sols)

    def test_structure(self, rng):
        M = random_nonneg(rng, 6, 5)
        B, _ = preprocess_matrix(M)
        assert B.min() >= 0.0
        np.testing.assert_allclose(np.diag(B), 0.0)

    def test_identity_unchanged(self):
        B, _ = preprocess_matrix(np.eye(4))
        np.testing.assert_allclose(B, 0.0)

    def test_circulant_unchanged(self):
        # Each column already has a zero wherever the others are positive.
        M = np.ones((3, 3)) - np.eye(3)
        B, _ = preprocess_matrix(M)
        np.testing.assert_allclose(B, 0.0, atol=1e-12)
        np.testing.assert_allclose(M - M @ B, M, atol=1e-12)

    def test_parallel_workers_match(self, rng):
        M = random_nonneg(rng, 8, 6)
        B1, _ = preprocess_matrix(M, workers=1)
        B4, _ = preprocess_matrix(M, workers=4)
        np.testing.assert_array_equal(B1, B4)

    def test_feasibility_margin(self, rng):
        for _ in range(5):
            M = random_nonneg(rng, 7, 5)
            B, _ = preprocess_matrix(M)
            assert (M - M @ B).min() >= -1e-9 * M.max()


class TestInvariants:
    def test_fitted_vector_unique_across_pivot_orders(self, rng):
        # Different tie-breaking orders may return different coefficient
        # vectors, but the fitted vector M b is the projection onto a
        # convex set and must agree.
        for _ in range(50):
            m, n = int(rng.integers(4, 8)), int(rng.integers(4, 7))
            M = random_nonneg(rng, m, n)
            i = int(rng.integers(n))
            p = CllsProblem(M, i)
            base = None
            for trial in range(3):
                order = rng.permutation(n - 1 + m)
                sol = solve_column(p, tie_order=order)
                fitted = M @ sol.b
                if base is None:
                    base = fitted
                else:
                    np.testing.assert_allclose(
                        fitted, base,
                        atol=1e-8 * np.linalg.norm(M[:, i]))

    def test_objective_monotone_in_epsilon(self, rng):
        for _ in range(10):
            M = random_nonneg(rng, 6, 5)
            i = int(rng.integers(5))
            objs = [solve_column(CllsProblem(M, i, epsilon=e)).objective
                    for e in (0.0, 0.05, 0.2)]
            assert objs[1] <= objs[0] + 1e-10
            assert objs[2] <= objs[1] + 1e-10

    def test_beats_grid_search(self, rng):
        # Coarse grid over 4x4 problems: the active-set optimum is at least
        # as good as any feasible grid point.
        grid = np.linspace(0.0, 1.0, 9)
        for _ in range(8):
            M = (rng.integers(1, 6, size=(4, 4))).astype(float)
            if np.linalg.matrix_rank(M) < 2:
                continue
            i = int(rng.integers(4))
            sol = solve_column(CllsProblem(M, i))
            _, f_grid = grid_column_oracle(M, i, grid)
            assert sol.objective <= f_grid + 1e-9


class TestNnlsColumns:
    def test_matches_reference(self, rng):
        U = rng.random((8, 4))
        M = rng.random((8, 6))
        V = nnls_columns(U, M)
        for j in range(6):
            x_ref, _ = nnls_oracle(U, M[:, j])
            np.testing.assert_allclose(
                U @ V[:, j], U @ x_ref, atol=1e-8 * np.linalg.norm(M[:, j]))
        assert V.min() >= 0.0

    def test_square_full_rank_recovers_identity(self, rng):
        M = random_nonneg(rng, 5, 5)
        V = nnls_columns(M, M)
        np.testing.assert_allclose(V, np.eye(5), atol=1e-8)

    def test_zero_column_gives_zero_row(self, rng):
        U = rng.random((6, 3))
        U[:, 1] = 0.0
        M = rng.random((6, 4))
        V = nnls_columns(U, M)
        np.testing.assert_allclose(V[1, :], 0.0, atol=1e-12)
