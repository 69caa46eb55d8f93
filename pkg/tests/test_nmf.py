import numpy as np
import pytest

from prenmf import nmf
from prenmf.cllsolve import preprocess_matrix
from prenmf.preprocessing import apply_alpha

A_CONST = np.sqrt(2.0) - 1.0
ALPHA_BAR = (4.0 * A_CONST - 1.0) / (3.0 * A_CONST)


def separable_instance(rng, m, n, r):
    W = rng.random((m, r)) + 0.05
    H = np.hstack([np.eye(r), rng.random((r, n - r)) + 0.05])
    return W @ H[:, rng.permutation(n)]


class TestAhals:
    def test_identity_recovery(self):
        pair = nmf.ahals(np.eye(3), 3, seed=0, max_outer=500)
        assert pair.rel_error <= 1e-8

    def test_exact_rank2_recovery(self, rng):
        W = rng.random((12, 2))
        H = rng.random((2, 9))
        best = min((nmf.ahals(W @ H, 2, seed=s, max_outer=800)
                    for s in range(10)), key=lambda p: p.rel_error)
        assert best.rel_error <= 1e-6

    def test_objective_monotone(self, rng):
        M = rng.random((10, 8))
        pair = nmf.ahals(M, 3, seed=2, max_outer=300)
        hist = pair.objective_history
        assert np.all(np.diff(hist) <= 1e-10 * hist[0])

    def test_handles_negative_entries(self, rng):
        M = rng.random((8, 8))
        M[3, 4] = -1.5 * np.linalg.norm(np.maximum(M, 0.0))
        pair = nmf.ahals(M, 3, seed=1, max_outer=2000)
        # A sufficiently negative entry forces the reconstruction to zero
        # there at any stationary point.
        assert (pair.U @ pair.V)[3, 4] == 0.0
        assert pair.U.min() >= 0.0 and pair.V.min() >= 0.0

    def test_scale_neutral(self, rng):
        M = rng.random((12, 10)) @ rng.random((10, 12))
        p1 = nmf.ahals(M, 3, seed=3, max_outer=500)
        p2 = nmf.ahals(4.2 * M, 3, seed=3, max_outer=500)
        assert abs(p1.rel_error - p2.rel_error) <= 1e-8

    def test_rank_warning(self, rng):
        with pytest.warns(nmf.RankTooLargeWarning):
            nmf.ahals(rng.random((3, 3)), 5, seed=0, max_outer=10)

    def test_error_recomputable(self, rng):
        M = rng.random((9, 7))
        pair = nmf.ahals(M, 3, seed=0, max_outer=200)
        recomputed = np.linalg.norm(M - pair.U @ pair.V) / np.linalg.norm(M)
        assert pair.rel_error == pytest.approx(recomputed, abs=1e-12)


class TestSnmf:
    def test_small_mu_matches_plain(self, rng):
        M = rng.random((20, 20))
        base = min((nmf.ahals(M, 5, seed=s, max_outer=400) for s in range(3)),
                   key=lambda p: p.rel_error)
        cfg = nmf.SnmfConfig(mu=np.full(5, 1e-8 * M.max()), max_outer=400,
                             seed=base.seed)
        sp = nmf.snmf(M, 5, cfg)
        assert sp.rel_error <= base.rel_error * 1.01 + 1e-6

    def test_large_mu_spikes(self, rng):
        M = rng.random((20, 15)) + 0.1
        m = 20
        cfg = nmf.SnmfConfig(mu=np.full(4, 10 * M.max() * m), max_outer=150,
                             seed=0)
        pair = nmf.snmf(M, 4, cfg)
        assert pair.s_U >= 0.9 * (1.0 - 1.0 / m)
        np.testing.assert_allclose(pair.U.max(axis=0), 1.0, atol=1e-12)

    def test_identity_with_small_mu(self):
        cfg = nmf.SnmfConfig(mu=np.full(3, 1e-8), max_outer=400, seed=1)
        pair = nmf.snmf(np.eye(3), 3, cfg)
        assert pair.rel_error <= 1e-6
        assert pair.s_U == pytest.approx(2.0 / 3.0)

    def test_linf_constraint_after_every_outer(self, rng):
        M = rng.random((10, 10))
        cfg = nmf.SnmfConfig(mu=np.full(3, 0.01), max_outer=37, seed=0)
        pair = nmf.snmf(M, 3, cfg)
        np.testing.assert_allclose(pair.U.max(axis=0), 1.0, atol=1e-12)

    def test_penalized_objective_monotone_without_collapses(self, rng):
        M = rng.random((12, 12)) + 0.2
        cfg = nmf.SnmfConfig(mu=np.full(4, 0.05 * M.max()), max_outer=200,
                             seed=2)
        pair = nmf.snmf(M, 4, cfg)
        assert pair.collapses == 0
        hist = pair.objective_history
        assert np.all(np.diff(hist) <= 1e-8 * hist[0])

    def test_rejects_negative_input(self):
        cfg = nmf.SnmfConfig(mu=np.full(2, 0.1), max_outer=10, seed=0)
        with pytest.raises(ValueError):
            nmf.snmf(np.array([[1.0, -2.0], [3.0, 4.0]]), 2, cfg)


class TestTuneMu:
    def test_target_zero_stays_at_baseline(self, rng):
        M = rng.random((15, 12)) @ rng.random((12, 15))
        base = nmf.snmf(M, 4, nmf.SnmfConfig(mu=np.full(4, 1e-6 * M.max()),
                                             max_outer=200, seed=0))
        cfg = nmf.tune_mu(M, 4, 0.0, seed=0, max_outer=200)
        assert abs(cfg.achieved_s_u - base.s_U) <= 0.02

    def test_high_target(self, rng):
        # Parts-structured 50x30 data: the sparsity response is continuous
        # up to very high levels (on unstructured noise it jumps once whole
        # columns collapse, and only the closest probe can be reported).
        W = np.zeros((50, 5))
        for j in range(5):
            W[j * 10:j * 10 + 13, j] = rng.random(min(13, 50 - j * 10)) + 0.2
        M = W @ np.hstack([np.eye(5), rng.random((5, 25))])
        cfg = nmf.tune_mu(M, 5, 0.95, seed=0, max_outer=150)
        assert abs(cfg.achieved_s_u - 0.95) <= 0.02

    def test_mid_target(self, rng):
        M = rng.random((20, 4)) @ rng.random((4, 20))
        cfg = nmf.tune_mu(M, 4, 0.6, seed=0, max_outer=200)
        assert abs(cfg.achieved_s_u - 0.6) <= 0.02

    def test_sparsity_monotone_in_mu(self, rng):
        M = rng.random((18, 4)) @ rng.random((4, 16))
        mus = [1e-4, 1e-2, 1.0, 100.0]
        s = [nmf.snmf(M, 4, nmf.SnmfConfig(mu=np.full(4, mu), max_outer=150,
                                           seed=3)).s_U
             for mu in mus]
        for a, b in zip(s, s[1:]):
            assert b >= a - 0.02


class TestRefitV:
    def test_square_identity(self, rng):
        M = rng.random((6, 6)) + np.eye(6)
        V = nmf.refit_v(M, M)
        np.testing.assert_allclose(V, np.eye(6), atol=1e-8)

    def test_separable_reconstruction(self, sepex):
        B, _ = preprocess_matrix(sepex)
        P = sepex - sepex @ B
        keep = np.linalg.norm(P, axis=0) > 1e-8 * sepex.max()
        U = P[:, keep]
        V = nmf.refit_v(sepex, U)
        err = np.linalg.norm(sepex - U @ V) / np.linalg.norm(sepex)
        assert err <= 1e-6

    def test_zero_column_zero_row(self, rng):
        U = rng.random((7, 3))
        U[:, 2] = 0.0
        V = nmf.refit_v(rng.random((7, 5)), U)
        np.testing.assert_allclose(V[2], 0.0, atol=1e-12)


class TestVFromQ:
    def test_zero_b_star(self, rng):
        Vp = rng.random((3, 5))
        out = nmf.v_from_q(Vp, np.zeros((5, 5)))
        np.testing.assert_allclose(out, Vp)

    def test_nested_squares_column_sums(self, nested_squares):
        B, _ = preprocess_matrix(nested_squares)
        inv_sums = np.linalg.inv(np.eye(4) - B).sum(axis=0)
        np.testing.assert_allclose(inv_sums, 4.0, atol=1e-9)
        Vp = np.eye(4)
        V = nmf.v_from_q(Vp, B, alpha=1.0)
        np.testing.assert_allclose(V.sum(axis=0), 4.0, atol=1e-9)

    def test_exact_nmf_maps_back(self, nested_squares):
        # An exact factorization of the critically preprocessed matrix
        # induces an exact nonnegative factorization of the original.
        B, _ = preprocess_matrix(nested_squares)
        P = apply_alpha(nested_squares, B, ALPHA_BAR)
        U2 = np.array([[1, A_CONST, 0], [0, 1 - A_CONST, 1],
                       [A_CONST, 1, 0], [1 - A_CONST, 0, 1]])
        Vp = nmf.refit_v(P, U2)
        assert np.linalg.norm(P - U2 @ Vp) <= 1e-8
        V = nmf.v_from_q(Vp, B, alpha=ALPHA_BAR)
        assert V.min() >= 0.0
        assert np.linalg.norm(nested_squares - U2 @ V) <= 1e-8

    def test_singular_q_raises(self):
        B = np.array([[0.0, 1.0], [1.0, 0.0]])
        with pytest.raises(nmf.SingularQ):
            nmf.v_from_q(np.eye(2), B, alpha=1.0)

    def test_near_singular_warns(self):
        B = np.array([[0.0, 0.999], [0.999, 0.0]])
        with pytest.warns(RuntimeWarning):
            nmf.v_from_q(np.eye(2), B, alpha=1.0)


class TestPostprocess:
    def test_support_never_grows(self, rng):
        M = separable_instance(rng, 12, 10, 3)
        pair = nmf.ahals(M, 3, seed=0, max_outer=150)
        out = nmf.postprocess_fixed_support(M, pair.U, pair.V)
        zero_tol = 1e-8 * np.abs(pair.U).max()
        before = pair.U > zero_tol
        after = out.U > 1e-8 * max(np.abs(out.U).max(), 1e-300)
        assert not np.any(after & ~before)

    def test_error_nonincreasing(self, rng):
        M = rng.random((10, 9))
        pair = nmf.ahals(M, 3, seed=1, max_outer=50)
        out = nmf.postprocess_fixed_support(M, pair.U, pair.V)
        assert out.rel_error <= pair.rel_error + 1e-12
        assert np.all(np.diff(out.objective_history)
                      <= 1e-10 * out.objective_history[0])

    def test_permuted_identity_unchanged(self):
        M = np.eye(3)
        U = np.eye(3)[:, [2, 0, 1]]
        V = np.eye(3)[[2, 0, 1], :] if False else np.linalg.inv(U)
        V = np.abs(V)
        out = nmf.postprocess_fixed_support(M, U, V)
        assert out.rel_error <= 1e-12
        np.testing.assert_allclose(out.U, U, atol=1e-12)


class TestRunPipeline:
    def test_plain_on_identity(self):
        rep = nmf.run_pipeline(np.eye(5), 5, "nmf", seeds=range(4),
                               max_outer=300)
        assert rep.rel_error_plain <= 1e-8
        assert rep.s_U == pytest.approx(0.8)

    def test_pre_nmf_on_separable(self, sepex):
        rep = nmf.run_pipeline(sepex, 3, "pre_nmf", seeds=range(4),
                               max_outer=400)
        assert rep.rel_error_plain <= 1e-6
        assert rep.rel_error_improved <= rep.rel_error_plain + 1e-9
        assert rep.rho_B_star == pytest.approx(0.745, abs=0.01)
        assert rep.rel_error_vq is not None

    def test_snmf_matches_target(self, rng):
        M = separable_instance(rng, 16, 12, 3)
        pre = nmf.run_pipeline(M, 3, "pre_nmf", seeds=range(3), max_outer=300)
        rep = nmf.run_pipeline(M, 3, "snmf", seeds=range(3), max_outer=300,
                               snmf_target=pre.s_U)
        assert rep.mu is not None

    def test_support_law_on_exact_factorization(self, rng):
        # Wherever the data has a zero, some factor column must vanish in
        # that row for any exact factorization.
        M = separable_instance(rng, 10, 8, 3)
        M[M < np.quantile(M, 0.15)] = 0.0
        best = min((nmf.ahals(M, 3, seed=s, max_outer=1500)
                    for s in range(10)), key=lambda p: p.rel_error)
        if best.rel_error <= 1e-7:
            zero_tol = 1e-6 * np.abs(best.U).max()
            for i, j in zip(*np.where(M == 0.0)):
                assert best.U[i].min() <= zero_tol

    def test_unknown_method(self, rng):
        with pytest.raises(ValueError):
            nmf.run_pipeline(rng.random((4, 4)), 2, "other")
