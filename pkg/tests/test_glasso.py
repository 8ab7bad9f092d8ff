"""Penalized precision solver: closed forms, KKT certificates, oracle parity."""

import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose

from copulagm.glasso import (EDGE_TOL, CorrelationMatrix, PrecisionEstimate,
                             SolverError, SolverSettings, SolverWarning,
                             glasso_fit, glasso_path, kkt_residual,
                             lambda_grid_auto, objective)

from oracles import prox_grad_glasso


def random_correlation(p, seed, n_factor=3):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n_factor * p, p))
    return np.corrcoef(A, rowvar=False)


class TestClosedForms:
    def test_2x2_unpenalized(self):
        S = np.array([[1.0, 0.5], [0.5, 1.0]])
        est = glasso_fit(CorrelationMatrix(S), 0.0)
        expected = np.array([[4 / 3, -2 / 3], [-2 / 3, 4 / 3]])
        assert_allclose(est.theta, expected, atol=1e-8)
        assert est.converged

    def test_p1_inverse(self):
        est = glasso_fit(np.array([[2.0]]), 0.3)
        assert est.theta[0, 0] == pytest.approx(0.5)
        est_pd = glasso_fit(np.array([[2.0]]), 0.3,
                            settings=SolverSettings(penalize_diagonal=True))
        assert est_pd.theta[0, 0] == pytest.approx(1 / 2.3)

    def test_diagonal_at_lambda_max(self):
        S = random_correlation(8, seed=1)
        lam = np.max(np.abs(S - np.diag(np.diag(S))))
        est = glasso_fit(S, lam)
        assert est.edge_count == 0
        assert_allclose(np.diag(est.theta), 1.0 / np.diag(S), atol=1e-10)

    def test_diagonal_beyond_lambda_max_100_instances(self):
        for seed in range(100):
            S = random_correlation(6, seed=seed)
            lam = np.max(np.abs(S - np.diag(np.diag(S)))) * (1.0 + 0.5 * (seed % 3))
            est = glasso_fit(S, lam)
            assert est.edge_count == 0, f"seed {seed} not diagonal"


class TestOracleParity:
    @pytest.mark.parametrize("p,seed,lam", [(2, 0, 0.05), (3, 1, 0.2),
                                            (4, 2, 0.1), (5, 3, 0.05),
                                            (5, 4, 0.3)])
    def test_prox_grad_agreement(self, p, seed, lam):
        S = random_correlation(p, seed=seed)
        est = glasso_fit(S, lam)
        oracle = prox_grad_glasso(S, lam)
        assert np.max(np.abs(est.theta - oracle)) < 1e-3

    def test_penalize_diagonal_agreement(self):
        S = random_correlation(4, seed=9)
        settings = SolverSettings(penalize_diagonal=True)
        est = glasso_fit(S, 0.15, settings=settings)
        oracle = prox_grad_glasso(S, 0.15, penalize_diagonal=True)
        assert np.max(np.abs(est.theta - oracle)) < 1e-3
        assert kkt_residual(est.theta, S, 0.15, penalize_diagonal=True) <= 1e-4


class TestCertificates:
    def test_kkt_along_path(self):
        S = random_correlation(12, seed=5)
        grid = lambda_grid_auto(S)
        for est in glasso_path(S, grid):
            assert est.converged
            assert est.kkt <= 1e-4
            assert kkt_residual(est.theta, S, est.lam) <= 1e-4

    def test_warm_path_matches_cold(self):
        S = random_correlation(8, seed=6)
        grid = lambda_grid_auto(S, num=6)
        warm = glasso_path(S, grid)
        for est in warm:
            cold = glasso_fit(S, est.lam)
            assert np.max(np.abs(est.theta - cold.theta)) < 2e-3

    def test_kkt_rejects_perturbed_solution(self):
        S = random_correlation(6, seed=7)
        est = glasso_fit(S, 0.2)
        bad = est.theta.copy()
        bad[0, 1] = bad[1, 0] = bad[0, 1] + 0.05
        assert kkt_residual(bad, S, 0.2) > 1e-3


class TestPathBehavior:
    def test_grid_auto_shape(self):
        S = random_correlation(10, seed=8)
        grid = lambda_grid_auto(S)
        lam_max = np.max(np.abs(S - np.diag(np.diag(S))))
        assert grid.size == 10
        assert grid[0] == pytest.approx(lam_max)
        assert grid[-1] == pytest.approx(0.1 * lam_max)
        assert np.all(np.diff(grid) < 0)
        ratios = grid[1:] / grid[:-1]
        assert_allclose(ratios, ratios[0], rtol=1e-10)

    def test_edges_nondecreasing_on_20x20(self):
        S = random_correlation(20, seed=10)
        path = glasso_path(S, lambda_grid_auto(S))
        counts = [est.edge_count for est in path]
        violations = sum(1 for a, b in zip(counts, counts[1:]) if b < a)
        assert violations <= 1, counts

    def test_nonincreasing_grid_required(self):
        S = random_correlation(4, seed=11)
        with pytest.raises(SolverError):
            glasso_path(S, [0.1, 0.2])

    def test_path_first_point_diagonal(self):
        S = random_correlation(7, seed=12)
        path = glasso_path(S, lambda_grid_auto(S))
        assert path[0].edge_count == 0


class TestValidation:
    def test_negative_penalty(self):
        with pytest.raises(SolverError):
            glasso_fit(np.eye(2), -0.1)

    def test_asymmetric_input(self):
        S = np.array([[1.0, 0.2], [0.4, 1.0]])
        with pytest.raises(SolverError):
            glasso_fit(S, 0.1)

    def test_nonpositive_diagonal(self):
        S = np.array([[0.0, 0.0], [0.0, 1.0]])
        with pytest.raises(SolverError):
            glasso_fit(S, 0.1)

    def test_rank_deficient_needs_penalty(self):
        v = np.array([1.0, 1.0])
        S = np.outer(v, v)  # singular, PSD
        with pytest.raises(SolverError):
            glasso_fit(S, 0.0)
        est = glasso_fit(S, 0.2)  # penalty regularizes the problem
        assert est.converged

    def test_indefinite_rejected(self):
        S = np.array([[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(SolverError):
            glasso_fit(S, 0.1)

    def test_nonconvergence_warns(self):
        S = random_correlation(10, seed=13)
        settings = SolverSettings(tol=1e-13, max_sweeps=2)
        with pytest.warns(SolverWarning):
            est = glasso_fit(S, 0.05, settings=settings)
        assert not est.converged


class TestPrecisionEstimate:
    def test_edges_and_partials(self):
        S = random_correlation(6, seed=14)
        est = glasso_fit(S, 0.1)
        pc = est.partial_correlations
        assert_allclose(np.diag(pc), 1.0)
        for i, j in est.edges:
            assert i < j
            assert abs(est.theta[i, j]) > EDGE_TOL
            expect = -est.theta[i, j] / np.sqrt(est.theta[i, i] * est.theta[j, j])
            assert pc[i, j] == pytest.approx(expect)
        off = ~np.eye(6, dtype=bool)
        support = np.abs(est.theta) > EDGE_TOL
        assert np.all(pc[off & ~support] == 0.0)

    def test_theta_readonly(self):
        est = glasso_fit(np.eye(3), 0.1)
        with pytest.raises(ValueError):
            est.theta[0, 0] = 2.0

    def test_objective_maximized(self):
        S = random_correlation(5, seed=15)
        est = glasso_fit(S, 0.2)
        base = objective(est.theta, S, 0.2)
        rng = np.random.default_rng(16)
        for _ in range(20):
            d = rng.standard_normal((5, 5)) * 0.01
            d = 0.5 * (d + d.T)
            cand = est.theta + d
            if np.all(np.linalg.eigvalsh(cand) > 0):
                assert objective(cand, S, 0.2) <= base + 1e-9


class TestCorrelationMatrix:
    def test_symmetry_enforced(self):
        with pytest.raises(SolverError):
            CorrelationMatrix(np.array([[1.0, 0.2], [0.3, 1.0]]))

    def test_finite_enforced(self):
        with pytest.raises(SolverError):
            CorrelationMatrix(np.array([[1.0, np.nan], [np.nan, 1.0]]))

    def test_values_readonly(self):
        cm = CorrelationMatrix(np.eye(2))
        with pytest.raises(ValueError):
            cm.values[0, 0] = 3.0
