import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ceis import (
    CeConfig,
    ControlModel,
    RbfDictionary,
    SdeProblem,
    SingularSystemError,
    assemble_normal_equations,
    ce_iterate,
    ce_run,
    compute_weights,
    double_well_dictionary,
    simulate_batch,
    solve_ridge,
)
from ceis.measure import WeightSet
from ceis.cross_entropy import write_theta_history_csv
from ceis.sde_core import PathStatistics, TimeGrid, TrajectoryBatch

from conftest import Quadratic, gaussian_problem, zero_cost, zero_drift

DW = double_well_dictionary()
# one atom sitting where driftless paths from -1 spend their time: well conditioned
ONE_ATOM = RbfDictionary(np.array([-1.5]), np.array([0.5]))


class OnesBasis:
    size = 1

    def psi(self, x):
        return np.ones((np.size(x), 1))


def _weights(w):
    w = np.asarray(w, dtype=np.float64)
    z = np.zeros_like(w)
    return WeightSet(z, z, np.log(w), w, float(1 / np.sum(w * w)))


def double_well(x, t=0.0):
    x = np.asarray(x, dtype=np.float64)
    return -4.0 * x * (x * x - 1.0)


def small_batch(theta_scale=0.0, n=40, seed=0):
    p = SdeProblem(double_well, 0.05, Quadratic(), -1.0, 0.1, 0.001)
    model = ControlModel(DW, theta_scale * np.sin(np.arange(17)))
    batch = simulate_batch(p, model, n, seed, store_paths=False)
    return p, batch


class TestAssembly:
    def test_two_step_hand_assembly(self):
        p = SdeProblem(zero_drift, 1.0, zero_cost, 0.0, 1.0, 0.5)
        batch = TrajectoryBatch(
            grid=TimeGrid(0.0, 0.5, 2),
            seed=0,
            control_tag="none",
            terminal=np.array([-0.2]),
            exploded=np.array([False]),
            log_likelihood=np.zeros(1),
            states=np.array([[0.0, 0.1, -0.2]]),
        )
        a, r = assemble_normal_equations(batch, _weights([1.0]), OnesBasis(), p)
        np.testing.assert_allclose(a, [[1.0]], rtol=1e-15)
        np.testing.assert_allclose(r, [0.2], rtol=1e-14)

    def test_duplicate_trajectories_leave_system_unchanged(self):
        p, batch = small_batch(1.0)
        ws = compute_weights(batch, p)
        a, r = assemble_normal_equations(batch, ws, DW, p)
        doubled = dataclasses.replace(
            batch,
            terminal=np.tile(batch.terminal, 2),
            exploded=np.tile(batch.exploded, 2),
            log_likelihood=np.tile(batch.log_likelihood, 2),
            stats=PathStatistics(
                np.concatenate([batch.stats.drive] * 2), np.concatenate([batch.stats.gram] * 2)
            ),
        )
        a2, r2 = assemble_normal_equations(doubled, _weights(np.tile(ws.normalized, 2) / 2), DW, p)
        np.testing.assert_allclose(a2, a, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(r2, r, rtol=1e-12, atol=1e-15)

    @given(st.floats(-3, 3), st.integers(0, 1000), arrays(np.float64, 17, elements=st.floats(-1, 1)))
    def test_gram_symmetric_psd(self, scale, seed, v):
        p, batch = small_batch(scale, n=10, seed=seed)
        a, _ = assemble_normal_equations(batch, compute_weights(batch, p), DW, p)
        assert np.max(np.abs(a - a.T)) <= 1e-12
        assert v @ a @ v >= -1e-12 * np.trace(a) * (v @ v)

    def test_weight_count_mismatch(self):
        p, batch = small_batch()
        with pytest.raises(ValueError):
            assemble_normal_equations(batch, _weights([1.0]), DW, p)


class TestSolveRidge:
    def test_scalar(self):
        assert solve_ridge([[2.0]], [1.0], 0.0) == pytest.approx([0.5])

    def test_singular(self):
        with pytest.raises(SingularSystemError, match="positive ridge"):
            solve_ridge([[0.0]], [1.0], 0.0)

    def test_pure_ridge(self):
        assert solve_ridge([[0.0]], [1.0], 0.1) == pytest.approx([10.0])

    def test_negative_ridge_rejected(self):
        with pytest.raises(ValueError):
            solve_ridge([[1.0]], [1.0], -1.0)

    @given(
        arrays(np.float64, (4, 4), elements=st.floats(-3, 3)),
        arrays(np.float64, 4, elements=st.floats(-3, 3)),
        st.floats(1e-3, 10.0),
        st.floats(1e-3, 10.0),
    )
    def test_norm_nonincreasing_in_ridge(self, b, r, lam1, lam2):
        a = b @ b.T
        lo, hi = sorted((lam1, lam2))
        small = np.linalg.norm(solve_ridge(a, r, lo))
        large = np.linalg.norm(solve_ridge(a, r, hi))
        assert large <= small * (1 + 1e-9) + 1e-12


class TestCeIterate:
    def test_zero_cost_gives_near_zero_theta(self):
        p = SdeProblem(zero_drift, 0.05, zero_cost, -1.0, 1.0, 0.01)
        theta, diag = ce_iterate(np.zeros(1), p, ONE_ATOM, CeConfig(n_paths=10_000))
        assert np.max(np.abs(theta)) < 0.05
        assert diag["ess"] == pytest.approx(10_000)

    def test_deterministic(self):
        p = gaussian_problem(0.25)
        cfg = CeConfig(n_paths=500, seed=3)
        t1, _ = ce_iterate(np.zeros(17), p, DW, cfg, iteration=2)
        t2, d2 = ce_iterate(np.zeros(17), p, DW, cfg, iteration=2)
        assert np.array_equal(t1, t2) and d2["seed"] == 5

    def test_update_maximizes_weighted_likelihood(self):
        p = gaussian_problem(0.25)
        cfg = CeConfig(n_paths=2000)
        model = ControlModel.zeros(DW)
        batch = simulate_batch(p, model, cfg.n_paths, cfg.seed, store_paths=False)
        ws = compute_weights(batch, p)
        a, r = assemble_normal_equations(batch, ws, DW, p)
        lam = cfg.ridge_for(a)
        theta, _ = ce_iterate(np.zeros(17), p, DW, cfg)

        def objective(t):
            return t @ r - 0.5 * t @ (a + lam * np.eye(17)) @ t

        best = objective(theta)
        rng = np.random.default_rng(0)
        for _ in range(20):
            delta = rng.normal(scale=1e-2, size=17)
            assert objective(theta + delta) <= best

    def test_degenerate_weights_propagate(self):
        p = SdeProblem(zero_drift, 0.1, lambda x: np.full(np.shape(x), np.inf), 0.0, 0.1, 0.01)
        with pytest.raises(ValueError):
            ce_iterate(np.zeros(17), p, DW, CeConfig(n_paths=10))


class TestCeRun:
    def test_zero_cost_converges_immediately(self):
        p = SdeProblem(zero_drift, 0.05, zero_cost, -1.0, 1.0, 0.01)
        report = ce_run(p, ONE_ATOM, CeConfig(n_paths=10_000))
        assert report.converged and report.iterations_used == 1
        assert np.max(np.abs(report.theta)) < 0.05

    def test_vacuous_run(self):
        report = ce_run(gaussian_problem(), DW, CeConfig(max_iters=0))
        assert len(report.theta_history) == 1 and not np.any(report.theta)
        assert not report.converged and report.iterations_used == 0

    def test_failed_iteration_keeps_partial_report(self):
        p = SdeProblem(zero_drift, 0.1, lambda x: np.full(np.shape(x), np.inf), 0.0, 0.1, 0.01)
        report = ce_run(p, DW, CeConfig(n_paths=10))
        assert report.error and "iteration 0" in report.error
        assert len(report.theta_history) == 1 and not report.converged

    def test_gaussian_control_approaches_optimum(self):
        # optimal feedback 2 nu (x - 1) / (1 + 2 nu (T - t)); near x = -1 and early t it is about -4/3
        p = gaussian_problem(0.05)
        report = ce_run(p, DW, CeConfig(n_paths=5000, max_iters=6))
        u = ControlModel(DW, report.theta).value(np.array([-1.0]))[0]
        assert u == pytest.approx(-4.0 / 3.0, abs=0.2)
        assert report.ess_history[-1] > 0.5 * 5000

    @pytest.mark.parametrize("kwargs", [dict(n_paths=1), dict(max_iters=-1), dict(ridge=-1.0), dict(tol=0.0)])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            CeConfig(**kwargs)

    def test_relative_ridge(self):
        a = np.diag([2.0, 4.0])
        assert CeConfig(ridge=1e-6).ridge_for(a) == pytest.approx(3e-6)
        assert CeConfig(ridge=1e-6, relative_ridge=False).ridge_for(a) == 1e-6

    def test_history_csv(self, tmp_path):
        report = ce_run(gaussian_problem(0.25), DW, CeConfig(n_paths=200, max_iters=2))
        path = tmp_path / "theta.csv"
        write_theta_history_csv(report, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "iter,ess," + ",".join(f"theta_{j}" for j in range(17))
        table = np.genfromtxt(path, delimiter=",", skip_header=1)
        assert np.isnan(table[0, 1]) and np.array_equal(table[:, 2:], np.array(report.theta_history))
