import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import softmax

from ceis import (
    ControlModel,
    DegenerateWeightsError,
    SdeProblem,
    WeightOverflowError,
    compute_weights,
    double_well_dictionary,
    log_proposal_likelihood,
    log_target_weight,
    quadratic_log_likelihood,
    self_normalize,
    simulate_batch,
)
from ceis.measure import batch_path_statistics, path_statistics, write_weights_csv
from ceis.sde_core import TimeGrid, Trajectory

from conftest import Quadratic, zero_cost, zero_drift

DW = double_well_dictionary()


def double_well(x, t=0.0):
    x = np.asarray(x, dtype=np.float64)
    return -4.0 * x * (x * x - 1.0)


class ConstantControl:
    """Test stub: u(x) = c."""

    def __init__(self, c):
        self.c = c

    def value(self, x):
        return np.full(np.shape(x), self.c)


def dw_problem(horizon=0.2, dt=0.001, eps=0.05):
    return SdeProblem(double_well, eps, Quadratic(), -1.0, horizon, dt)


class TestLogProposalLikelihood:
    def test_zero_theta_is_exactly_zero(self):
        p = dw_problem()
        batch = simulate_batch(p, None, 3, seed=0)
        assert log_proposal_likelihood(batch[1], ControlModel.zeros(DW), p) == 0.0

    def test_one_step_hand_value(self):
        p = SdeProblem(zero_drift, 1.0, zero_cost, 0.0, 1.0, 1.0)
        traj = Trajectory(TimeGrid(0.0, 1.0, 1), np.array([0.0, 0.5]))
        assert log_proposal_likelihood(traj, ConstantControl(1.0), p) == pytest.approx(-1.0, abs=1e-15)

    def test_grid_mismatch(self):
        p = dw_problem()
        traj = Trajectory(TimeGrid(0.0, 0.01, 20), np.zeros(21))
        with pytest.raises(ValueError):
            log_proposal_likelihood(traj, ControlModel.zeros(DW), p)

    def test_non_finite_names_trajectory(self):
        p = SdeProblem(zero_drift, 1.0, zero_cost, 0.0, 1.0, 1.0)
        traj = Trajectory(TimeGrid(0.0, 1.0, 1), np.array([0.0, 0.5]))
        with pytest.raises(WeightOverflowError, match="trajectory 4"):
            log_proposal_likelihood(traj, ConstantControl(np.inf), p, index=4)


class TestLogTargetWeight:
    def _traj(self, end):
        return Trajectory(TimeGrid(0.0, 0.5, 2), np.array([-1.0, 0.0, end]))

    def test_zero_cost(self):
        p = SdeProblem(zero_drift, 0.05, zero_cost, -1.0, 1.0, 0.5)
        assert log_target_weight(self._traj(3.0), p) == 0.0

    def test_at_minimum(self):
        p = SdeProblem(zero_drift, 0.05, Quadratic(), -1.0, 1.0, 0.5)
        assert log_target_weight(self._traj(1.0), p) == 0.0

    def test_left_well(self):
        p = SdeProblem(zero_drift, 0.05, Quadratic(), -1.0, 1.0, 0.5)
        assert log_target_weight(self._traj(-1.0), p) == pytest.approx(-80.0, rel=1e-15)


class TestSelfNormalize:
    def test_uniform(self):
        w, ess = self_normalize(np.full(8, -3.2))
        np.testing.assert_allclose(w, 1 / 8, rtol=1e-15)
        assert ess == pytest.approx(8.0, rel=1e-14)

    def test_two_point(self):
        w, ess = self_normalize([0.0, math.log(3.0)])
        np.testing.assert_allclose(w, [0.25, 0.75], rtol=1e-15)
        assert ess == pytest.approx(1.6, rel=1e-14)

    @given(
        st.lists(st.floats(-700, 700), min_size=1, max_size=50),
        st.floats(-1e4, 1e4),
    )
    def test_shift_invariance(self, logs, c):
        logs = np.array(logs)
        w1, e1 = self_normalize(logs)
        w2, e2 = self_normalize(logs + c)
        np.testing.assert_allclose(w1, w2, rtol=1e-9, atol=1e-300)
        assert e1 == pytest.approx(e2, rel=1e-9)

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=50))
    def test_ess_bounds(self, logs):
        w, ess = self_normalize(logs)
        assert w.sum() == pytest.approx(1.0)
        assert 1.0 - 1e-9 <= ess <= len(logs) * (1 + 1e-9)

    def test_all_minus_infinity(self):
        with pytest.raises(DegenerateWeightsError):
            self_normalize([-np.inf, -np.inf])

    def test_nan_rejected(self):
        with pytest.raises(WeightOverflowError):
            self_normalize([0.0, np.nan])

    def test_tiny_weights_do_not_underflow(self):
        w, _ = self_normalize([-1000.0, -1000.0 + math.log(3.0)])
        np.testing.assert_allclose(w, [0.25, 0.75])


class TestBatchWeights:
    def test_zero_control_is_softmax_of_cost(self):
        p = dw_problem()
        batch = simulate_batch(p, None, 50, seed=1, store_paths=False)
        ws = compute_weights(batch, p)
        np.testing.assert_array_equal(ws.log_raw, -Quadratic()(batch.terminal) / p.epsilon)
        np.testing.assert_allclose(ws.normalized, softmax(ws.log_raw), rtol=1e-12)

    @given(st.lists(st.floats(-20, 20), min_size=17, max_size=17))
    def test_quadratic_form_matches_direct_evaluation(self, theta):
        p = dw_problem(horizon=0.05)
        batch = simulate_batch(p, None, 4, seed=5, basis=DW)
        model = ControlModel(DW, theta)
        direct = np.array([log_proposal_likelihood(t, model, p) for t in batch])
        quad = quadratic_log_likelihood(batch.stats, theta, p.epsilon)
        scale = np.abs(quad) + 1e-12 * (1 + np.abs(theta).max() ** 2)
        assert np.all(np.abs(direct - quad) <= 1e-10 * scale + 1e-10)

    def test_streamed_stats_match_stored_path_stats(self):
        p = dw_problem(horizon=0.1)
        model = ControlModel(DW, np.linspace(-2, 2, 17))
        batch = simulate_batch(p, model, 5, seed=8)
        for i in range(5):
            drive, gram = path_statistics(batch[i], DW, p)
            np.testing.assert_allclose(batch.stats.drive[i], drive, rtol=1e-10, atol=1e-14)
            np.testing.assert_allclose(batch.stats.gram[i], gram, rtol=1e-10, atol=1e-14)

    def test_statistics_recomputed_for_other_basis(self):
        p = dw_problem(horizon=0.05)
        batch = simulate_batch(p, None, 3, seed=0)
        stats = batch_path_statistics(batch, DW, p)
        assert stats.gram.shape == (3, 17, 17)
        with pytest.raises(ValueError):
            batch_path_statistics(simulate_batch(p, None, 3, seed=0, store_paths=False), DW, p)

    def test_girsanov_mean_is_one(self):
        # a mild control: large ones put dP/dQ mass on paths Q almost never draws
        p = dw_problem(horizon=1.0, dt=0.01)
        model = ControlModel(DW, np.full(17, 0.02))
        batch = simulate_batch(p, model, 20_000, seed=2, store_paths=False)
        z = np.exp(-batch.log_likelihood)
        assert abs(z.mean() - 1.0) < 3 * z.std(ddof=1) / math.sqrt(len(z))

    def test_exploded_paths_carry_no_mass(self):
        def cubic(x, t=0.0):
            return 5.0 * np.asarray(x, dtype=np.float64) ** 3

        p = SdeProblem(cubic, 1.0, Quadratic(), 0.0, 1.0, 0.05)
        batch = simulate_batch(p, None, 200, seed=2, store_paths=False)
        ws = compute_weights(batch, p)
        assert ws.n_exploded == batch.n_exploded > 0
        assert np.all(ws.log_raw[batch.exploded] == -np.inf)
        assert np.all(ws.normalized[batch.exploded] == 0.0)

    def test_weights_csv(self, tmp_path):
        p = dw_problem(horizon=0.05)
        ws = compute_weights(simulate_batch(p, None, 4, seed=0, store_paths=False), p)
        path = tmp_path / "w.csv"
        write_weights_csv(ws, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "index,log_target,log_proposal,log_raw,normalized"
        table = np.loadtxt(path, delimiter=",", skiprows=1)
        np.testing.assert_array_equal(table[:, 4], ws.normalized)
