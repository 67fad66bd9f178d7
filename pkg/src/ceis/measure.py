"""Path likelihood ratios and self-normalized importance weights.

All weight arithmetic stays in log space. The target weight drops the unknown
normalizing constant 1/rho; it cancels under self-normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sde_core import PathStatistics, SdeProblem, Trajectory, TrajectoryBatch


class WeightOverflowError(FloatingPointError):
    pass


class DegenerateWeightsError(ValueError):
    """No trajectory carries importance mass."""


@dataclass(frozen=True)
class WeightSet:
    log_target: np.ndarray
    log_proposal: np.ndarray
    log_raw: np.ndarray
    normalized: np.ndarray
    ess: float
    n_exploded: int = 0

    def __len__(self) -> int:
        return self.normalized.shape[0]


def log_proposal_likelihood(traj: Trajectory, model, problem: SdeProblem, index: int | None = None) -> float:
    """Discrete Girsanov log dQ/dP of one path, left-endpoint sums.

    -1/eps sum u dX + 1/eps sum u b dt - 1/(2 eps) sum u^2 dt, with u and b
    evaluated at (X_n, t_n) for n = 0..M-1.
    """
    if traj.grid.num_steps != problem.num_steps or traj.grid.dt != problem.dt:
        raise ValueError("trajectory grid does not match the problem discretization")
    x = traj.states[:-1]
    t = traj.grid.times[:-1]
    u = np.asarray(model.value(x), dtype=np.float64)
    b = np.asarray(problem.drift(x, t), dtype=np.float64)
    dx = traj.increments
    dt = problem.dt
    eps = problem.epsilon
    with np.errstate(invalid="ignore", over="ignore"):
        value = -np.sum(u * dx) / eps + np.sum(u * b) * dt / eps - np.sum(u * u) * dt / (2.0 * eps)
    if not np.isfinite(value):
        name = f"trajectory {index}" if index is not None else "trajectory"
        raise WeightOverflowError(f"non-finite log-likelihood on {name}")
    return float(value)


def log_target_weight(traj: Trajectory, problem: SdeProblem) -> float:
    return float(-problem.terminal_cost(np.float64(traj.terminal)) / problem.epsilon)


def path_statistics(traj: Trajectory, basis, problem: SdeProblem) -> tuple[np.ndarray, np.ndarray]:
    """(drive, gram) of one path computed from its stored states."""
    x = traj.states[:-1]
    t = traj.grid.times[:-1]
    psi = basis.psi(x)
    b = np.asarray(problem.drift(x, t), dtype=np.float64)
    drive = psi.T @ (traj.increments - b * problem.dt)
    gram = psi.T @ psi * problem.dt
    return drive, gram


def batch_path_statistics(batch: TrajectoryBatch, basis, problem: SdeProblem) -> PathStatistics:
    """Statistics for every path of a batch, reusing the simulated ones when possible."""
    if batch.stats is not None and batch.stats_basis is basis:
        return batch.stats
    if batch.states is None:
        raise ValueError(
            "batch carries neither stored paths nor statistics for this basis; "
            "simulate with basis=... or store_paths=True"
        )
    n, j = len(batch), basis.size
    drive = np.zeros((n, j))
    gram = np.zeros((n, j, j))
    for i in np.flatnonzero(~batch.exploded):
        drive[i], gram[i] = path_statistics(batch[i], basis, problem)
    return PathStatistics(drive, gram)


def quadratic_log_likelihood(stats: PathStatistics, theta, epsilon: float) -> np.ndarray:
    """log L^theta per path from the sufficient statistics (quadratic in theta)."""
    theta = np.asarray(theta, dtype=np.float64)
    linear = stats.drive @ theta
    quad = np.einsum("ijk,j,k->i", stats.gram, theta, theta)
    return -linear / epsilon - quad / (2.0 * epsilon)


def self_normalize(log_raw) -> tuple[np.ndarray, float]:
    """Softmax of log weights and the effective sample size 1 / sum w^2."""
    log_raw = np.asarray(log_raw, dtype=np.float64)
    if log_raw.size == 0 or not np.any(np.isfinite(log_raw)):
        raise DegenerateWeightsError("all log-weights are -inf; no trajectory carries mass")
    if np.any(np.isnan(log_raw)) or np.any(log_raw == np.inf):
        raise WeightOverflowError("log-weights contain NaN or +inf")
    shifted = log_raw - np.max(log_raw)
    w = np.exp(shifted)
    w /= w.sum()
    ess = 1.0 / np.sum(w * w)
    return w, float(ess)


def batch_log_target(batch: TrajectoryBatch, problem: SdeProblem) -> np.ndarray:
    out = np.full(len(batch), -np.inf)
    ok = ~batch.exploded
    out[ok] = -np.asarray(problem.terminal_cost(batch.terminal[ok]), dtype=np.float64) / problem.epsilon
    return out


def compute_weights(batch: TrajectoryBatch, problem: SdeProblem) -> WeightSet:
    """Self-normalized weights toward the zero-variance measure.

    Uses the log-likelihood of the control that generated ``batch``. Exploded
    paths get log-weight -inf.
    """
    log_target = batch_log_target(batch, problem)
    log_proposal = np.where(batch.exploded, 0.0, batch.log_likelihood)
    if not np.all(np.isfinite(log_proposal)):
        bad = int(np.flatnonzero(~np.isfinite(log_proposal))[0])
        raise WeightOverflowError(f"non-finite log-likelihood on trajectory {bad}")
    log_raw = np.where(batch.exploded, -np.inf, log_target - log_proposal)
    normalized, ess = self_normalize(log_raw)
    return WeightSet(log_target, log_proposal, log_raw, normalized, ess, batch.n_exploded)


def write_weights_csv(weights: WeightSet, path) -> None:
    """Write ``index,log_target,log_proposal,log_raw,normalized``."""
    table = np.column_stack(
        [np.arange(len(weights)), weights.log_target, weights.log_proposal, weights.log_raw, weights.normalized]
    )
    header = "index,log_target,log_proposal,log_raw,normalized"
    np.savetxt(path, table, delimiter=",", header=header, comments="", fmt=["%d"] + ["%.17g"] * 4)
