"""Cross-entropy fitting of the control coefficients.

One iteration simulates under the current control, reweights the paths toward
the zero-variance measure and maximizes the weighted quadratic log-likelihood
sum_i w_i log L^theta_i by solving the ridge-stabilized normal equations
(A + lambda I) theta = r with

    A = sum_i w_i gram_i,    r = -sum_i w_i drive_i.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .control_basis import ControlModel, RbfDictionary
from .measure import WeightSet, batch_path_statistics, compute_weights
from .sde_core import SdeProblem, TrajectoryBatch, simulate_batch

logger = logging.getLogger(__name__)


class AssemblyError(FloatingPointError):
    pass


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class CeConfig:
    n_paths: int = 30000
    max_iters: int = 10
    ridge: float = 1e-6
    relative_ridge: bool = True
    tol: float = 1e-2
    seed: int = 0

    def __post_init__(self):
        if int(self.n_paths) < 2:
            raise ValueError(f"n_paths must be >= 2, got {self.n_paths}")
        if int(self.max_iters) < 0:
            raise ValueError(f"max_iters must be >= 0, got {self.max_iters}")
        if not self.ridge >= 0:
            raise ValueError(f"ridge must be >= 0, got {self.ridge}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")

    def ridge_for(self, a: np.ndarray) -> float:
        if self.relative_ridge:
            return float(self.ridge * np.trace(a) / a.shape[0])
        return float(self.ridge)


@dataclass
class CeReport:
    theta_history: list[np.ndarray] = field(default_factory=list)
    ess_history: list[float] = field(default_factory=list)
    exploded_history: list[int] = field(default_factory=list)
    converged: bool = False
    iterations_used: int = 0
    error: str | None = None

    @property
    def theta(self) -> np.ndarray:
        return self.theta_history[-1]


def assemble_normal_equations(
    batch: TrajectoryBatch, weights: WeightSet, dictionary, problem: SdeProblem
) -> tuple[np.ndarray, np.ndarray]:
    """Weighted Gram matrix ``A`` and right-hand side ``r``."""
    if len(weights) != len(batch):
        raise ValueError(f"{len(weights)} weights for {len(batch)} trajectories")
    stats = batch_path_statistics(batch, dictionary, problem)
    w = weights.normalized
    a = np.tensordot(w, stats.gram, axes=1)
    a = 0.5 * (a + a.T)
    r = -(w @ stats.drive)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(r))):
        raise AssemblyError(_locate_nonfinite(w, stats))
    return a, r


def _locate_nonfinite(w, stats) -> str:
    contrib = w[:, None, None] * stats.gram
    bad = np.argwhere(~np.isfinite(contrib))
    if bad.size:
        i, j, k = bad[0]
        return f"non-finite Gram entry from trajectory {i} at ({j}, {k})"
    bad = np.argwhere(~np.isfinite(w[:, None] * stats.drive))
    i, j = bad[0]
    return f"non-finite right-hand side from trajectory {i} at ({j},)"


def solve_ridge(a, r, lam: float) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    r = np.atleast_1d(np.asarray(r, dtype=np.float64))
    if lam < 0:
        raise ValueError(f"ridge must be nonnegative, got {lam}")
    system = a + lam * np.eye(a.shape[0])
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            theta = scipy.linalg.solve(system, r, assume_a="sym")
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(
            f"normal equations are singular ({exc}); use a positive ridge"
        ) from exc
    residual = np.max(np.abs(system @ theta - r))
    if not (np.all(np.isfinite(theta)) and residual <= 1e-8 * (1.0 + np.max(np.abs(r)))):
        raise SingularSystemError(
            f"normal equations are numerically singular (residual {residual:.3g}); "
            "use a positive ridge"
        )
    return theta


def ce_iterate(
    theta_k,
    problem: SdeProblem,
    dictionary: RbfDictionary,
    config: CeConfig,
    iteration: int = 0,
) -> tuple[np.ndarray, dict]:
    """One cross-entropy update from the proposal driven by ``theta_k``."""
    model = ControlModel(dictionary, theta_k)
    batch = simulate_batch(
        problem, model, config.n_paths, config.seed + iteration, store_paths=False
    )
    weights = compute_weights(batch, problem)
    a, r = assemble_normal_equations(batch, weights, dictionary, problem)
    lam = config.ridge_for(a)
    theta_next = solve_ridge(a, r, lam)
    diagnostics = {
        "ess": weights.ess,
        "n_exploded": weights.n_exploded,
        "ridge": lam,
        "seed": config.seed + iteration,
    }
    logger.info("CE iteration %d: ESS %.1f, ridge %.3g", iteration, weights.ess, lam)
    return theta_next, diagnostics


def ce_run(problem: SdeProblem, dictionary: RbfDictionary, config: CeConfig) -> CeReport:
    """Iterate from theta = 0 until the sup-norm update drops below ``tol``."""
    theta = np.zeros(dictionary.size)
    report = CeReport(theta_history=[theta])
    for k in range(config.max_iters):
        try:
            theta_next, diag = ce_iterate(theta, problem, dictionary, config, k)
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            report.error = f"iteration {k}: {type(exc).__name__}: {exc}"
            logger.warning("CE run stopped: %s", report.error)
            break
        report.theta_history.append(theta_next)
        report.ess_history.append(diag["ess"])
        report.exploded_history.append(diag["n_exploded"])
        report.iterations_used = k + 1
        step = float(np.max(np.abs(theta_next - theta)))
        theta = theta_next
        if step < config.tol:
            report.converged = True
            break
    return report


def write_theta_history_csv(report: CeReport, path) -> None:
    """Write ``iter,ess,theta_0,...``; the ESS of row k is that of the batch producing theta^(k)."""
    thetas = np.array(report.theta_history)
    ess = np.array([np.nan] + list(report.ess_history))
    table = np.column_stack([np.arange(len(thetas)), ess, thetas])
    header = ",".join(["iter", "ess"] + [f"theta_{j}" for j in range(thetas.shape[1])])
    np.savetxt(path, table, delimiter=",", header=header, comments="", fmt=["%d"] + ["%.17g"] * (table.shape[1] - 1))
