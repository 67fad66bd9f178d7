"""Estimator-style front end: fit a control on a problem, then predict u(x)."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .control_basis import ControlModel, double_well_dictionary
from .cross_entropy import CeConfig, ce_run
from .estimators import EstimateReport, is_estimate
from .sde_core import SdeProblem, simulate_batch


class CrossEntropyControl(BaseEstimator):
    """Cross-entropy fitted RBF feedback control.

    ``fit`` takes an :class:`SdeProblem` rather than a design matrix; the
    training data are trajectories the estimator simulates itself.
    """

    def __init__(
        self,
        n_basis=17,
        center_start=-1.5,
        center_step=0.1,
        width=0.5,
        n_paths=30000,
        max_iters=10,
        ridge=1e-6,
        relative_ridge=True,
        tol=1e-2,
        random_state=0,
    ):
        self.n_basis = n_basis
        self.center_start = center_start
        self.center_step = center_step
        self.width = width
        self.n_paths = n_paths
        self.max_iters = max_iters
        self.ridge = ridge
        self.relative_ridge = relative_ridge
        self.tol = tol
        self.random_state = random_state

    def _ce_config(self) -> CeConfig:
        return CeConfig(
            n_paths=self.n_paths,
            max_iters=self.max_iters,
            ridge=self.ridge,
            relative_ridge=self.relative_ridge,
            tol=self.tol,
            seed=int(self.random_state or 0),
        )

    def fit(self, problem: SdeProblem, y=None):
        if not isinstance(problem, SdeProblem):
            raise TypeError(f"fit expects an SdeProblem, got {type(problem).__name__}")
        self.dictionary_ = double_well_dictionary(
            self.n_basis, self.center_start, self.center_step, self.width
        )
        report = ce_run(problem, self.dictionary_, self._ce_config())
        if report.error:
            raise RuntimeError(f"cross-entropy training failed: {report.error}")
        self.report_ = report
        self.theta_ = report.theta
        self.control_ = ControlModel(self.dictionary_, self.theta_)
        self.n_iter_ = report.iterations_used
        self.converged_ = report.converged
        return self

    def predict(self, X) -> np.ndarray:
        """Control value u_theta(x) at each state."""
        check_is_fitted(self, "control_")
        X = check_array(X, ensure_2d=False)
        return self.control_.value(np.ravel(X))

    def estimate(self, problem: SdeProblem, n_paths: int | None = None, seed: int | None = None) -> EstimateReport:
        """Importance-sampling estimate of rho under the fitted control.

        The default seed follows the last training iteration, so no training
        batch is reused.
        """
        check_is_fitted(self, "control_")
        n = self.n_paths if n_paths is None else int(n_paths)
        seed = int(self.random_state or 0) + self.max_iters if seed is None else int(seed)
        batch = simulate_batch(problem, self.control_, n, seed, store_paths=False)
        return is_estimate(batch, self.control_, problem)
