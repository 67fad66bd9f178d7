"""Crude Monte Carlo and importance-sampling estimators of rho = E[exp(-g(X_T)/eps)].

Every estimate is formed from per-path log integrands with log-sum-exp, so
values far below the double-precision underflow threshold are still reported
exactly through ``log_rho_hat``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from .control_basis import ControlModel, RbfDictionary
from .cross_entropy import CeConfig, ce_run
from .measure import batch_log_target
from .sde_core import SdeProblem, TrajectoryBatch, simulate_batch

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EstimateReport:
    rho_hat: float
    log_rho_hat: float
    std_error: float
    cov: float
    n_samples: int
    second_moment_log: float
    ess: float
    degenerate: bool = False
    epsilon: float | None = None
    control_tag: str = "none"

    @property
    def log_ratio(self) -> float:
        """log R_hat = log(second moment / rho_hat^2)."""
        return self.second_moment_log - 2.0 * self.log_rho_hat

    def to_record(self) -> dict:
        rec = {
            "rho_hat": self.rho_hat,
            "log_rho_hat": self.log_rho_hat,
            "std_error": self.std_error,
            "cov": self.cov,
            "n": self.n_samples,
            "ess": self.ess,
            "epsilon": self.epsilon,
            "control_tag": self.control_tag,
            "degenerate": self.degenerate,
        }
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in rec.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_record(), indent=2, sort_keys=True, default=_float_repr)


def _float_repr(value):
    return float(value)


def estimate_from_log_terms(
    log_terms, *, epsilon: float | None = None, control_tag: str = "none"
) -> EstimateReport:
    """Plug-in mean, standard error and coefficient of variation in log space."""
    log_terms = np.asarray(log_terms, dtype=np.float64)
    n = log_terms.shape[0]
    if n == 0:
        raise ValueError("no samples")
    if not np.any(np.isfinite(log_terms)):
        return EstimateReport(0.0, -math.inf, 0.0, math.nan, n, -math.inf, 0.0, True, epsilon, control_tag)
    log_n = math.log(n)
    lse1 = float(logsumexp(log_terms))
    lse2 = float(logsumexp(2.0 * log_terms))
    log_rho = lse1 - log_n
    log_m2 = lse2 - log_n
    excess = max(math.exp(log_m2 - 2.0 * log_rho) - 1.0, 0.0)
    cov = math.sqrt(excess / n)
    rho = math.exp(log_rho)
    ess = math.exp(2.0 * lse1 - lse2)
    degenerate = rho == 0.0
    return EstimateReport(
        rho_hat=rho,
        log_rho_hat=log_rho,
        std_error=rho * cov,
        cov=math.nan if degenerate else cov,
        n_samples=n,
        second_moment_log=log_m2,
        ess=ess,
        degenerate=degenerate,
        epsilon=epsilon,
        control_tag=control_tag,
    )


def mc_estimate(batch: TrajectoryBatch, problem: SdeProblem) -> EstimateReport:
    """Crude Monte Carlo average of exp(-g(X_T)/eps) over an uncontrolled batch."""
    if batch.control_tag != "none":
        raise ValueError(f"crude Monte Carlo needs an uncontrolled batch, got {batch.control_tag}")
    terms = batch_log_target(batch, problem)
    report = estimate_from_log_terms(terms, epsilon=problem.epsilon, control_tag="none")
    if report.degenerate:
        logger.warning("crude MC estimate is degenerate: no sample above underflow")
    return report


def is_estimate(batch: TrajectoryBatch, model: ControlModel, problem: SdeProblem) -> EstimateReport:
    """Importance-sampling estimate with the Girsanov weight of ``model``.

    ``batch`` must have been simulated under ``model``; an uncontrolled batch is
    accepted for the zero control, where the weight is identically one.
    """
    zero_on_reference = batch.control_tag == "none" and not np.any(model.theta)
    if batch.control_tag != model.tag and not zero_on_reference:
        raise ValueError(
            f"batch was simulated under {batch.control_tag}, not under {model.tag}"
        )
    log_target = batch_log_target(batch, problem)
    log_lik = np.where(batch.exploded, 0.0, batch.log_likelihood)
    terms = np.where(batch.exploded, -np.inf, log_target - log_lik)
    return estimate_from_log_terms(terms, epsilon=problem.epsilon, control_tag=batch.control_tag)


@dataclass
class EfficiencyReport:
    epsilons: list[float] = field(default_factory=list)
    ratio_log: list[float] = field(default_factory=list)
    gamma1_hat: list[float] = field(default_factory=list)
    cov_is: list[float] = field(default_factory=list)
    cov_mc: list[float] = field(default_factory=list)
    ess: list[float] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)

    def _append(self, eps, ratio_log=math.nan, gamma1=math.nan, cov_is=math.nan, cov_mc=math.nan, ess=math.nan, error=""):
        self.epsilons.append(eps)
        self.ratio_log.append(ratio_log)
        self.gamma1_hat.append(gamma1)
        self.cov_is.append(cov_is)
        self.cov_mc.append(cov_mc)
        self.ess.append(ess)
        self.errors.append(error)

    @property
    def n_succeeded(self) -> int:
        return sum(1 for e in self.errors if not e)

    def as_dict(self) -> dict:
        return asdict(self)


def efficiency_sweep(
    problem: SdeProblem,
    dictionary: RbfDictionary,
    ce_config: CeConfig,
    epsilons,
    *,
    n_estimate: int | None = None,
    train: bool = True,
    with_mc: bool = True,
) -> EfficiencyReport:
    """Empirical eps * log R_hat(eps) and -eps * log rho_hat across noise levels.

    With ``train=False`` the zero control is used, i.e. crude Monte Carlo.
    The estimation batch uses seed ``ce_config.seed + ce_config.max_iters``,
    which no CE iteration draws from.
    """
    n_estimate = ce_config.n_paths if n_estimate is None else int(n_estimate)
    report = EfficiencyReport()
    est_seed = ce_config.seed + ce_config.max_iters
    for eps in epsilons:
        eps = float(eps)
        try:
            prob = problem.with_epsilon(eps)
            if train:
                ce = ce_run(prob, dictionary, ce_config)
                if ce.error:
                    raise RuntimeError(ce.error)
                model = ControlModel(dictionary, ce.theta)
                batch = simulate_batch(prob, model, n_estimate, est_seed, store_paths=False)
            else:
                model = ControlModel.zeros(dictionary)
                batch = simulate_batch(prob, None, n_estimate, est_seed, store_paths=False)
            est = is_estimate(batch, model, prob)
            cov_mc = math.nan
            if with_mc:
                ref = batch if not train else simulate_batch(prob, None, n_estimate, est_seed, store_paths=False)
                cov_mc = mc_estimate(ref, prob).cov
            report._append(
                eps,
                ratio_log=eps * est.log_ratio,
                gamma1=-eps * est.log_rho_hat,
                cov_is=est.cov,
                cov_mc=cov_mc,
                ess=est.ess,
            )
        except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            logger.warning("sweep at eps=%g failed: %s", eps, exc)
            report._append(eps, error=f"{type(exc).__name__}: {exc}")
    return report
