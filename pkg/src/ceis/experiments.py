"""Configuration-driven experiment runs that write CSV and JSON artifacts.

Each ``run_*`` function returns ``(exit_status, summary)``. Stages run in
order; the first failing stage stops the run and is named in the summary.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .config import ExperimentConfig, QuadraticCost
from .control_basis import ControlModel
from .cross_entropy import ce_run, write_theta_history_csv
from .estimators import EstimateReport, efficiency_sweep, is_estimate, mc_estimate
from .pde_reference import reference_control, solve_feynman_kac, write_pde_csv
from .sde_core import SdeProblem, simulate_batch, write_trajectories_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_STAGE_FAILED = 1
EXIT_USAGE = 2

_TABLE_X = np.linspace(-2.0, 2.0, 401)


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage


class _Stages:
    """Run named stages, turning the first exception into a StageError."""

    def __init__(self):
        self.current = None

    def __call__(self, name):
        self.current = name
        return self

    def __enter__(self):
        logger.info("stage %s", self.current)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.current, exc) from exc
        return False


def _clean(value):
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def write_json(record: dict, path) -> None:
    # json emits floats with repr, i.e. round-trip (17 significant digit) precision
    Path(path).write_text(json.dumps(_clean(record), indent=2, sort_keys=True) + "\n")


def _write_estimate(report: EstimateReport, path, **extra) -> None:
    record = report.to_record()
    record["log_ratio"] = report.log_ratio
    record.update(extra)
    write_json(record, path)


def _config_record(cfg: ExperimentConfig) -> dict:
    # the output location is not part of the result, keep it out of the artifacts
    record = cfg.to_dict()
    del record["out"]
    return record


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _failure(out: Path | None, summary: dict, err: StageError) -> tuple[int, dict]:
    summary["status"] = "failed"
    summary["failed_stage"] = err.stage
    summary["error"] = str(err)
    logger.error("%s", err)
    if out is not None:
        write_json(summary, out / "summary.json")
    return EXIT_STAGE_FAILED, summary


def gaussian_closed_form(cfg: ExperimentConfig, epsilon: float | None = None) -> float:
    """rho for zero drift and g(x) = nu (x - 1)^2: X_T ~ N(x0, eps T)."""
    eps = cfg.epsilon if epsilon is None else epsilon
    s = 1.0 + 2.0 * cfg.nu * cfg.T
    return s**-0.5 * math.exp(-cfg.nu * (cfg.x0 - 1.0) ** 2 / (eps * s))


def _estimation_seed(cfg: ExperimentConfig) -> int:
    # CE iteration k draws from seed + k, k < max_iters
    return cfg.seed + cfg.max_iters


def potential_table(cfg: ExperimentConfig, model: ControlModel, solution, x=None) -> np.ndarray:
    """Columns x, V, V_modified, u_theta, u_star on a grid containing 0.

    V_modified(x) = V(x) + int_0^x u_theta, so that -V_modified' = b - u_theta.
    """
    x = _TABLE_X if x is None else np.asarray(x, dtype=np.float64)
    drift = cfg.problem().drift
    v = drift.potential(x)
    u = model.value(x)
    integral = cumulative_trapezoid(u, x, initial=0.0)
    integral -= np.interp(0.0, x, integral)
    u_star = reference_control(solution, x)
    return np.column_stack([x, v, v + integral, u, u_star])


def write_potential_csv(table: np.ndarray, path) -> None:
    np.savetxt(path, table, delimiter=",", header="x,V(x),V_modified(x),u_theta(x),u_star(x)", comments="", fmt="%.17g")


def run_doublewell(cfg: ExperimentConfig) -> tuple[int, dict]:
    out = _out_dir(cfg)
    problem = cfg.problem()
    dictionary = cfg.dictionary()
    est_seed = _estimation_seed(cfg)
    n_plot = min(cfg.n_plot_paths, cfg.N_estimate)
    summary = {"experiment": "doublewell", "config": _config_record(cfg)}
    stage = _Stages()
    try:
        with stage("uncontrolled"):
            ref = simulate_batch(problem, None, cfg.N_estimate, est_seed, store_paths=False)
            mc = mc_estimate(ref, problem)
            _write_estimate(mc, out / "estimate_mc.json", estimator="crude_mc")
            if n_plot:
                # per-path streams: these are the first n_plot paths of the batch above
                write_trajectories_csv(
                    simulate_batch(problem, None, n_plot, est_seed), out / "trajectories_uncontrolled.csv"
                )
            summary["mc"] = mc.to_record()
            summary["fraction_above_half_uncontrolled"] = float(np.mean(ref.terminal > 0.5))

        with stage("cross_entropy"):
            ce = ce_run(problem, dictionary, cfg.ce_config())
            write_theta_history_csv(ce, out / "theta_history.csv")
            summary["ce"] = {
                "converged": ce.converged,
                "iterations_used": ce.iterations_used,
                "ess_history": ce.ess_history,
                "exploded_history": ce.exploded_history,
                "theta": ce.theta.tolist(),
            }
            if ce.error:
                raise RuntimeError(ce.error)
            model = ControlModel(dictionary, ce.theta)

        with stage("importance_sampling"):
            batch = simulate_batch(problem, model, cfg.N_estimate, est_seed, store_paths=False)
            est = is_estimate(batch, model, problem)
            _write_estimate(est, out / "estimate_is.json", estimator="importance_sampling")
            if n_plot:
                write_trajectories_csv(
                    simulate_batch(problem, model, n_plot, est_seed), out / "trajectories_controlled.csv"
                )
            summary["is"] = est.to_record()
            summary["fraction_above_half_controlled"] = float(np.mean(batch.terminal[~batch.exploded] > 0.5))

        with stage("pde_reference"):
            solution = solve_feynman_kac(problem, cfg.pde_grid(), keep_history=False)
            write_pde_csv(solution, out / "pde_reference.csv")
            summary["rho_ref"] = solution.rho_ref
            summary["log_rho_ref"] = solution.log_rho_ref
            summary["is_log_error"] = est.log_rho_hat - solution.log_rho_ref

        with stage("potential_table"):
            write_potential_csv(potential_table(cfg, model, solution), out / "potential_control.csv")
    except StageError as err:
        return _failure(out, summary, err)

    summary["status"] = "ok"
    write_json(summary, out / "summary.json")
    return EXIT_OK, summary


def _gaussian_problem(cfg: ExperimentConfig) -> SdeProblem:
    return SdeProblem(_zero_drift, cfg.epsilon, QuadraticCost(cfg.nu), cfg.x0, cfg.T, cfg.dt)


def _zero_drift(x, t=0.0):
    return np.zeros_like(np.asarray(x, dtype=np.float64))


def _relative_error(value: float, exact: float) -> float:
    return abs(value - exact) / exact


def run_gaussian_oracle(cfg: ExperimentConfig) -> tuple[int, dict]:
    """Compare crude MC, CE-trained IS and the PDE with the closed form."""
    out = _out_dir(cfg)
    summary = {"experiment": "gaussian", "config": _config_record(cfg)}
    if cfg.kappa != 0:
        err = StageError("validate", ValueError(f"the Gaussian oracle needs kappa = 0, got {cfg.kappa}"))
        return _failure(out, summary, err)
    problem = _gaussian_problem(cfg)
    dictionary = cfg.dictionary()
    est_seed = _estimation_seed(cfg)
    exact = gaussian_closed_form(cfg)
    summary["rho_exact"] = exact
    summary["log_rho_exact"] = math.log(exact)
    stage = _Stages()
    try:
        with stage("crude_mc"):
            mc = mc_estimate(simulate_batch(problem, None, cfg.N_estimate, est_seed, store_paths=False), problem)
            summary["mc"] = mc.to_record() | {"relative_error": _relative_error(mc.rho_hat, exact)}

        with stage("cross_entropy"):
            if cfg.nu == 0:
                # constant terminal cost: the reference measure is already zero variance
                model = ControlModel.zeros(dictionary)
                summary["ce"] = {"skipped": "terminal cost is constant", "theta": model.theta.tolist()}
            else:
                ce = ce_run(problem, dictionary, cfg.ce_config())
                write_theta_history_csv(ce, out / "theta_history.csv")
                summary["ce"] = {
                    "converged": ce.converged,
                    "iterations_used": ce.iterations_used,
                    "ess_history": ce.ess_history,
                    "theta": ce.theta.tolist(),
                }
                if ce.error:
                    raise RuntimeError(ce.error)
                model = ControlModel(dictionary, ce.theta)

        with stage("importance_sampling"):
            control = model if np.any(model.theta) else None
            batch = simulate_batch(problem, control, cfg.N_estimate, est_seed, store_paths=False)
            est = is_estimate(batch, model, problem)
            summary["is"] = est.to_record() | {"relative_error": _relative_error(est.rho_hat, exact)}

        with stage("pde_reference"):
            solution = solve_feynman_kac(problem, cfg.pde_grid(), keep_history=False)
            write_pde_csv(solution, out / "pde_reference.csv")
            summary["pde"] = {
                "rho_ref": solution.rho_ref,
                "log_rho_ref": solution.log_rho_ref,
                "relative_error": _relative_error(solution.rho_ref, exact),
            }
    except StageError as err:
        return _failure(out, summary, err)

    summary["status"] = "ok"
    write_json(summary, out / "gaussian_comparison.json")
    write_json(summary, out / "summary.json")
    return EXIT_OK, summary


def run_sweep(cfg: ExperimentConfig, epsilons=None, *, train: bool = True) -> tuple[int, dict]:
    """Efficiency sweep over noise levels; kappa = 0 gives the Gaussian case."""
    epsilons = list(cfg.epsilons if epsilons is None else epsilons)
    if not epsilons:
        raise ValueError("the sweep needs at least one epsilon")
    out = _out_dir(cfg)
    problem = cfg.problem() if cfg.kappa != 0 else _gaussian_problem(cfg)
    # constant terminal cost: the reference measure is already zero variance
    train = train and cfg.nu != 0
    report = efficiency_sweep(
        problem, cfg.dictionary(), cfg.ce_config(), epsilons, n_estimate=cfg.N_estimate, train=train
    )
    write_sweep_csv(report, out / "sweep.csv")
    summary = {"experiment": "sweep", "config": _config_record(cfg), "train": train, "report": report.as_dict()}
    summary["status"] = "ok" if report.n_succeeded else "failed"
    write_json(summary, out / "summary.json")
    return (EXIT_OK if report.n_succeeded else EXIT_STAGE_FAILED), summary


def write_sweep_csv(report, path) -> None:
    lines = ["epsilon,eps_log_R,gamma1_hat,cov_is,cov_mc,ess,error"]
    for i, eps in enumerate(report.epsilons):
        values = [eps, report.ratio_log[i], report.gamma1_hat[i], report.cov_is[i], report.cov_mc[i], report.ess[i]]
        cells = [repr(float(v)) for v in values]
        error = report.errors[i].replace('"', "'")
        cells.append(f'"{error}"' if error else "")
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def run_pde(cfg: ExperimentConfig) -> tuple[int, dict]:
    """Reference solution alone, for the configured (double-well or Gaussian) problem."""
    out = _out_dir(cfg)
    summary = {"experiment": "pde", "config": _config_record(cfg)}
    problem = cfg.problem() if cfg.kappa != 0 else _gaussian_problem(cfg)
    stage = _Stages()
    try:
        with stage("pde_reference"):
            solution = solve_feynman_kac(problem, cfg.pde_grid(), keep_history=False)
            write_pde_csv(solution, out / "pde_reference.csv")
            summary["rho_ref"] = solution.rho_ref
            summary["log_rho_ref"] = solution.log_rho_ref
    except StageError as err:
        return _failure(out, summary, err)
    summary["status"] = "ok"
    write_json(summary, out / "summary.json")
    return EXIT_OK, summary


RUNNERS = {
    "doublewell": run_doublewell,
    "gaussian": run_gaussian_oracle,
    "sweep": run_sweep,
    "pde": run_pde,
}


def with_seed_and_out(cfg: ExperimentConfig, seed=None, out=None) -> ExperimentConfig:
    updates = {}
    if seed is not None:
        updates["seed"] = int(seed)
    if out is not None:
        updates["out"] = str(out)
    return replace(cfg, **updates) if updates else cfg
