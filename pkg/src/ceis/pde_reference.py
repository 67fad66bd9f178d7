"""Finite-difference reference solution of the backward Kolmogorov equation.

Solves

    d_t phi + b d_x phi + (eps/2) sigma^2 d_xx phi = 0,   phi(x, T) = exp(-g(x)/eps)

backward in time with Crank-Nicolson, centered differences and homogeneous
Neumann boundaries. ``phi(x0, 0)`` is the reference value of rho and
``W = -eps log phi`` the value function whose gradient gives the optimal
control.

Sign convention: the simulator moves paths with drift ``b - u``, so the
optimal feedback in that convention is ``u*(x) = sigma d_x W(x, 0)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import solve_banded

from .sde_core import SdeProblem

PHI_FLOOR = 1e-300


class PositivityError(ArithmeticError):
    pass


class ExtrapolationError(ValueError):
    pass


@dataclass(frozen=True)
class PdeGrid:
    x_min: float
    x_max: float
    nx: int
    nt: int

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ValueError(f"x_min must be < x_max, got [{self.x_min}, {self.x_max}]")
        if self.nx < 3:
            raise ValueError(f"nx must be >= 3, got {self.nx}")
        if self.nt < 1:
            raise ValueError(f"nt must be >= 1, got {self.nt}")

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)

    def refined(self, factor: int = 2) -> "PdeGrid":
        return PdeGrid(self.x_min, self.x_max, factor * (self.nx - 1) + 1, factor * self.nt)


@dataclass(frozen=True)
class PdeSolution:
    grid: PdeGrid
    times: np.ndarray
    phi: np.ndarray
    w: np.ndarray
    rho_ref: float
    u_star: np.ndarray
    epsilon: float
    horizon: float
    x0: float

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    @property
    def log_rho_ref(self) -> float:
        return -float(np.interp(self.x0, self.x, self.w[0])) / self.epsilon


def _operator_bands(x, dx, b, diff):
    """Tridiagonal bands of the spatial operator with mirrored ghost nodes."""
    lower = diff / dx**2 - b / (2.0 * dx)
    diag = -2.0 * diff / dx**2
    upper = diff / dx**2 + b / (2.0 * dx)
    sup = upper.copy()
    sub = lower.copy()
    sup[0] = lower[0] + upper[0]
    sub[-1] = lower[-1] + upper[-1]
    return sub, diag, sup


def solve_feynman_kac(
    problem: SdeProblem,
    grid: PdeGrid,
    sigma: Callable[[np.ndarray, float], np.ndarray] | None = None,
    *,
    keep_history: bool = True,
) -> PdeSolution:
    """March the linear backward equation from t = T to 0.

    ``sigma(x, t)`` defaults to one. With ``keep_history=False`` only the
    t = 0 slice is stored.
    """
    if not grid.x_min < problem.x0 < grid.x_max:
        raise ValueError(
            f"x0={problem.x0} lies outside the PDE domain [{grid.x_min}, {grid.x_max}]"
        )
    x = grid.x
    dx = grid.dx
    eps = problem.epsilon
    horizon = problem.horizon
    dtau = horizon / grid.nt

    def bands(t):
        b = np.broadcast_to(np.asarray(problem.drift(x, t), dtype=np.float64), x.shape)
        s = np.ones_like(x) if sigma is None else np.broadcast_to(np.asarray(sigma(x, t), dtype=np.float64), x.shape)
        return _operator_bands(x, dx, b, 0.5 * eps * s * s)

    phi = np.exp(-np.asarray(problem.terminal_cost(x), dtype=np.float64) / eps)
    phi = np.broadcast_to(phi, x.shape).copy()
    if not np.all(np.isfinite(phi)):
        raise ValueError("terminal data exp(-g/eps) is not finite on the grid")
    lo_bound, hi_bound = phi.min(), phi.max()
    slack = 1e-10 * max(hi_bound, PHI_FLOOR)

    history = [phi.copy()] if keep_history else None
    sub_next, diag_next, sup_next = bands(horizon)
    ab = np.empty((3, grid.nx))
    for n in range(grid.nt - 1, -1, -1):
        t = n * dtau
        rhs = phi + 0.5 * dtau * (diag_next * phi)
        rhs[:-1] += 0.5 * dtau * sup_next[:-1] * phi[1:]
        rhs[1:] += 0.5 * dtau * sub_next[1:] * phi[:-1]

        sub, diag, sup = bands(t)
        ab[0, 1:] = -0.5 * dtau * sup[:-1]
        ab[1] = 1.0 - 0.5 * dtau * diag
        ab[2, :-1] = -0.5 * dtau * sub[1:]
        phi = solve_banded((1, 1), ab, rhs, overwrite_b=True, check_finite=False)

        # nodes whose terminal data underflowed may sit at exactly zero; negatives never
        if phi.min() < 0:
            raise PositivityError(
                f"phi lost positivity at t={t:.6g} (min {phi.min():.3g}); "
                "refine the grid (smaller dx or dtau)"
            )
        if phi.min() < lo_bound - slack or phi.max() > hi_bound + slack:
            raise PositivityError(
                f"maximum principle violated at t={t:.6g}; refine the grid"
            )
        sub_next, diag_next, sup_next = sub, diag, sup
        if history is not None:
            history.append(phi.copy())

    if history is not None:
        phis = np.array(history[::-1])
        times = np.arange(grid.nt + 1) * dtau
    else:
        phis = phi[None, :]
        times = np.array([0.0])
    w = -eps * np.log(np.maximum(phis, PHI_FLOOR))

    s0 = np.ones_like(x) if sigma is None else np.broadcast_to(np.asarray(sigma(x, 0.0), dtype=np.float64), x.shape)
    u_star = s0 * np.gradient(w[0], dx, edge_order=2)
    # log-linear interpolation is far more accurate than linear for exp-shaped phi
    rho_ref = math.exp(-float(np.interp(problem.x0, x, w[0])) / eps)
    return PdeSolution(grid, times, phis, w, rho_ref, u_star, eps, horizon, float(problem.x0))


def reference_control(solution: PdeSolution, x) -> np.ndarray | float:
    """Optimal feedback at t = 0, linearly interpolated from grid nodes."""
    xs = np.asarray(x, dtype=np.float64)
    if np.any(xs < solution.grid.x_min) or np.any(xs > solution.grid.x_max):
        raise ExtrapolationError(
            f"requested states outside [{solution.grid.x_min}, {solution.grid.x_max}]"
        )
    out = np.interp(xs, solution.x, solution.u_star)
    return float(out) if out.ndim == 0 else out


def control_distance(solution: PdeSolution, model, x_samples) -> float:
    """Sup distance between a fitted control and the reference control on samples."""
    xs = np.atleast_1d(np.asarray(x_samples, dtype=np.float64))
    ref = reference_control(solution, xs)
    return float(np.max(np.abs(np.asarray(model.value(xs)) - ref)))


def write_pde_csv(solution: PdeSolution, path) -> None:
    """Write ``x,phi_t0,w_t0,u_star_t0`` after a ``#``-prefixed metadata line."""
    g = solution.grid
    meta = (
        f"# x_min={g.x_min!r} x_max={g.x_max!r} nx={g.nx} nt={g.nt} "
        f"epsilon={solution.epsilon!r} horizon={solution.horizon!r} rho_ref={solution.rho_ref!r}"
    )
    table = np.column_stack([solution.x, solution.phi[0], solution.w[0], solution.u_star])
    np.savetxt(path, table, delimiter=",", header=meta + "\nx,phi_t0,w_t0,u_star_t0", comments="", fmt="%.17g")
