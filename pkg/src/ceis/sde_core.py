"""Scalar diffusion problems and Euler-Maruyama path simulation.

The simulated dynamics are

    X_{n+1} = X_n + (b(X_n, t_n) - u(X_n)) dt + sqrt(eps * dt) Z_n

with unit diffusion coefficient. ``u`` is an optional feedback control; with no
control the paths are drawn from the reference (uncontrolled) measure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

#: Paths leaving this box are aborted and carry zero importance weight.
EXPLOSION_BOUND = 1.0e6

DEFAULT_CHUNK = 2048
_TIME_BLOCK = 64
_SEED_MASK = (1 << 64) - 1


class IntegrationDivergedError(FloatingPointError):
    """Raised when the Euler-Maruyama update produces a non-finite state."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class Basis(Protocol):
    """Anything that evaluates a (n, J) feature matrix of control basis values."""

    size: int

    def psi(self, x: np.ndarray) -> np.ndarray: ...


class Control(Protocol):
    tag: str
    dictionary: Basis
    theta: np.ndarray

    def value(self, x: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    dt: float
    num_steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.num_steps < 1:
            raise ValueError(f"num_steps must be >= 1, got {self.num_steps}")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.num_steps + 1) * self.dt

    def time(self, n: int) -> float:
        return self.t0 + n * self.dt

    @property
    def t_final(self) -> float:
        return self.time(self.num_steps)


@dataclass(frozen=True)
class SdeProblem:
    """Drift, noise level, terminal cost and discretization of one problem.

    ``drift(x, t)`` and ``terminal_cost(x)`` must accept numpy arrays and
    broadcast elementwise.
    """

    drift: Callable[[np.ndarray, float], np.ndarray]
    epsilon: float
    terminal_cost: Callable[[np.ndarray], np.ndarray]
    x0: float
    horizon: float
    dt: float
    num_steps: int = field(init=False)

    def __post_init__(self):
        for name in ("epsilon", "horizon", "dt"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value}")
        if not math.isfinite(self.x0):
            raise ValueError(f"x0 must be finite, got {self.x0}")
        ratio = self.horizon / self.dt
        steps = round(ratio)
        if steps < 1 or abs(ratio - steps) > 1e-9 * max(1.0, ratio):
            raise ValueError(
                f"horizon/dt = {ratio!r} is not a positive integer "
                f"(horizon={self.horizon}, dt={self.dt})"
            )
        object.__setattr__(self, "num_steps", int(steps))

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(0.0, self.dt, self.num_steps)

    def with_epsilon(self, epsilon: float) -> "SdeProblem":
        return SdeProblem(
            self.drift, epsilon, self.terminal_cost, self.x0, self.horizon, self.dt
        )


@dataclass(frozen=True)
class Trajectory:
    grid: TimeGrid
    states: np.ndarray

    def __post_init__(self):
        if self.states.shape != (self.grid.num_steps + 1,):
            raise ValueError(
                f"expected {self.grid.num_steps + 1} states, got {self.states.shape}"
            )

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.states)

    @property
    def terminal(self) -> float:
        return float(self.states[-1])


@dataclass(frozen=True)
class PathStatistics:
    """Per-path sufficient statistics of the quadratic log-likelihood.

    With left-endpoint sums over n = 0..M-1,

        drive[i, j] = sum_n psi_j(X_n) (dX_n - b(X_n, t_n) dt)
        gram[i, j, k] = sum_n psi_j(X_n) psi_k(X_n) dt

    so that log L^theta_i = -(theta @ drive[i]) / eps - theta @ gram[i] @ theta / (2 eps).
    """

    drive: np.ndarray
    gram: np.ndarray


@dataclass(frozen=True)
class TrajectoryBatch:
    """Simulated paths on a shared grid.

    ``log_likelihood`` is log dQ/dP of the control used to simulate (zero when
    uncontrolled). ``states`` is ``None`` when paths were not stored, in which
    case only terminal values and statistics are available.
    """

    grid: TimeGrid
    seed: int
    control_tag: str
    terminal: np.ndarray
    exploded: np.ndarray
    log_likelihood: np.ndarray
    states: np.ndarray | None = None
    stats: PathStatistics | None = None
    stats_basis: object | None = None

    def __len__(self) -> int:
        return self.terminal.shape[0]

    def __getitem__(self, i: int) -> Trajectory:
        if self.states is None:
            raise ValueError("batch was simulated with store_paths=False")
        return Trajectory(self.grid, self.states[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def n_exploded(self) -> int:
        return int(self.exploded.sum())


def euler_step(
    x: float,
    t: float,
    problem: SdeProblem,
    control_value: float,
    gaussian_draw: float,
    step: int | None = None,
) -> float:
    """Advance one Euler-Maruyama step of the controlled dynamics."""
    drift = float(problem.drift(np.float64(x), t))
    x_new = (
        x
        + (drift - control_value) * problem.dt
        + math.sqrt(problem.epsilon) * math.sqrt(problem.dt) * gaussian_draw
    )
    if not math.isfinite(x_new):
        where = f" at step {step}" if step is not None else ""
        raise IntegrationDivergedError(
            f"non-finite state{where} (x={x}, t={t}, u={control_value})", step
        )
    return x_new


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Independent counter-based stream keyed by (seed, trajectory index)."""
    key = (int(index) << 64) | (int(seed) & _SEED_MASK)
    return np.random.Generator(np.random.Philox(key=key))


def _draws(seed: int, start: int, stop: int, num_steps: int) -> np.ndarray:
    out = np.empty((stop - start, num_steps))
    for row, i in enumerate(range(start, stop)):
        out[row] = trajectory_rng(seed, i).standard_normal(num_steps)
    return out


def control_tag(control: Control | None) -> str:
    return "none" if control is None else control.tag


def simulate_batch(
    problem: SdeProblem,
    control: Control | None = None,
    n_paths: int = 1,
    seed: int = 0,
    *,
    basis: Basis | None = None,
    store_paths: bool = True,
    noise: bool = True,
    chunk_size: int = DEFAULT_CHUNK,
) -> TrajectoryBatch:
    """Simulate ``n_paths`` Euler-Maruyama paths started at ``problem.x0``.

    Parameters
    ----------
    control
        Feedback control ``u``; ``None`` samples the uncontrolled dynamics.
    basis
        If given, per-path :class:`PathStatistics` are accumulated for it.
        Defaults to the control's dictionary when a control is supplied.
    store_paths
        Keep the full ``(n_paths, M + 1)`` state array.
    noise
        Test hook; ``False`` forces every Gaussian draw to zero.

    Output is a pure function of ``(problem, control, n_paths, seed)``: each
    path draws from its own stream, so results do not depend on ``chunk_size``.
    """
    n_paths = int(n_paths)
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths}")
    if basis is None and control is not None:
        basis = control.dictionary
    grid = problem.grid
    m = grid.num_steps
    dt = problem.dt
    scale = math.sqrt(problem.epsilon) * math.sqrt(dt)
    times = grid.times
    theta = None if control is None else np.asarray(control.theta, dtype=np.float64)
    share_psi = control is not None and basis is control.dictionary

    terminal = np.empty(n_paths)
    exploded = np.zeros(n_paths, dtype=bool)
    log_lik = np.zeros(n_paths)
    states = np.empty((n_paths, m + 1)) if store_paths else None
    stats = None
    if basis is not None:
        n_basis = basis.size
        stats = PathStatistics(
            np.zeros((n_paths, n_basis)), np.zeros((n_paths, n_basis, n_basis))
        )

    # exploding paths overflow before the guard freezes them
    with np.errstate(over="ignore", invalid="ignore"):
        for start in range(0, n_paths, chunk_size):
            stop = min(n_paths, start + chunk_size)
            rows = stop - start
            z = np.ascontiguousarray(_draws(seed, start, stop, m).T) if noise else np.zeros((m, rows))
            x = np.full(rows, float(problem.x0))
            alive = np.ones(rows, dtype=bool)
            death = np.full(rows, m + 1)
            ll = np.zeros(rows)
            if states is not None:
                states[start:stop, 0] = x
            if stats is not None:
                drive = np.zeros((rows, basis.size))
                gram = np.zeros((rows, basis.size, basis.size))
                block = np.empty((_TIME_BLOCK, rows, basis.size))
                product = np.empty_like(gram)
                filled = 0

            for n in range(m):
                b = np.asarray(problem.drift(x, times[n]), dtype=np.float64)
                psi = basis.psi(x) if basis is not None else None
                if control is None:
                    u = None
                    x_new = x + b * dt + scale * z[n]
                else:
                    u = np.sum(psi * theta, axis=1) if share_psi else control.value(x)
                    x_new = x + (b - u) * dt + scale * z[n]

                bad = alive & ~(np.abs(x_new) <= EXPLOSION_BOUND)
                if bad.any():
                    alive &= ~bad
                    death[bad] = n + 1
                    x_new[bad] = x[bad]
                dx = x_new - x
                if u is not None:
                    ll += -u * dx + u * b * dt - 0.5 * u * u * dt
                if stats is not None:
                    drive += psi * (dx - b * dt)[:, None]
                    block[filled] = psi
                    filled += 1
                    if filled == _TIME_BLOCK or n == m - 1:
                        view = block[:filled]
                        np.matmul(view.transpose(1, 2, 0), view.transpose(1, 0, 2), out=product)
                        gram += product
                        filled = 0
                x = x_new
                if states is not None:
                    states[start:stop, n + 1] = x

            dead = ~alive
            exploded[start:stop] = dead
            terminal[start:stop] = np.where(alive, x, np.nan)
            log_lik[start:stop] = np.where(alive, ll / problem.epsilon, np.nan)
            if states is not None:
                for row in np.flatnonzero(dead):
                    states[start + row, death[row]:] = np.nan
            if stats is not None:
                gram *= dt
                drive[dead] = 0.0
                gram[dead] = 0.0
                stats.drive[start:stop] = drive
                stats.gram[start:stop] = gram

    if exploded.all():
        raise IntegrationDivergedError(
            f"all {n_paths} paths left |x| <= {EXPLOSION_BOUND:g} or became non-finite"
        )
    return TrajectoryBatch(
        grid=grid,
        seed=int(seed),
        control_tag=control_tag(control),
        terminal=terminal,
        exploded=exploded,
        log_likelihood=log_lik,
        states=states,
        stats=stats,
        stats_basis=basis,
    )


def write_trajectories_csv(batch: TrajectoryBatch, path, max_paths: int | None = None) -> None:
    """Write ``t,path_0,...,path_{N-1}`` with one row per grid node."""
    if batch.states is None:
        raise ValueError("batch has no stored paths")
    states = batch.states if max_paths is None else batch.states[:max_paths]
    table = np.column_stack([batch.grid.times, states.T])
    header = ",".join(["t"] + [f"path_{i}" for i in range(states.shape[0])])
    np.savetxt(path, table, delimiter=",", header=header, comments="", fmt="%.17g")
