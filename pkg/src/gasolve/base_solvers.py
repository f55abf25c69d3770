"""Baseline PF-ODE integrators: Euler, multistep DPM-Solver++(3M), and RK4.

The multistep solver works in the data-prediction parameterization.  With
λ = log(α/σ), h = λ(t_next) - λ(t_cur) and ψ₁ = e^{-h} - 1 one step reads

    x_next = (σ_next/σ_cur)·x - α_next·ψ₁·x̂₀(x, t_cur)

plus finite-difference correction terms D1/D2 built from the two previous
data predictions once enough history exists (ψ₂ = ψ₁/h + 1, ψ₃ = ψ₂/h - ½).
The RK4 oracle gives a near-exact reference on problems without a closed
form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gasolve.diffusion import (
    MixtureModel,
    NoiseSchedule,
    State,
    data_prediction,
    velocity,
)
from gasolve.grids import TimeGrid, logsnr_grid, polynomial_grid

TEACHER_KINDS = ("dpmpp3m", "rk4-oracle")
GRID_KINDS = ("logsnr", "polynomial")


@dataclass
class Trajectory:
    """History consumed by multistep updates: points x_j, data predictions, times."""

    points: list = field(default_factory=list)
    evals: list = field(default_factory=list)
    times: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.points) - 1

    def append_point(self, x):
        self.points.append(np.asarray(x, dtype=float))

    def append_eval(self, value, t: float):
        self.evals.append(np.asarray(value, dtype=float))
        self.times.append(float(t))


@dataclass(frozen=True)
class TeacherConfig:
    """Reference sampler: solver kind, evaluation budget, and grid choice."""

    kind: str = "dpmpp3m"
    nfe: int = 20
    grid_kind: str = "logsnr"
    rho: float = 1.0

    def __post_init__(self):
        if self.kind not in TEACHER_KINDS:
            raise ValueError(f"unknown teacher kind {self.kind!r}")
        if self.grid_kind not in GRID_KINDS:
            raise ValueError(f"unknown grid kind {self.grid_kind!r}")
        if self.nfe < 1:
            raise ValueError("nfe must be >= 1")

    def make_grid(self, schedule: NoiseSchedule) -> TimeGrid:
        if self.grid_kind == "logsnr":
            return logsnr_grid(self.nfe, schedule)
        return polynomial_grid(self.nfe, self.rho, schedule.T, schedule.delta)


def euler_step(model, schedule, state: State, t_next: float) -> State:
    """x' = x + (t_next - t)·velocity(x, t); steps must not increase t."""
    t_next = float(t_next)
    if t_next > state.t:
        raise ValueError("euler_step requires t_next <= current time")
    x = state.x + (t_next - state.t) * velocity(model, schedule, state.x, state.t)
    return State(x=x, t=t_next)


def _psi1(h):
    return np.expm1(-h)


def dpmpp3m_step(schedule, traj: Trajectory, grid: TimeGrid, n: int):
    """One multistep update from x_n to x_{n+1}, using stored data predictions.

    The trajectory must already hold the evaluation at step n; the first two
    steps fall back to the lower-order forms.
    """
    if traj.n < n or len(traj.evals) < n + 1:
        raise ValueError(f"trajectory lacks history for step {n}")
    if len(grid) < n + 2:
        raise ValueError(f"grid has no target timestep for step {n}")
    t_cur, t_next = grid[n], grid[n + 1]
    lam = schedule.log_snr(np.array([grid[i] for i in range(n + 2)]))
    h = lam[n + 1] - lam[n]
    sigma_cur = schedule.sigma(t_cur)
    sigma_next = schedule.sigma(t_next)
    alpha_next = schedule.alpha(t_next)
    psi1 = _psi1(h)

    x = (sigma_next / sigma_cur) * traj.points[n] - (alpha_next * psi1) * traj.evals[n]
    if n == 1:
        h_prev = lam[1] - lam[0]
        r0 = h_prev / h
        d1_0 = (traj.evals[1] - traj.evals[0]) / r0
        x = x - (alpha_next * psi1 / 2.0) * d1_0
    elif n >= 2:
        h_prev = lam[n] - lam[n - 1]
        h_prev2 = lam[n - 1] - lam[n - 2]
        r0 = h_prev / h
        r1 = h_prev2 / h
        psi2 = psi1 / h + 1.0
        # interpolatory weight: exact when the data prediction is quadratic
        # in lambda, which makes the local error O(h^4)
        psi3 = 2.0 * (psi2 / h - 0.5)
        d1_0 = (traj.evals[n] - traj.evals[n - 1]) / r0
        d1_1 = (traj.evals[n - 1] - traj.evals[n - 2]) / r1
        d1 = d1_0 + (r0 / (r0 + r1)) * (d1_0 - d1_1)
        d2 = (d1_0 - d1_1) / (r0 + r1)
        x = x + (alpha_next * psi2) * d1 - (alpha_next * psi3) * d2
    return x


def dpmpp3m_rollout(model, schedule, grid: TimeGrid, x_T):
    """Run the multistep solver over the whole grid; returns the endpoint."""
    traj = Trajectory()
    traj.append_point(np.asarray(x_T, dtype=float))
    for n in range(grid.n_steps):
        t_n = grid[n]
        traj.append_eval(data_prediction(model, schedule, traj.points[n], t_n), t_n)
        traj.append_point(dpmpp3m_step(schedule, traj, grid, n))
    return traj.points[-1]


def euler_rollout(model, schedule, grid: TimeGrid, x_T):
    state = State(x=np.asarray(x_T, dtype=float), t=grid[0])
    for n in range(grid.n_steps):
        state = euler_step(model, schedule, state, grid[n + 1])
    return state.x


def rk4_solve(model, schedule, x_T, substeps: int):
    """Classical RK4 on the velocity field over a λ-uniform grid from T to δ."""
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    grid = logsnr_grid(substeps, schedule)
    x = np.asarray(x_T, dtype=float)
    for n in range(grid.n_steps):
        a, b = grid[n], grid[n + 1]
        h = b - a
        k1 = velocity(model, schedule, x, a)
        k2 = velocity(model, schedule, x + 0.5 * h * k1, a + 0.5 * h)
        k3 = velocity(model, schedule, x + 0.5 * h * k2, a + 0.5 * h)
        k4 = velocity(model, schedule, x + h * k3, b)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


def teacher_rollout(model, schedule, cfg: TeacherConfig, x_T):
    """Reference sampler endpoint Φ(x_T); deterministic in its inputs."""
    x_T = np.asarray(x_T, dtype=float)
    if not np.all(np.isfinite(x_T)):
        raise ValueError("x_T must be finite")
    if cfg.kind == "rk4-oracle":
        return rk4_solve(model, schedule, x_T, cfg.nfe)
    return dpmpp3m_rollout(model, schedule, cfg.make_grid(schedule), x_T)
