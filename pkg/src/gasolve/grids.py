"""Timestep grids: fixed discretizations and the trainable stick-breaking one.

Grids are stored high-noise-first, T = t_0 > t_1 > ... > t_N.  The trainable
grid maps logits θ through sigmoids and a cumulative product,

    t_n = (T - δ)·Π_{j≤n} sigmoid(θ_j) + δ,

which is strictly decreasing and bounded in (δ, T] for any finite logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gasolve.errors import InfeasibleScheduleError


@dataclass(frozen=True)
class TimeGrid:
    """Strictly decreasing timesteps t_0 > ... > t_N."""

    steps: np.ndarray

    def __post_init__(self):
        steps = np.asarray(self.steps, dtype=float)
        if steps.ndim != 1 or steps.size < 2:
            raise ValueError("a grid needs at least two timesteps")
        if np.any(np.diff(steps) >= 0.0):
            raise ValueError("grid timesteps must be strictly decreasing")
        object.__setattr__(self, "steps", steps)

    @property
    def n_steps(self) -> int:
        return self.steps.size - 1

    def __getitem__(self, i):
        return self.steps[i]

    def __len__(self):
        return self.steps.size


def polynomial_grid(n_steps: int, rho: float, T: float, delta: float) -> TimeGrid:
    """t_i = (i/N)^ρ (T - δ) + δ, reordered to decrease from T to δ.

    ρ = 1 is the time-uniform schedule, ρ = 2 time-quadratic.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if rho <= 0.0:
        raise ValueError("rho must be positive")
    frac = (np.arange(n_steps, -1, -1, dtype=float) / n_steps) ** rho
    steps = frac * (T - delta) + delta
    steps[0] = T
    steps[-1] = delta
    return TimeGrid(steps)


def logsnr_grid(n_steps: int, schedule, T: float | None = None, delta: float | None = None) -> TimeGrid:
    """Timesteps uniform in λ = log(α/σ) between λ(T) and λ(δ).

    For the VE schedule this is geometric in t: t_i = T·(δ/T)^{i/N}.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    T = schedule.T if T is None else float(T)
    delta = schedule.delta if delta is None else float(delta)
    lam = np.linspace(schedule.log_snr(T), schedule.log_snr(delta), n_steps + 1)
    steps = schedule.time_of_log_snr(lam)
    steps[0] = T
    steps[-1] = delta
    return TimeGrid(steps)


def stickbreak_grid(theta, T: float, delta: float) -> TimeGrid:
    """Trainable grid from logits θ_1..θ_N via the cumulative-product portions."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    portions = 1.0 / (1.0 + np.exp(-theta))
    interior = np.cumprod(portions) * (T - delta) + delta
    return TimeGrid(np.concatenate(([T], interior)))


def stickbreak_inverse(grid: TimeGrid | np.ndarray, delta: float) -> np.ndarray:
    """Logits reproducing `grid` through stickbreak_grid.

    θ_n = logit((t_n - δ)/(t_{n-1} - δ)); raises when any timestep touches δ,
    which the parameterization cannot represent.
    """
    steps = grid.steps if isinstance(grid, TimeGrid) else np.asarray(grid, dtype=float)
    rel = steps - delta
    if np.any(rel[1:] <= 0.0):
        raise InfeasibleScheduleError(
            "grid contains timesteps at or below delta; "
            "the stick-breaking logits cannot represent them"
        )
    ratios = rel[1:] / rel[:-1]
    return np.log(ratios) - np.log1p(-ratios)
