"""Evaluation metrics: endpoint errors, closed-form W2, energy distance,
and empirical convergence-order estimation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from gasolve.base_solvers import dpmpp3m_rollout, euler_rollout, rk4_solve
from gasolve.diffusion import MixtureModel, NoiseSchedule, State, exact_gaussian_path
from gasolve.errors import DegenerateFitError
from gasolve.grids import logsnr_grid

SOLVER_KINDS = ("euler", "dpmpp3m", "rk4")


@dataclass(frozen=True)
class OrderEstimate:
    """Least-squares convergence order from an error-vs-steps sweep."""

    step_counts: tuple
    errors: tuple
    order: float
    residual: float

    def __post_init__(self):
        if len(self.step_counts) < 3:
            raise ValueError("order estimation needs at least 3 step counts")
        if any(e <= 0.0 for e in self.errors):
            raise ValueError("errors must be positive")


def endpoint_error(student_outputs, reference_outputs) -> float:
    """Mean Euclidean norm of per-sample differences."""
    a = np.atleast_2d(np.asarray(student_outputs, dtype=float))
    b = np.atleast_2d(np.asarray(reference_outputs, dtype=float))
    if a.shape != b.shape:
        raise ValueError("sample sets must have matching shapes")
    return float(np.mean(np.linalg.norm(a - b, axis=-1)))


def w2_gaussian(mu1, var1_diag, mu2, var2_diag) -> float:
    """2-Wasserstein distance between diagonal Gaussians.

    sqrt(||mu1-mu2||^2 + sum_i (sigma1_i - sigma2_i)^2) with sigma = sqrt(var).
    """
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=float))
    mu2 = np.atleast_1d(np.asarray(mu2, dtype=float))
    v1 = np.atleast_1d(np.asarray(var1_diag, dtype=float))
    v2 = np.atleast_1d(np.asarray(var2_diag, dtype=float))
    if np.any(v1 <= 0.0) or np.any(v2 <= 0.0):
        raise ValueError("variances must be positive")
    return float(np.sqrt(np.sum((mu1 - mu2) ** 2) + np.sum((np.sqrt(v1) - np.sqrt(v2)) ** 2)))


def energy_distance(X, Y) -> float:
    """V-statistic estimator 2 E||x-y|| - E||x-x'|| - E||y-y'||.

    Self-pairs are included, which keeps the estimator non-negative and makes
    identical multisets evaluate to exactly zero.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[0] == 0 or Y.shape[0] == 0:
        raise ValueError("sample sets must be non-empty")
    cross = cdist(X, Y).mean()
    within_x = cdist(X, X).mean()
    within_y = cdist(Y, Y).mean()
    return float(2.0 * cross - within_x - within_y)


def fit_order(step_counts, errors) -> OrderEstimate:
    """Slope of log(error) against log(1/N)."""
    step_counts = tuple(int(n) for n in step_counts)
    errors = tuple(float(e) for e in errors)
    if len(step_counts) < 3:
        raise ValueError("order estimation needs at least 3 step counts")
    if any(e <= 0.0 or not np.isfinite(e) for e in errors):
        raise DegenerateFitError(
            "errors must be positive and finite to fit a convergence order"
        )
    x = np.log(1.0 / np.asarray(step_counts, dtype=float))
    y = np.log(np.asarray(errors))
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return OrderEstimate(step_counts=step_counts, errors=errors, order=float(slope), residual=resid)


def convergence_order(
    solver_kind: str,
    model: MixtureModel,
    schedule: NoiseSchedule,
    x_T,
    step_counts=(10, 20, 40, 80),
    reference=None,
) -> OrderEstimate:
    """Run a solver at several budgets against an exact or oracle endpoint.

    The reference defaults to the closed-form path for single-component
    mixtures and a 10,000-step RK4 solve otherwise.
    """
    if solver_kind not in SOLVER_KINDS:
        raise ValueError(f"solver_kind must be one of {SOLVER_KINDS}")
    x_T = np.asarray(x_T, dtype=float)
    if reference is None:
        if model.n_components == 1:
            reference = exact_gaussian_path(
                model, schedule, State(x=x_T, t=schedule.T), schedule.delta
            )
        else:
            reference = rk4_solve(model, schedule, x_T, 10_000)
    errors = []
    for n in step_counts:
        if solver_kind == "euler":
            out = euler_rollout(model, schedule, logsnr_grid(int(n), schedule), x_T)
        elif solver_kind == "dpmpp3m":
            out = dpmpp3m_rollout(model, schedule, logsnr_grid(int(n), schedule), x_T)
        else:
            out = rk4_solve(model, schedule, x_T, int(n))
        errors.append(float(np.linalg.norm(out - reference)))
    return fit_order(step_counts, errors)
