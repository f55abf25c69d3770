"""Learnable multistep samplers for probability-flow ODEs on analytic testbeds."""

from gasolve.base_solvers import (
    TeacherConfig,
    Trajectory,
    dpmpp3m_rollout,
    dpmpp3m_step,
    euler_step,
    rk4_solve,
    teacher_rollout,
)
from gasolve.diffusion import (
    MixtureModel,
    NoiseSchedule,
    State,
    data_prediction,
    exact_gaussian_path,
    score,
    score_vjp,
    velocity,
)
from gasolve.estimators import AdversarialSolverDistiller, SolverDistiller
from gasolve.grids import (
    TimeGrid,
    logsnr_grid,
    polynomial_grid,
    stickbreak_grid,
    stickbreak_inverse,
)
from gasolve.gsolver import GsParams, gs_rollout, gs_step, init_params, param_count
from gasolve.metrics import (
    OrderEstimate,
    convergence_order,
    endpoint_error,
    energy_distance,
    w2_gaussian,
)
from gasolve.tape import Tape, backward, finite_diff, grad_of_input
from gasolve.training import (
    Discriminator,
    TrainConfig,
    adam_step,
    adv_loss,
    clip_grad_norm,
    distill_loss,
    ema_update,
    grad_penalty,
    relativistic_f,
    train_gas,
    train_gs,
)

__all__ = [
    "AdversarialSolverDistiller",
    "Discriminator",
    "GsParams",
    "MixtureModel",
    "NoiseSchedule",
    "OrderEstimate",
    "SolverDistiller",
    "State",
    "Tape",
    "TeacherConfig",
    "TimeGrid",
    "TrainConfig",
    "Trajectory",
    "adam_step",
    "adv_loss",
    "backward",
    "clip_grad_norm",
    "convergence_order",
    "data_prediction",
    "distill_loss",
    "dpmpp3m_rollout",
    "dpmpp3m_step",
    "ema_update",
    "endpoint_error",
    "energy_distance",
    "euler_step",
    "exact_gaussian_path",
    "finite_diff",
    "grad_of_input",
    "grad_penalty",
    "gs_rollout",
    "gs_step",
    "init_params",
    "logsnr_grid",
    "param_count",
    "polynomial_grid",
    "relativistic_f",
    "rk4_solve",
    "score",
    "score_vjp",
    "stickbreak_grid",
    "stickbreak_inverse",
    "teacher_rollout",
    "train_gas",
    "train_gs",
    "velocity",
    "w2_gaussian",
]

__version__ = "0.1.0"
