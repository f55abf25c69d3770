"""Learned multistep solver: trainable corrections over the base-solver step.

Three trainable sets parameterize an N-step sampler:

  * theta    - stick-breaking logits defining the timestep grid;
  * xi       - per-evaluation offsets added to the model evaluation times
               (saturating-clamped to [delta, T]);
  * phi      - additive coefficient corrections: a_diag on the current-point
               weight, a_off on all previous points, c_recent on the
               finite-difference brackets of the base step, and c_old on
               data predictions older than the three-step window.

With every correction at zero the step is exactly the base multistep update,
so an untrained sampler starts as the base solver on its initial grid.

Parameter vectors use one fixed canonical ordering throughout (optimizer
state, gradients, checkpoints): theta, xi, a_diag, a_off, c_recent, c_old.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from gasolve.base_solvers import Trajectory
from gasolve.diffusion import MixtureModel, NoiseSchedule
from gasolve.grids import TimeGrid, polynomial_grid, stickbreak_grid, stickbreak_inverse
from gasolve.tape import Node, Tape

FINAL_PORTION = 0.1  # stick-breaking portion of the initial final timestep


def _n_a_off(n_steps: int) -> int:
    return n_steps * (n_steps - 1) // 2

def _n_c_recent(n_steps: int) -> int:
    return 1 if n_steps == 1 else 3 * n_steps - 3

def _n_c_old(n_steps: int) -> int:
    return (n_steps - 3) * (n_steps - 2) // 2 if n_steps >= 3 else 0


def param_count(n_steps: int) -> int:
    """Number of trainable scalars for an N-step solver."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    return 3 * n_steps + _n_a_off(n_steps) + _n_c_recent(n_steps) + _n_c_old(n_steps)


def a_off_index(j: int, n: int) -> int:
    """Flat index of the previous-point correction for pair j < n."""
    if not 0 <= j < n:
        raise ValueError("a_off requires 0 <= j < n")
    return n * (n - 1) // 2 + j


def c_recent_index(n: int, k: int) -> int:
    """Flat index of the k-th bracket correction at step n (k=0 current,
    k=1 first difference, k=2 second difference)."""
    if not 0 <= k < min(n + 1, 3):
        raise ValueError("bracket index out of range for this step")
    offset = 0 if n == 0 else (1 if n == 1 else 3 * n - 3)
    return offset + k

def c_old_index(j: int, n: int) -> int:
    """Flat index of the stale-prediction correction for pair j <= n - 3."""
    if not (n >= 3 and 0 <= j <= n - 3):
        raise ValueError("c_old requires n >= 3 and 0 <= j <= n-3")
    return (n - 3) * (n - 2) // 2 + j


@dataclass
class GsParams:
    """Trainable scalars of the learned solver, grouped by role."""

    theta: np.ndarray
    xi: np.ndarray
    a_diag: np.ndarray
    a_off: np.ndarray
    c_recent: np.ndarray
    c_old: np.ndarray

    def __post_init__(self):
        n = len(self.theta)
        for name in ("theta", "xi", "a_diag", "a_off", "c_recent", "c_old"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        sizes = (n, n, n, _n_a_off(n), _n_c_recent(n), _n_c_old(n))
        for name, want in zip(self.__dataclass_fields__, sizes):
            got = getattr(self, name).size
            if got != want:
                raise ValueError(f"{name} has {got} entries, expected {want}")

    @property
    def n_steps(self) -> int:
        return len(self.theta)

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.theta, self.xi, self.a_diag, self.a_off, self.c_recent, self.c_old]
        )

    @classmethod
    def from_vector(cls, n_steps: int, vec) -> "GsParams":
        vec = np.asarray(vec, dtype=float)
        if vec.size != param_count(n_steps):
            raise ValueError(
                f"expected {param_count(n_steps)} scalars for {n_steps} steps, got {vec.size}"
            )
        sizes = [n_steps, n_steps, n_steps, _n_a_off(n_steps), _n_c_recent(n_steps), _n_c_old(n_steps)]
        parts = np.split(vec, np.cumsum(sizes)[:-1])
        return cls(*parts)

    def copy(self) -> "GsParams":
        return GsParams.from_vector(self.n_steps, self.to_vector().copy())


def init_params(n_steps: int) -> GsParams:
    """Zero corrections; theta reproduces the time-uniform grid for
    t_1..t_{N-1} with the final portion at FINAL_PORTION (the stick-breaking
    form cannot reach delta itself)."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    # logits of the interior time-uniform ratios ((N-n)/(N-n+1)); they do not
    # depend on T or delta
    ratios = np.array(
        [(n_steps - n) / (n_steps - n + 1) for n in range(1, n_steps)], dtype=float
    )
    ratios = np.append(ratios, FINAL_PORTION)
    theta = np.log(ratios) - np.log1p(-ratios)
    zeros = np.zeros
    return GsParams(
        theta=theta,
        xi=zeros(n_steps),
        a_diag=zeros(n_steps),
        a_off=zeros(_n_a_off(n_steps)),
        c_recent=zeros(_n_c_recent(n_steps)),
        c_old=zeros(_n_c_old(n_steps)),
    )


def time_uniform_grid(n_steps: int, schedule: NoiseSchedule) -> TimeGrid:
    return polynomial_grid(n_steps, 1.0, schedule.T, schedule.delta)


# -- plain numpy rollout ------------------------------------------------------


def _step_arrays(schedule, params, grid, lam, points, evals, n):
    """One learned step from stored history; mirrors the tape construction."""
    t_cur, t_next = grid[n], grid[n + 1]
    h = lam[n + 1] - lam[n]
    a_th = schedule.sigma(t_next) / schedule.sigma(t_cur)
    alpha_next = schedule.alpha(t_next)
    psi1 = np.expm1(-h)

    x = (a_th + params.a_diag[n]) * points[n] - (
        alpha_next * psi1 + params.c_recent[c_recent_index(n, 0)]
    ) * evals[n]
    if n == 1:
        r0 = (lam[1] - lam[0]) / h
        d1_0 = (evals[1] - evals[0]) / r0
        x = x - (alpha_next * psi1 / 2.0 + params.c_recent[c_recent_index(n, 1)]) * d1_0
    elif n >= 2:
        r0 = (lam[n] - lam[n - 1]) / h
        r1 = (lam[n - 1] - lam[n - 2]) / h
        psi2 = psi1 / h + 1.0
        psi3 = 2.0 * (psi2 / h - 0.5)
        d1_0 = (evals[n] - evals[n - 1]) / r0
        d1_1 = (evals[n - 1] - evals[n - 2]) / r1
        d1 = d1_0 + (r0 / (r0 + r1)) * (d1_0 - d1_1)
        d2 = (d1_0 - d1_1) / (r0 + r1)
        x = (x + (alpha_next * psi2 + params.c_recent[c_recent_index(n, 1)]) * d1) - (
            alpha_next * psi3 + params.c_recent[c_recent_index(n, 2)]
        ) * d2
    for j in range(n):
        x = x + params.a_off[a_off_index(j, n)] * points[j]
    for j in range(max(n - 2, 0)):
        x = x + params.c_old[c_old_index(j, n)] * evals[j]
    return x


def eval_time(schedule: NoiseSchedule, t: float, offset: float) -> float:
    """Shifted model-evaluation time, saturated into [delta, T]."""
    return float(np.clip(t + offset, schedule.delta, schedule.T))


def gs_step(model, schedule, traj: Trajectory, params: GsParams, n: int):
    """Spec-level single step; the trajectory must hold evaluations 0..n."""
    if traj.n < n or len(traj.evals) < n + 1:
        raise ValueError(f"trajectory lacks history for step {n}")
    grid = stickbreak_grid(params.theta, schedule.T, schedule.delta)
    lam = schedule.log_snr(grid.steps)
    return _step_arrays(schedule, params, grid, lam, traj.points, traj.evals, n)


def gs_rollout(model: MixtureModel, schedule: NoiseSchedule, params: GsParams, x_T):
    """N-step rollout over the stick-breaking grid; returns the endpoint.

    Accepts a single vector or a batch (B, d).
    """
    from gasolve.diffusion import data_prediction

    grid = stickbreak_grid(params.theta, schedule.T, schedule.delta)
    lam = schedule.log_snr(grid.steps)
    points = [np.asarray(x_T, dtype=float)]
    evals = []
    for n in range(params.n_steps):
        u = eval_time(schedule, grid[n], params.xi[n])
        evals.append(data_prediction(model, schedule, points[n], u))
        points.append(_step_arrays(schedule, params, grid, lam, points, evals, n))
    return points[-1]


# -- tape rollout -------------------------------------------------------------


@dataclass
class GsLeaves:
    """Tape leaves for one loss evaluation, in canonical parameter order."""

    theta: Node
    xi: Node
    a_diag: Node
    a_off: Node
    c_recent: Node
    c_old: Node

    def ordered(self) -> list[Node]:
        return [self.theta, self.xi, self.a_diag, self.a_off, self.c_recent, self.c_old]


def make_leaves(tape: Tape, params: GsParams) -> GsLeaves:
    return GsLeaves(
        theta=tape.leaf(params.theta),
        xi=tape.leaf(params.xi),
        a_diag=tape.leaf(params.a_diag),
        a_off=tape.leaf(params.a_off),
        c_recent=tape.leaf(params.c_recent),
        c_old=tape.leaf(params.c_old),
    )


def gs_rollout_graph(tape: Tape, model, schedule, leaves: GsLeaves, x_T) -> Node:
    """Differentiable rollout; mirrors gs_rollout operation for operation."""
    tp = tape
    n_steps = leaves.theta.value.size
    T, delta = schedule.T, schedule.delta

    portions = tp.sigmoid(leaves.theta)
    t_nodes = [tp.constant(np.array(T))]
    running = None
    for n in range(n_steps):
        p = tp.index(portions, n)
        running = p if running is None else tp.mul(running, p)
        t_nodes.append(tp.shift(tp.scale(running, T - delta), delta))
    lam = [schedule.tape_log_snr(tp, t) for t in t_nodes]

    x_nodes = [tp.constant(np.asarray(x_T, dtype=float))]
    v_nodes = []
    for n in range(n_steps):
        u = tp.clamp(tp.add(t_nodes[n], tp.index(leaves.xi, n)), delta, T)
        sc = tp.score_eval(model, schedule, x_nodes[n], u)
        sig = schedule.tape_sigma(tp, u)
        al = schedule.tape_alpha(tp, u)
        v_nodes.append(tp.div(tp.add(x_nodes[n], tp.mul(tp.mul(sig, sig), sc)), al))

        h = tp.sub(lam[n + 1], lam[n])
        a_th = tp.div(schedule.tape_sigma(tp, t_nodes[n + 1]), schedule.tape_sigma(tp, t_nodes[n]))
        alpha_next = schedule.tape_alpha(tp, t_nodes[n + 1])
        psi1 = tp.expm1_neg(h)

        a_coef = tp.add(a_th, tp.index(leaves.a_diag, n))
        c0 = tp.add(tp.mul(alpha_next, psi1), tp.index(leaves.c_recent, c_recent_index(n, 0)))
        x = tp.sub(tp.mul(a_coef, x_nodes[n]), tp.mul(c0, v_nodes[n]))
        if n == 1:
            r0 = tp.div(tp.sub(lam[1], lam[0]), h)
            d1_0 = tp.div(tp.sub(v_nodes[1], v_nodes[0]), r0)
            c1 = tp.add(
                tp.scale(tp.mul(alpha_next, psi1), 0.5),
                tp.index(leaves.c_recent, c_recent_index(n, 1)),
            )
            x = tp.sub(x, tp.mul(c1, d1_0))
        elif n >= 2:
            r0 = tp.div(tp.sub(lam[n], lam[n - 1]), h)
            r1 = tp.div(tp.sub(lam[n - 1], lam[n - 2]), h)
            psi2 = tp.shift(tp.div(psi1, h), 1.0)
            psi3 = tp.scale(tp.shift(tp.div(psi2, h), -0.5), 2.0)
            d1_0 = tp.div(tp.sub(v_nodes[n], v_nodes[n - 1]), r0)
            d1_1 = tp.div(tp.sub(v_nodes[n - 1], v_nodes[n - 2]), r1)
            diff = tp.sub(d1_0, d1_1)
            rsum = tp.add(r0, r1)
            d1 = tp.add(d1_0, tp.mul(tp.div(r0, rsum), diff))
            d2 = tp.div(diff, rsum)
            c1 = tp.add(tp.mul(alpha_next, psi2), tp.index(leaves.c_recent, c_recent_index(n, 1)))
            c2 = tp.add(tp.mul(alpha_next, psi3), tp.index(leaves.c_recent, c_recent_index(n, 2)))
            x = tp.sub(tp.add(x, tp.mul(c1, d1)), tp.mul(c2, d2))
        for j in range(n):
            x = tp.add(x, tp.mul(tp.index(leaves.a_off, a_off_index(j, n)), x_nodes[j]))
        for j in range(max(n - 2, 0)):
            x = tp.add(x, tp.mul(tp.index(leaves.c_old, c_old_index(j, n)), v_nodes[j]))
        x_nodes.append(x)
    return x_nodes[-1]


def init_theta_from_grid(grid, delta: float) -> np.ndarray:
    """Logits whose stick-breaking grid reproduces `grid` (for warm starts)."""
    return stickbreak_inverse(grid, delta)
